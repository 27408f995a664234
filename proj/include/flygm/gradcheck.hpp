#pragma once

#include <functional>
#include <string>
#include <vector>

#include "flygm/tape.hpp"

namespace flygm {

struct GradCheckOptions {
  double h = 1e-5;     // central difference step
  double tol = 1e-4;
  // fault-injection hook for testing the checker itself: mutates the
  // analytic gradients of the first set before comparison
  std::function<void(GradStore<double>&)> perturb_grads;
};

struct GradCheckBlock {
  std::string name;  // "<set>.<param>" when several sets are checked
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckBlock> blocks;
  double max_rel_err = 0.0;
  bool pass = false;
};

struct GradCheckSet {
  std::string name;
  ParamSet<double>* params;
};

// f builds the forward pass on the given tape (capturing whatever parameter
// sets it needs) and returns a scalar loss. Every element of every listed
// set is perturbed both ways; the relative error is
// |fd - analytic| / max(1, |fd|, |analytic|).
inline GradCheckReport grad_check(const std::function<Tape<double>::Value(Tape<double>&)>& f,
                                  std::vector<GradCheckSet> sets,
                                  const GradCheckOptions& opt = {}) {
  Tape<double> tape;
  std::vector<GradStore<double>> stores(sets.size());
  std::vector<Tape<double>::Binding> bindings;
  for (size_t s = 0; s < sets.size(); ++s) {
    stores[s].init_like(*sets[s].params);
    bindings.push_back({sets[s].params, &stores[s]});
  }
  auto loss = f(tape);
  tape.backward(loss, bindings);
  if (opt.perturb_grads && !stores.empty()) opt.perturb_grads(stores[0]);

  auto eval = [&](void) -> double {
    tape.reset();
    auto l = f(tape);
    return tape.val(l).data[0];
  };

  GradCheckReport rep;
  for (size_t s = 0; s < sets.size(); ++s) {
    ParamSet<double>& params = *sets[s].params;
    for (int b = 0; b < params.size(); ++b) {
      GradCheckBlock blk;
      blk.name = sets.size() > 1 ? sets[s].name + "." + params.entries[size_t(b)].name
                                 : params.entries[size_t(b)].name;
      auto& theta = params[b];
      for (size_t k = 0; k < theta.data.size(); ++k) {
        const double saved = theta.data[k];
        theta.data[k] = saved + opt.h;
        const double lp = eval();
        theta.data[k] = saved - opt.h;
        const double lm = eval();
        theta.data[k] = saved;
        const double fd = (lp - lm) / (2.0 * opt.h);
        const double an = stores[s].g[size_t(b)].data[k];
        const double denom = std::max({1.0, std::abs(fd), std::abs(an)});
        blk.max_rel_err = std::max(blk.max_rel_err, std::abs(fd - an) / denom);
      }
      rep.max_rel_err = std::max(rep.max_rel_err, blk.max_rel_err);
      rep.blocks.push_back(std::move(blk));
    }
  }
  rep.pass = rep.max_rel_err < opt.tol;
  return rep;
}

inline GradCheckReport grad_check(const std::function<Tape<double>::Value(Tape<double>&)>& f,
                                  ParamSet<double>& params, const GradCheckOptions& opt = {}) {
  return grad_check(f, std::vector<GradCheckSet>{{"p", &params}}, opt);
}

}  // namespace flygm
