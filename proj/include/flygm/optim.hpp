#pragma once

#include <cmath>
#include <cstdint>

#include "flygm/tape.hpp"

namespace flygm {

struct OptimConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;  // decoupled
  double clip_norm = 1.0;      // <= 0 disables clipping
};

template <typename T>
struct AdamState {
  std::vector<Tensor2<T>> m, v;
  int64_t t = 0;

  void init_like(const ParamSet<T>& ps) {
    m.resize(size_t(ps.size()));
    v.resize(size_t(ps.size()));
    for (int i = 0; i < ps.size(); ++i) {
      m[size_t(i)].assign_zero(ps[i].rows, ps[i].cols);
      v[size_t(i)].assign_zero(ps[i].rows, ps[i].cols);
    }
  }
};

struct StepInfo {
  bool applied = false;
  double grad_norm = 0.0;
  double clip_scale = 1.0;
};

// AdamW. The whole gradient is scaled by min(1, clip_norm/||g||) before the
// moment updates; weight decay acts on the parameters directly. A non-finite
// gradient norm aborts the update and leaves everything untouched.
template <typename T>
StepInfo optimize_step(ParamSet<T>& params, const GradStore<T>& grads, AdamState<T>& st,
                       const OptimConfig& cfg) {
  StepInfo info;
  info.grad_norm = grads.global_norm();
  if (!std::isfinite(info.grad_norm)) return info;
  if (cfg.clip_norm > 0.0 && info.grad_norm > cfg.clip_norm)
    info.clip_scale = cfg.clip_norm / info.grad_norm;

  st.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(st.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(st.t));
  for (int i = 0; i < params.size(); ++i) {
    auto& theta = params[i];
    const auto& gt = grads.g[size_t(i)];
    auto& mt = st.m[size_t(i)];
    auto& vt = st.v[size_t(i)];
    for (size_t k = 0; k < theta.data.size(); ++k) {
      const double g = double(gt.data[k]) * info.clip_scale;
      const double m = cfg.beta1 * double(mt.data[k]) + (1.0 - cfg.beta1) * g;
      const double v = cfg.beta2 * double(vt.data[k]) + (1.0 - cfg.beta2) * g * g;
      mt.data[k] = T(m);
      vt.data[k] = T(v);
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      const double th = double(theta.data[k]);
      theta.data[k] = T(th - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps) - cfg.lr * cfg.weight_decay * th);
    }
  }
  info.applied = true;
  return info;
}

}  // namespace flygm
