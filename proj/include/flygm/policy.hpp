#pragma once

#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "flygm/connectome.hpp"
#include "flygm/running_norm.hpp"
#include "flygm/tape.hpp"

namespace flygm {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

struct ActionDist {
  std::vector<double> mu, sigma;
};

inline double log_prob(const ActionDist& d, std::span<const double> a) {
  double lp = 0.0;
  for (size_t i = 0; i < d.mu.size(); ++i) {
    const double z = (a[i] - d.mu[i]) / d.sigma[i];
    lp += -std::log(d.sigma[i]) - 0.5 * kLog2Pi - 0.5 * z * z;
  }
  return lp;
}

inline double entropy(const ActionDist& d) {
  double h = 0.0;
  for (double s : d.sigma) h += 0.5 * (kLog2Pi + 1.0) + std::log(s);
  return h;
}

struct FlyGMConfig {
  int channels = 32;        // per-neuron state width
  int descriptor_dim = 32;  // learned per-neuron descriptor width
  int enc_dim = 32;
  int k_iters = 4;          // propagation rounds per control step
  int update_hidden = 64;
  int dec_hidden = 128;
  bool per_iter_update = false;  // separate update weights per round
  bool reset_each_step = false;  // drop the carried state between env steps
  double sigma_floor = 1e-6;
};

struct MlpConfig {
  int enc_dim = 32;
  int hidden = 512;
  double sigma_floor = 1e-6;
};

// stage outputs for oracle tests
template <typename T>
struct StepTrace {
  Tensor2<T> x_enc;
  Tensor2<T> h_gate;
  std::vector<Tensor2<T>> m_iter;
  std::vector<Tensor2<T>> h_iter;
  Tensor2<T> dec_in;
};

template <typename T>
struct TapedStep {
  typename Tape<T>::Value mu, sigma, h_out;
};

// Shared surface for the graph policy and the dense baseline: a taped
// recurrent step plus bookkeeping for rollouts.
template <typename T>
class PolicyModel {
 public:
  ParamSet<T> params;
  RunningNorm norm;

  virtual ~PolicyModel() = default;

  virtual std::string kind() const = 0;
  virtual int obs_dim() const = 0;
  virtual int act_dim() const = 0;
  virtual bool recurrent() const = 0;
  virtual Tensor2<T> initial_state() const = 0;
  virtual TapedStep<T> step_taped(Tape<T>& tape, typename Tape<T>::Value h_in,
                                  std::span<const T> obs_norm,
                                  StepTrace<T>* trace = nullptr) const = 0;

  // true when the carried state should survive across env steps
  virtual bool carry_state() const { return recurrent(); }

  void reset_state() { state_ = initial_state(); }
  const Tensor2<T>& state() const { return state_; }
  void set_state(Tensor2<T> s) { state_ = std::move(s); }

  // normalize (updating stats unless frozen), run one step, carry the state
  ActionDist act(std::span<const double> raw_obs) {
    auto normed = norm.normalize(raw_obs);
    obs_buf_.assign(normed.begin(), normed.end());
    if (state_.size() == 0 && recurrent()) reset_state();
    if (!carry_state()) reset_state();
    tape_.reset();
    auto h_in = tape_.constant(state_);
    auto st = step_taped(tape_, h_in, obs_buf_);
    state_ = tape_.val(st.h_out);
    const auto& mu = tape_.val(st.mu);
    const auto& sg = tape_.val(st.sigma);
    ActionDist d;
    d.mu.assign(mu.data.begin(), mu.data.end());
    d.sigma.assign(sg.data.begin(), sg.data.end());
    return d;
  }

 protected:
  Tensor2<T> state_;
  Tape<T> tape_;
  std::vector<T> obs_buf_;
};

template <typename T>
class FlyGMPolicy : public PolicyModel<T> {
 public:
  FlyGMPolicy(Connectome graph, CsrMatrix op, int obs_dim, int act_dim, FlyGMConfig cfg,
              uint64_t seed)
      : graph_(std::move(graph)), op_(std::move(op)), cfg_(cfg), obs_dim_(obs_dim),
        act_dim_(act_dim) {
    if (graph_.efferent.empty() || graph_.afferent.empty())
      throw DataError("graph policy needs at least one afferent and one efferent neuron");
    const int n = graph_.size();
    const int C = cfg_.channels, D = cfg_.descriptor_dim, E = cfg_.enc_dim;
    const int hf = cfg_.update_hidden, hd = cfg_.dec_hidden;
    const int ve_c = int(graph_.efferent.size()) * C;
    Rng rng(derive_seed(seed, "flygm_init"));
    auto& ps = this->params;

    enc_w_ = add_linear(ps, "enc_w", E, obs_dim_, rng);
    enc_b_ = ps.add("enc_b", Tensor2<T>(1, E));
    gate_w_ = add_linear(ps, "gate_w", C, C + E, rng);
    gate_b_ = ps.add("gate_b", Tensor2<T>(1, C));
    const int rounds = cfg_.per_iter_update ? cfg_.k_iters : 1;
    // the operator carries raw signed synapse counts; shrink the message
    // columns of the first update layer so round one stays O(1)
    const double op_scale = std::max(1.0, op_.inf_norm());
    for (int k = 0; k < rounds; ++k) {
      std::string tag = rounds > 1 ? "_" + std::to_string(k) : "";
      int w1 = add_linear(ps, "upd1_w" + tag, hf, C + D, rng);
      for (int r = 0; r < hf; ++r)
        for (int c = 0; c < C; ++c) ps[w1].at(r, c) = T(double(ps[w1].at(r, c)) / op_scale);
      upd1_w_.push_back(w1);
      upd1_b_.push_back(ps.add("upd1_b" + tag, Tensor2<T>(1, hf)));
      upd2_w_.push_back(add_linear(ps, "upd2_w" + tag, C, hf, rng));
      upd2_b_.push_back(ps.add("upd2_b" + tag, Tensor2<T>(1, C)));
    }
    eta_ = ps.add("eta", Tensor2<T>::gaussian(n, D, 1.0, rng));
    dec1_w_ = add_linear(ps, "dec1_w", hd, ve_c, rng);
    dec1_b_ = ps.add("dec1_b", Tensor2<T>(1, hd));
    dec2_w_ = add_linear(ps, "dec2_w", hd, hd, rng);
    dec2_b_ = ps.add("dec2_b", Tensor2<T>(1, hd));
    mu_w_ = add_linear(ps, "mu_w", act_dim_, hd, rng);
    mu_b_ = ps.add("mu_b", Tensor2<T>(1, act_dim_));
    sig_w_ = add_linear(ps, "sig_w", act_dim_, hd, rng);
    sig_b_ = ps.add("sig_b", Tensor2<T>(1, act_dim_));
    this->norm = RunningNorm(obs_dim_);
    this->reset_state();
  }

  std::string kind() const override { return "flygm"; }
  int obs_dim() const override { return obs_dim_; }
  int act_dim() const override { return act_dim_; }
  bool recurrent() const override { return true; }
  bool carry_state() const override { return !cfg_.reset_each_step; }
  const Connectome& graph() const { return graph_; }
  const CsrMatrix& op() const { return op_; }
  const FlyGMConfig& config() const { return cfg_; }

  Tensor2<T> initial_state() const override {
    return Tensor2<T>(graph_.size(), cfg_.channels);
  }

  TapedStep<T> step_taped(Tape<T>& tape, typename Tape<T>::Value h_in,
                          std::span<const T> obs_norm,
                          StepTrace<T>* trace = nullptr) const override {
    if (int(obs_norm.size()) != obs_dim_)
      throw std::logic_error("flygm_step: observation width mismatch");
    const auto& ps = this->params;
    using V = typename Tape<T>::Value;

    auto guard = [&](const char* name, auto&& fn) {
      try {
        return fn();
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("flygm_step: stage " + std::string(name) + ": " + e.what());
      }
    };

    V xe = guard("encode", [&] {
      auto x = tape.constant(obs_norm, 1, obs_dim_);
      return tape.relu(tape.affine(x, tape.param(ps, enc_w_), tape.param(ps, enc_b_)));
    });
    if (trace) trace->x_enc = tape.val(xe);

    V h = guard("inject", [&] {
      auto ha = tape.gather_rows(h_in, graph_.afferent);
      auto xb = tape.broadcast_row(xe, int32_t(graph_.afferent.size()));
      auto g = tape.tanh_op(tape.affine(tape.concat_cols(ha, xb), tape.param(ps, gate_w_),
                                        tape.param(ps, gate_b_)));
      return tape.scatter_rows(h_in, graph_.afferent, g);
    });
    if (trace) trace->h_gate = tape.val(h);

    auto eta = tape.param(ps, eta_);
    for (int k = 0; k < cfg_.k_iters; ++k) {
      const int r = cfg_.per_iter_update ? k : 0;
      V m = guard("propagate", [&] { return tape.spmm_op(op_, h); });
      if (trace) trace->m_iter.push_back(tape.val(m));
      h = guard("update", [&] {
        auto f1 = tape.relu(tape.affine(tape.concat_cols(m, eta), tape.param(ps, upd1_w_[r]),
                                        tape.param(ps, upd1_b_[r])));
        return tape.affine(f1, tape.param(ps, upd2_w_[r]), tape.param(ps, upd2_b_[r]));
      });
      if (trace) trace->h_iter.push_back(tape.val(h));
    }

    TapedStep<T> out;
    out.h_out = h;
    V d2 = guard("decode", [&] {
      auto z = tape.reshape(tape.gather_rows(h, graph_.efferent), 1,
                            int32_t(graph_.efferent.size()) * cfg_.channels);
      if (trace) trace->dec_in = tape.val(z);
      auto d1 = tape.relu(tape.affine(z, tape.param(ps, dec1_w_), tape.param(ps, dec1_b_)));
      return tape.relu(tape.affine(d1, tape.param(ps, dec2_w_), tape.param(ps, dec2_b_)));
    });
    out.mu = guard("head_mu", [&] {
      return tape.affine(d2, tape.param(ps, mu_w_), tape.param(ps, mu_b_));
    });
    out.sigma = guard("head_sigma", [&] {
      auto s = tape.softplus(tape.affine(d2, tape.param(ps, sig_w_), tape.param(ps, sig_b_)));
      return tape.add_scalar(s, T(cfg_.sigma_floor));
    });
    return out;
  }

 private:
  static int add_linear(ParamSet<T>& ps, std::string name, int dout, int din, Rng& rng) {
    return ps.add(std::move(name), Tensor2<T>::gaussian(dout, din, 1.0 / std::sqrt(double(din)), rng));
  }

  Connectome graph_;
  CsrMatrix op_;
  FlyGMConfig cfg_;
  int obs_dim_, act_dim_;
  int enc_w_, enc_b_, gate_w_, gate_b_, eta_;
  std::vector<int> upd1_w_, upd1_b_, upd2_w_, upd2_b_;
  int dec1_w_, dec1_b_, dec2_w_, dec2_b_, mu_w_, mu_b_, sig_w_, sig_b_;
};

template <typename T>
class MlpPolicy : public PolicyModel<T> {
 public:
  MlpPolicy(int obs_dim, int act_dim, MlpConfig cfg, uint64_t seed)
      : cfg_(cfg), obs_dim_(obs_dim), act_dim_(act_dim) {
    Rng rng(derive_seed(seed, "mlp_init"));
    auto& ps = this->params;
    enc_w_ = add_linear(ps, "enc_w", cfg_.enc_dim, obs_dim_, rng);
    enc_b_ = ps.add("enc_b", Tensor2<T>(1, cfg_.enc_dim));
    fc1_w_ = add_linear(ps, "fc1_w", cfg_.hidden, cfg_.enc_dim, rng);
    fc1_b_ = ps.add("fc1_b", Tensor2<T>(1, cfg_.hidden));
    fc2_w_ = add_linear(ps, "fc2_w", cfg_.hidden, cfg_.hidden, rng);
    fc2_b_ = ps.add("fc2_b", Tensor2<T>(1, cfg_.hidden));
    mu_w_ = add_linear(ps, "mu_w", act_dim_, cfg_.hidden, rng);
    mu_b_ = ps.add("mu_b", Tensor2<T>(1, act_dim_));
    sig_w_ = add_linear(ps, "sig_w", act_dim_, cfg_.hidden, rng);
    sig_b_ = ps.add("sig_b", Tensor2<T>(1, act_dim_));
    this->norm = RunningNorm(obs_dim_);
    this->reset_state();
  }

  std::string kind() const override { return "mlp"; }
  int obs_dim() const override { return obs_dim_; }
  int act_dim() const override { return act_dim_; }
  bool recurrent() const override { return false; }
  Tensor2<T> initial_state() const override { return Tensor2<T>(0, 0); }
  const MlpConfig& config() const { return cfg_; }

  TapedStep<T> step_taped(Tape<T>& tape, typename Tape<T>::Value h_in,
                          std::span<const T> obs_norm,
                          StepTrace<T>* trace = nullptr) const override {
    if (int(obs_norm.size()) != obs_dim_)
      throw std::logic_error("mlp_step: observation width mismatch");
    const auto& ps = this->params;
    auto x = tape.constant(obs_norm, 1, obs_dim_);
    auto xe = tape.relu(tape.affine(x, tape.param(ps, enc_w_), tape.param(ps, enc_b_)));
    if (trace) trace->x_enc = tape.val(xe);
    auto f1 = tape.relu(tape.affine(xe, tape.param(ps, fc1_w_), tape.param(ps, fc1_b_)));
    auto f2 = tape.relu(tape.affine(f1, tape.param(ps, fc2_w_), tape.param(ps, fc2_b_)));
    TapedStep<T> out;
    out.mu = tape.affine(f2, tape.param(ps, mu_w_), tape.param(ps, mu_b_));
    out.sigma = tape.add_scalar(
        tape.softplus(tape.affine(f2, tape.param(ps, sig_w_), tape.param(ps, sig_b_))),
        T(cfg_.sigma_floor));
    out.h_out = h_in;
    return out;
  }

 private:
  static int add_linear(ParamSet<T>& ps, std::string name, int dout, int din, Rng& rng) {
    return ps.add(std::move(name), Tensor2<T>::gaussian(dout, din, 1.0 / std::sqrt(double(din)), rng));
  }

  MlpConfig cfg_;
  int obs_dim_, act_dim_;
  int enc_w_, enc_b_, fc1_w_, fc1_b_, fc2_w_, fc2_b_, mu_w_, mu_b_, sig_w_, sig_b_;
};

// d_in -> hidden -> hidden -> 1, ReLU
template <typename T>
class ValueNet {
 public:
  ParamSet<T> params;

  ValueNet(int d_in, int hidden, uint64_t seed) : d_in_(d_in), hidden_(hidden) {
    Rng rng(derive_seed(seed, "value_init"));
    w1_ = params.add("w1", Tensor2<T>::gaussian(hidden, d_in, 1.0 / std::sqrt(double(d_in)), rng));
    b1_ = params.add("b1", Tensor2<T>(1, hidden));
    w2_ = params.add("w2", Tensor2<T>::gaussian(hidden, hidden, 1.0 / std::sqrt(double(hidden)), rng));
    b2_ = params.add("b2", Tensor2<T>(1, hidden));
    w3_ = params.add("w3", Tensor2<T>::gaussian(1, hidden, 1.0 / std::sqrt(double(hidden)), rng));
    b3_ = params.add("b3", Tensor2<T>(1, 1));
  }

  int input_dim() const { return d_in_; }
  int hidden_dim() const { return hidden_; }

  // obs_batch: rows x d_in -> rows x 1
  typename Tape<T>::Value forward_taped(Tape<T>& tape, typename Tape<T>::Value obs_batch) const {
    auto f1 = tape.relu(tape.affine(obs_batch, tape.param(params, w1_), tape.param(params, b1_)));
    auto f2 = tape.relu(tape.affine(f1, tape.param(params, w2_), tape.param(params, b2_)));
    return tape.affine(f2, tape.param(params, w3_), tape.param(params, b3_));
  }

  double eval(std::span<const T> obs_norm) {
    tape_.reset();
    auto x = tape_.constant(obs_norm, 1, d_in_);
    auto v = forward_taped(tape_, x);
    return double(tape_.val(v).data[0]);
  }

 private:
  int d_in_, hidden_;
  int w1_, b1_, w2_, b2_, w3_, b3_;
  Tape<T> tape_;
};

}  // namespace flygm
