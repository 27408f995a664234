#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "flygm/env.hpp"
#include "flygm/optim.hpp"
#include "flygm/policy.hpp"
#include "flygm/tape.hpp"

namespace flygm {

// linear decay to zero over the first `frac` of training, then flat zero
inline double lambda_schedule(int epoch, int total_epochs, double lambda0 = 1.0,
                              double frac = 0.8) {
  if (total_epochs <= 0) return 0.0;
  const double horizon = frac * double(total_epochs);
  if (horizon <= 0.0) return 0.0;
  return lambda0 * std::max(0.0, 1.0 - double(epoch) / horizon);
}

// KL(teacher || student) for diagonal Gaussians, summed over dimensions
inline double kl_diag_gaussian(std::span<const double> mu_t, std::span<const double> sigma_t,
                               std::span<const double> mu_s, std::span<const double> sigma_s) {
  if (mu_t.size() != sigma_t.size() || mu_t.size() != mu_s.size() ||
      mu_t.size() != sigma_s.size())
    throw std::logic_error("kl_diag_gaussian: size mismatch");
  double kl = 0.0;
  for (size_t i = 0; i < mu_t.size(); ++i) {
    if (sigma_t[i] <= 0.0 || sigma_s[i] <= 0.0)
      throw DataError("kl_diag_gaussian: non-positive sigma");
    const double dm = mu_t[i] - mu_s[i];
    kl += std::log(sigma_s[i] / sigma_t[i]) +
          (sigma_t[i] * sigma_t[i] + dm * dm) / (2.0 * sigma_s[i] * sigma_s[i]) - 0.5;
  }
  return kl;
}

// KL plus the decaying direct-matching penalty on (mu, log sigma)
inline double imitation_loss_value(std::span<const double> mu_t, std::span<const double> sigma_t,
                                   std::span<const double> mu_s, std::span<const double> sigma_s,
                                   double lambda, double alpha = 0.1) {
  double loss = kl_diag_gaussian(mu_t, sigma_t, mu_s, sigma_s);
  if (lambda > 0.0) {
    double pen = 0.0;
    for (size_t i = 0; i < mu_t.size(); ++i) {
      const double dm = mu_s[i] - mu_t[i];
      const double dl = std::log(sigma_s[i]) - std::log(sigma_t[i]);
      pen += dm * dm + alpha * dl * dl;
    }
    loss += lambda * pen;
  }
  return loss;
}

// taped version; teacher stats enter as constants, lambda == 0 emits only the KL
template <typename T>
typename Tape<T>::Value imitation_loss_taped(Tape<T>& tape, typename Tape<T>::Value mu_s,
                                             typename Tape<T>::Value sigma_s,
                                             std::span<const T> mu_t, std::span<const T> sigma_t,
                                             double lambda, double alpha = 0.1) {
  const int a = int(mu_t.size());
  auto mu_t_c = tape.constant(mu_t, 1, a);
  auto sig_t_c = tape.constant(sigma_t, 1, a);
  auto log_sig_s = tape.log_op(sigma_s);
  auto log_sig_t = tape.log_op(sig_t_c);
  auto log_ratio = tape.sub(log_sig_s, log_sig_t);
  auto num = tape.add(tape.square(sig_t_c), tape.square(tape.sub(mu_t_c, mu_s)));
  auto quad = tape.div_op(num, tape.scale(tape.square(sigma_s), T(2)));
  auto kl = tape.sum(tape.add_scalar(tape.add(log_ratio, quad), T(-0.5)));
  if (lambda <= 0.0) return kl;
  auto pen = tape.add(tape.sum(tape.square(tape.sub(mu_s, mu_t_c))),
                      tape.scale(tape.sum(tape.square(log_ratio)), T(alpha)));
  return tape.add(kl, tape.scale(pen, T(lambda)));
}

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// values has one trailing bootstrap entry; dones mask the bootstrap across
// episode ends
inline GaeResult gae(std::span<const double> rewards, std::span<const double> values,
                     std::span<const uint8_t> dones, double gamma, double lambda) {
  const size_t t_len = rewards.size();
  if (values.size() != t_len + 1 || dones.size() != t_len)
    throw std::logic_error("gae: rewards T, values T+1, dones T required");
  GaeResult out;
  out.advantages.assign(t_len, 0.0);
  out.returns.assign(t_len, 0.0);
  double acc = 0.0;
  for (size_t i = t_len; i-- > 0;) {
    const double not_done = dones[i] ? 0.0 : 1.0;
    const double delta = rewards[i] + gamma * not_done * values[i + 1] - values[i];
    acc = delta + gamma * lambda * not_done * acc;
    out.advantages[i] = acc;
    out.returns[i] = acc + values[i];
  }
  return out;
}

struct ILEpochRow {
  int epoch = 0;      // 0 is the pre-training evaluation
  double lambda = 0.0;
  double loss = 0.0;      // mean per-step loss
  double kl = 0.0;        // mean per-step KL
  double mu_mse = 0.0;    // mean squared error of the action mean vs the expert
  double sigma_mse = 0.0; // same for the action stddev
};

struct ILConfig {
  int epochs = 40;
  int window = 16;     // truncated-backprop length
  int batch_size = 8;  // windows averaged per optimizer step
  double lambda0 = 1.0;
  double lambda_frac = 0.8;
  double alpha = 0.1;
  bool refit_norm = true;
  uint64_t seed = 0;
  OptimConfig optim{.lr = 1e-3};
  std::function<void(const ILEpochRow&)> on_epoch;
};

struct ILResult {
  std::vector<ILEpochRow> rows;
  int64_t windows = 0;
  int64_t skipped_updates = 0;  // optimizer steps dropped on a non-finite gradient
};

template <typename T>
ILResult train_il(PolicyModel<T>& policy, const Dataset& ds, const ILConfig& cfg) {
  if (ds.episodes.empty()) throw DataError("train_il: empty dataset");
  if (ds.obs_dim != policy.obs_dim() || ds.act_dim != policy.act_dim())
    throw DataError("train_il: dataset dims (" + std::to_string(ds.obs_dim) + "," +
                    std::to_string(ds.act_dim) + ") do not match the policy");
  if (cfg.window <= 0 || cfg.batch_size <= 0 || cfg.epochs < 0)
    throw UsageError("train_il: window, batch_size, epochs must be positive");

  const int obs = ds.obs_dim, act = ds.act_dim;
  if (cfg.refit_norm) {
    policy.norm = RunningNorm(obs);
    for (const auto& ep : ds.episodes)
      for (int32_t t = 0; t < ep.length; ++t)
        policy.norm.update(std::span<const double>(ep.obs.data() + size_t(t) * obs, size_t(obs)));
  }
  policy.norm.freeze(true);

  const size_t n_ep = ds.episodes.size();
  std::vector<std::vector<T>> x_norm(n_ep), mu_t(n_ep), sig_t(n_ep);
  for (size_t e = 0; e < n_ep; ++e) {
    const auto& ep = ds.episodes[e];
    x_norm[e].resize(size_t(ep.length) * obs);
    for (int32_t t = 0; t < ep.length; ++t) {
      auto row = policy.norm.apply(
          std::span<const double>(ep.obs.data() + size_t(t) * obs, size_t(obs)));
      for (int i = 0; i < obs; ++i) x_norm[e][size_t(t) * obs + i] = T(row[size_t(i)]);
    }
    mu_t[e].assign(ep.expert_mu.begin(), ep.expert_mu.end());
    sig_t[e].assign(ep.expert_sigma.begin(), ep.expert_sigma.end());
  }

  AdamState<T> adam;
  adam.init_like(policy.params);
  GradStore<T> grads;
  grads.init_like(policy.params);
  grads.zero();

  ILResult res;
  Tape<T> tape;
  Rng order_rng(derive_seed(cfg.seed, "il_order"));
  std::vector<int32_t> order(n_ep);
  std::iota(order.begin(), order.end(), 0);

  struct PassStats {
    double loss, kl, mu_mse, sigma_mse;
  };
  auto run_pass = [&](bool update, double lambda) {
    if (update) order_rng.shuffle(std::span<int32_t>(order));
    double loss_sum = 0.0, kl_sum = 0.0, mu_mse_sum = 0.0, sig_mse_sum = 0.0;
    int64_t steps = 0;
    int in_batch = 0;
    std::vector<double> mu_sd(static_cast<size_t>(act)), sig_sd(static_cast<size_t>(act));
    const bool carry_across = policy.carry_state();
    for (int32_t e : order) {
      const auto& ep = ds.episodes[size_t(e)];
      Tensor2<T> carry = policy.initial_state();
      for (int32_t w = 0; w < ep.length; w += cfg.window) {
        const int32_t wlen = std::min<int32_t>(cfg.window, ep.length - w);
        tape.reset();
        auto h = tape.constant(carry);
        typename Tape<T>::Value win_loss{};
        for (int32_t t = w; t < w + wlen; ++t) {
          // a policy that drops its state between env steps trains that way too
          if (!carry_across && t != w) h = tape.constant(carry);
          auto st = policy.step_taped(
              tape, h, std::span<const T>(x_norm[size_t(e)].data() + size_t(t) * obs, size_t(obs)));
          h = st.h_out;
          auto l = imitation_loss_taped(
              tape, st.mu, st.sigma,
              std::span<const T>(mu_t[size_t(e)].data() + size_t(t) * act, size_t(act)),
              std::span<const T>(sig_t[size_t(e)].data() + size_t(t) * act, size_t(act)), lambda,
              cfg.alpha);
          win_loss = t == w ? l : tape.add(win_loss, l);
          loss_sum += double(tape.val(l).data[0]);
          const auto& mu_v = tape.val(st.mu);
          const auto& sig_v = tape.val(st.sigma);
          for (int i = 0; i < act; ++i) {
            mu_sd[size_t(i)] = double(mu_v.data[size_t(i)]);
            sig_sd[size_t(i)] = double(sig_v.data[size_t(i)]);
          }
          kl_sum += kl_diag_gaussian(
              std::span<const double>(ep.expert_mu.data() + size_t(t) * act, size_t(act)),
              std::span<const double>(ep.expert_sigma.data() + size_t(t) * act, size_t(act)),
              mu_sd, sig_sd);
          double mu_se = 0.0, sig_se = 0.0;
          for (int i = 0; i < act; ++i) {
            const double dmu = mu_sd[size_t(i)] - ep.expert_mu[size_t(t) * act + size_t(i)];
            const double dsg = sig_sd[size_t(i)] - ep.expert_sigma[size_t(t) * act + size_t(i)];
            mu_se += dmu * dmu;
            sig_se += dsg * dsg;
          }
          mu_mse_sum += mu_se / double(act);
          sig_mse_sum += sig_se / double(act);
          ++steps;
        }
        if (update) {
          auto scaled = tape.scale(win_loss, T(1.0 / double(wlen)));
          if (carry_across) carry = tape.val(h);
          tape.backward(scaled, policy.params, grads);
          ++res.windows;
          if (++in_batch == cfg.batch_size) {
            grads.scale(1.0 / double(in_batch));
            auto info = optimize_step(policy.params, grads, adam, cfg.optim);
            if (!info.applied) ++res.skipped_updates;
            grads.zero();
            in_batch = 0;
          }
        } else if (carry_across) {
          carry = tape.val(h);
        }
      }
    }
    if (update && in_batch > 0) {
      grads.scale(1.0 / double(in_batch));
      auto info = optimize_step(policy.params, grads, adam, cfg.optim);
      if (!info.applied) ++res.skipped_updates;
      grads.zero();
    }
    const double n = double(std::max<int64_t>(1, steps));
    return PassStats{loss_sum / n, kl_sum / n, mu_mse_sum / n, sig_mse_sum / n};
  };

  {
    const double lam0 = lambda_schedule(0, cfg.epochs, cfg.lambda0, cfg.lambda_frac);
    auto s = run_pass(false, lam0);
    ILEpochRow row{0, lam0, s.loss, s.kl, s.mu_mse, s.sigma_mse};
    if (cfg.on_epoch) cfg.on_epoch(row);
    res.rows.push_back(row);
  }
  for (int e = 0; e < cfg.epochs; ++e) {
    const double lambda = lambda_schedule(e, cfg.epochs, cfg.lambda0, cfg.lambda_frac);
    auto s = run_pass(true, lambda);
    ILEpochRow row{e + 1, lambda, s.loss, s.kl, s.mu_mse, s.sigma_mse};
    if (cfg.on_epoch) cfg.on_epoch(row);
    res.rows.push_back(row);
  }
  return res;
}

struct RLIterRow {
  int iter = 0;
  double mean_return = 0.0;
  int episodes = 0;  // episodes that finished during collection
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_frac = 0.0;
  double approx_kl = 0.0;
  int64_t skipped_samples = 0;
  int64_t skipped_updates = 0;
};

struct PPOConfig {
  int iterations = 50;
  int n_envs = 8;
  int horizon = 256;  // steps collected per env per iteration
  int epochs = 4;
  int minibatch = 64;
  double clip = 0.2;
  double c_value = 0.5;
  double c_entropy = 0.01;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double logp_diff_limit = 40.0;  // |new - old| log-prob gap beyond which a sample is skipped
  bool update_norm = true;
  uint64_t seed = 0;
  OptimConfig policy_optim{.lr = 3e-4};
  OptimConfig value_optim{.lr = 1e-3};
  std::function<bool(const RLIterRow&)> on_iter;  // true stops training
};

struct RLResult {
  std::vector<RLIterRow> rows;
  bool stopped_early = false;
};

template <typename T>
RLResult train_rl(PolicyModel<T>& policy, ValueNet<T>& value, const EnvDescriptor& base,
                  const EnvParams& prm, const std::vector<std::vector<double>>& commands,
                  const PPOConfig& cfg) {
  if (commands.empty()) throw UsageError("train_rl: empty command list");
  if (value.input_dim() != policy.obs_dim())
    throw DataError("train_rl: value net input dim does not match the policy");
  if (cfg.n_envs <= 0 || cfg.horizon <= 0 || cfg.minibatch <= 0)
    throw UsageError("train_rl: n_envs, horizon, minibatch must be positive");

  const int obs = policy.obs_dim(), act = policy.act_dim();
  const int n_envs = cfg.n_envs, horizon = cfg.horizon;
  const size_t n_samples = size_t(n_envs) * size_t(horizon);
  // replay starts each sample from the state the policy actually saw: the
  // carried pre-step state, or the fixed initial state when nothing carries
  const bool recurrent = policy.carry_state();

  policy.norm.freeze(true);

  AdamState<T> adam_p, adam_v;
  adam_p.init_like(policy.params);
  adam_v.init_like(value.params);
  GradStore<T> gp, gv;
  gp.init_like(policy.params);
  gv.init_like(value.params);

  // per-sample storage, flattened env-major: s = env * horizon + t
  std::vector<T> x_norm(n_samples * size_t(obs));
  std::vector<T> x_boot(size_t(n_envs) * size_t(obs));
  std::vector<double> actions(n_samples * size_t(act));
  std::vector<double> logp_old(n_samples), rewards(n_samples);
  std::vector<uint8_t> dones(n_samples);
  std::vector<Tensor2<T>> h_pre(recurrent ? n_samples : 0);
  std::vector<double> raw_obs;  // for the normalizer refresh
  if (cfg.update_norm) raw_obs.reserve(n_samples * size_t(obs));

  Tape<T> tape;
  RLResult res;

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    // fresh envs each iteration so command cells stay balanced
    std::vector<PointflyEnv> envs;
    envs.reserve(size_t(n_envs));
    std::vector<Tensor2<T>> h_env(static_cast<size_t>(n_envs));
    std::vector<std::vector<double>> cur_obs(static_cast<size_t>(n_envs));
    for (int e = 0; e < n_envs; ++e) {
      auto desc = EnvDescriptor::make(base.name, commands[size_t(e) % commands.size()], base.dt,
                                      base.episode_len);
      envs.emplace_back(desc, prm, derive_seed(cfg.seed, uint64_t(iter) * 1000ULL + uint64_t(e)));
      cur_obs[size_t(e)] = envs.back().reset();
      h_env[size_t(e)] = policy.initial_state();
    }
    Rng act_rng(derive_seed(cfg.seed, "rl_act_" + std::to_string(iter)));
    raw_obs.clear();

    std::vector<double> ep_return(size_t(n_envs), 0.0);
    std::vector<double> finished_returns;

    for (int t = 0; t < horizon; ++t) {
      for (int e = 0; e < n_envs; ++e) {
        const size_t s = size_t(e) * size_t(horizon) + size_t(t);
        if (cfg.update_norm)
          raw_obs.insert(raw_obs.end(), cur_obs[size_t(e)].begin(), cur_obs[size_t(e)].end());
        auto normed = policy.norm.apply(cur_obs[size_t(e)]);
        for (int i = 0; i < obs; ++i) x_norm[s * size_t(obs) + i] = T(normed[size_t(i)]);
        if (recurrent) h_pre[s] = h_env[size_t(e)];
        policy.set_state(h_env[size_t(e)]);
        ActionDist d = policy.act(cur_obs[size_t(e)]);
        h_env[size_t(e)] = policy.carry_state() ? policy.state() : policy.initial_state();
        std::vector<double> a(static_cast<size_t>(act));
        for (int i = 0; i < act; ++i) a[size_t(i)] = d.mu[size_t(i)] + d.sigma[size_t(i)] * act_rng.normal();
        logp_old[s] = log_prob(d, a);
        std::copy(a.begin(), a.end(), actions.begin() + s * size_t(act));
        StepResult sr = envs[size_t(e)].step(a);
        rewards[s] = sr.reward;
        dones[s] = sr.done ? 1 : 0;
        ep_return[size_t(e)] += sr.reward;
        if (sr.done) {
          finished_returns.push_back(ep_return[size_t(e)]);
          ep_return[size_t(e)] = 0.0;
          cur_obs[size_t(e)] = envs[size_t(e)].reset();
          h_env[size_t(e)] = policy.initial_state();
        } else {
          cur_obs[size_t(e)] = sr.obs;
        }
      }
    }
    for (int e = 0; e < n_envs; ++e) {
      auto normed = policy.norm.apply(cur_obs[size_t(e)]);
      for (int i = 0; i < obs; ++i) x_boot[size_t(e) * size_t(obs) + i] = T(normed[size_t(i)]);
    }

    // one batched value pass over every stored observation plus bootstraps
    std::vector<double> values(n_samples + size_t(n_envs));
    {
      tape.reset();
      std::vector<T> all((n_samples + size_t(n_envs)) * size_t(obs));
      std::copy(x_norm.begin(), x_norm.end(), all.begin());
      std::copy(x_boot.begin(), x_boot.end(), all.begin() + n_samples * size_t(obs));
      auto x = tape.constant(std::span<const T>(all), int32_t(n_samples + size_t(n_envs)), obs);
      auto v = value.forward_taped(tape, x);
      const auto& vv = tape.val(v);
      for (size_t i = 0; i < values.size(); ++i) values[i] = double(vv.data[i]);
    }

    std::vector<double> advantages(n_samples), returns(n_samples);
    for (int e = 0; e < n_envs; ++e) {
      const size_t s0 = size_t(e) * size_t(horizon);
      std::vector<double> v_env(size_t(horizon) + 1);
      std::copy(values.begin() + s0, values.begin() + s0 + horizon, v_env.begin());
      v_env[size_t(horizon)] = values[n_samples + size_t(e)];
      auto g = gae(std::span<const double>(rewards.data() + s0, size_t(horizon)), v_env,
                   std::span<const uint8_t>(dones.data() + s0, size_t(horizon)), cfg.gamma,
                   cfg.gae_lambda);
      std::copy(g.advantages.begin(), g.advantages.end(), advantages.begin() + s0);
      std::copy(g.returns.begin(), g.returns.end(), returns.begin() + s0);
    }
    {
      double m = 0.0;
      for (double a : advantages) m += a;
      m /= double(n_samples);
      double s2 = 0.0;
      for (double a : advantages) s2 += (a - m) * (a - m);
      const double sd = std::sqrt(s2 / double(n_samples));
      for (double& a : advantages) a = (a - m) / (sd + 1e-8);
    }

    RLIterRow row;
    row.iter = iter;
    row.episodes = int(finished_returns.size());
    if (!finished_returns.empty()) {
      for (double r : finished_returns) row.mean_return += r;
      row.mean_return /= double(finished_returns.size());
    } else {
      for (double r : ep_return) row.mean_return += r;
      row.mean_return /= double(n_envs);
    }

    Rng shuffle_rng(derive_seed(cfg.seed, "rl_shuffle_" + std::to_string(iter)));
    std::vector<int64_t> perm(n_samples);
    std::iota(perm.begin(), perm.end(), 0);
    double pl_sum = 0.0, vl_sum = 0.0, ent_sum = 0.0, kl_sum = 0.0;
    int64_t n_batches = 0, n_clipped = 0, n_used = 0;
    std::vector<T> vbuf;
    std::vector<T> rbuf;

    for (int ep = 0; ep < cfg.epochs; ++ep) {
      shuffle_rng.shuffle(std::span<int64_t>(perm));
      for (size_t start = 0; start < n_samples; start += size_t(cfg.minibatch)) {
        const size_t stop = std::min(n_samples, start + size_t(cfg.minibatch));
        tape.reset();
        typename Tape<T>::Value pol_acc{}, ent_acc{};
        int used = 0;
        vbuf.clear();
        rbuf.clear();
        for (size_t k = start; k < stop; ++k) {
          const size_t s = size_t(perm[k]);
          typename Tape<T>::Value h =
              recurrent ? tape.constant(h_pre[s]) : tape.constant(policy.initial_state());
          auto st = policy.step_taped(
              tape, h, std::span<const T>(x_norm.data() + s * size_t(obs), size_t(obs)));
          std::vector<T> a_t(static_cast<size_t>(act));
          for (int i = 0; i < act; ++i) a_t[size_t(i)] = T(actions[s * size_t(act) + i]);
          auto a_c = tape.constant(std::span<const T>(a_t), 1, act);
          auto z = tape.div_op(tape.sub(a_c, st.mu), st.sigma);
          auto lp = tape.add_scalar(
              tape.neg(tape.add(tape.scale(tape.sum(tape.square(z)), T(0.5)),
                                tape.sum(tape.log_op(st.sigma)))),
              T(-0.5 * kLog2Pi * act));
          auto diff = tape.add_scalar(lp, T(-logp_old[s]));
          const double dval = double(tape.val(diff).data[0]);
          if (!std::isfinite(dval) || std::abs(dval) > cfg.logp_diff_limit) {
            ++row.skipped_samples;
            continue;
          }
          auto ratio = tape.exp_op(diff);
          const double rv = double(tape.val(ratio).data[0]);
          if (std::abs(rv - 1.0) > cfg.clip) ++n_clipped;
          kl_sum += -dval;
          auto surr1 = tape.scale(ratio, T(advantages[s]));
          auto surr2 =
              tape.scale(tape.clamp(ratio, T(1.0 - cfg.clip), T(1.0 + cfg.clip)), T(advantages[s]));
          auto surr = tape.min2(surr1, surr2);
          pol_acc = used == 0 ? surr : tape.add(pol_acc, surr);
          auto ent = tape.add_scalar(tape.sum(tape.log_op(st.sigma)),
                                     T(0.5 * (kLog2Pi + 1.0) * act));
          ent_acc = used == 0 ? ent : tape.add(ent_acc, ent);
          ++used;
          vbuf.insert(vbuf.end(), x_norm.begin() + s * size_t(obs),
                      x_norm.begin() + (s + 1) * size_t(obs));
          rbuf.push_back(T(returns[s]));
        }
        if (used == 0) continue;
        auto xb = tape.constant(std::span<const T>(vbuf), used, obs);
        auto vb = value.forward_taped(tape, xb);
        auto rb = tape.constant(std::span<const T>(rbuf), used, 1);
        auto v_loss = tape.mean(tape.square(tape.sub(vb, rb)));
        auto pol_loss = tape.scale(pol_acc, T(-1.0 / double(used)));
        auto ent_mean = tape.scale(ent_acc, T(1.0 / double(used)));
        auto loss = tape.add(pol_loss, tape.sub(tape.scale(v_loss, T(cfg.c_value)),
                                                tape.scale(ent_mean, T(cfg.c_entropy))));
        pl_sum += double(tape.val(pol_loss).data[0]);
        vl_sum += double(tape.val(v_loss).data[0]);
        ent_sum += double(tape.val(ent_mean).data[0]);
        ++n_batches;
        n_used += used;

        gp.zero();
        gv.zero();
        typename Tape<T>::Binding binds[2] = {{&policy.params, &gp}, {&value.params, &gv}};
        tape.backward(loss, std::span<const typename Tape<T>::Binding>(binds, 2));
        auto ip = optimize_step(policy.params, gp, adam_p, cfg.policy_optim);
        auto iv = optimize_step(value.params, gv, adam_v, cfg.value_optim);
        if (!ip.applied || !iv.applied) ++row.skipped_updates;
      }
    }

    if (n_batches > 0) {
      row.policy_loss = pl_sum / double(n_batches);
      row.value_loss = vl_sum / double(n_batches);
      row.entropy = ent_sum / double(n_batches);
    }
    if (n_used > 0) {
      row.clip_frac = double(n_clipped) / double(n_used);
      row.approx_kl = kl_sum / double(n_used);
    }

    if (cfg.update_norm) {
      policy.norm.freeze(false);
      for (size_t s = 0; s + size_t(obs) <= raw_obs.size(); s += size_t(obs))
        policy.norm.update(std::span<const double>(raw_obs.data() + s, size_t(obs)));
      policy.norm.freeze(true);
    }

    res.rows.push_back(row);
    if (cfg.on_iter && cfg.on_iter(row)) {
      res.stopped_early = true;
      break;
    }
  }
  return res;
}

}  // namespace flygm
