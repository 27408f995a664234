#include "flygm/env.hpp"

#include <algorithm>
#include <cmath>

namespace flygm {

EnvDescriptor EnvDescriptor::make(const std::string& name, std::vector<double> command,
                                  double dt, int episode_len) {
  EnvDescriptor d;
  d.name = name;
  d.dt = dt;
  d.episode_len = episode_len;
  if (name == "pointfly-walk") {
    d.obs_dim = 18;
    d.act_dim = 4;
    d.cmd_dim = 2;
    if (command.empty()) command = {0.0, 0.0};
  } else if (name == "pointfly-flight") {
    d.obs_dim = 24;
    d.act_dim = 6;
    d.cmd_dim = 3;
    if (command.empty()) command = {0.0, 0.0, 0.0};
  } else {
    throw UsageError("unknown env '" + name + "' (expected pointfly-walk or pointfly-flight)");
  }
  if (int(command.size()) != d.cmd_dim)
    throw UsageError("env " + name + ": command needs " + std::to_string(d.cmd_dim) + " values");
  if (dt <= 0.0) throw UsageError("env: dt must be positive");
  if (episode_len <= 0) throw UsageError("env: episode_len must be positive");
  d.command = std::move(command);
  return d;
}

PointflyEnv::PointflyEnv(EnvDescriptor desc, EnvParams params, uint64_t seed)
    : desc_(std::move(desc)), prm_(params), rng_(derive_seed(seed, "env")) {
  flight_ = desc_.name == "pointfly-flight";
  reset();
}

std::vector<double> PointflyEnv::reference_point(int k) const {
  const double t = double(k) * desc_.dt;
  if (flight_) {
    return {desc_.command[0] * t, desc_.command[1] * t, desc_.command[2] * t};
  }
  const double s = desc_.command[0];
  const double r = desc_.command[1];
  if (std::abs(r) < 1e-12) return {s * t, 0.0, 0.0};
  const double R = s / r;  // curvature = r/s at every waypoint
  return {R * std::sin(r * t), R * (1.0 - std::cos(r * t)), 0.0};
}

double PointflyEnv::reference_heading(int k) const {
  if (flight_) {
    const double hx = desc_.command[0], hy = desc_.command[1];
    return (hx * hx + hy * hy) > 1e-18 ? std::atan2(hy, hx) : 0.0;
  }
  return wrap_angle(desc_.command[1] * double(k) * desc_.dt);
}

double PointflyEnv::deviation() const {
  const auto ref = reference_point(k_);
  const double dx = px_ - ref[0], dy = py_ - ref[1], dz = pz_ - ref[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

double PointflyEnv::heading_error() const { return wrap_angle(theta_ - reference_heading(k_)); }

const std::vector<double>& PointflyEnv::reset() {
  k_ = 0;
  done_ = false;
  const double n = prm_.init_noise;
  px_ = n * rng_.normal();
  py_ = n * rng_.normal();
  pz_ = flight_ ? n * rng_.normal() : 0.0;
  vx_ = n * rng_.normal();
  vy_ = n * rng_.normal();
  vz_ = flight_ ? n * rng_.normal() : 0.0;
  theta_ = n * rng_.normal();
  omega_ = n * rng_.normal();
  compute_obs();
  return obs_;
}

void PointflyEnv::compute_obs() {
  obs_.clear();
  const double c = std::cos(theta_), s = std::sin(theta_);
  // desired world velocity at the current index
  double wx, wy, wz = 0.0;
  if (flight_) {
    wx = desc_.command[0];
    wy = desc_.command[1];
    wz = desc_.command[2];
  } else {
    const double th = desc_.command[1] * double(k_) * desc_.dt;
    wx = desc_.command[0] * std::cos(th);
    wy = desc_.command[0] * std::sin(th);
  }
  // body frame: rotate world vectors by -theta about z
  const double dvx = c * wx + s * wy;
  const double dvy = -s * wx + c * wy;

  obs_.push_back(vx_);
  obs_.push_back(vy_);
  if (flight_) obs_.push_back(vz_);
  obs_.push_back(vx_ - dvx);
  obs_.push_back(vy_ - dvy);
  if (flight_) obs_.push_back(vz_ - wz);
  const double ref_yaw_rate = flight_ ? 0.0 : desc_.command[1];
  obs_.push_back(omega_ - ref_yaw_rate);
  obs_.push_back(heading_error());
  for (int i = 0; i < 5; ++i) {
    const auto ref = reference_point(k_ + i);
    const double rx = ref[0] - px_, ry = ref[1] - py_;
    obs_.push_back(c * rx + s * ry);
    obs_.push_back(-s * rx + c * ry);
    if (flight_) obs_.push_back(ref[2] - pz_);
  }
  if (flight_) {
    obs_.push_back(pz_ - reference_point(k_)[2]);  // altitude error
    obs_.push_back(desc_.command[0]);
    obs_.push_back(desc_.command[1]);
    obs_.push_back(desc_.command[2]);
  } else {
    obs_.push_back(desc_.command[0]);
    obs_.push_back(desc_.command[1]);
  }
}

StepResult PointflyEnv::step(std::span<const double> action) {
  if (done_) throw std::logic_error("env step after episode end");
  if (int(action.size()) != desc_.act_dim)
    throw UsageError("env: action length " + std::to_string(action.size()) + ", expected " +
                     std::to_string(desc_.act_dim));
  for (double a : action)
    if (!std::isfinite(a)) throw DataError("env: non-finite action");

  const double dt = desc_.dt;
  double act_sq = 0.0;
  for (double a : action) act_sq += a * a;

  if (flight_) {
    const double brake = std::max(action[4], 0.0);
    const double drag = prm_.drag + prm_.brake_drag * brake;
    vx_ += dt * (prm_.thrust_gain * action[0] - drag * vx_);
    vy_ += dt * (prm_.thrust_gain * action[1] - drag * vy_);
    vz_ += dt * (prm_.thrust_gain * (action[2] + action[5]) - drag * vz_);
    omega_ += dt * (prm_.yaw_gain * action[3] - prm_.yaw_drag * omega_);
  } else {
    const double brake = std::max(action[3], 0.0);
    const double drag = prm_.drag + prm_.brake_drag * brake;
    vx_ += dt * (prm_.thrust_gain * action[0] - drag * vx_);
    vy_ += dt * (prm_.thrust_gain * action[1] - drag * vy_);
    omega_ += dt * (prm_.yaw_gain * action[2] - prm_.yaw_drag * omega_);
  }
  theta_ = wrap_angle(theta_ + dt * omega_);
  const double c = std::cos(theta_), s = std::sin(theta_);
  px_ += dt * (c * vx_ - s * vy_);
  py_ += dt * (s * vx_ + c * vy_);
  if (flight_) pz_ += dt * vz_;

  ++k_;
  const double dev = deviation();
  const double ang = std::abs(heading_error());

  StepResult out;
  out.reward = -(prm_.w_pos * dev + prm_.w_ang * ang + prm_.w_act * act_sq);
  out.failed = dev > prm_.deviation_limit;
  out.done = out.failed || k_ >= desc_.episode_len;
  done_ = out.done;
  compute_obs();
  out.obs = obs_;
  return out;
}

void PointflyEnv::teleport(std::span<const double> position) {
  px_ = position[0];
  py_ = position[1];
  if (flight_ && position.size() > 2) pz_ = position[2];
  compute_obs();
}

ActionDist expert_controller(std::span<const double> obs, const EnvDescriptor& desc,
                             const ExpertGains& g) {
  ActionDist d;
  d.sigma.assign(size_t(desc.act_dim), g.sigma);
  d.mu.assign(size_t(desc.act_dim), 0.0);
  if (desc.name == "pointfly-walk") {
    // obs: v(2) ev(2) e_om e_th wp0..wp4(10) cmd(2)
    const double evx = obs[2], evy = obs[3];
    const double e_om = obs[4], e_th = obs[5];
    const double wx = obs[6], wy = obs[7];
    d.mu[0] = -g.k_v * evx + g.k_pos * wx;
    d.mu[1] = -g.k_v * evy + g.k_pos * wy;
    d.mu[2] = -g.k_th * e_th - g.k_om * e_om;
  } else {
    // obs: v(3) ev(3) e_om e_th wp0..wp4(15) alt_err cmd(3)
    const double evx = obs[3], evy = obs[4], evz = obs[5];
    const double e_om = obs[6], e_th = obs[7];
    const double wx = obs[8], wy = obs[9], wz = obs[10];
    d.mu[0] = -g.k_v * evx + g.k_pos * wx;
    d.mu[1] = -g.k_v * evy + g.k_pos * wy;
    d.mu[2] = -g.k_v * evz + g.k_pos * wz;
    d.mu[3] = -g.k_th * e_th - g.k_om * e_om;
  }
  return d;
}

Dataset rollout_dataset(const EnvDescriptor& base, const EnvParams& prm,
                        const DatasetOptions& opt, const ExpertGains& gains,
                        RolloutStats* stats) {
  if (opt.grid.empty()) throw UsageError("rollout_dataset: empty command grid");
  Dataset ds;
  {
    auto d0 = EnvDescriptor::make(base.name, opt.grid[0], base.dt, base.episode_len);
    ds.env_name = d0.name;
    ds.obs_dim = d0.obs_dim;
    ds.act_dim = d0.act_dim;
    ds.cmd_dim = d0.cmd_dim;
    ds.dt = d0.dt;
    ds.episode_len = d0.episode_len;
  }
  RolloutStats st;
  for (size_t cell = 0; cell < opt.grid.size(); ++cell) {
    auto desc = EnvDescriptor::make(base.name, opt.grid[cell], base.dt, base.episode_len);
    for (int ep = 0; ep < opt.episodes_per_cell; ++ep) {
      const uint64_t ep_seed = derive_seed(opt.seed, "dataset") + cell * 1000003ULL + uint64_t(ep);
      PointflyEnv env(desc, prm, ep_seed);
      Rng act_rng(derive_seed(ep_seed, "expert_sample"));
      DatasetEpisode episode;
      episode.command = desc.command;
      std::vector<double> obs = env.reset();
      bool failed = false;
      while (true) {
        ActionDist ex = expert_controller(obs, desc, gains);
        std::vector<double> a(ex.mu.size());
        for (size_t i = 0; i < a.size(); ++i) a[i] = ex.mu[i] + ex.sigma[i] * act_rng.normal();
        StepResult sr = env.step(a);
        episode.obs.insert(episode.obs.end(), obs.begin(), obs.end());
        episode.action.insert(episode.action.end(), a.begin(), a.end());
        episode.expert_mu.insert(episode.expert_mu.end(), ex.mu.begin(), ex.mu.end());
        episode.expert_sigma.insert(episode.expert_sigma.end(), ex.sigma.begin(), ex.sigma.end());
        episode.reward.push_back(sr.reward);
        episode.done.push_back(sr.done ? 1 : 0);
        ++episode.length;
        obs = sr.obs;
        if (sr.done) {
          failed = sr.failed;
          break;
        }
      }
      if (failed || episode.length <= opt.min_len) {
        ++st.dropped;
        continue;
      }
      ++st.kept;
      ds.episodes.push_back(std::move(episode));
    }
  }
  if (stats) *stats = st;
  return ds;
}

namespace detail {

EpisodeScore run_episode(PointflyEnv& env,
                         const std::function<std::vector<double>(std::span<const double>)>& policy_fn,
                         const std::function<void()>& on_step) {
  EpisodeScore score;
  std::vector<double> obs = env.reset();
  int steps = 0;
  while (true) {
    auto action = policy_fn(obs);
    StepResult sr = env.step(action);
    score.pos_err += env.deviation();
    score.angle_err += std::abs(env.heading_error());
    ++steps;
    if (on_step) on_step();
    obs = sr.obs;
    if (sr.done) break;
  }
  score.pos_err /= std::max(1, steps);
  score.angle_err /= std::max(1, steps);
  return score;
}

std::vector<EvalCellResult> evaluate_impl(
    const EnvDescriptor& base, const EnvParams& prm,
    const std::vector<std::vector<double>>& grid, const EvalOptions& opt,
    const std::function<void(const EnvDescriptor&)>& on_episode_start,
    const std::function<std::vector<double>(std::span<const double>)>& policy_fn,
    const std::function<void()>& on_step) {
  if (grid.empty()) throw UsageError("evaluate: empty command grid");
  std::vector<EvalCellResult> out;
  for (size_t cell = 0; cell < grid.size(); ++cell) {
    auto desc = EnvDescriptor::make(base.name, grid[cell], base.dt, base.episode_len);
    EvalCellResult res;
    res.command = desc.command;
    res.episodes = opt.episodes;
    std::vector<double> pe, ae;
    for (int ep = 0; ep < opt.episodes; ++ep) {
      const uint64_t ep_seed = derive_seed(opt.seed, "eval") + cell * 1000003ULL + uint64_t(ep);
      PointflyEnv env(desc, prm, ep_seed);
      if (on_episode_start) on_episode_start(desc);
      auto score = run_episode(env, policy_fn, on_step);
      pe.push_back(score.pos_err);
      ae.push_back(score.angle_err);
    }
    auto mean_std = [](const std::vector<double>& v, double& mean, double& sd) {
      mean = 0.0;
      for (double x : v) mean += x;
      mean /= double(v.size());
      double s2 = 0.0;
      for (double x : v) s2 += (x - mean) * (x - mean);
      sd = v.size() > 1 ? std::sqrt(s2 / double(v.size() - 1)) : 0.0;
    };
    mean_std(pe, res.pos_err_mean, res.pos_err_std);
    mean_std(ae, res.angle_err_mean, res.angle_err_std);
    out.push_back(std::move(res));
  }
  return out;
}

}  // namespace detail

std::vector<EvalCellResult> evaluate_expert(const EnvDescriptor& base, const EnvParams& prm,
                                            const std::vector<std::vector<double>>& grid,
                                            const EvalOptions& opt, const ExpertGains& gains) {
  EnvDescriptor current = base;
  auto on_start = [&](const EnvDescriptor& d) { current = d; };
  auto policy_fn = [&](std::span<const double> obs) {
    return expert_controller(obs, current, gains).mu;
  };
  return detail::evaluate_impl(base, prm, grid, opt, on_start, policy_fn, {});
}

}  // namespace flygm
