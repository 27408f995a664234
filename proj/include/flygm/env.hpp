#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "flygm/policy.hpp"
#include "flygm/types.hpp"

namespace flygm {

struct EnvDescriptor {
  std::string name;          // pointfly-walk | pointfly-flight
  int obs_dim = 0;
  int act_dim = 0;
  int cmd_dim = 0;
  double dt = 0.01;
  int episode_len = 500;
  std::vector<double> command;  // walk: {speed, yaw rate}; flight: {vx, vy, vz}

  static EnvDescriptor make(const std::string& name, std::vector<double> command = {},
                            double dt = 0.01, int episode_len = 500);
};

struct EnvParams {
  double thrust_gain = 4.0;
  double yaw_gain = 8.0;
  double drag = 0.2;
  double yaw_drag = 0.2;
  double brake_drag = 4.0;     // extra drag per unit of brake command
  double init_noise = 0.01;
  double deviation_limit = 10.0;
  double w_pos = 1.0;
  double w_ang = 0.5;
  double w_act = 0.01;
};

struct ExpertGains {
  double k_v = 4.0;    // velocity error
  double k_pos = 6.0;  // pull toward the current reference point
  double k_th = 4.0;   // heading error
  double k_om = 1.5;   // yaw-rate error
  double sigma = 0.05; // constant per-dimension std
};

struct StepResult {
  std::vector<double> obs;
  double reward = 0.0;
  bool done = false;
  bool failed = false;  // done through the deviation limit
};

inline double wrap_angle(double a) {
  while (a > M_PI) a -= 2.0 * M_PI;
  while (a < -M_PI) a += 2.0 * M_PI;
  return a;
}

// Planar (or 3-D for flight) point mass with linear drag, body-frame thrust,
// yaw torque, and a brake channel that scales drag up. The reference path is
// precomputed from the command: constant speed and yaw rate give a line or a
// circle; flight tracks a constant velocity vector.
class PointflyEnv {
 public:
  PointflyEnv(EnvDescriptor desc, EnvParams params, uint64_t seed);

  const EnvDescriptor& descriptor() const { return desc_; }
  const std::vector<double>& reset();
  StepResult step(std::span<const double> action);

  int step_index() const { return k_; }
  // world-frame reference point for step index k
  std::vector<double> reference_point(int k) const;
  double reference_heading(int k) const;
  // distance from the agent to the current reference point
  double deviation() const;
  double heading_error() const;

  // test hook: move the body in world frame
  void teleport(std::span<const double> position);

 private:
  void compute_obs();
  bool is_flight() const { return flight_; }

  EnvDescriptor desc_;
  EnvParams prm_;
  Rng rng_;
  bool flight_ = false;
  int k_ = 0;
  bool done_ = false;
  // state
  double px_ = 0, py_ = 0, pz_ = 0;
  double vx_ = 0, vy_ = 0, vz_ = 0;  // body frame
  double theta_ = 0, omega_ = 0;
  std::vector<double> obs_;
};

ActionDist expert_controller(std::span<const double> obs, const EnvDescriptor& desc,
                             const ExpertGains& gains = {});

struct DatasetEpisode {
  std::vector<double> command;
  int32_t length = 0;
  // row-major [length x dim]
  std::vector<double> obs, action, expert_mu, expert_sigma;
  std::vector<double> reward;
  std::vector<uint8_t> done;
};

struct Dataset {
  std::string env_name;
  int32_t obs_dim = 0;
  int32_t act_dim = 0;
  int32_t cmd_dim = 0;
  double dt = 0.01;
  int32_t episode_len = 500;
  std::vector<DatasetEpisode> episodes;

  int64_t total_steps() const {
    int64_t n = 0;
    for (const auto& e : episodes) n += e.length;
    return n;
  }
};

struct DatasetOptions {
  std::vector<std::vector<double>> grid;  // commands
  int episodes_per_cell = 8;
  int min_len = 100;  // episodes must be strictly longer to be kept
  uint64_t seed = 0;
};

struct RolloutStats {
  int64_t kept = 0;
  int64_t dropped = 0;
};

// Expert rollouts (actions sampled from the expert's Gaussian); episodes that
// end early or never exceed min_len steps are dropped.
Dataset rollout_dataset(const EnvDescriptor& base, const EnvParams& prm,
                        const DatasetOptions& opt, const ExpertGains& gains = {},
                        RolloutStats* stats = nullptr);

struct EvalCellResult {
  std::vector<double> command;
  int episodes = 0;
  double pos_err_mean = 0, pos_err_std = 0;
  double angle_err_mean = 0, angle_err_std = 0;
};

struct EvalOptions {
  int episodes = 5;
  uint64_t seed = 0;
  // when >= 0, record per-step controller state on this grid cell's first
  // episode (graph policies only)
  int record_cell = -1;
};

struct EvalRecording {
  int32_t t_steps = 0, n_neurons = 0, channels = 0;
  std::vector<double> data;  // T x N x C
};

namespace detail {

struct EpisodeScore {
  double pos_err = 0, angle_err = 0;
};

// policy_fn: obs -> deterministic action; on_step: called after each env step
EpisodeScore run_episode(PointflyEnv& env,
                         const std::function<std::vector<double>(std::span<const double>)>& policy_fn,
                         const std::function<void()>& on_step = {});

std::vector<EvalCellResult> evaluate_impl(
    const EnvDescriptor& base, const EnvParams& prm,
    const std::vector<std::vector<double>>& grid, const EvalOptions& opt,
    const std::function<void(const EnvDescriptor&)>& on_episode_start,
    const std::function<std::vector<double>(std::span<const double>)>& policy_fn,
    const std::function<void()>& on_step);

}  // namespace detail

// Deterministic evaluation (actions = mu). When opt.record_cell >= 0 and rec
// is given, the carried state of the first episode on that cell is recorded
// per step.
template <typename T>
std::vector<EvalCellResult> evaluate(PolicyModel<T>& policy, const EnvDescriptor& base,
                                     const EnvParams& prm,
                                     const std::vector<std::vector<double>>& grid,
                                     const EvalOptions& opt, EvalRecording* rec = nullptr) {
  policy.norm.freeze(true);  // evaluation never moves the statistics
  bool recording = false;
  std::vector<int> cell_episode(grid.size(), 0);
  auto on_episode_start = [&](const EnvDescriptor& d) {
    policy.reset_state();
    int current_cell = -1;
    for (size_t g = 0; g < grid.size(); ++g)
      if (grid[g] == d.command) current_cell = int(g);
    recording = rec && current_cell >= 0 && current_cell == opt.record_cell &&
                cell_episode[size_t(current_cell)] == 0;
    if (current_cell >= 0) ++cell_episode[size_t(current_cell)];
    if (recording) {
      if (!policy.recurrent())
        throw UsageError("recording requires a policy with carried per-neuron state");
      rec->t_steps = 0;
      rec->n_neurons = policy.state().rows;
      rec->channels = policy.state().cols;
      rec->data.clear();
    }
  };
  auto policy_fn = [&](std::span<const double> obs) {
    ActionDist d = policy.act(obs);
    return d.mu;
  };
  auto on_step = [&] {
    if (!recording) return;
    const auto& h = policy.state();
    rec->data.insert(rec->data.end(), h.data.begin(), h.data.end());
    ++rec->t_steps;
  };
  return detail::evaluate_impl(base, prm, grid, opt, on_episode_start, policy_fn, on_step);
}

std::vector<EvalCellResult> evaluate_expert(const EnvDescriptor& base, const EnvParams& prm,
                                            const std::vector<std::vector<double>>& grid,
                                            const EvalOptions& opt, const ExpertGains& gains = {});

}  // namespace flygm
