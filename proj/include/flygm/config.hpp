#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flygm/types.hpp"

namespace flygm {

struct Config {
  // run
  std::string run_name = "run";
  std::string out_dir = "out";
  uint64_t seed = 0;
  std::string dtype = "f64";  // f32 | f64

  // connectome
  std::string neurons_csv;
  std::string edges_csv;
  bool unknown_nt_excitatory = true;

  // synth
  int synth_afferent = 10;
  int synth_intrinsic = 80;
  int synth_efferent = 10;
  int synth_edges = 800;
  int synth_blocks = 4;
  double synth_modularity = 0.8;
  int synth_max_syn_count = 8;
  double synth_ach = 0.55, synth_glu = 0.12, synth_asp = 0.03, synth_his = 0.02;
  double synth_gaba = 0.25, synth_gly = 0.03;

  // topology
  std::string topology_mode = "connectome";  // connectome | rewired | er
  int topology_swaps_per_edge = 10;
  int topology_max_attempts_factor = 100;
  bool topology_unit_weights = false;

  // policy
  std::string policy_kind = "flygm";  // flygm | mlp
  int policy_channels = 32;
  int policy_descriptor_dim = 32;
  int policy_enc_dim = 32;
  int policy_k_iters = 4;
  int policy_update_hidden = 64;
  int policy_dec_hidden = 128;
  bool policy_per_iter_update = false;
  bool policy_reset_each_step = false;
  double policy_sigma_floor = 1e-6;
  int policy_mlp_hidden = 512;
  int policy_mlp_enc_dim = 32;

  // value
  int value_hidden = 128;

  // il
  int il_epochs = 40;
  int il_window = 16;
  int il_batch_size = 8;
  double il_lambda0 = 1.0;
  double il_lambda_frac = 0.8;
  double il_alpha = 0.1;
  double il_lr = 1e-3;
  double il_weight_decay = 1e-4;
  double il_clip_norm = 1.0;
  bool il_refit_norm = true;

  // ppo
  int ppo_iterations = 50;
  int ppo_n_envs = 8;
  int ppo_horizon = 256;
  int ppo_epochs = 4;
  int ppo_minibatch = 64;
  double ppo_clip = 0.2;
  double ppo_c_value = 0.5;
  double ppo_c_entropy = 0.01;
  double ppo_gamma = 0.99;
  double ppo_gae_lambda = 0.95;
  double ppo_lr = 3e-4;
  double ppo_value_lr = 1e-3;
  double ppo_weight_decay = 1e-4;
  double ppo_clip_norm = 1.0;
  double ppo_logp_diff_limit = 40.0;
  bool ppo_update_norm = true;
  std::string ppo_commands = "3:0";

  // env
  std::string env_name = "pointfly-walk";
  double env_dt = 0.01;
  int env_episode_len = 500;
  double env_thrust_gain = 4.0;
  double env_yaw_gain = 8.0;
  double env_drag = 0.2;
  double env_yaw_drag = 0.2;
  double env_brake_drag = 4.0;
  double env_init_noise = 0.01;
  double env_deviation_limit = 10.0;
  double env_w_pos = 1.0;
  double env_w_ang = 0.5;
  double env_w_act = 0.01;

  // expert
  double expert_k_v = 4.0;
  double expert_k_pos = 6.0;
  double expert_k_th = 4.0;
  double expert_k_om = 1.5;
  double expert_sigma = 0.05;

  // dataset
  std::string dataset_grid = "2:0;3:0;3:4;3:7";
  int dataset_episodes_per_cell = 8;
  int dataset_min_len = 100;

  // eval
  int eval_episodes = 5;
  int eval_record_cell = -1;
  std::string eval_commands;  // empty falls back to the dataset grid

  // analysis
  double analysis_alpha = 0.7;
  bool analysis_distance_as_similarity = false;
  int cap_sensory = 400;
  int cap_ascending = 200;
  int cap_optic = 1500;
  int cap_central = 400;
  int cap_visual_projection = 120;
  int cap_visual_centrifugal = 120;
  int cap_descending = 120;
  int cap_motor = 100;
  int cap_endocrine = 60;

  // compare
  std::string compare_arms = "connectome,rewired,er,mlp";
  int compare_seeds = 3;
  int compare_jobs = 1;
};

// INI file (sections + key=value) plus "section.key=value" override strings.
// Unknown sections or keys are hard usage errors.
Config load_config(const std::string& path, const std::vector<std::string>& overrides);
void apply_override(Config& cfg, const std::string& assignment);
std::string resolved_text(const Config& cfg);
void validate_config(const Config& cfg);

// "2:0;3:4" -> {{2,0},{3,4}}
std::vector<std::vector<double>> parse_command_grid(const std::string& text);

}  // namespace flygm
