#include "flygm/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

namespace flygm {

namespace {

enum class FieldKind { Bool, Int, U64, Double, String };

struct Field {
  const char* section;
  const char* key;
  FieldKind kind;
  size_t offset;
};

template <typename T>
size_t offset_of(T Config::* member) {
  Config c;
  return size_t(reinterpret_cast<const char*>(&(c.*member)) - reinterpret_cast<const char*>(&c));
}

const std::vector<Field>& schema() {
  static const std::vector<Field> fields = [] {
    std::vector<Field> f;
    auto B = [&](const char* s, const char* k, bool Config::* m) {
      f.push_back({s, k, FieldKind::Bool, offset_of(m)});
    };
    auto I = [&](const char* s, const char* k, int Config::* m) {
      f.push_back({s, k, FieldKind::Int, offset_of(m)});
    };
    auto U = [&](const char* s, const char* k, uint64_t Config::* m) {
      f.push_back({s, k, FieldKind::U64, offset_of(m)});
    };
    auto D = [&](const char* s, const char* k, double Config::* m) {
      f.push_back({s, k, FieldKind::Double, offset_of(m)});
    };
    auto S = [&](const char* s, const char* k, std::string Config::* m) {
      f.push_back({s, k, FieldKind::String, offset_of(m)});
    };

    S("run", "name", &Config::run_name);
    S("run", "out", &Config::out_dir);
    U("run", "seed", &Config::seed);
    S("run", "dtype", &Config::dtype);

    S("connectome", "neurons", &Config::neurons_csv);
    S("connectome", "edges", &Config::edges_csv);
    B("connectome", "unknown_nt_excitatory", &Config::unknown_nt_excitatory);

    I("synth", "afferent", &Config::synth_afferent);
    I("synth", "intrinsic", &Config::synth_intrinsic);
    I("synth", "efferent", &Config::synth_efferent);
    I("synth", "edges", &Config::synth_edges);
    I("synth", "blocks", &Config::synth_blocks);
    D("synth", "modularity", &Config::synth_modularity);
    I("synth", "max_syn_count", &Config::synth_max_syn_count);
    D("synth", "ach", &Config::synth_ach);
    D("synth", "glu", &Config::synth_glu);
    D("synth", "asp", &Config::synth_asp);
    D("synth", "his", &Config::synth_his);
    D("synth", "gaba", &Config::synth_gaba);
    D("synth", "gly", &Config::synth_gly);

    S("topology", "mode", &Config::topology_mode);
    I("topology", "swaps_per_edge", &Config::topology_swaps_per_edge);
    I("topology", "max_attempts_factor", &Config::topology_max_attempts_factor);
    B("topology", "unit_weights", &Config::topology_unit_weights);

    S("policy", "kind", &Config::policy_kind);
    I("policy", "channels", &Config::policy_channels);
    I("policy", "descriptor_dim", &Config::policy_descriptor_dim);
    I("policy", "enc_dim", &Config::policy_enc_dim);
    I("policy", "k_iters", &Config::policy_k_iters);
    I("policy", "update_hidden", &Config::policy_update_hidden);
    I("policy", "dec_hidden", &Config::policy_dec_hidden);
    B("policy", "per_iter_update", &Config::policy_per_iter_update);
    B("policy", "reset_each_step", &Config::policy_reset_each_step);
    D("policy", "sigma_floor", &Config::policy_sigma_floor);
    I("policy", "mlp_hidden", &Config::policy_mlp_hidden);
    I("policy", "mlp_enc_dim", &Config::policy_mlp_enc_dim);

    I("value", "hidden", &Config::value_hidden);

    I("il", "epochs", &Config::il_epochs);
    I("il", "window", &Config::il_window);
    I("il", "batch_size", &Config::il_batch_size);
    D("il", "lambda0", &Config::il_lambda0);
    D("il", "lambda_frac", &Config::il_lambda_frac);
    D("il", "alpha", &Config::il_alpha);
    D("il", "lr", &Config::il_lr);
    D("il", "weight_decay", &Config::il_weight_decay);
    D("il", "clip_norm", &Config::il_clip_norm);
    B("il", "refit_norm", &Config::il_refit_norm);

    I("ppo", "iterations", &Config::ppo_iterations);
    I("ppo", "n_envs", &Config::ppo_n_envs);
    I("ppo", "horizon", &Config::ppo_horizon);
    I("ppo", "epochs", &Config::ppo_epochs);
    I("ppo", "minibatch", &Config::ppo_minibatch);
    D("ppo", "clip", &Config::ppo_clip);
    D("ppo", "c_value", &Config::ppo_c_value);
    D("ppo", "c_entropy", &Config::ppo_c_entropy);
    D("ppo", "gamma", &Config::ppo_gamma);
    D("ppo", "gae_lambda", &Config::ppo_gae_lambda);
    D("ppo", "lr", &Config::ppo_lr);
    D("ppo", "value_lr", &Config::ppo_value_lr);
    D("ppo", "weight_decay", &Config::ppo_weight_decay);
    D("ppo", "clip_norm", &Config::ppo_clip_norm);
    D("ppo", "logp_diff_limit", &Config::ppo_logp_diff_limit);
    B("ppo", "update_norm", &Config::ppo_update_norm);
    S("ppo", "commands", &Config::ppo_commands);

    S("env", "name", &Config::env_name);
    D("env", "dt", &Config::env_dt);
    I("env", "episode_len", &Config::env_episode_len);
    D("env", "thrust_gain", &Config::env_thrust_gain);
    D("env", "yaw_gain", &Config::env_yaw_gain);
    D("env", "drag", &Config::env_drag);
    D("env", "yaw_drag", &Config::env_yaw_drag);
    D("env", "brake_drag", &Config::env_brake_drag);
    D("env", "init_noise", &Config::env_init_noise);
    D("env", "deviation_limit", &Config::env_deviation_limit);
    D("env", "w_pos", &Config::env_w_pos);
    D("env", "w_ang", &Config::env_w_ang);
    D("env", "w_act", &Config::env_w_act);

    D("expert", "k_v", &Config::expert_k_v);
    D("expert", "k_pos", &Config::expert_k_pos);
    D("expert", "k_th", &Config::expert_k_th);
    D("expert", "k_om", &Config::expert_k_om);
    D("expert", "sigma", &Config::expert_sigma);

    S("dataset", "grid", &Config::dataset_grid);
    I("dataset", "episodes_per_cell", &Config::dataset_episodes_per_cell);
    I("dataset", "min_len", &Config::dataset_min_len);

    I("eval", "episodes", &Config::eval_episodes);
    I("eval", "record_cell", &Config::eval_record_cell);
    S("eval", "commands", &Config::eval_commands);

    D("analysis", "alpha", &Config::analysis_alpha);
    B("analysis", "distance_as_similarity", &Config::analysis_distance_as_similarity);
    I("analysis", "cap.sensory", &Config::cap_sensory);
    I("analysis", "cap.ascending", &Config::cap_ascending);
    I("analysis", "cap.optic", &Config::cap_optic);
    I("analysis", "cap.central", &Config::cap_central);
    I("analysis", "cap.visual_projection", &Config::cap_visual_projection);
    I("analysis", "cap.visual_centrifugal", &Config::cap_visual_centrifugal);
    I("analysis", "cap.descending", &Config::cap_descending);
    I("analysis", "cap.motor", &Config::cap_motor);
    I("analysis", "cap.endocrine", &Config::cap_endocrine);

    S("compare", "arms", &Config::compare_arms);
    I("compare", "seeds", &Config::compare_seeds);
    I("compare", "jobs", &Config::compare_jobs);
    return f;
  }();
  return fields;
}

std::string trim(std::string_view s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(uint8_t(s[a]))) ++a;
  while (b > a && std::isspace(uint8_t(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

void set_field(Config& cfg, const Field& f, const std::string& raw, const std::string& where) {
  char* base = reinterpret_cast<char*>(&cfg);
  const std::string v = trim(raw);
  switch (f.kind) {
    case FieldKind::String:
      *reinterpret_cast<std::string*>(base + f.offset) = v;
      return;
    case FieldKind::Bool: {
      bool out;
      if (v == "true" || v == "1" || v == "yes" || v == "on") out = true;
      else if (v == "false" || v == "0" || v == "no" || v == "off") out = false;
      else throw UsageError(where + ": expected a boolean, got '" + v + "'");
      *reinterpret_cast<bool*>(base + f.offset) = out;
      return;
    }
    case FieldKind::Int: {
      char* end = nullptr;
      const long long x = std::strtoll(v.c_str(), &end, 10);
      if (v.empty() || end != v.c_str() + v.size())
        throw UsageError(where + ": expected an integer, got '" + v + "'");
      *reinterpret_cast<int*>(base + f.offset) = int(x);
      return;
    }
    case FieldKind::U64: {
      char* end = nullptr;
      const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
      if (v.empty() || end != v.c_str() + v.size() || v[0] == '-')
        throw UsageError(where + ": expected an unsigned integer, got '" + v + "'");
      *reinterpret_cast<uint64_t*>(base + f.offset) = uint64_t(x);
      return;
    }
    case FieldKind::Double: {
      char* end = nullptr;
      const double x = std::strtod(v.c_str(), &end);
      if (v.empty() || end != v.c_str() + v.size())
        throw UsageError(where + ": expected a number, got '" + v + "'");
      *reinterpret_cast<double*>(base + f.offset) = x;
      return;
    }
  }
}

std::string get_field(const Config& cfg, const Field& f) {
  const char* base = reinterpret_cast<const char*>(&cfg);
  switch (f.kind) {
    case FieldKind::String:
      return *reinterpret_cast<const std::string*>(base + f.offset);
    case FieldKind::Bool:
      return *reinterpret_cast<const bool*>(base + f.offset) ? "true" : "false";
    case FieldKind::Int:
      return std::to_string(*reinterpret_cast<const int*>(base + f.offset));
    case FieldKind::U64:
      return std::to_string(*reinterpret_cast<const uint64_t*>(base + f.offset));
    case FieldKind::Double: {
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", *reinterpret_cast<const double*>(base + f.offset));
      return buf;
    }
  }
  return {};
}

const Field& find_field(const std::string& section, const std::string& key,
                        const std::string& where) {
  for (const auto& f : schema())
    if (section == f.section && key == f.key) return f;
  throw UsageError(where + ": unknown config key [" + section + "] " + key);
}

}  // namespace

void apply_override(Config& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw UsageError("override '" + assignment + "' must look like section.key=value");
  const std::string path = trim(assignment.substr(0, eq));
  const auto dot = path.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == path.size())
    throw UsageError("override '" + assignment + "' must look like section.key=value");
  const std::string section = path.substr(0, dot);
  const std::string key = path.substr(dot + 1);
  set_field(cfg, find_field(section, key, "override " + assignment),
            assignment.substr(eq + 1), "override " + assignment);
}

Config load_config(const std::string& path, const std::vector<std::string>& overrides) {
  Config cfg;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw UsageError(path + ": cannot open config file");
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string where = path + ":" + std::to_string(lineno);
      std::string t = trim(line);
      if (t.empty() || t[0] == '#' || t[0] == ';') continue;
      if (t.front() == '[') {
        if (t.back() != ']') throw UsageError(where + ": unterminated section header");
        section = trim(t.substr(1, t.size() - 2));
        bool known = false;
        for (const auto& f : schema())
          if (section == f.section) known = true;
        if (!known) throw UsageError(where + ": unknown config section [" + section + "]");
        continue;
      }
      const auto eq = t.find('=');
      if (eq == std::string::npos) throw UsageError(where + ": expected key = value");
      if (section.empty()) throw UsageError(where + ": key before any [section]");
      const std::string key = trim(t.substr(0, eq));
      set_field(cfg, find_field(section, key, where), t.substr(eq + 1), where);
    }
  }
  for (const auto& ov : overrides) apply_override(cfg, ov);
  validate_config(cfg);
  return cfg;
}

std::string resolved_text(const Config& cfg) {
  std::ostringstream out;
  std::string section;
  for (const auto& f : schema()) {
    if (section != f.section) {
      if (!section.empty()) out << "\n";
      section = f.section;
      out << "[" << section << "]\n";
    }
    out << f.key << " = " << get_field(cfg, f) << "\n";
  }
  return out.str();
}

void validate_config(const Config& cfg) {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw UsageError("config: " + msg);
  };
  require(cfg.dtype == "f32" || cfg.dtype == "f64", "run.dtype must be f32 or f64");
  require(!cfg.run_name.empty(), "run.name must not be empty");
  require(cfg.run_name.find('/') == std::string::npos, "run.name must not contain '/'");
  require(cfg.topology_mode == "connectome" || cfg.topology_mode == "rewired" ||
              cfg.topology_mode == "er",
          "topology.mode must be connectome, rewired, or er");
  require(cfg.policy_kind == "flygm" || cfg.policy_kind == "mlp",
          "policy.kind must be flygm or mlp");
  require(cfg.env_name == "pointfly-walk" || cfg.env_name == "pointfly-flight",
          "env.name must be pointfly-walk or pointfly-flight");
  require(cfg.env_dt > 0.0, "env.dt must be positive");
  require(cfg.env_episode_len > 0, "env.episode_len must be positive");
  require(cfg.policy_channels > 0 && cfg.policy_k_iters > 0, "policy dims must be positive");
  require(cfg.value_hidden > 0, "value.hidden must be positive");
  require(cfg.il_window > 0 && cfg.il_batch_size > 0 && cfg.il_epochs >= 0,
          "il sizes must be positive");
  require(cfg.ppo_n_envs > 0 && cfg.ppo_horizon > 0 && cfg.ppo_minibatch > 0 &&
              cfg.ppo_iterations >= 0 && cfg.ppo_epochs > 0,
          "ppo sizes must be positive");
  require(cfg.dataset_episodes_per_cell > 0, "dataset.episodes_per_cell must be positive");
  require(cfg.eval_episodes > 0, "eval.episodes must be positive");
  require(cfg.analysis_alpha >= 0.0 && cfg.analysis_alpha <= 1.0,
          "analysis.alpha must lie in [0, 1]");
  require(cfg.compare_seeds > 0 && cfg.compare_jobs > 0, "compare sizes must be positive");
  parse_command_grid(cfg.dataset_grid);
  parse_command_grid(cfg.ppo_commands);
  if (!cfg.eval_commands.empty()) parse_command_grid(cfg.eval_commands);
}

std::vector<std::vector<double>> parse_command_grid(const std::string& text) {
  std::vector<std::vector<double>> grid;
  std::string cell;
  std::istringstream cells(text);
  while (std::getline(cells, cell, ';')) {
    cell = trim(cell);
    if (cell.empty()) continue;
    std::vector<double> cmd;
    std::string part;
    std::istringstream parts(cell);
    while (std::getline(parts, part, ':')) {
      part = trim(part);
      char* end = nullptr;
      const double x = std::strtod(part.c_str(), &end);
      if (part.empty() || end != part.c_str() + part.size())
        throw UsageError("command grid: '" + part + "' is not a number");
      cmd.push_back(x);
    }
    if (cmd.empty()) throw UsageError("command grid: empty cell");
    grid.push_back(std::move(cmd));
  }
  if (grid.empty()) throw UsageError("command grid: no cells in '" + text + "'");
  return grid;
}

}  // namespace flygm
