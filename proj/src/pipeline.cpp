#include "flygm/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "flygm/analysis.hpp"
#include "flygm/nullmodels.hpp"
#include "flygm/persistence.hpp"
#include "flygm/policy.hpp"
#include "flygm/training.hpp"

#ifndef FLYGM_GIT_DESCRIBE
#define FLYGM_GIT_DESCRIBE "unknown"
#endif

namespace fs = std::filesystem;

namespace flygm {

namespace {

std::string fmt(const char* spec, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, x);
  return buf;
}

std::string join_command(const std::vector<double>& cmd) {
  std::string s;
  for (size_t i = 0; i < cmd.size(); ++i) {
    if (i) s += ":";
    s += fmt("%g", cmd[i]);
  }
  return s;
}

template <typename F>
void with_dtype(const std::string& dtype, F&& f) {
  if (dtype == "f32") {
    f(float{});
  } else {
    f(double{});
  }
}

FlyGMConfig flygm_config(const Config& cfg) {
  FlyGMConfig c;
  c.channels = cfg.policy_channels;
  c.descriptor_dim = cfg.policy_descriptor_dim;
  c.enc_dim = cfg.policy_enc_dim;
  c.k_iters = cfg.policy_k_iters;
  c.update_hidden = cfg.policy_update_hidden;
  c.dec_hidden = cfg.policy_dec_hidden;
  c.per_iter_update = cfg.policy_per_iter_update;
  c.reset_each_step = cfg.policy_reset_each_step;
  c.sigma_floor = cfg.policy_sigma_floor;
  return c;
}

MlpConfig mlp_config(const Config& cfg) {
  MlpConfig c;
  c.enc_dim = cfg.policy_mlp_enc_dim;
  c.hidden = cfg.policy_mlp_hidden;
  c.sigma_floor = cfg.policy_sigma_floor;
  return c;
}

template <typename T>
std::unique_ptr<PolicyModel<T>> make_policy(const Config& cfg, const std::string& kind,
                                            const GraphBundle* bundle, int obs_dim, int act_dim,
                                            uint64_t seed) {
  if (kind == "mlp")
    return std::make_unique<MlpPolicy<T>>(obs_dim, act_dim, mlp_config(cfg), seed);
  if (!bundle)
    throw UsageError("the graph policy needs a graph directory; run ingest, synth, or topology first");
  return std::make_unique<FlyGMPolicy<T>>(bundle->graph, bundle->op, obs_dim, act_dim,
                                          flygm_config(cfg), seed);
}

std::string kind_of_checkpoint(const std::vector<NamedTensor>& ts) {
  const double code = require_tensor(ts, "meta.kind").as_scalar();
  if (code == 0.0) return "flygm";
  if (code == 1.0) return "mlp";
  throw DataError("checkpoint does not hold a policy");
}

GraphBundle maybe_graph(const RunPaths& paths, const Config& cfg, bool required) {
  if (fs::exists(paths.neurons_csv())) return load_graph_dir(paths.graph_dir(), cfg);
  if (required)
    throw UsageError("no graph directory under " + paths.root +
                     "; run ingest, synth, or topology first");
  return {};
}

void write_csv_atomic(const std::string& path, const std::string& text) {
  write_text_atomic(path, text);
}

void append_manifest(const RunPaths& paths, const std::string& command_line, double wall_s) {
  std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  std::ofstream out(paths.manifest(), std::ios::app);
  out << stamp << " cmd=" << command_line << " wall_s=" << fmt("%.2f", wall_s)
      << " build=" << FLYGM_GIT_DESCRIBE << "\n";
}

std::string il_csv_text(const std::vector<ILEpochRow>& rows) {
  std::ostringstream out;
  out << "epoch,lambda,loss,kl,mu_mse,sigma_mse\n";
  for (const auto& r : rows)
    out << r.epoch << "," << fmt("%.17g", r.lambda) << "," << fmt("%.17g", r.loss) << ","
        << fmt("%.17g", r.kl) << "," << fmt("%.17g", r.mu_mse) << ","
        << fmt("%.17g", r.sigma_mse) << "\n";
  return out.str();
}

std::string rl_csv_text(const std::vector<RLIterRow>& rows) {
  std::ostringstream out;
  out << "iter,mean_return,episodes,policy_loss,value_loss,entropy,clip_frac,approx_kl,"
         "skipped_samples,skipped_updates\n";
  for (const auto& r : rows)
    out << r.iter << "," << fmt("%.17g", r.mean_return) << "," << r.episodes << ","
        << fmt("%.17g", r.policy_loss) << "," << fmt("%.17g", r.value_loss) << ","
        << fmt("%.17g", r.entropy) << "," << fmt("%.17g", r.clip_frac) << ","
        << fmt("%.17g", r.approx_kl) << "," << r.skipped_samples << "," << r.skipped_updates
        << "\n";
  return out.str();
}

std::string eval_csv_text(const std::vector<EvalCellResult>& cells) {
  std::ostringstream out;
  out << "command,episodes,pos_err_mean,pos_err_std,angle_err_mean,angle_err_std\n";
  for (const auto& c : cells)
    out << join_command(c.command) << "," << c.episodes << "," << fmt("%.17g", c.pos_err_mean)
        << "," << fmt("%.17g", c.pos_err_std) << "," << fmt("%.17g", c.angle_err_mean) << ","
        << fmt("%.17g", c.angle_err_std) << "\n";
  return out.str();
}

Dataset require_dataset(const RunPaths& paths) {
  if (!fs::exists(paths.dataset_file()))
    throw UsageError("no dataset under " + paths.root + "; run make-dataset first");
  return load_dataset(paths.dataset_file());
}

void print_graph_summary(const Connectome& g) {
  std::printf("|V|=%d |E|=%zu (Va=%zu Vi=%zu Ve=%zu)\n", g.size(), g.edges.size(),
              g.afferent.size(), g.intrinsic.size(), g.efferent.size());
}

}  // namespace

GraphBundle load_graph_dir(const std::string& dir, const Config& cfg) {
  GraphBundle b;
  std::ifstream meta(dir + "/meta.txt");
  if (!meta) throw DataError(dir + "/meta.txt: missing graph metadata");
  std::string line;
  while (std::getline(meta, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "mode") b.mode = val;
    if (key == "weights") b.weights = val;
  }
  const bool enforce_flow = b.mode != "er";
  b.graph = parse_connectome(dir + "/neurons.csv", dir + "/edges.csv", nullptr, enforce_flow);
  b.op = b.weights == "unit" ? unit_weights(b.graph)
                             : build_signed_operator(b.graph, cfg.unknown_nt_excitatory);
  return b;
}

void write_graph_dir(const std::string& dir, const Connectome& graph, const std::string& mode,
                     const std::string& weights, const Config& cfg) {
  fs::create_directories(dir);
  write_connectome_csv(graph, dir + "/neurons.csv", dir + "/edges.csv");
  write_text_atomic(dir + "/meta.txt", "mode=" + mode + "\nweights=" + weights + "\n");
  CsrMatrix op = weights == "unit" ? unit_weights(graph)
                                   : build_signed_operator(graph, cfg.unknown_nt_excitatory);
  save_operator(dir + "/operator.fgo", op);
}

EnvParams env_params(const Config& cfg) {
  EnvParams p;
  p.thrust_gain = cfg.env_thrust_gain;
  p.yaw_gain = cfg.env_yaw_gain;
  p.drag = cfg.env_drag;
  p.yaw_drag = cfg.env_yaw_drag;
  p.brake_drag = cfg.env_brake_drag;
  p.init_noise = cfg.env_init_noise;
  p.deviation_limit = cfg.env_deviation_limit;
  p.w_pos = cfg.env_w_pos;
  p.w_ang = cfg.env_w_ang;
  p.w_act = cfg.env_w_act;
  return p;
}

ExpertGains expert_gains(const Config& cfg) {
  ExpertGains g;
  g.k_v = cfg.expert_k_v;
  g.k_pos = cfg.expert_k_pos;
  g.k_th = cfg.expert_k_th;
  g.k_om = cfg.expert_k_om;
  g.sigma = cfg.expert_sigma;
  return g;
}

EnvDescriptor env_desc(const Config& cfg, std::vector<double> command) {
  return EnvDescriptor::make(cfg.env_name, std::move(command), cfg.env_dt, cfg.env_episode_len);
}

void with_run(const Config& cfg, const std::string& command_line,
              const std::function<void(const RunPaths&)>& body) {
  const RunPaths paths = RunPaths::make(cfg);
  fs::create_directories(paths.root);
  fs::create_directories(paths.ckpt_dir());
  fs::create_directories(paths.metrics_dir());
  write_text_atomic(paths.resolved_config(), resolved_text(cfg));
  const auto t0 = std::chrono::steady_clock::now();
  body(paths);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  append_manifest(paths, command_line, wall);
}

void cmd_ingest(const Config& cfg, const std::string& neurons_csv, const std::string& edges_csv) {
  with_run(cfg, "ingest", [&](const RunPaths& paths) {
    ParseReport report;
    Connectome g = parse_connectome(neurons_csv, edges_csv, &report);
    write_graph_dir(paths.graph_dir(), g, "connectome",
                    cfg.topology_unit_weights ? "unit" : "signed", cfg);
    print_graph_summary(g);
    if (report.merged_rows || report.dropped_self_loops || report.unknown_nt_labels)
      std::printf("merged=%lld self_loops_dropped=%lld unknown_nt=%lld\n",
                  (long long)report.merged_rows, (long long)report.dropped_self_loops,
                  (long long)report.unknown_nt_labels);
  });
}

void cmd_synth(const Config& cfg) {
  with_run(cfg, "synth", [&](const RunPaths& paths) {
    SynthSpec spec;
    spec.n_afferent = cfg.synth_afferent;
    spec.n_intrinsic = cfg.synth_intrinsic;
    spec.n_efferent = cfg.synth_efferent;
    spec.n_edges = cfg.synth_edges;
    spec.n_blocks = cfg.synth_blocks;
    spec.modularity = cfg.synth_modularity;
    spec.max_syn_count = cfg.synth_max_syn_count;
    spec.nt_mix = {cfg.synth_ach, cfg.synth_glu, cfg.synth_asp,
                   cfg.synth_his, cfg.synth_gaba, cfg.synth_gly};
    spec.seed = derive_seed(cfg.seed, "synth");
    Connectome g = synth_connectome(spec);
    write_graph_dir(paths.graph_dir(), g, "connectome",
                    cfg.topology_unit_weights ? "unit" : "signed", cfg);
    print_graph_summary(g);
  });
}

void cmd_topology(const Config& cfg, const std::string& source) {
  with_run(cfg, "topology mode=" + cfg.topology_mode, [&](const RunPaths& paths) {
    std::string src_dir = source.empty() ? paths.graph_dir() : source;
    if (fs::exists(src_dir + "/graph/neurons.csv")) src_dir += "/graph";
    if (!fs::exists(src_dir + "/neurons.csv"))
      throw UsageError(src_dir + ": no graph tables found");
    GraphBundle src = load_graph_dir(src_dir, cfg);

    if (cfg.topology_mode == "connectome") {
      write_graph_dir(paths.graph_dir(), src.graph, "connectome",
                      cfg.topology_unit_weights ? "unit" : "signed", cfg);
      print_graph_summary(src.graph);
      return;
    }
    const uint64_t seed = derive_seed(cfg.seed, "topology");
    if (cfg.topology_mode == "rewired") {
      RewireConfig rc;
      rc.swaps_per_edge = cfg.topology_swaps_per_edge;
      rc.max_attempts_factor = cfg.topology_max_attempts_factor;
      rc.seed = seed;
      RewireResult res = degree_preserving_rewire(src.graph, rc);
      write_graph_dir(paths.graph_dir(), res.graph, "rewired", "unit", cfg);
      std::printf("swaps accepted=%lld target=%lld attempts=%lld%s\n", (long long)res.accepted,
                  (long long)res.target, (long long)res.attempts,
                  res.target_met ? "" : " (target not met)");
      print_graph_summary(res.graph);
    } else {
      Connectome g = erdos_renyi_like(src.graph, seed);
      write_graph_dir(paths.graph_dir(), g, "er", "unit", cfg);
      print_graph_summary(g);
    }
  });
}

void cmd_make_dataset(const Config& cfg) {
  with_run(cfg, "make-dataset", [&](const RunPaths& paths) {
    DatasetOptions opt;
    opt.grid = parse_command_grid(cfg.dataset_grid);
    opt.episodes_per_cell = cfg.dataset_episodes_per_cell;
    opt.min_len = cfg.dataset_min_len;
    opt.seed = cfg.seed;
    RolloutStats stats;
    Dataset ds = rollout_dataset(env_desc(cfg), env_params(cfg), opt, expert_gains(cfg), &stats);
    save_dataset(paths.dataset_file(), ds);
    std::printf("episodes kept=%lld dropped=%lld steps=%lld cells=%zu\n", (long long)stats.kept,
                (long long)stats.dropped, (long long)ds.total_steps(), opt.grid.size());
  });
}

void cmd_train_il(const Config& cfg) {
  with_run(cfg, "train-il", [&](const RunPaths& paths) {
    Dataset ds = require_dataset(paths);
    GraphBundle bundle;
    if (cfg.policy_kind == "flygm") bundle = maybe_graph(paths, cfg, true);
    with_dtype(cfg.dtype, [&](auto tag) {
      using T = decltype(tag);
      auto policy = make_policy<T>(cfg, cfg.policy_kind,
                                   cfg.policy_kind == "flygm" ? &bundle : nullptr, ds.obs_dim,
                                   ds.act_dim, derive_seed(cfg.seed, "policy"));
      ILConfig il;
      il.epochs = cfg.il_epochs;
      il.window = cfg.il_window;
      il.batch_size = cfg.il_batch_size;
      il.lambda0 = cfg.il_lambda0;
      il.lambda_frac = cfg.il_lambda_frac;
      il.alpha = cfg.il_alpha;
      il.refit_norm = cfg.il_refit_norm;
      il.seed = cfg.seed;
      il.optim.lr = cfg.il_lr;
      il.optim.weight_decay = cfg.il_weight_decay;
      il.optim.clip_norm = cfg.il_clip_norm;
      il.on_epoch = [](const ILEpochRow& r) {
        std::printf("il epoch=%d lambda=%.3f loss=%.6f kl=%.6f mu_mse=%.6f sigma_mse=%.6f\n",
                    r.epoch, r.lambda, r.loss, r.kl, r.mu_mse, r.sigma_mse);
        std::fflush(stdout);
      };
      ILResult res = train_il(*policy, ds, il);
      write_csv_atomic(paths.il_csv(), il_csv_text(res.rows));
      save_checkpoint(paths.il_ckpt(), *policy);
      std::printf("il done: windows=%lld skipped_updates=%lld final_kl=%.6f\n",
                  (long long)res.windows, (long long)res.skipped_updates,
                  res.rows.back().kl);
    });
  });
}

void cmd_train_rl(const Config& cfg, const std::string& init_ckpt) {
  with_run(cfg, "train-rl", [&](const RunPaths& paths) {
    const EnvDescriptor probe = env_desc(cfg);
    GraphBundle bundle;
    if (cfg.policy_kind == "flygm") bundle = maybe_graph(paths, cfg, true);
    with_dtype(cfg.dtype, [&](auto tag) {
      using T = decltype(tag);
      auto policy = make_policy<T>(cfg, cfg.policy_kind,
                                   cfg.policy_kind == "flygm" ? &bundle : nullptr, probe.obs_dim,
                                   probe.act_dim, derive_seed(cfg.seed, "policy"));
      std::string init = init_ckpt;
      if (init.empty() && fs::exists(paths.il_ckpt())) init = paths.il_ckpt();
      if (!init.empty()) {
        load_policy_state(*policy, load_tensors(init));
        std::printf("initialized from %s\n", init.c_str());
      }
      ValueNet<T> value(probe.obs_dim, cfg.value_hidden, derive_seed(cfg.seed, "value"));
      PPOConfig rl;
      rl.iterations = cfg.ppo_iterations;
      rl.n_envs = cfg.ppo_n_envs;
      rl.horizon = cfg.ppo_horizon;
      rl.epochs = cfg.ppo_epochs;
      rl.minibatch = cfg.ppo_minibatch;
      rl.clip = cfg.ppo_clip;
      rl.c_value = cfg.ppo_c_value;
      rl.c_entropy = cfg.ppo_c_entropy;
      rl.gamma = cfg.ppo_gamma;
      rl.gae_lambda = cfg.ppo_gae_lambda;
      rl.logp_diff_limit = cfg.ppo_logp_diff_limit;
      rl.update_norm = cfg.ppo_update_norm;
      rl.seed = cfg.seed;
      rl.policy_optim.lr = cfg.ppo_lr;
      rl.policy_optim.weight_decay = cfg.ppo_weight_decay;
      rl.policy_optim.clip_norm = cfg.ppo_clip_norm;
      rl.value_optim.lr = cfg.ppo_value_lr;
      rl.value_optim.weight_decay = cfg.ppo_weight_decay;
      rl.value_optim.clip_norm = cfg.ppo_clip_norm;
      rl.on_iter = [](const RLIterRow& r) {
        std::printf("rl iter=%d return=%.3f episodes=%d kl=%.4f clip=%.3f\n", r.iter,
                    r.mean_return, r.episodes, r.approx_kl, r.clip_frac);
        std::fflush(stdout);
        return false;
      };
      RLResult res = train_rl(*policy, value, probe, env_params(cfg),
                              parse_command_grid(cfg.ppo_commands), rl);
      write_csv_atomic(paths.rl_csv(), rl_csv_text(res.rows));
      save_checkpoint(paths.rl_ckpt(), *policy);
      save_tensors(paths.value_ckpt(), value_state_tensors(value));
      if (!res.rows.empty())
        std::printf("rl done: iterations=%zu final_return=%.3f\n", res.rows.size(),
                    res.rows.back().mean_return);
    });
  });
}

void cmd_eval(const Config& cfg, const std::string& ckpt, bool expert) {
  with_run(cfg, expert ? "eval expert" : "eval", [&](const RunPaths& paths) {
    const std::string grid_text =
        cfg.eval_commands.empty() ? cfg.dataset_grid : cfg.eval_commands;
    const auto grid = parse_command_grid(grid_text);
    if (cfg.eval_record_cell >= int(grid.size()))
      throw UsageError("eval.record_cell is out of range for the evaluation grid");
    EvalOptions opt;
    opt.episodes = cfg.eval_episodes;
    opt.seed = cfg.seed;
    opt.record_cell = cfg.eval_record_cell;

    std::vector<EvalCellResult> cells;
    if (expert) {
      cells = evaluate_expert(env_desc(cfg), env_params(cfg), grid, opt, expert_gains(cfg));
    } else {
      std::string path = ckpt;
      if (path.empty()) {
        if (fs::exists(paths.rl_ckpt())) path = paths.rl_ckpt();
        else if (fs::exists(paths.il_ckpt())) path = paths.il_ckpt();
        else throw UsageError("no checkpoint under " + paths.ckpt_dir() +
                              "; train first or pass --ckpt");
      }
      const auto tensors = load_tensors(path);
      const std::string kind = kind_of_checkpoint(tensors);
      GraphBundle bundle;
      if (kind == "flygm") bundle = maybe_graph(paths, cfg, true);
      const EnvDescriptor probe = env_desc(cfg);
      with_dtype(cfg.dtype, [&](auto tag) {
        using T = decltype(tag);
        auto policy = make_policy<T>(cfg, kind, kind == "flygm" ? &bundle : nullptr,
                                     probe.obs_dim, probe.act_dim, derive_seed(cfg.seed, "policy"));
        load_policy_state(*policy, tensors);
        EvalRecording rec;
        const bool record = opt.record_cell >= 0;
        cells = evaluate(*policy, probe, env_params(cfg), grid, opt, record ? &rec : nullptr);
        if (record) {
          StateRecording sr = make_recording(rec, bundle.graph);
          save_recording(paths.recording_file(), sr);
          std::printf("recorded %d steps of %d neurons x %d channels\n", sr.t_steps,
                      sr.n_neurons, sr.channels);
        }
      });
    }
    write_csv_atomic(paths.eval_csv(), eval_csv_text(cells));
    for (const auto& c : cells)
      std::printf("cmd=%s pos_err=%.4f+-%.4f angle_err=%.4f+-%.4f (n=%d)\n",
                  join_command(c.command).c_str(), c.pos_err_mean, c.pos_err_std,
                  c.angle_err_mean, c.angle_err_std, c.episodes);
  });
}

void cmd_analyze(const Config& cfg) {
  with_run(cfg, "analyze", [&](const RunPaths& paths) {
    if (!fs::exists(paths.recording_file()))
      throw UsageError("no recording under " + paths.root +
                       "; run eval with eval.record_cell >= 0 first");
    StateRecording rec = load_recording(paths.recording_file());

    // component fit uses the whole recording; the caps only thin the display
    IntensityMap im = reduce_intensity(rec);

    CapTable caps;
    caps.emplace_back("sensory", cfg.cap_sensory);
    caps.emplace_back("ascending", cfg.cap_ascending);
    caps.emplace_back("optic", cfg.cap_optic);
    caps.emplace_back("central", cfg.cap_central);
    caps.emplace_back("visual projection", cfg.cap_visual_projection);
    caps.emplace_back("visual centrifugal", cfg.cap_visual_centrifugal);
    caps.emplace_back("descending", cfg.cap_descending);
    caps.emplace_back("motor", cfg.cap_motor);
    caps.emplace_back("endocrine", cfg.cap_endocrine);

    std::vector<int32_t> kept;
    StateRecording small = stratified_downsample(rec, caps, cfg.seed, &kept);

    const int T = im.values.rows;
    const int n_small = int(kept.size());
    Tensor2<double> intensity(T, n_small);
    for (int t = 0; t < T; ++t)
      for (int j = 0; j < n_small; ++j) intensity.at(t, j) = im.values.at(t, kept[size_t(j)]);

    std::vector<NeuronLabel> labels(static_cast<size_t>(n_small));
    for (int j = 0; j < n_small; ++j) {
      labels[size_t(j)].id = kept[size_t(j)];
      labels[size_t(j)].flow = FlowClass(small.flow[size_t(j)]);
      labels[size_t(j)].superclass = small.superclass[size_t(j)];
    }

    // spectral ordering runs inside each (flow, superclass) group so the
    // display keeps anatomical blocks contiguous
    std::map<std::pair<uint8_t, std::string>, std::vector<int>> groups;
    for (int j = 0; j < n_small; ++j)
      groups[{small.flow[size_t(j)], small.superclass[size_t(j)]}].push_back(j);

    ReportMeta meta;
    meta.out_dir = paths.report_dir();
    meta.seed = cfg.seed;
    meta.alpha = cfg.analysis_alpha;
    meta.caps = caps;
    if (im.zero_variance) meta.notes.push_back("intensity: recording had no variance");

    SimilarityOptions sopt;
    sopt.alpha = cfg.analysis_alpha;
    sopt.distance_as_similarity = cfg.analysis_distance_as_similarity;

    std::vector<int32_t> order;
    order.reserve(size_t(n_small));
    for (const auto& [key, members] : groups) {
      if (members.size() < 2) {
        for (int j : members) order.push_back(j);
        continue;
      }
      Tensor2<double> series(T, int(members.size()));
      for (int t = 0; t < T; ++t)
        for (size_t j = 0; j < members.size(); ++j)
          series.at(t, int(j)) = intensity.at(t, members[j]);
      SpectralOrder so = spectral_order(similarity_matrix(series, sopt));
      if (so.degenerate)
        meta.notes.push_back("group " + std::string(to_string(FlowClass(key.first))) + "/" +
                             key.second + ": tied spectral gap, order not unique");
      for (int32_t p : so.perm) order.push_back(members[size_t(p)]);
    }

    emit_report(intensity, order, labels, meta);
    std::printf("report: %d neurons (%d recorded), %d steps, %zu groups -> %s\n", n_small,
                rec.n_neurons, T, groups.size(), paths.report_dir().c_str());
  });
}

namespace {

struct CompareUnit {
  std::string arm;
  int seed_idx = 0;
  std::string name;  // <arm>_s<idx>
  std::string dir;
};

// parses "a,b,c" dropping empties
std::vector<std::string> split_list(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, sep)) {
    // trim spaces
    size_t a = item.find_first_not_of(" \t");
    size_t b = item.find_last_not_of(" \t");
    if (a == std::string::npos) continue;
    out.push_back(item.substr(a, b - a + 1));
  }
  return out;
}

// one imitation-train-plus-eval leg of the comparison
void run_compare_unit(const Config& cfg, const CompareUnit& unit, const GraphBundle& base,
                      const Dataset& ds) {
  const uint64_t unit_seed = derive_seed(cfg.seed, "compare_" + unit.name);
  fs::create_directories(unit.dir);

  GraphBundle arm_graph;
  std::string kind = "flygm";
  if (unit.arm == "connectome") {
    arm_graph = base;
    arm_graph.op = build_signed_operator(base.graph, cfg.unknown_nt_excitatory);
  } else if (unit.arm == "rewired") {
    RewireConfig rc;
    rc.swaps_per_edge = cfg.topology_swaps_per_edge;
    rc.max_attempts_factor = cfg.topology_max_attempts_factor;
    rc.seed = derive_seed(unit_seed, "topology");
    arm_graph.graph = degree_preserving_rewire(base.graph, rc).graph;
    arm_graph.op = unit_weights(arm_graph.graph);
  } else if (unit.arm == "er") {
    arm_graph.graph = erdos_renyi_like(base.graph, derive_seed(unit_seed, "topology"));
    arm_graph.op = unit_weights(arm_graph.graph);
  } else if (unit.arm == "mlp") {
    kind = "mlp";
  } else {
    throw UsageError("compare: unknown arm '" + unit.arm + "'");
  }

  with_dtype(cfg.dtype, [&](auto tag) {
    using T = decltype(tag);
    auto policy = make_policy<T>(cfg, kind, kind == "flygm" ? &arm_graph : nullptr, ds.obs_dim,
                                 ds.act_dim, derive_seed(unit_seed, "policy"));
    ILConfig il;
    il.epochs = cfg.il_epochs;
    il.window = cfg.il_window;
    il.batch_size = cfg.il_batch_size;
    il.lambda0 = cfg.il_lambda0;
    il.lambda_frac = cfg.il_lambda_frac;
    il.alpha = cfg.il_alpha;
    il.refit_norm = cfg.il_refit_norm;
    il.seed = unit_seed;
    il.optim.lr = cfg.il_lr;
    il.optim.weight_decay = cfg.il_weight_decay;
    il.optim.clip_norm = cfg.il_clip_norm;
    ILResult res = train_il(*policy, ds, il);
    write_csv_atomic(unit.dir + "/il.csv", il_csv_text(res.rows));
    save_checkpoint(unit.dir + "/ckpt.fgm", *policy);

    EvalOptions opt;
    opt.episodes = cfg.eval_episodes;
    opt.seed = derive_seed(unit_seed, "eval");
    auto cells = evaluate(*policy, env_desc(cfg), env_params(cfg),
                          parse_command_grid(cfg.dataset_grid), opt);
    write_csv_atomic(unit.dir + "/eval.csv", eval_csv_text(cells));
  });

  // the marker lands last so a killed run never looks finished
  write_text_atomic(unit.dir + "/done", "ok\n");
}

std::vector<std::vector<std::string>> read_csv_rows(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open");
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    rows.push_back(split_list(line, ','));
  }
  return rows;
}

}  // namespace

void cmd_compare(const Config& cfg) {
  with_run(cfg, "compare", [&](const RunPaths& paths) {
    const auto arms = split_list(cfg.compare_arms, ',');
    if (arms.empty()) throw UsageError("compare: no arms selected");
    const bool needs_graph =
        std::any_of(arms.begin(), arms.end(), [](const std::string& a) { return a != "mlp"; });
    GraphBundle base;
    if (needs_graph) base = maybe_graph(paths, cfg, true);
    Dataset ds = require_dataset(paths);

    std::vector<CompareUnit> units;
    for (const auto& arm : arms)
      for (int s = 0; s < cfg.compare_seeds; ++s) {
        CompareUnit u;
        u.arm = arm;
        u.seed_idx = s;
        u.name = arm + "_s" + std::to_string(s);
        u.dir = paths.compare_dir() + "/" + u.name;
        units.push_back(std::move(u));
      }

    std::atomic<size_t> next{0};
    std::mutex print_mu;
    std::vector<std::string> failures;
    auto worker = [&] {
      for (;;) {
        const size_t i = next.fetch_add(1);
        if (i >= units.size()) return;
        const CompareUnit& u = units[i];
        if (fs::exists(u.dir + "/done")) {
          std::lock_guard<std::mutex> lk(print_mu);
          std::printf("unit %s: already done, skipping\n", u.name.c_str());
          std::fflush(stdout);
          continue;
        }
        try {
          run_compare_unit(cfg, u, base, ds);
          std::lock_guard<std::mutex> lk(print_mu);
          std::printf("unit %s: done\n", u.name.c_str());
          std::fflush(stdout);
        } catch (const std::exception& e) {
          std::lock_guard<std::mutex> lk(print_mu);
          failures.push_back(u.name + ": " + e.what());
        }
      }
    };
    const int jobs = std::max(1, std::min(cfg.compare_jobs, int(units.size())));
    if (jobs == 1) {
      worker();
    } else {
      std::vector<std::thread> threads;
      for (int j = 0; j < jobs; ++j) threads.emplace_back(worker);
      for (auto& t : threads) t.join();
    }
    if (!failures.empty()) {
      std::string msg = "compare: " + std::to_string(failures.size()) + " unit(s) failed:";
      for (const auto& f : failures) msg += "\n  " + f;
      throw DataError(msg);
    }

    // merge the per-unit results from disk so resumed runs fold in older units
    std::ostringstream merged;
    merged << "arm,seed,command,final_kl,pos_err_mean,pos_err_std,angle_err_mean,angle_err_std\n";
    struct Acc {
      std::vector<double> pos, ang, kl;
    };
    std::map<std::pair<std::string, std::string>, Acc> acc;  // (arm, command)
    std::vector<std::string> arm_order, cmd_order;
    for (const auto& u : units) {
      const auto il_rows = read_csv_rows(u.dir + "/il.csv");
      if (il_rows.size() < 2) throw DataError(u.dir + "/il.csv: no epochs recorded");
      const double final_kl = std::stod(il_rows.back().at(3));
      const auto eval_rows = read_csv_rows(u.dir + "/eval.csv");
      for (size_t r = 1; r < eval_rows.size(); ++r) {
        const auto& row = eval_rows[r];
        merged << u.arm << "," << u.seed_idx << "," << row.at(0) << "," << fmt("%.17g", final_kl)
               << "," << row.at(2) << "," << row.at(3) << "," << row.at(4) << "," << row.at(5)
               << "\n";
        Acc& a = acc[{u.arm, row.at(0)}];
        a.pos.push_back(std::stod(row.at(2)));
        a.ang.push_back(std::stod(row.at(4)));
        a.kl.push_back(final_kl);
        if (std::find(arm_order.begin(), arm_order.end(), u.arm) == arm_order.end())
          arm_order.push_back(u.arm);
        if (std::find(cmd_order.begin(), cmd_order.end(), row.at(0)) == cmd_order.end())
          cmd_order.push_back(row.at(0));
      }
    }
    write_csv_atomic(paths.compare_dir() + "/compare.csv", merged.str());

    auto mean_std = [](const std::vector<double>& xs) {
      double m = 0;
      for (double x : xs) m += x;
      m /= double(xs.size());
      double v = 0;
      for (double x : xs) v += (x - m) * (x - m);
      const double sd = xs.size() > 1 ? std::sqrt(v / double(xs.size() - 1)) : 0.0;
      return std::pair<double, double>(m, sd);
    };
    std::ostringstream summary;
    summary << "arm,command,seeds,pos_err_mean,pos_err_std,angle_err_mean,angle_err_std,"
               "final_kl_mean,final_kl_std\n";
    for (const auto& arm : arm_order)
      for (const auto& cmd : cmd_order) {
        auto it = acc.find({arm, cmd});
        if (it == acc.end()) continue;
        const auto [pm, ps] = mean_std(it->second.pos);
        const auto [am, as] = mean_std(it->second.ang);
        const auto [km, ks] = mean_std(it->second.kl);
        summary << arm << "," << cmd << "," << it->second.pos.size() << "," << fmt("%.17g", pm)
                << "," << fmt("%.17g", ps) << "," << fmt("%.17g", am) << "," << fmt("%.17g", as)
                << "," << fmt("%.17g", km) << "," << fmt("%.17g", ks) << "\n";
        std::printf("arm=%-12s cmd=%-8s pos_err=%.4f+-%.4f angle_err=%.4f+-%.4f\n", arm.c_str(),
                    cmd.c_str(), pm, ps, am, as);
      }
    write_csv_atomic(paths.compare_dir() + "/summary.csv", summary.str());
  });
}

}  // namespace flygm
