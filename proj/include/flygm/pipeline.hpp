#pragma once

#include <functional>
#include <string>
#include <vector>

#include "flygm/config.hpp"
#include "flygm/connectome.hpp"
#include "flygm/csr.hpp"
#include "flygm/env.hpp"

namespace flygm {

// on-disk layout of one run directory
struct RunPaths {
  std::string root;

  std::string graph_dir() const { return root + "/graph"; }
  std::string neurons_csv() const { return graph_dir() + "/neurons.csv"; }
  std::string edges_csv() const { return graph_dir() + "/edges.csv"; }
  std::string graph_meta() const { return graph_dir() + "/meta.txt"; }
  std::string operator_file() const { return graph_dir() + "/operator.fgo"; }
  std::string dataset_file() const { return root + "/dataset.fgd"; }
  std::string recording_file() const { return root + "/recording.fgr"; }
  std::string ckpt_dir() const { return root + "/ckpt"; }
  std::string il_ckpt() const { return ckpt_dir() + "/il.fgm"; }
  std::string rl_ckpt() const { return ckpt_dir() + "/rl.fgm"; }
  std::string value_ckpt() const { return ckpt_dir() + "/value.fgm"; }
  std::string metrics_dir() const { return root + "/metrics"; }
  std::string il_csv() const { return metrics_dir() + "/il.csv"; }
  std::string rl_csv() const { return metrics_dir() + "/rl.csv"; }
  std::string eval_csv() const { return metrics_dir() + "/eval.csv"; }
  std::string report_dir() const { return root + "/report"; }
  std::string compare_dir() const { return root + "/compare"; }
  std::string manifest() const { return root + "/manifest.txt"; }
  std::string resolved_config() const { return root + "/config.resolved"; }

  static RunPaths make(const Config& cfg) { return {cfg.out_dir + "/" + cfg.run_name}; }
};

// a graph directory: node/edge tables plus how the operator was derived
struct GraphBundle {
  Connectome graph;
  CsrMatrix op;
  std::string mode = "connectome";   // connectome | rewired | er
  std::string weights = "signed";    // signed | unit
};

// rebuilds the operator from the csv tables; operator.fgo is only an export
GraphBundle load_graph_dir(const std::string& dir, const Config& cfg);
void write_graph_dir(const std::string& dir, const Connectome& graph, const std::string& mode,
                     const std::string& weights, const Config& cfg);

EnvParams env_params(const Config& cfg);
ExpertGains expert_gains(const Config& cfg);
EnvDescriptor env_desc(const Config& cfg, std::vector<double> command = {});

// subcommand bodies; errors surface as UsageError/DataError
void cmd_ingest(const Config& cfg, const std::string& neurons_csv, const std::string& edges_csv);
void cmd_synth(const Config& cfg);
void cmd_topology(const Config& cfg, const std::string& source);
void cmd_make_dataset(const Config& cfg);
void cmd_train_il(const Config& cfg);
void cmd_train_rl(const Config& cfg, const std::string& init_ckpt);
void cmd_eval(const Config& cfg, const std::string& ckpt, bool expert);
void cmd_analyze(const Config& cfg);
void cmd_compare(const Config& cfg);

// run-dir bookkeeping shared by every subcommand: creates the directory tree,
// echoes the resolved config, logs the command to manifest.txt with wall time
void with_run(const Config& cfg, const std::string& command_line,
              const std::function<void(const RunPaths&)>& body);

}  // namespace flygm
