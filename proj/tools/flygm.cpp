#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flygm/config.hpp"
#include "flygm/pipeline.hpp"

namespace {

// bare extras like --ppo.iterations=3 become config overrides
std::vector<std::string> overrides_from_extras(const std::vector<std::string>& extras) {
  std::vector<std::string> out;
  for (const auto& raw : extras) {
    std::string s = raw;
    if (s.rfind("--", 0) == 0) s = s.substr(2);
    if (s.find('.') == std::string::npos || s.find('=') == std::string::npos)
      throw flygm::UsageError("unrecognized argument '" + raw +
                              "' (overrides look like --section.key=value)");
    out.push_back(s);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"graph-structured policy toolkit: build graphs, train controllers, analyze state"};
  app.require_subcommand(1);
  app.allow_extras();

  std::string config_path;
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "INI config file");
  app.add_option("--set", sets, "config override section.key=value (repeatable)");

  std::string neurons_csv, edges_csv, graph_src, init_ckpt, eval_ckpt;
  bool eval_expert = false;

  auto* ingest = app.add_subcommand("ingest", "load node and edge tables into a run");
  ingest->add_option("--neurons", neurons_csv, "neuron table csv")->required();
  ingest->add_option("--edges", edges_csv, "edge table csv")->required();
  ingest->allow_extras();

  auto* synth = app.add_subcommand("synth", "generate a block-modular random graph");
  synth->allow_extras();

  auto* topology = app.add_subcommand("topology", "derive a graph variant (rewired, er)");
  topology->add_option("--graph", graph_src, "source run or graph directory");
  topology->allow_extras();

  auto* make_dataset = app.add_subcommand("make-dataset", "roll out expert demonstrations");
  make_dataset->allow_extras();

  auto* train_il = app.add_subcommand("train-il", "behavior cloning on the dataset");
  train_il->allow_extras();

  auto* train_rl = app.add_subcommand("train-rl", "clipped policy-gradient fine-tuning");
  train_rl->add_option("--init", init_ckpt, "starting checkpoint (defaults to the il one)");
  train_rl->allow_extras();

  auto* eval = app.add_subcommand("eval", "deterministic rollouts over a command grid");
  eval->add_option("--ckpt", eval_ckpt, "checkpoint to load (defaults to rl, then il)");
  eval->add_flag("--expert", eval_expert, "evaluate the scripted expert instead");
  eval->allow_extras();

  auto* analyze = app.add_subcommand("analyze", "order recorded neuron state and emit a report");
  analyze->allow_extras();

  auto* compare = app.add_subcommand("compare", "train all graph arms and tabulate performance");
  compare->allow_extras();

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e);
      return code == 0 ? 0 : 1;
    }

    std::vector<std::string> overrides = sets;
    for (auto& ov : overrides_from_extras(app.remaining(true))) overrides.push_back(std::move(ov));
    const flygm::Config cfg = flygm::load_config(config_path, overrides);

    if (ingest->parsed()) flygm::cmd_ingest(cfg, neurons_csv, edges_csv);
    else if (synth->parsed()) flygm::cmd_synth(cfg);
    else if (topology->parsed()) flygm::cmd_topology(cfg, graph_src);
    else if (make_dataset->parsed()) flygm::cmd_make_dataset(cfg);
    else if (train_il->parsed()) flygm::cmd_train_il(cfg);
    else if (train_rl->parsed()) flygm::cmd_train_rl(cfg, init_ckpt);
    else if (eval->parsed()) flygm::cmd_eval(cfg, eval_ckpt, eval_expert);
    else if (analyze->parsed()) flygm::cmd_analyze(cfg);
    else if (compare->parsed()) flygm::cmd_compare(cfg);
    return 0;
  } catch (const flygm::UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const flygm::DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 3;
  }
}
