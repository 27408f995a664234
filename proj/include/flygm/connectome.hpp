#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "flygm/csr.hpp"
#include "flygm/types.hpp"

namespace flygm {

struct Neuron {
  FlowClass flow = FlowClass::Intrinsic;
  std::string superclass;
  NtType nt = NtType::UNKNOWN;
};

struct SynapseEdge {
  int32_t pre = 0;
  int32_t post = 0;
  int64_t syn_count = 0;
  // set only when the edge's transmitter differs from the presynaptic default
  std::optional<NtType> nt_override;
};

struct Connectome {
  std::vector<Neuron> neurons;
  // sorted by (pre, post, effective nt); unique on that key
  std::vector<SynapseEdge> edges;
  // node ids by flow class, each sorted ascending
  std::vector<int32_t> afferent;
  std::vector<int32_t> intrinsic;
  std::vector<int32_t> efferent;

  int32_t size() const { return int32_t(neurons.size()); }

  NtType effective_nt(const SynapseEdge& e) const {
    return e.nt_override ? *e.nt_override : neurons[e.pre].nt;
  }

  void rebuild_partition();
  void sort_edges();
  // checks ids in range, no duplicate (pre,post,nt) keys, positive syn counts,
  // and (unless enforce_flow is off, e.g. for fully randomized graphs)
  // afferent in-degree 0 and efferent out-degree 0
  void validate(bool enforce_flow = true) const;
};

struct ParseOptions {
  bool unknown_is_excitatory = true;  // unused by parsing, kept with operator build options
};

struct ParseReport {
  int64_t neurons = 0;
  int64_t edge_rows = 0;
  int64_t merged_rows = 0;          // duplicate (pre,post,nt) rows summed
  int64_t unknown_nt_labels = 0;    // unrecognized labels mapped to UNKNOWN
  int64_t dropped_self_loops = 0;
};

// neuron csv: neuron_id,flow_class,superclass,nt_type
// edge csv:   pre_id,post_id,syn_count[,nt_type]
// ids are remapped to 0..V-1 in ascending original-id order
Connectome parse_connectome(const std::string& neurons_csv_path,
                            const std::string& edges_csv_path,
                            ParseReport* report = nullptr,
                            bool enforce_flow = true);

void write_connectome_csv(const Connectome& c, const std::string& neurons_csv_path,
                          const std::string& edges_csv_path);

// W[post, pre] = excitatory count - inhibitory count, aggregated over the
// (pre,post) pair. Exact cancellations stay as explicit zero entries.
CsrMatrix build_signed_operator(const Connectome& c, bool unknown_is_excitatory = true);

struct SynthSpec {
  int32_t n_afferent = 10;
  int32_t n_intrinsic = 80;
  int32_t n_efferent = 10;
  int64_t n_edges = 800;
  int32_t n_blocks = 4;
  double modularity = 0.8;  // probability a candidate edge stays within its block
  int64_t max_syn_count = 8;
  // weights over NtType values ACH..GLY, UNKNOWN excluded
  std::vector<double> nt_mix = {0.55, 0.12, 0.03, 0.02, 0.25, 0.03};
  uint64_t seed = 0;
};

// Block-modular random digraph honoring the flow-class constraints
// (no afferent in-edges, no efferent out-edges, no self loops).
Connectome synth_connectome(const SynthSpec& spec);

}  // namespace flygm
