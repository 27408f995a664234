#pragma once

#include <cstdint>
#include <vector>

#include "flygm/connectome.hpp"

namespace flygm {

struct RewireConfig {
  double swaps_per_edge = 10.0;
  int64_t max_attempts_factor = 100;  // give up after factor * target attempts
  bool record_log = false;
  uint64_t seed = 0;
};

struct SwapRecord {
  int32_t a, b, c, d;  // (a->b),(c->d) became (a->d),(c->b)
};

struct RewireResult {
  Connectome graph;
  int64_t target = 0;
  int64_t accepted = 0;
  int64_t attempts = 0;
  bool target_met = true;
  std::vector<SwapRecord> log;
};

// Directed double-edge swaps preserving every node's in and out degree.
// Self loops are frozen in place; rewired edges carry syn_count 1 and no
// transmitter annotation.
RewireResult degree_preserving_rewire(const Connectome& c, const RewireConfig& cfg);

// Uniform simple digraph with the same node table and edge count, sampled
// without replacement from the off-diagonal cells. syn_count 1, no nt.
Connectome erdos_renyi_like(const Connectome& c, uint64_t seed);

// Operator with every connected (pre,post) pair set to +1, shape V x V.
CsrMatrix unit_weights(const Connectome& c);

}  // namespace flygm
