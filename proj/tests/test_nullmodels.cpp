#include <map>
#include <set>
#include <utility>
#include <vector>

#include "doctest.h"
#include "flygm/nullmodels.hpp"
#include "support.hpp"

using namespace flygm;

namespace {

Connectome make_graph(uint64_t seed = 3) {
  SynthSpec spec;
  spec.n_afferent = 5;
  spec.n_intrinsic = 14;
  spec.n_efferent = 5;
  spec.n_edges = 140;
  spec.seed = seed;
  return synth_connectome(spec);
}

std::pair<std::map<int32_t, int64_t>, std::map<int32_t, int64_t>> degrees(const Connectome& c) {
  std::map<int32_t, int64_t> out, in;
  for (const auto& e : c.edges) {
    ++out[e.pre];
    ++in[e.post];
  }
  return {out, in};
}

}  // namespace

TEST_CASE("degree preserving rewire keeps degree sequences and edge count") {
  Connectome base = make_graph();
  RewireConfig cfg;
  cfg.swaps_per_edge = 10.0;
  cfg.seed = 11;
  RewireResult r = degree_preserving_rewire(base, cfg);

  CHECK(r.graph.size() == base.size());
  CHECK(r.graph.edges.size() == base.edges.size());
  CHECK(r.target == int64_t(10.0 * double(base.edges.size())));
  CHECK(r.target_met);
  CHECK(r.accepted == r.target);
  CHECK(r.attempts >= r.accepted);

  auto [out0, in0] = degrees(base);
  auto [out1, in1] = degrees(r.graph);
  CHECK(out1 == out0);
  CHECK(in1 == in0);

  std::set<std::pair<int32_t, int32_t>> pairs;
  for (const auto& e : r.graph.edges) {
    CHECK(e.pre != e.post);
    CHECK(e.syn_count == 1);
    CHECK(!e.nt_override.has_value());
    CHECK(pairs.insert({e.pre, e.post}).second);
  }
  // flow constraints survive because swaps only permute existing endpoints
  CHECK_NOTHROW(r.graph.validate(true));

  // enough swaps to actually move edges around
  int64_t moved = 0;
  std::set<std::pair<int32_t, int32_t>> orig;
  for (const auto& e : base.edges) orig.insert({e.pre, e.post});
  for (const auto& p : pairs)
    if (!orig.count(p)) ++moved;
  CHECK(moved > int64_t(base.edges.size() / 4));
}

TEST_CASE("rewire is deterministic in the seed and logs swaps on request") {
  Connectome base = make_graph();
  RewireConfig cfg;
  cfg.swaps_per_edge = 3.0;
  cfg.seed = 21;
  RewireResult a = degree_preserving_rewire(base, cfg);
  RewireResult b = degree_preserving_rewire(base, cfg);
  REQUIRE(a.graph.edges.size() == b.graph.edges.size());
  bool same = true;
  for (size_t i = 0; i < a.graph.edges.size(); ++i)
    same = same && a.graph.edges[i].pre == b.graph.edges[i].pre &&
           a.graph.edges[i].post == b.graph.edges[i].post;
  CHECK(same);
  CHECK(a.log.empty());

  cfg.record_log = true;
  RewireResult c = degree_preserving_rewire(base, cfg);
  CHECK(int64_t(c.log.size()) == c.accepted);
  for (const auto& s : c.log) {
    CHECK(s.a != s.d);
    CHECK(s.c != s.b);
  }

  cfg.seed = 22;
  cfg.record_log = false;
  RewireResult d = degree_preserving_rewire(base, cfg);
  bool differs = false;
  for (size_t i = 0; !differs && i < a.graph.edges.size(); ++i)
    differs = d.graph.edges[i].pre != a.graph.edges[i].pre ||
              d.graph.edges[i].post != a.graph.edges[i].post;
  CHECK(differs);
}

TEST_CASE("rewire freezes self loops and reports an unmet target honestly") {
  // a 2-cycle plus a self loop: no valid swap ever exists
  Connectome c;
  c.neurons.resize(2);
  for (auto& n : c.neurons) {
    n.flow = FlowClass::Intrinsic;
    n.nt = NtType::ACH;
  }
  SynapseEdge e;
  e.syn_count = 2;
  e.pre = 0;
  e.post = 1;
  c.edges.push_back(e);
  e.pre = 1;
  e.post = 0;
  c.edges.push_back(e);
  e.pre = 1;
  e.post = 1;
  c.edges.push_back(e);
  c.sort_edges();
  c.rebuild_partition();
  c.validate();

  RewireConfig cfg;
  cfg.swaps_per_edge = 2.0;
  cfg.max_attempts_factor = 50;
  RewireResult r = degree_preserving_rewire(c, cfg);
  CHECK_FALSE(r.target_met);
  CHECK(r.accepted < r.target);
  REQUIRE(r.graph.edges.size() == 3);
  bool self_kept = false;
  for (const auto& ed : r.graph.edges)
    if (ed.pre == 1 && ed.post == 1) self_kept = true;
  CHECK(self_kept);
  auto [out0, in0] = degrees(c);
  auto [out1, in1] = degrees(r.graph);
  CHECK(out1 == out0);
  CHECK(in1 == in0);
}

TEST_CASE("uniform random graph keeps the node table and edge count only") {
  Connectome base = make_graph();
  Connectome er = erdos_renyi_like(base, 31);

  CHECK(er.size() == base.size());
  CHECK(er.edges.size() == base.edges.size());
  for (int32_t i = 0; i < base.size(); ++i) {
    CHECK(er.neurons[i].flow == base.neurons[i].flow);
    CHECK(er.neurons[i].superclass == base.neurons[i].superclass);
    CHECK(er.neurons[i].nt == base.neurons[i].nt);
  }

  std::set<std::pair<int32_t, int32_t>> pairs;
  for (const auto& e : er.edges) {
    CHECK(e.pre != e.post);
    CHECK(e.syn_count == 1);
    CHECK(pairs.insert({e.pre, e.post}).second);
  }
  // ids ignore flow structure, so only the relaxed validation applies
  CHECK_NOTHROW(er.validate(false));

  Connectome er2 = erdos_renyi_like(base, 31);
  REQUIRE(er2.edges.size() == er.edges.size());
  bool same = true;
  for (size_t i = 0; i < er.edges.size(); ++i)
    same = same && er2.edges[i].pre == er.edges[i].pre && er2.edges[i].post == er.edges[i].post;
  CHECK(same);

  Connectome er3 = erdos_renyi_like(base, 32);
  bool differs = false;
  for (size_t i = 0; !differs && i < er.edges.size(); ++i)
    differs = er3.edges[i].pre != er.edges[i].pre || er3.edges[i].post != er.edges[i].post;
  CHECK(differs);
}

TEST_CASE("unit weight operator sets every connected pair to one") {
  Connectome base = make_graph();
  CsrMatrix w = unit_weights(base);
  REQUIRE(w.rows == base.size());
  REQUIRE(w.cols == base.size());
  CHECK(w.nnz() == int64_t(base.edges.size()));

  auto d = w.dense();
  Tensor2<double> expect(base.size(), base.size());
  for (const auto& e : base.edges) expect.at(e.post, e.pre) = 1.0;
  CHECK(max_abs_diff(d, expect) == 0.0);
}
