#include "flygm/nullmodels.hpp"

#include <cmath>
#include <unordered_set>

#include "flygm/rng.hpp"

namespace flygm {

namespace {

// distinct connected (pre,post) pairs; transmitter-split parallel entries
// collapse to one topological edge
std::vector<std::pair<int32_t, int32_t>> distinct_pairs(const Connectome& c) {
  std::vector<std::pair<int32_t, int32_t>> pairs;
  pairs.reserve(c.edges.size());
  for (const auto& e : c.edges) {
    if (!pairs.empty() && pairs.back() == std::make_pair(e.pre, e.post)) continue;
    pairs.emplace_back(e.pre, e.post);
  }
  return pairs;
}

}  // namespace

RewireResult degree_preserving_rewire(const Connectome& c, const RewireConfig& cfg) {
  RewireResult res;
  res.graph.neurons = c.neurons;

  const int64_t v = c.size();
  auto pairs = distinct_pairs(c);
  std::vector<std::pair<int32_t, int32_t>> swappable;
  std::vector<std::pair<int32_t, int32_t>> frozen;  // self loops never move
  std::unordered_set<int64_t> present;
  present.reserve(pairs.size() * 2);
  for (auto [a, b] : pairs) {
    present.insert(int64_t(a) * v + b);
    (a == b ? frozen : swappable).emplace_back(a, b);
  }

  res.target = int64_t(std::ceil(cfg.swaps_per_edge * double(pairs.size())));
  const int64_t max_attempts = cfg.max_attempts_factor * std::max<int64_t>(res.target, 1);
  Rng rng(derive_seed(cfg.seed, "rewire"));

  const int64_t n = int64_t(swappable.size());
  if (n >= 2) {
    while (res.accepted < res.target && res.attempts < max_attempts) {
      ++res.attempts;
      int64_t i = int64_t(rng.uniform_u64(uint64_t(n)));
      int64_t j = int64_t(rng.uniform_u64(uint64_t(n)));
      if (i == j) continue;
      auto [a, b] = swappable[i];
      auto [cc, d] = swappable[j];
      if (a == cc || b == d) continue;      // degenerate swap
      if (a == d || cc == b) continue;      // would create a self loop
      int64_t k1 = int64_t(a) * v + d;
      int64_t k2 = int64_t(cc) * v + b;
      if (present.count(k1) || present.count(k2)) continue;  // duplicate
      present.erase(int64_t(a) * v + b);
      present.erase(int64_t(cc) * v + d);
      present.insert(k1);
      present.insert(k2);
      swappable[i] = {a, d};
      swappable[j] = {cc, b};
      ++res.accepted;
      if (cfg.record_log) res.log.push_back({a, b, cc, d});
    }
  }
  res.target_met = res.accepted >= res.target;

  for (auto [a, b] : swappable) res.graph.edges.push_back({a, b, 1, std::nullopt});
  for (auto [a, b] : frozen) res.graph.edges.push_back({a, b, 1, std::nullopt});
  res.graph.sort_edges();
  res.graph.rebuild_partition();
  res.graph.validate(false);
  return res;
}

Connectome erdos_renyi_like(const Connectome& c, uint64_t seed) {
  Connectome out;
  out.neurons = c.neurons;
  const int64_t v = c.size();
  const int64_t cells = v * (v - 1);  // off-diagonal cells, index -> (u, w)
  const int64_t k = int64_t(distinct_pairs(c).size());
  if (k > cells) throw DataError("erdos_renyi_like: more edges than off-diagonal cells");

  // Floyd's sampling: uniform k-subset of [0, cells) without replacement
  Rng rng(derive_seed(seed, "erdos"));
  std::unordered_set<int64_t> chosen;
  chosen.reserve(size_t(k) * 2);
  for (int64_t j = cells - k; j < cells; ++j) {
    int64_t t = int64_t(rng.uniform_u64(uint64_t(j + 1)));
    chosen.insert(chosen.count(t) ? j : t);
  }
  for (int64_t m : chosen) {
    int32_t u = int32_t(m / (v - 1));
    int64_t r = m % (v - 1);
    int32_t w = int32_t(r < u ? r : r + 1);
    out.edges.push_back({u, w, 1, std::nullopt});
  }
  out.sort_edges();
  out.rebuild_partition();
  out.validate(false);
  return out;
}

CsrMatrix unit_weights(const Connectome& c) {
  std::map<std::pair<int32_t, int32_t>, double> acc;
  for (const auto& e : c.edges) acc[{e.post, e.pre}] = 1.0;
  return csr_from_entries(c.size(), c.size(), acc);
}

}  // namespace flygm
