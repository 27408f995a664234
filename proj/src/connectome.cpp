#include "flygm/connectome.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

#include "flygm/rng.hpp"

namespace flygm {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

int64_t parse_i64(const std::string& s, const char* what, const std::string& file, int line_no) {
  int64_t v = 0;
  auto t = trim(s);
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size())
    throw DataError(file + ":" + std::to_string(line_no) + ": bad " + what + " '" + s + "'");
  return v;
}

FlowClass parse_flow(const std::string& s, const std::string& file, int line_no) {
  auto t = trim(s);
  if (t == "afferent") return FlowClass::Afferent;
  if (t == "intrinsic") return FlowClass::Intrinsic;
  if (t == "efferent") return FlowClass::Efferent;
  throw DataError(file + ":" + std::to_string(line_no) + ": bad flow_class '" + s + "'");
}

std::optional<NtType> parse_nt(const std::string& raw) {
  auto t = trim(raw);
  std::string up;
  for (char c : t) up += char(std::toupper(static_cast<unsigned char>(c)));
  if (up == "ACH") return NtType::ACH;
  if (up == "GLU") return NtType::GLU;
  if (up == "ASP") return NtType::ASP;
  if (up == "HIS") return NtType::HIS;
  if (up == "GABA") return NtType::GABA;
  if (up == "GLY") return NtType::GLY;
  if (up == "UNKNOWN" || up.empty()) return NtType::UNKNOWN;
  return std::nullopt;
}

bool edge_key_less(const Connectome& c, const SynapseEdge& a, const SynapseEdge& b) {
  if (a.pre != b.pre) return a.pre < b.pre;
  if (a.post != b.post) return a.post < b.post;
  return uint8_t(c.effective_nt(a)) < uint8_t(c.effective_nt(b));
}

}  // namespace

void Connectome::rebuild_partition() {
  afferent.clear();
  intrinsic.clear();
  efferent.clear();
  for (int32_t i = 0; i < size(); ++i) {
    switch (neurons[i].flow) {
      case FlowClass::Afferent: afferent.push_back(i); break;
      case FlowClass::Intrinsic: intrinsic.push_back(i); break;
      case FlowClass::Efferent: efferent.push_back(i); break;
    }
  }
}

void Connectome::sort_edges() {
  std::sort(edges.begin(), edges.end(),
            [this](const SynapseEdge& a, const SynapseEdge& b) { return edge_key_less(*this, a, b); });
}

void Connectome::validate(bool enforce_flow) const {
  const int32_t v = size();
  for (size_t i = 0; i < edges.size(); ++i) {
    const auto& e = edges[i];
    if (e.pre < 0 || e.pre >= v || e.post < 0 || e.post >= v)
      throw DataError("edge " + std::to_string(i) + ": neuron id out of range");
    if (e.syn_count <= 0)
      throw DataError("edge " + std::to_string(i) + ": syn_count must be positive");
    if (enforce_flow && neurons[e.post].flow == FlowClass::Afferent)
      throw DataError("edge " + std::to_string(i) + ": afferent neuron " +
                      std::to_string(e.post) + " has an incoming edge");
    if (enforce_flow && neurons[e.pre].flow == FlowClass::Efferent)
      throw DataError("edge " + std::to_string(i) + ": efferent neuron " +
                      std::to_string(e.pre) + " has an outgoing edge");
    if (i > 0) {
      const auto& p = edges[i - 1];
      if (p.pre == e.pre && p.post == e.post && effective_nt(p) == effective_nt(e))
        throw DataError("duplicate edge (" + std::to_string(e.pre) + "," + std::to_string(e.post) +
                        "," + std::string(to_string(effective_nt(e))) + ")");
      if (edge_key_less(*this, e, p)) throw DataError("edges not sorted");
    }
  }
}

Connectome parse_connectome(const std::string& neurons_csv_path,
                            const std::string& edges_csv_path, ParseReport* report,
                            bool enforce_flow) {
  ParseReport rep;
  Connectome c;

  std::ifstream nf(neurons_csv_path);
  if (!nf) throw DataError("cannot open " + neurons_csv_path);
  std::string line;
  if (!std::getline(nf, line)) throw DataError(neurons_csv_path + ": empty file");
  {
    auto hdr = split_csv_line(line);
    if (hdr.size() < 4 || trim(hdr[0]) != "neuron_id" || trim(hdr[1]) != "flow_class" ||
        trim(hdr[2]) != "superclass" || trim(hdr[3]) != "nt_type")
      throw DataError(neurons_csv_path + ": expected header neuron_id,flow_class,superclass,nt_type");
  }
  std::map<int64_t, Neuron> by_id;
  int line_no = 1;
  while (std::getline(nf, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() < 4)
      throw DataError(neurons_csv_path + ":" + std::to_string(line_no) + ": expected 4 columns");
    int64_t id = parse_i64(f[0], "neuron_id", neurons_csv_path, line_no);
    Neuron n;
    n.flow = parse_flow(f[1], neurons_csv_path, line_no);
    n.superclass = trim(f[2]);
    auto nt = parse_nt(f[3]);
    if (!nt) {
      ++rep.unknown_nt_labels;
      nt = NtType::UNKNOWN;
    }
    n.nt = *nt;
    if (!by_id.emplace(id, std::move(n)).second)
      throw DataError(neurons_csv_path + ":" + std::to_string(line_no) + ": duplicate neuron_id " +
                      std::to_string(id));
  }
  if (by_id.empty()) throw DataError(neurons_csv_path + ": no neurons");

  std::map<int64_t, int32_t> remap;
  for (auto& [id, n] : by_id) {
    remap.emplace(id, int32_t(c.neurons.size()));
    c.neurons.push_back(std::move(n));
  }
  rep.neurons = int64_t(c.neurons.size());

  std::ifstream ef(edges_csv_path);
  if (!ef) throw DataError("cannot open " + edges_csv_path);
  if (!std::getline(ef, line)) throw DataError(edges_csv_path + ": empty file");
  bool has_nt_col = false;
  {
    auto hdr = split_csv_line(line);
    if (hdr.size() < 3 || trim(hdr[0]) != "pre_id" || trim(hdr[1]) != "post_id" ||
        trim(hdr[2]) != "syn_count")
      throw DataError(edges_csv_path + ": expected header pre_id,post_id,syn_count[,nt_type]");
    has_nt_col = hdr.size() >= 4 && trim(hdr[3]) == "nt_type";
  }

  // key -> edge index, merging duplicate rows by summing counts
  std::map<std::tuple<int32_t, int32_t, uint8_t>, size_t> seen;
  line_no = 1;
  while (std::getline(ef, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() < 3)
      throw DataError(edges_csv_path + ":" + std::to_string(line_no) + ": expected 3+ columns");
    ++rep.edge_rows;
    int64_t pre_id = parse_i64(f[0], "pre_id", edges_csv_path, line_no);
    int64_t post_id = parse_i64(f[1], "post_id", edges_csv_path, line_no);
    int64_t cnt = parse_i64(f[2], "syn_count", edges_csv_path, line_no);
    auto pi = remap.find(pre_id);
    auto qi = remap.find(post_id);
    if (pi == remap.end() || qi == remap.end())
      throw DataError(edges_csv_path + ":" + std::to_string(line_no) + ": unknown neuron id");
    if (cnt <= 0)
      throw DataError(edges_csv_path + ":" + std::to_string(line_no) + ": syn_count must be positive");
    SynapseEdge e;
    e.pre = pi->second;
    e.post = qi->second;
    e.syn_count = cnt;
    if (has_nt_col && f.size() >= 4 && !trim(f[3]).empty()) {
      auto nt = parse_nt(f[3]);
      if (!nt) {
        ++rep.unknown_nt_labels;
        nt = NtType::UNKNOWN;
      }
      if (*nt != c.neurons[e.pre].nt) e.nt_override = *nt;
    }
    if (e.pre == e.post) {
      // self synapses are legal in the data; keep them, they stay on the diagonal
    }
    auto key = std::make_tuple(e.pre, e.post, uint8_t(c.effective_nt(e)));
    auto it = seen.find(key);
    if (it != seen.end()) {
      c.edges[it->second].syn_count += cnt;
      ++rep.merged_rows;
    } else {
      seen.emplace(key, c.edges.size());
      c.edges.push_back(e);
    }
  }

  c.sort_edges();
  c.rebuild_partition();
  c.validate(enforce_flow);
  if (report) *report = rep;
  return c;
}

void write_connectome_csv(const Connectome& c, const std::string& neurons_csv_path,
                          const std::string& edges_csv_path) {
  std::ofstream nf(neurons_csv_path, std::ios::trunc);
  if (!nf) throw DataError("cannot write " + neurons_csv_path);
  nf << "neuron_id,flow_class,superclass,nt_type\n";
  for (int32_t i = 0; i < c.size(); ++i) {
    const auto& n = c.neurons[i];
    nf << i << ',' << to_string(n.flow) << ',' << n.superclass << ',' << to_string(n.nt) << '\n';
  }
  std::ofstream ef(edges_csv_path, std::ios::trunc);
  if (!ef) throw DataError("cannot write " + edges_csv_path);
  ef << "pre_id,post_id,syn_count,nt_type\n";
  for (const auto& e : c.edges) {
    ef << e.pre << ',' << e.post << ',' << e.syn_count << ',';
    if (e.nt_override) ef << to_string(*e.nt_override);
    ef << '\n';
  }
  if (!nf.good() || !ef.good()) throw DataError("short write while saving connectome csv");
}

CsrMatrix build_signed_operator(const Connectome& c, bool unknown_is_excitatory) {
  // accumulate signed counts per (post, pre); cancellations stay as zeros
  std::map<std::pair<int32_t, int32_t>, double> acc;
  for (const auto& e : c.edges) {
    double s = is_excitatory(c.effective_nt(e), unknown_is_excitatory) ? double(e.syn_count)
                                                                       : -double(e.syn_count);
    acc[{e.post, e.pre}] += s;
  }
  return csr_from_entries(c.size(), c.size(), acc);
}

Connectome synth_connectome(const SynthSpec& spec) {
  if (spec.n_afferent <= 0 || spec.n_intrinsic <= 0 || spec.n_efferent <= 0)
    throw UsageError("synth: every flow class needs at least one neuron");
  const int32_t v = spec.n_afferent + spec.n_intrinsic + spec.n_efferent;
  // capacity of the constrained simple digraph: afferent rows can reach
  // intrinsic+efferent, intrinsic rows everything but themselves and afferent
  const int64_t cap = int64_t(spec.n_afferent) * (spec.n_intrinsic + spec.n_efferent) +
                      int64_t(spec.n_intrinsic) * (spec.n_intrinsic - 1 + spec.n_efferent);
  if (spec.n_edges > cap)
    throw UsageError("synth: edge budget exceeds simple-digraph capacity (" +
                     std::to_string(cap) + ")");
  if (spec.n_edges < spec.n_afferent + spec.n_efferent)
    throw UsageError("synth: too few edges to give every afferent an out-edge and every efferent an in-edge");

  static const char* kAffSuper[] = {"sensory", "ascending"};
  static const char* kIntSuper[] = {"central", "optic", "visual projection", "visual centrifugal"};
  static const char* kEffSuper[] = {"motor", "descending", "endocrine"};

  Rng rng(derive_seed(spec.seed, "synth"));
  Connectome c;
  c.neurons.resize(static_cast<size_t>(v));
  std::vector<int32_t> block(static_cast<size_t>(v));
  const int nb = std::max(1, int(spec.n_blocks));
  for (int32_t i = 0; i < v; ++i) {
    Neuron& n = c.neurons[i];
    if (i < spec.n_afferent) {
      n.flow = FlowClass::Afferent;
      n.superclass = kAffSuper[i % 2];
    } else if (i < spec.n_afferent + spec.n_intrinsic) {
      n.flow = FlowClass::Intrinsic;
      n.superclass = kIntSuper[(i - spec.n_afferent) % 4];
    } else {
      n.flow = FlowClass::Efferent;
      n.superclass = kEffSuper[(i - spec.n_afferent - spec.n_intrinsic) % 3];
    }
    n.nt = NtType(rng.categorical(spec.nt_mix));
    block[i] = int32_t(rng.uniform_int(nb));
  }

  std::vector<int32_t> senders;    // afferent + intrinsic
  std::vector<int32_t> receivers;  // intrinsic + efferent
  std::vector<std::vector<int32_t>> block_receivers(static_cast<size_t>(nb));
  for (int32_t i = 0; i < v; ++i) {
    if (c.neurons[i].flow != FlowClass::Efferent) senders.push_back(i);
    if (c.neurons[i].flow != FlowClass::Afferent) {
      receivers.push_back(i);
      block_receivers[block[i]].push_back(i);
    }
  }

  // Resample the whole edge set until every afferent sends and every efferent
  // receives; the seed loop keeps it deterministic.
  for (int attempt_round = 0;; ++attempt_round) {
    if (attempt_round >= 64)
      throw UsageError("synth: could not cover all afferent/efferent neurons; raise n_edges");
    std::unordered_set<int64_t> used;
    std::vector<SynapseEdge> edges;
    int64_t tries = 0;
    const int64_t max_tries = 400 * std::max<int64_t>(spec.n_edges, 1);
    while (int64_t(edges.size()) < spec.n_edges) {
      if (++tries > max_tries)
        throw UsageError("synth: rejection sampling stalled; lower n_edges or modularity");
      int32_t pre = senders[rng.uniform_int(int(senders.size()))];
      const auto& same = block_receivers[block[pre]];
      int32_t post;
      if (!same.empty() && rng.uniform() < spec.modularity)
        post = same[rng.uniform_int(int(same.size()))];
      else
        post = receivers[rng.uniform_int(int(receivers.size()))];
      if (pre == post) continue;
      int64_t key = int64_t(pre) * v + post;
      if (!used.insert(key).second) continue;
      SynapseEdge e;
      e.pre = pre;
      e.post = post;
      e.syn_count = 1 + int64_t(rng.uniform_u64(uint64_t(std::max<int64_t>(1, spec.max_syn_count))));
      edges.push_back(e);
    }
    std::vector<char> aff_out(size_t(v), 0), eff_in(size_t(v), 0);
    for (const auto& e : edges) {
      aff_out[e.pre] = 1;
      eff_in[e.post] = 1;
    }
    bool ok = true;
    for (int32_t i = 0; i < v && ok; ++i) {
      if (c.neurons[i].flow == FlowClass::Afferent && !aff_out[i]) ok = false;
      if (c.neurons[i].flow == FlowClass::Efferent && !eff_in[i]) ok = false;
    }
    if (ok) {
      c.edges = std::move(edges);
      break;
    }
  }

  c.sort_edges();
  c.rebuild_partition();
  c.validate();
  return c;
}

}  // namespace flygm
