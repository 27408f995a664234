#include "flygm/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <sstream>

#include "flygm/eigh.hpp"
#include "flygm/rng.hpp"

namespace flygm {

namespace {

double percentile(std::vector<double> sorted, double q) {
  const size_t n = sorted.size();
  if (n == 0) return 0.0;
  const double rank = q * double(n - 1);
  const size_t lo = size_t(rank);
  const size_t hi = std::min(lo + 1, n - 1);
  const double frac = rank - double(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

std::string fmt_value(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string heat_color(double v) {
  // three-stop gradient, dark violet to yellow
  static const double stops[3][3] = {{13, 8, 135}, {204, 71, 120}, {248, 249, 33}};
  v = std::clamp(v, 0.0, 1.0);
  const int seg = v < 0.5 ? 0 : 1;
  const double f = (v - 0.5 * seg) * 2.0;
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x",
                int(std::lround(stops[seg][0] + f * (stops[seg + 1][0] - stops[seg][0]))),
                int(std::lround(stops[seg][1] + f * (stops[seg + 1][1] - stops[seg][1]))),
                int(std::lround(stops[seg][2] + f * (stops[seg + 1][2] - stops[seg][2]))));
  return buf;
}

}  // namespace

StateRecording make_recording(const EvalRecording& rec, const Connectome& graph) {
  if (rec.n_neurons != graph.size())
    throw DataError("recording covers " + std::to_string(rec.n_neurons) +
                    " neurons but the graph has " + std::to_string(graph.size()));
  StateRecording out;
  out.t_steps = rec.t_steps;
  out.n_neurons = rec.n_neurons;
  out.channels = rec.channels;
  out.data = rec.data;
  out.flow.reserve(size_t(graph.size()));
  out.superclass.reserve(size_t(graph.size()));
  for (const auto& n : graph.neurons) {
    out.flow.push_back(uint8_t(n.flow));
    out.superclass.push_back(n.superclass);
  }
  return out;
}

IntensityMap reduce_intensity(const StateRecording& rec) {
  const int t_len = rec.t_steps, n = rec.n_neurons, c = rec.channels;
  if (t_len < 2) throw DataError("intensity reduction needs at least 2 recorded steps");
  if (n < 1 || c < 1) throw DataError("intensity reduction needs a non-empty recording");
  const size_t samples = size_t(t_len) * size_t(n);

  std::vector<double> mean(size_t(c), 0.0);
  for (size_t s = 0; s < samples; ++s)
    for (int k = 0; k < c; ++k) mean[size_t(k)] += rec.data[s * size_t(c) + size_t(k)];
  for (double& m : mean) m /= double(samples);

  Tensor2<double> cov(c, c);
  for (size_t s = 0; s < samples; ++s)
    for (int i = 0; i < c; ++i) {
      const double xi = rec.data[s * size_t(c) + size_t(i)] - mean[size_t(i)];
      for (int j = i; j < c; ++j)
        cov.at(i, j) += xi * (rec.data[s * size_t(c) + size_t(j)] - mean[size_t(j)]);
    }
  for (int i = 0; i < c; ++i)
    for (int j = i; j < c; ++j) {
      cov.at(i, j) /= double(samples);
      cov.at(j, i) = cov.at(i, j);
    }

  auto eig = eigh(cov);
  IntensityMap out;
  out.loadings.resize(size_t(c));
  for (int i = 0; i < c; ++i) out.loadings[size_t(i)] = eig.eigenvectors.at(i, c - 1);
  int imax = 0;
  for (int i = 1; i < c; ++i)
    if (std::abs(out.loadings[size_t(i)]) > std::abs(out.loadings[size_t(imax)])) imax = i;
  if (out.loadings[size_t(imax)] < 0.0)
    for (double& l : out.loadings) l = -l;

  std::vector<double> scores(samples);
  for (size_t s = 0; s < samples; ++s) {
    double acc = 0.0;
    for (int k = 0; k < c; ++k)
      acc += (rec.data[s * size_t(c) + size_t(k)] - mean[size_t(k)]) * out.loadings[size_t(k)];
    scores[s] = acc;
  }

  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end());
  out.p5 = percentile(sorted, 0.05);
  out.p95 = percentile(std::move(sorted), 0.95);

  out.values = Tensor2<double>(t_len, n);
  const double span = out.p95 - out.p5;
  if (!(span > 0.0)) {
    out.zero_variance = true;
    std::fprintf(stderr, "warning: recording has no variance, intensity set to 0.5\n");
    for (double& v : out.values.data) v = 0.5;
    return out;
  }
  for (size_t s = 0; s < samples; ++s)
    out.values.data[s] = std::clamp((scores[s] - out.p5) / span, 0.0, 1.0);
  return out;
}

CapTable default_caps() {
  return {{"sensory", 400},    {"ascending", 200},          {"optic", 1500},
          {"central", 400},    {"visual projection", 120},  {"visual centrifugal", 120},
          {"descending", 120}, {"motor", 100},              {"endocrine", 60}};
}

StateRecording stratified_downsample(const StateRecording& rec, const CapTable& caps,
                                     uint64_t seed, std::vector<int32_t>* kept_out) {
  for (const auto& [name, cap] : caps)
    if (cap < 1) throw UsageError("downsample cap for " + name + " must be at least 1");

  std::vector<std::string> class_order;
  std::vector<std::vector<int32_t>> members;
  for (int32_t i = 0; i < rec.n_neurons; ++i) {
    const auto& sc = rec.superclass[size_t(i)];
    auto it = std::find(class_order.begin(), class_order.end(), sc);
    if (it == class_order.end()) {
      class_order.push_back(sc);
      members.emplace_back();
      it = class_order.end() - 1;
    }
    members[size_t(it - class_order.begin())].push_back(i);
  }

  std::vector<int32_t> kept;
  for (size_t g = 0; g < class_order.size(); ++g) {
    int cap = -1;
    for (const auto& [name, c] : caps)
      if (name == class_order[g]) cap = c;
    auto& ids = members[g];
    if (cap < 0 || int(ids.size()) <= cap) {
      kept.insert(kept.end(), ids.begin(), ids.end());
      continue;
    }
    Rng rng(derive_seed(seed, "downsample_" + class_order[g]));
    std::vector<int32_t> pool = ids;
    rng.shuffle(std::span<int32_t>(pool));
    pool.resize(size_t(cap));
    std::sort(pool.begin(), pool.end());
    kept.insert(kept.end(), pool.begin(), pool.end());
  }
  std::sort(kept.begin(), kept.end());

  StateRecording out;
  out.t_steps = rec.t_steps;
  out.n_neurons = int32_t(kept.size());
  out.channels = rec.channels;
  out.data.resize(size_t(rec.t_steps) * kept.size() * size_t(rec.channels));
  for (int32_t t = 0; t < rec.t_steps; ++t)
    for (size_t j = 0; j < kept.size(); ++j)
      for (int32_t ch = 0; ch < rec.channels; ++ch)
        out.data[(size_t(t) * kept.size() + j) * size_t(rec.channels) + size_t(ch)] =
            rec.at(t, kept[j], ch);
  for (int32_t id : kept) {
    out.flow.push_back(rec.flow[size_t(id)]);
    out.superclass.push_back(rec.superclass[size_t(id)]);
  }
  if (kept_out) *kept_out = std::move(kept);
  return out;
}

Tensor2<double> similarity_matrix(const Tensor2<double>& series, const SimilarityOptions& opt) {
  const int t_len = series.rows, n = series.cols;
  if (n < 2) throw DataError("similarity needs at least 2 neurons");
  for (double v : series.data)
    if (!std::isfinite(v)) throw DataError("similarity input has non-finite values");

  std::vector<double> norms(size_t(n), 0.0);
  for (int j = 0; j < n; ++j) {
    double s = 0.0;
    for (int t = 0; t < t_len; ++t) s += series.at(t, j) * series.at(t, j);
    norms[size_t(j)] = std::sqrt(s);
  }

  Tensor2<double> dist(n, n);
  double max_dist = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (int t = 0; t < t_len; ++t) {
        const double d = series.at(t, i) - series.at(t, j);
        s += d * d;
      }
      const double d = std::sqrt(s);
      dist.at(i, j) = d;
      dist.at(j, i) = d;
      max_dist = std::max(max_dist, d);
    }

  Tensor2<double> s_mat(n, n);
  for (int i = 0; i < n; ++i) {
    s_mat.at(i, i) = 1.0;
    for (int j = i + 1; j < n; ++j) {
      double cos_ij = 0.0;
      if (norms[size_t(i)] > 0.0 && norms[size_t(j)] > 0.0) {
        double dot = 0.0;
        for (int t = 0; t < t_len; ++t) dot += series.at(t, i) * series.at(t, j);
        cos_ij = dot / (norms[size_t(i)] * norms[size_t(j)]);
      }
      const double d_norm = max_dist > 0.0 ? dist.at(i, j) / max_dist : 0.0;
      const double d_term = opt.distance_as_similarity ? 1.0 - d_norm : d_norm;
      const double v = opt.alpha * cos_ij + (1.0 - opt.alpha) * d_term;
      s_mat.at(i, j) = v;
      s_mat.at(j, i) = v;
    }
  }
  return s_mat;
}

Tensor2<double> normalized_laplacian(const Tensor2<double>& s) {
  const int n = s.rows;
  if (s.cols != n) throw DataError("laplacian needs a square matrix");
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (s.at(i, j) != s.at(j, i)) throw DataError("laplacian needs a symmetric matrix");

  Tensor2<double> sp(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) sp.at(i, j) = i == j ? 1.0 : std::max(s.at(i, j), 0.0);

  std::vector<double> deg(size_t(n), 0.0);
  for (int i = 0; i < n; ++i) {
    double d = 0.0;
    for (int j = 0; j < n; ++j) d += sp.at(i, j);
    if (d <= 0.0) d = 1.0;
    deg[size_t(i)] = 1.0 / std::sqrt(d);
  }

  Tensor2<double> lap(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double off = -deg[size_t(i)] * sp.at(i, j) * deg[size_t(j)];
      lap.at(i, j) = (i == j ? 1.0 : 0.0) + off;
    }
  return lap;
}

SpectralOrder spectral_order(const Tensor2<double>& s) {
  const int n = s.rows;
  SpectralOrder out;
  if (n == 1) {
    out.perm = {0};
    out.fiedler = {0.0};
    out.degenerate = true;
    return out;
  }
  auto lap = normalized_laplacian(s);
  auto eig = eigh(lap);

  out.fiedler_value = eig.eigenvalues[1];
  out.fiedler.resize(size_t(n));
  for (int i = 0; i < n; ++i) out.fiedler[size_t(i)] = eig.eigenvectors.at(i, 1);
  if (n > 2) {
    const double gap = eig.eigenvalues[2] - eig.eigenvalues[1];
    out.degenerate = gap <= 1e-9 * std::max(1.0, std::abs(eig.eigenvalues[1]));
  }

  for (double v : out.fiedler) {
    if (std::abs(v) > 1e-12) {
      if (v < 0.0)
        for (double& f : out.fiedler) f = -f;
      break;
    }
  }

  out.perm.resize(size_t(n));
  std::iota(out.perm.begin(), out.perm.end(), 0);
  std::stable_sort(out.perm.begin(), out.perm.end(), [&](int32_t a, int32_t b) {
    return out.fiedler[size_t(a)] < out.fiedler[size_t(b)];
  });
  return out;
}

void emit_report(const Tensor2<double>& intensity, const std::vector<int32_t>& order,
                 const std::vector<NeuronLabel>& labels, const ReportMeta& meta) {
  const int t_len = intensity.rows, n = intensity.cols;
  if (int(order.size()) != n || int(labels.size()) != n)
    throw DataError("report: order and labels must cover every neuron");
  std::filesystem::create_directories(meta.out_dir);

  {
    std::ostringstream csv;
    csv << "neuron_id,flow_class,superclass";
    for (int t = 0; t < t_len; ++t) csv << ",t" << t;
    csv << "\n";
    for (int r = 0; r < n; ++r) {
      const int32_t j = order[size_t(r)];
      const auto& lb = labels[size_t(j)];
      csv << lb.id << "," << to_string(lb.flow) << "," << lb.superclass;
      for (int t = 0; t < t_len; ++t) csv << "," << fmt_value(intensity.at(t, j));
      csv << "\n";
    }
    write_text_atomic(meta.out_dir + "/intensity.csv", csv.str());
  }

  {
    // pool time into at most 192 display columns
    const int max_cols = 192;
    const int pool = std::max(1, (t_len + max_cols - 1) / max_cols);
    const int cols = (t_len + pool - 1) / pool;
    const int cell = 3, label_w = 150, pad = 10;
    const int width = label_w + cols * cell + pad;

    std::vector<int> group_start;
    for (int r = 0; r < n; ++r) {
      const auto& lb = labels[size_t(order[size_t(r)])];
      if (r == 0) {
        group_start.push_back(0);
        continue;
      }
      const auto& prev = labels[size_t(order[size_t(r - 1)])];
      if (lb.superclass != prev.superclass || lb.flow != prev.flow) group_start.push_back(r);
    }
    const int sep = 6;
    const int height = pad * 2 + n * cell + int(group_start.size()) * sep;

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    svg << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height
        << "\" fill=\"#ffffff\"/>\n";
    int y = pad;
    size_t g = 0;
    for (int r = 0; r < n; ++r) {
      if (g < group_start.size() && group_start[g] == r) {
        const auto& lb = labels[size_t(order[size_t(r)])];
        y += sep;
        svg << "<text x=\"4\" y=\"" << y + cell << "\" font-size=\"8\" font-family=\"monospace\">"
            << to_string(lb.flow) << " / " << lb.superclass << "</text>\n";
        ++g;
      }
      const int32_t j = order[size_t(r)];
      for (int cidx = 0; cidx < cols; ++cidx) {
        double acc = 0.0;
        int cnt = 0;
        for (int t = cidx * pool; t < std::min(t_len, (cidx + 1) * pool); ++t, ++cnt)
          acc += intensity.at(t, j);
        const double v = cnt > 0 ? acc / cnt : 0.0;
        svg << "<rect x=\"" << label_w + cidx * cell << "\" y=\"" << y << "\" width=\"" << cell
            << "\" height=\"" << cell << "\" fill=\"" << heat_color(v) << "\"/>\n";
      }
      y += cell;
    }
    svg << "</svg>\n";
    write_text_atomic(meta.out_dir + "/heatmap.svg", svg.str());
  }

  {
    std::ostringstream man;
    man << "seed=" << meta.seed << "\n";
    man << "alpha=" << fmt_value(meta.alpha) << "\n";
    man << "neurons=" << n << "\n";
    man << "steps=" << t_len << "\n";
    for (const auto& [name, cap] : meta.caps) man << "cap." << name << "=" << cap << "\n";
    for (const auto& note : meta.notes) man << "note=" << note << "\n";
    write_text_atomic(meta.out_dir + "/analysis_manifest.txt", man.str());
  }
}

}  // namespace flygm
