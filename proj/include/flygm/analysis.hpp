#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "flygm/connectome.hpp"
#include "flygm/persistence.hpp"
#include "flygm/tensor.hpp"

namespace flygm {

StateRecording make_recording(const EvalRecording& rec, const Connectome& graph);

struct IntensityMap {
  Tensor2<double> values;  // T x N in [0,1]
  std::vector<double> loadings;
  double p5 = 0.0, p95 = 0.0;
  bool zero_variance = false;
};

// first principal component per (t, n) sample, percentile-clipped to [p5, p95]
// and min-max normalized
IntensityMap reduce_intensity(const StateRecording& rec);

using CapTable = std::vector<std::pair<std::string, int>>;
CapTable default_caps();

// uniform within-class subsampling; classes missing from the table are kept in
// full and relative order is preserved
StateRecording stratified_downsample(const StateRecording& rec, const CapTable& caps,
                                     uint64_t seed, std::vector<int32_t>* kept = nullptr);

struct SimilarityOptions {
  double alpha = 0.7;
  // substitute (1 - d) for the raw normalized distance term
  bool distance_as_similarity = false;
};

// series: T x N, one column per neuron
Tensor2<double> similarity_matrix(const Tensor2<double>& series,
                                  const SimilarityOptions& opt = {});

// I - D^{-1/2} S' D^{-1/2} with S' = max(S, 0), diag forced to 1
Tensor2<double> normalized_laplacian(const Tensor2<double>& s);

struct SpectralOrder {
  std::vector<int32_t> perm;
  double fiedler_value = 0.0;
  std::vector<double> fiedler;
  bool degenerate = false;  // second-smallest eigenvalue has multiplicity
};

SpectralOrder spectral_order(const Tensor2<double>& s);

struct NeuronLabel {
  int32_t id = 0;
  FlowClass flow = FlowClass::Intrinsic;
  std::string superclass;
};

struct ReportMeta {
  std::string out_dir;
  uint64_t seed = 0;
  double alpha = 0.7;
  CapTable caps;
  std::vector<std::string> notes;
};

// writes intensity.csv (rows in `order`), heatmap.svg (rows grouped by
// superclass runs), analysis_manifest.txt
void emit_report(const Tensor2<double>& intensity, const std::vector<int32_t>& order,
                 const std::vector<NeuronLabel>& labels, const ReportMeta& meta);

}  // namespace flygm
