#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace flygm {

// Per-dimension running standardization, Welford accumulation in double.
// Population variance (m2 / count). With no or one sample the output is 0.
class RunningNorm {
 public:
  RunningNorm() = default;
  explicit RunningNorm(int dim, double eps = 1e-5);

  int dim() const { return int(mean_.size()); }
  int64_t count() const { return count_; }
  double eps() const { return eps_; }
  bool frozen() const { return frozen_; }
  void freeze(bool f = true) { frozen_ = f; }

  void update(std::span<const double> x);
  void apply(std::span<const double> x, std::span<double> out) const;
  std::vector<double> apply(std::span<const double> x) const;
  // update (unless frozen) then apply
  std::vector<double> normalize(std::span<const double> x);

  std::vector<double> variance() const;
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& m2() const { return m2_; }

  // for persistence
  void restore(std::vector<double> mean, std::vector<double> m2, int64_t count, double eps,
               bool frozen);

 private:
  std::vector<double> mean_;
  std::vector<double> m2_;
  int64_t count_ = 0;
  double eps_ = 1e-5;
  bool frozen_ = false;
};

}  // namespace flygm
