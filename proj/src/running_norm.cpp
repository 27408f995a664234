#include "flygm/running_norm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace flygm {

RunningNorm::RunningNorm(int dim, double eps)
    : mean_(size_t(dim), 0.0), m2_(size_t(dim), 0.0), eps_(eps) {}

void RunningNorm::update(std::span<const double> x) {
  if (frozen_) throw std::logic_error("RunningNorm: update on frozen normalizer");
  if (int(x.size()) != dim()) throw std::invalid_argument("RunningNorm: dim mismatch");
  ++count_;
  for (size_t i = 0; i < x.size(); ++i) {
    const double delta = x[i] - mean_[i];
    mean_[i] += delta / double(count_);
    m2_[i] += delta * (x[i] - mean_[i]);
  }
}

void RunningNorm::apply(std::span<const double> x, std::span<double> out) const {
  if (int(x.size()) != dim() || out.size() != x.size())
    throw std::invalid_argument("RunningNorm: dim mismatch");
  if (count_ < 2) {
    std::fill(out.begin(), out.end(), 0.0);
    return;
  }
  for (size_t i = 0; i < x.size(); ++i) {
    const double var = m2_[i] / double(count_);
    out[i] = (x[i] - mean_[i]) / std::sqrt(var + eps_);
  }
}

std::vector<double> RunningNorm::apply(std::span<const double> x) const {
  std::vector<double> out(x.size());
  apply(x, out);
  return out;
}

std::vector<double> RunningNorm::normalize(std::span<const double> x) {
  if (!frozen_) update(x);
  return apply(x);
}

std::vector<double> RunningNorm::variance() const {
  std::vector<double> v(mean_.size(), 0.0);
  if (count_ > 0)
    for (size_t i = 0; i < v.size(); ++i) v[i] = m2_[i] / double(count_);
  return v;
}

void RunningNorm::restore(std::vector<double> mean, std::vector<double> m2, int64_t count,
                          double eps, bool frozen) {
  if (mean.size() != m2.size()) throw std::invalid_argument("RunningNorm: restore dim mismatch");
  mean_ = std::move(mean);
  m2_ = std::move(m2);
  count_ = count;
  eps_ = eps;
  frozen_ = frozen;
}

}  // namespace flygm
