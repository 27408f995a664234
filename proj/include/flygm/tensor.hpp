#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "flygm/rng.hpp"

namespace flygm {

// Dense row-major 2-D array. Vectors are 1xN or Nx1 as convenient.
template <typename T>
struct Tensor2 {
  int32_t rows = 0;
  int32_t cols = 0;
  std::vector<T> data;

  Tensor2() = default;
  Tensor2(int32_t r, int32_t c) : rows(r), cols(c), data(size_t(r) * size_t(c), T(0)) {}

  static Tensor2 zeros(int32_t r, int32_t c) { return Tensor2(r, c); }

  static Tensor2 gaussian(int32_t r, int32_t c, double stddev, Rng& rng) {
    Tensor2 t(r, c);
    for (auto& v : t.data) v = T(rng.normal() * stddev);
    return t;
  }

  size_t size() const { return size_t(rows) * size_t(cols); }

  T* operator[](int32_t r) { return data.data() + size_t(r) * cols; }
  const T* operator[](int32_t r) const { return data.data() + size_t(r) * cols; }

  T& at(int32_t r, int32_t c) { return data[size_t(r) * cols + c]; }
  const T& at(int32_t r, int32_t c) const { return data[size_t(r) * cols + c]; }

  std::span<T> row(int32_t r) { return {(*this)[r], size_t(cols)}; }
  std::span<const T> row(int32_t r) const { return {(*this)[r], size_t(cols)}; }

  // reshape in place, buffer capacity kept, contents zeroed
  void assign_zero(int32_t r, int32_t c) {
    rows = r;
    cols = c;
    data.assign(size_t(r) * size_t(c), T(0));
  }

  void resize_keep(int32_t r, int32_t c) {
    rows = r;
    cols = c;
    data.resize(size_t(r) * size_t(c));
  }

  bool all_finite() const {
    for (const T& v : data)
      if (!std::isfinite(double(v))) return false;
    return true;
  }

  bool same_shape(const Tensor2& o) const { return rows == o.rows && cols == o.cols; }

  template <typename U>
  Tensor2<U> cast() const {
    Tensor2<U> out(rows, cols);
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = U(data[i]);
    return out;
  }
};

template <typename T>
double max_abs_diff(const Tensor2<T>& a, const Tensor2<T>& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, std::abs(double(a.data[i]) - double(b.data[i])));
  return m;
}

}  // namespace flygm
