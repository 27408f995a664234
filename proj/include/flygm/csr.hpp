#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

#include "flygm/tensor.hpp"

namespace flygm {

// Square-or-rectangular sparse matrix, CSR plus a transpose view built once
// at construction so W^T products in the backward pass need no setup.
struct CsrMatrix {
  int32_t rows = 0;
  int32_t cols = 0;
  std::vector<int64_t> row_ptr;   // rows + 1
  std::vector<int32_t> col_idx;   // sorted within each row
  std::vector<double> val;

  // transpose (CSR of the transposed matrix)
  std::vector<int64_t> t_row_ptr;
  std::vector<int32_t> t_col_idx;
  std::vector<double> t_val;

  int64_t nnz() const { return int64_t(col_idx.size()); }

  void build_transpose() {
    t_row_ptr.assign(size_t(cols) + 1, 0);
    t_col_idx.resize(col_idx.size());
    t_val.resize(val.size());
    for (int32_t c : col_idx) ++t_row_ptr[size_t(c) + 1];
    for (size_t i = 1; i < t_row_ptr.size(); ++i) t_row_ptr[i] += t_row_ptr[i - 1];
    std::vector<int64_t> cursor(t_row_ptr.begin(), t_row_ptr.end() - 1);
    for (int32_t r = 0; r < rows; ++r) {
      for (int64_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
        int64_t pos = cursor[col_idx[k]]++;
        t_col_idx[pos] = r;
        t_val[pos] = val[k];
      }
    }
  }

  Tensor2<double> dense() const {
    Tensor2<double> out(rows, cols);
    for (int32_t r = 0; r < rows; ++r)
      for (int64_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k)
        out.at(r, col_idx[k]) += val[k];
    return out;
  }

  double inf_norm() const {
    double m = 0.0;
    for (int32_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (int64_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k) s += std::abs(val[k]);
      m = std::max(m, s);
    }
    return m;
  }
};

// entries keyed (row, col), already unique
inline CsrMatrix csr_from_entries(int32_t rows, int32_t cols,
                                  const std::map<std::pair<int32_t, int32_t>, double>& entries) {
  CsrMatrix w;
  w.rows = rows;
  w.cols = cols;
  w.row_ptr.assign(size_t(rows) + 1, 0);
  for (const auto& [k, _] : entries) ++w.row_ptr[size_t(k.first) + 1];
  for (size_t i = 1; i < w.row_ptr.size(); ++i) w.row_ptr[i] += w.row_ptr[i - 1];
  w.col_idx.resize(entries.size());
  w.val.resize(entries.size());
  size_t pos = 0;
  for (const auto& [k, v] : entries) {
    w.col_idx[pos] = k.second;
    w.val[pos] = v;
    ++pos;
  }
  w.build_transpose();
  return w;
}

// out = W * H, row-wise exact accumulation
template <typename T>
void spmm(const CsrMatrix& W, const Tensor2<T>& H, Tensor2<T>& out) {
  if (H.rows != W.cols) throw std::invalid_argument("spmm: inner dimension mismatch");
  out.assign_zero(W.rows, H.cols);
  const int32_t c = H.cols;
  for (int32_t r = 0; r < W.rows; ++r) {
    T* orow = out[r];
    for (int64_t k = W.row_ptr[r]; k < W.row_ptr[r + 1]; ++k) {
      const T w = T(W.val[k]);
      const T* hrow = H[W.col_idx[k]];
      for (int32_t j = 0; j < c; ++j) orow[j] += w * hrow[j];
    }
  }
}

// out = W^T * G via the transpose view
template <typename T>
void spmm_transpose(const CsrMatrix& W, const Tensor2<T>& G, Tensor2<T>& out) {
  if (G.rows != W.rows) throw std::invalid_argument("spmm_transpose: inner dimension mismatch");
  if (W.t_row_ptr.empty() && W.nnz() > 0)
    throw std::logic_error("spmm_transpose: transpose view not built");
  out.assign_zero(W.cols, G.cols);
  const int32_t c = G.cols;
  for (int32_t r = 0; r < W.cols; ++r) {
    T* orow = out[r];
    for (int64_t k = W.t_row_ptr[r]; k < W.t_row_ptr[r + 1]; ++k) {
      const T w = T(W.t_val[k]);
      const T* grow = G[W.t_col_idx[k]];
      for (int32_t j = 0; j < c; ++j) orow[j] += w * grow[j];
    }
  }
}

}  // namespace flygm
