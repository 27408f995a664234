#include "flygm/eigh.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace flygm {

EighResult eigh(const Tensor2<double>& sym, int max_sweeps, double tol) {
  const int n = sym.rows;
  if (sym.cols != n) throw std::invalid_argument("eigh: matrix not square");
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (std::abs(sym.at(i, j) - sym.at(j, i)) > 1e-9 * (1.0 + std::abs(sym.at(i, j))))
        throw std::invalid_argument("eigh: matrix not symmetric");

  Tensor2<double> a = sym;
  Tensor2<double> vmat(n, n);
  for (int i = 0; i < n; ++i) vmat.at(i, i) = 1.0;

  double fro = 0.0;
  for (double x : a.data) fro += x * x;
  fro = std::sqrt(fro);
  const double stop = tol * std::max(fro, 1e-300);

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += 2.0 * a.at(i, j) * a.at(i, j);
    if (std::sqrt(off) <= stop) break;

    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a.at(p, q);
        if (apq == 0.0) continue;
        const double app = a.at(p, p);
        const double aqq = a.at(q, q);
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        for (int k = 0; k < n; ++k) {
          const double akp = a.at(k, p);
          const double akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a.at(p, k);
          const double aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = vmat.at(k, p);
          const double vkq = vmat.at(k, q);
          vmat.at(k, p) = c * vkp - s * vkq;
          vmat.at(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> diag(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) diag[i] = a.at(i, i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int x, int y) { return diag[x] < diag[y]; });

  EighResult res;
  res.eigenvalues.resize(static_cast<size_t>(n));
  res.eigenvectors = Tensor2<double>(n, n);
  for (int j = 0; j < n; ++j) {
    res.eigenvalues[j] = diag[order[j]];
    for (int i = 0; i < n; ++i) res.eigenvectors.at(i, j) = vmat.at(i, order[j]);
  }
  return res;
}

}  // namespace flygm
