#pragma once

#include <vector>

#include "flygm/tensor.hpp"

namespace flygm {

struct EighResult {
  std::vector<double> eigenvalues;   // ascending
  Tensor2<double> eigenvectors;      // column j pairs with eigenvalues[j]
};

// Dense symmetric eigendecomposition, cyclic Jacobi rotations.
// Deterministic; intended for the small matrices used here.
EighResult eigh(const Tensor2<double>& sym, int max_sweeps = 100, double tol = 1e-13);

}  // namespace flygm
