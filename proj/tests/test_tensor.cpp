#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "flygm/csr.hpp"
#include "flygm/rng.hpp"
#include "flygm/running_norm.hpp"
#include "flygm/tensor.hpp"

using namespace flygm;

TEST_CASE("tensor basics") {
  Tensor2<double> t(3, 4);
  CHECK(t.size() == 12);
  for (const double& x : t.data) CHECK(x == 0.0);
  t.at(1, 2) = 5.0;
  CHECK(t[1][2] == 5.0);
  CHECK(t.row(1)[2] == 5.0);
  CHECK(t.all_finite());
  t.at(0, 0) = std::nan("");
  CHECK_FALSE(t.all_finite());

  Tensor2<double> a(2, 2), b(2, 2);
  a.at(0, 1) = 3.0;
  b.at(0, 1) = 1.0;
  CHECK(max_abs_diff(a, b) == doctest::Approx(2.0));
  Tensor2<double> c(2, 3);
  CHECK_THROWS(max_abs_diff(a, c));

  auto f = a.cast<float>();
  CHECK(f.at(0, 1) == 3.0f);
}

TEST_CASE("rng streams are deterministic and tag-separated") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 20; ++i) CHECK(a.next_u64() == b.next_u64());
  bool any_diff = false;
  Rng a2(42);
  for (int i = 0; i < 20; ++i) any_diff |= a2.next_u64() != c.next_u64();
  CHECK(any_diff);

  CHECK(derive_seed(7, "alpha") == derive_seed(7, "alpha"));
  CHECK(derive_seed(7, "alpha") != derive_seed(7, "beta"));
  CHECK(derive_seed(7, "alpha") != derive_seed(8, "alpha"));
  CHECK(derive_seed(7, uint64_t(3)) != derive_seed(7, uint64_t(4)));
}

TEST_CASE("rng uniform and normal ranges") {
  Rng r(1);
  double mean = 0.0;
  for (int i = 0; i < 4000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    mean += r.normal();
  }
  mean /= 4000.0;
  CHECK(std::abs(mean) < 0.1);
}

TEST_CASE("rng shuffle is a permutation") {
  Rng r(5);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  r.shuffle(std::span<int>(v));
  std::set<int> s(v.begin(), v.end());
  CHECK(s.size() == 50);
  bool moved = false;
  for (int i = 0; i < 50; ++i) moved |= v[size_t(i)] != i;
  CHECK(moved);
}

TEST_CASE("running norm matches two-pass statistics") {
  Rng r(9);
  const int dim = 3, n = 200;
  std::vector<std::vector<double>> xs;
  RunningNorm norm(dim);
  for (int i = 0; i < n; ++i) {
    std::vector<double> x(dim);
    for (auto& v : x) v = r.normal(2.0, 3.0);
    norm.update(x);
    xs.push_back(x);
  }
  for (int d = 0; d < dim; ++d) {
    double mu = 0.0;
    for (const auto& x : xs) mu += x[size_t(d)];
    mu /= n;
    double var = 0.0;
    for (const auto& x : xs) var += (x[size_t(d)] - mu) * (x[size_t(d)] - mu);
    var /= n;  // population variance
    CHECK(norm.mean()[size_t(d)] == doctest::Approx(mu).epsilon(1e-12));
    CHECK(norm.variance()[size_t(d)] == doctest::Approx(var).epsilon(1e-10));
  }

  std::vector<double> probe(dim, 1.0);
  auto z = norm.apply(probe);
  for (int d = 0; d < dim; ++d) {
    const double expect =
        (1.0 - norm.mean()[size_t(d)]) / std::sqrt(norm.variance()[size_t(d)] + norm.eps());
    CHECK(z[size_t(d)] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("running norm freeze and empty behavior") {
  RunningNorm norm(2);
  // with no samples the output is zero, not NaN
  auto z0 = norm.apply(std::vector<double>{5.0, -3.0});
  CHECK(z0[0] == 0.0);
  CHECK(z0[1] == 0.0);

  norm.update(std::vector<double>{1.0, 2.0});
  auto z1 = norm.apply(std::vector<double>{5.0, -3.0});
  CHECK(z1[0] == 0.0);  // single sample: variance 0 path stays defined
  norm.update(std::vector<double>{3.0, 6.0});
  CHECK(norm.count() == 2);

  norm.freeze(true);
  norm.normalize(std::vector<double>{100.0, 100.0});
  CHECK(norm.count() == 2);  // frozen update is a no-op
  norm.freeze(false);
  norm.normalize(std::vector<double>{100.0, 100.0});
  CHECK(norm.count() == 3);
}

TEST_CASE("running norm restore round trip") {
  RunningNorm a(2);
  a.update(std::vector<double>{1.0, -1.0});
  a.update(std::vector<double>{2.0, 4.0});
  a.freeze(true);
  RunningNorm b(2);
  b.restore(a.mean(), a.m2(), a.count(), a.eps(), a.frozen());
  auto za = a.apply(std::vector<double>{0.5, 0.5});
  auto zb = b.apply(std::vector<double>{0.5, 0.5});
  CHECK(za[0] == zb[0]);
  CHECK(za[1] == zb[1]);
  CHECK(b.frozen());
}

namespace {

CsrMatrix random_csr(int rows, int cols, double density, uint64_t seed) {
  Rng r(seed);
  CsrMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.row_ptr.assign(size_t(rows) + 1, 0);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      if (r.uniform() < density) {
        m.col_idx.push_back(j);
        m.val.push_back(std::floor(r.normal() * 4.0));
        ++m.row_ptr[size_t(i) + 1];
      }
    }
  }
  for (size_t i = 1; i < m.row_ptr.size(); ++i) m.row_ptr[i] += m.row_ptr[i - 1];
  m.build_transpose();
  return m;
}

}  // namespace

TEST_CASE("sparse matmul matches the dense product") {
  const int n = 17, c = 5;
  CsrMatrix w = random_csr(n, n, 0.3, 11);
  Rng r(12);
  Tensor2<double> h(n, c);
  for (auto& x : h.data) x = r.normal();

  Tensor2<double> out;
  spmm(w, h, out);

  Tensor2<double> dense = w.dense();
  Tensor2<double> expect(n, c);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k)
      for (int j = 0; j < c; ++j) expect.at(i, j) += dense.at(i, k) * h.at(k, j);
  CHECK(max_abs_diff(out, expect) < 1e-12);

  // explicit zeros participate structurally but not numerically
  CHECK(w.nnz() == int64_t(w.col_idx.size()));
}

TEST_CASE("transposed sparse matmul matches the dense transpose product") {
  const int rows = 13, cols = 9, c = 4;
  CsrMatrix w = random_csr(rows, cols, 0.4, 21);
  Rng r(22);
  Tensor2<double> g(rows, c);
  for (auto& x : g.data) x = r.normal();

  Tensor2<double> out;
  spmm_transpose(w, g, out);

  Tensor2<double> dense = w.dense();
  Tensor2<double> expect(cols, c);
  for (int i = 0; i < rows; ++i)
    for (int k = 0; k < cols; ++k)
      for (int j = 0; j < c; ++j) expect.at(k, j) += dense.at(i, k) * g.at(i, j);
  CHECK(max_abs_diff(out, expect) < 1e-12);
}

TEST_CASE("spmm dimension mismatches throw") {
  CsrMatrix w = random_csr(4, 6, 0.5, 31);
  Tensor2<double> bad(5, 2);
  Tensor2<double> out;
  CHECK_THROWS(spmm(w, bad, out));
  Tensor2<double> badg(5, 2);
  CHECK_THROWS(spmm_transpose(w, badg, out));
}
