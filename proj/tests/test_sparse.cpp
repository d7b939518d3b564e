#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "fno/sparse.hpp"

using namespace fno;

namespace {

SparseMatrix random_spd(int n, unsigned seed, std::vector<double>* rhs = nullptr) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  // B + B^T + n*I is symmetric and strictly diagonally dominant.
  std::vector<std::vector<double>> dense(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) dense[i][j] = unif(rng);
  Triplets t(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double v = dense[i][j] + dense[j][i];
      if (i == j) v += n;
      t.add(i, j, v);
    }
  if (rhs) {
    rhs->resize(n);
    for (int i = 0; i < n; ++i) (*rhs)[i] = unif(rng);
  }
  return SparseMatrix::from_triplets(t);
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double a_norm_error(const SparseMatrix& A, const std::vector<double>& x,
                    const std::vector<double>& ref) {
  std::vector<double> e(x.size());
  for (size_t i = 0; i < x.size(); ++i) e[i] = x[i] - ref[i];
  std::vector<double> Ae = A * e;
  double s = 0;
  for (size_t i = 0; i < e.size(); ++i) s += e[i] * Ae[i];
  return std::sqrt(std::max(0.0, s));
}

}  // namespace

TEST_CASE("duplicate triplets are summed") {
  Triplets t(1);
  t.add(0, 0, 1.0);
  t.add(0, 0, 2.0);
  SparseMatrix m = SparseMatrix::from_triplets(t);
  CHECK(m.dim() == 1);
  CHECK(m.nonzeros() == 1);
  CHECK(m.at(0, 0) == 3.0);
}

TEST_CASE("empty triplets give a zero matrix") {
  Triplets t(3);
  SparseMatrix m = SparseMatrix::from_triplets(t);
  CHECK(m.dim() == 3);
  CHECK(m.nonzeros() == 0);
  std::vector<double> y = m * std::vector<double>{1.0, 2.0, 3.0};
  for (double v : y) CHECK(v == 0.0);
}

TEST_CASE("exact cancellation drops the entry") {
  Triplets t(2);
  t.add(0, 1, 5.0);
  t.add(0, 1, -5.0);
  t.add(1, 1, 2.0);
  SparseMatrix m = SparseMatrix::from_triplets(t);
  CHECK(m.nonzeros() == 1);
  CHECK(m.at(0, 1) == 0.0);
  CHECK(m.at(1, 1) == 2.0);
}

TEST_CASE("matvec matches a dense reference on random instances") {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> size_dist(1, 50);
  std::uniform_real_distribution<double> unif(-2.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    int n = size_dist(rng);
    std::uniform_int_distribution<int> idx(0, n - 1);
    int nnz = 3 * n;
    std::vector<std::vector<double>> dense(n, std::vector<double>(n, 0.0));
    Triplets t(n);
    for (int k = 0; k < nnz; ++k) {
      int i = idx(rng), j = idx(rng);
      double v = unif(rng);
      t.add(i, j, v);
      dense[i][j] += v;
    }
    std::vector<double> x(n);
    for (double& v : x) v = unif(rng);
    std::vector<double> want(n, 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) want[i] += dense[i][j] * x[j];
    std::vector<double> got = SparseMatrix::from_triplets(t) * x;
    CHECK(max_abs_diff(got, want) <= 1e-12);
  }
}

TEST_CASE("cg on the identity converges in one iteration") {
  Triplets t(5);
  for (int i = 0; i < 5; ++i) t.add(i, i, 1.0);
  SparseMatrix A = SparseMatrix::from_triplets(t);
  std::vector<double> b(5, 1.0);
  CgResult res = cg_solve(A, b);
  CHECK(res.converged);
  CHECK(res.iterations == 1);
  for (double v : res.x) CHECK(v == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("cg matches a dense factorization on a random spd system") {
  std::vector<double> b;
  SparseMatrix A = random_spd(20, 4242, &b);
  CHECK(A.symmetry_error() <= 1e-14);
  std::vector<double> ref = solve_dense_spd(A, b);
  CgResult res = cg_solve(A, b, 1e-12, 200);
  CHECK(res.converged);
  CHECK(max_abs_diff(res.x, ref) <= 1e-8);
}

TEST_CASE("cg warm start reduces the work") {
  std::vector<double> b;
  SparseMatrix A = random_spd(30, 7, &b);
  CgResult cold = cg_solve(A, b, 1e-12, 500);
  REQUIRE(cold.converged);
  CgResult warm = cg_solve(A, b, 1e-12, 500, &cold.x);
  CHECK(warm.converged);
  CHECK(warm.iterations <= 1);
}

TEST_CASE("cg a-norm error decreases with iteration budget") {
  std::vector<double> b;
  SparseMatrix A = random_spd(40, 11, &b);
  std::vector<double> ref = solve_dense_spd(A, b);
  double prev = a_norm_error(A, std::vector<double>(40, 0.0), ref);
  for (int iters : {1, 2, 4, 8, 16}) {
    CgResult res = cg_solve(A, b, 0.0, iters);
    double err = a_norm_error(A, res.x, ref);
    CHECK(err <= prev + 1e-13);
    prev = err;
  }
}

TEST_CASE("cg reports non-convergence with the final residual") {
  std::vector<double> b;
  SparseMatrix A = random_spd(40, 13, &b);
  CgResult res = cg_solve(A, b, 1e-14, 1);
  CHECK_FALSE(res.converged);
  CHECK(res.iterations == 1);
  CHECK(res.rel_residual > 1e-14);
}

TEST_CASE("cg with zero rhs returns zero immediately") {
  Triplets t(3);
  for (int i = 0; i < 3; ++i) t.add(i, i, 2.0);
  CgResult res = cg_solve(SparseMatrix::from_triplets(t), std::vector<double>(3, 0.0));
  CHECK(res.converged);
  CHECK(res.iterations == 0);
  for (double v : res.x) CHECK(v == 0.0);
}

TEST_CASE("dirichlet on a 1x1 system pins the value") {
  Triplets t(1);
  t.add(0, 0, 3.0);
  SparseMatrix A = SparseMatrix::from_triplets(t);
  std::vector<double> b{0.0};
  DirichletSet bc;
  bc.add(0, 7.0);
  apply_dirichlet(A, b, bc);
  CgResult res = cg_solve(A, b);
  CHECK(res.converged);
  CHECK(res.x[0] == doctest::Approx(7.0).epsilon(1e-14));
}

TEST_CASE("dirichlet elimination carries the constraint into the rhs") {
  // [[2,-1],[-1,2]] with x0 = 1 leaves 2*x1 = 0 + 1, so x1 = 0.5.
  Triplets t(2);
  t.add(0, 0, 2.0);
  t.add(0, 1, -1.0);
  t.add(1, 0, -1.0);
  t.add(1, 1, 2.0);
  SparseMatrix A = SparseMatrix::from_triplets(t);
  std::vector<double> b{0.0, 0.0};
  DirichletSet bc;
  bc.add(0, 1.0);
  apply_dirichlet(A, b, bc);
  CHECK(A.symmetry_error() <= 1e-15);
  CHECK(A.at(0, 1) == 0.0);
  CHECK(A.at(1, 0) == 0.0);
  CHECK(A.at(0, 0) == 1.0);
  CgResult res = cg_solve(A, b);
  CHECK(res.x[0] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(res.x[1] == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("dirichlet solution matches a dense oracle on the reduced system") {
  std::vector<double> b;
  SparseMatrix A = random_spd(25, 2025, &b);
  SparseMatrix A_full = A;
  std::vector<double> b_full = b;

  DirichletSet bc;
  bc.add(0, 0.3);
  bc.add(7, -1.2);
  bc.add(24, 0.0);
  apply_dirichlet(A, b, bc);
  CHECK(A.symmetry_error() <= 1e-14);

  CgResult res = cg_solve(A, b, 1e-13, 500);
  REQUIRE(res.converged);
  CHECK(res.x[0] == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(res.x[7] == doctest::Approx(-1.2).epsilon(1e-14));
  CHECK(res.x[24] == doctest::Approx(0.0));

  // Unconstrained residual rows of the original system must vanish.
  std::vector<double> Ax = A_full * res.x;
  for (int i = 0; i < 25; ++i) {
    if (i == 0 || i == 7 || i == 24) continue;
    CHECK(std::abs(Ax[i] - b_full[i]) <= 1e-9);
  }
}

TEST_CASE("later dirichlet entries override earlier ones") {
  Triplets t(2);
  t.add(0, 0, 2.0);
  t.add(1, 1, 2.0);
  SparseMatrix A = SparseMatrix::from_triplets(t);
  std::vector<double> b{0.0, 0.0};
  DirichletSet bc;
  bc.add(0, 3.0);
  bc.add(0, 5.0);
  apply_dirichlet(A, b, bc);
  CHECK(b[0] == 5.0);
}

TEST_CASE("out-of-range indices are rejected") {
  Triplets t(2);
  t.add(0, 2, 1.0);
  CHECK_THROWS(SparseMatrix::from_triplets(t));

  Triplets ok(2);
  ok.add(0, 0, 1.0);
  ok.add(1, 1, 1.0);
  SparseMatrix A = SparseMatrix::from_triplets(ok);
  std::vector<double> b{1.0, 1.0};
  DirichletSet bc;
  bc.add(5, 0.0);
  CHECK_THROWS(apply_dirichlet(A, b, bc));
}
