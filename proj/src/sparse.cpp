#include "fno/sparse.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fno {

SparseMatrix SparseMatrix::from_triplets(const Triplets& t) {
  for (const auto& e : t.entries)
    if (e.row < 0 || e.col < 0 || e.row >= t.dim || e.col >= t.dim)
      throw std::out_of_range("SparseMatrix: triplet index out of range");

  SparseMatrix m;
  m.n_ = t.dim;
  std::vector<Triplets::Entry> sorted = t.entries;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  m.row_ptr_.assign(t.dim + 1, 0);
  size_t i = 0;
  while (i < sorted.size()) {
    size_t j = i;
    double sum = 0;
    while (j < sorted.size() && sorted[j].row == sorted[i].row && sorted[j].col == sorted[i].col)
      sum += sorted[j++].val;
    if (sum != 0.0) {
      m.col_.push_back(sorted[i].col);
      m.val_.push_back(sum);
      m.row_ptr_[sorted[i].row + 1]++;
    }
    i = j;
  }
  for (int r = 0; r < t.dim; ++r) m.row_ptr_[r + 1] += m.row_ptr_[r];
  return m;
}

void SparseMatrix::matvec(const std::vector<double>& x, std::vector<double>& y) const {
  if ((int)x.size() != n_) throw std::invalid_argument("matvec: size mismatch");
  y.assign(n_, 0.0);
  for (int r = 0; r < n_; ++r) {
    double s = 0;
    for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) s += val_[k] * x[col_[k]];
    y[r] = s;
  }
}

std::vector<double> SparseMatrix::operator*(const std::vector<double>& x) const {
  std::vector<double> y;
  matvec(x, y);
  return y;
}

std::vector<double> SparseMatrix::diagonal() const {
  std::vector<double> d(n_, 0.0);
  for (int r = 0; r < n_; ++r)
    for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
      if (col_[k] == r) d[r] = val_[k];
  return d;
}

double SparseMatrix::at(int row, int col) const {
  auto begin = col_.begin() + row_ptr_[row];
  auto end = col_.begin() + row_ptr_[row + 1];
  auto it = std::lower_bound(begin, end, col);
  if (it == end || *it != col) return 0.0;
  return val_[it - col_.begin()];
}

double SparseMatrix::symmetry_error() const {
  double worst = 0;
  for (int r = 0; r < n_; ++r)
    for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
      double a = val_[k], b = at(col_[k], r);
      double scale = std::max({std::abs(a), std::abs(b), 1e-300});
      worst = std::max(worst, std::abs(a - b) / scale);
    }
  return worst;
}

void apply_dirichlet(SparseMatrix& A, std::vector<double>& b, const DirichletSet& bc) {
  if (bc.empty()) return;
  int n = A.dim();
  if ((int)b.size() != n) throw std::invalid_argument("apply_dirichlet: size mismatch");
  std::vector<char> constrained(n, 0);
  std::vector<double> value(n, 0.0);
  // Later entries override earlier ones, so boundary conditions can be
  // layered in application order.
  for (const auto& e : bc.entries) {
    if (e.dof < 0 || e.dof >= n) throw std::out_of_range("apply_dirichlet: dof out of range");
    constrained[e.dof] = 1;
    value[e.dof] = e.value;
  }

  // b_j -= A(j,i) * g_i uses row i in place of column i (A symmetric).
  const auto& rp = A.row_ptr();
  const auto& cols = A.cols();
  const auto& vals = A.values();
  for (int i = 0; i < n; ++i) {
    if (!constrained[i]) continue;
    for (int k = rp[i]; k < rp[i + 1]; ++k)
      if (!constrained[cols[k]]) b[cols[k]] -= vals[k] * value[i];
  }

  Triplets t(n);
  t.entries.reserve(vals.size());
  for (int r = 0; r < n; ++r) {
    if (constrained[r]) continue;
    for (int k = rp[r]; k < rp[r + 1]; ++k)
      if (!constrained[cols[k]]) t.add(r, cols[k], vals[k]);
  }
  for (int i = 0; i < n; ++i)
    if (constrained[i]) {
      t.add(i, i, 1.0);
      b[i] = value[i];
    }
  A = SparseMatrix::from_triplets(t);
}

CgResult cg_solve(const SparseMatrix& A, const std::vector<double>& b, double tol,
                  int max_iter, const std::vector<double>* x0) {
  int n = A.dim();
  if ((int)b.size() != n) throw std::invalid_argument("cg_solve: size mismatch");
  CgResult res;
  res.x.assign(n, 0.0);
  if (x0) {
    if ((int)x0->size() != n) throw std::invalid_argument("cg_solve: x0 size mismatch");
    res.x = *x0;
  }
  double bnorm = std::sqrt(std::inner_product(b.begin(), b.end(), b.begin(), 0.0));
  if (bnorm == 0.0) {
    res.x.assign(n, 0.0);
    res.converged = true;
    return res;
  }
  std::vector<double> d = A.diagonal();
  for (double& v : d) v = (v != 0.0) ? 1.0 / v : 1.0;

  std::vector<double> r(n), z(n), p(n), Ap(n);
  A.matvec(res.x, Ap);
  for (int i = 0; i < n; ++i) r[i] = b[i] - Ap[i];
  for (int i = 0; i < n; ++i) z[i] = d[i] * r[i];
  p = z;
  double rz = std::inner_product(r.begin(), r.end(), z.begin(), 0.0);
  double rnorm = std::sqrt(std::inner_product(r.begin(), r.end(), r.begin(), 0.0));

  for (int it = 0; it < max_iter && rnorm / bnorm > tol; ++it) {
    A.matvec(p, Ap);
    double pAp = std::inner_product(p.begin(), p.end(), Ap.begin(), 0.0);
    if (pAp <= 0) break;
    double alpha = rz / pAp;
    for (int i = 0; i < n; ++i) res.x[i] += alpha * p[i];
    for (int i = 0; i < n; ++i) r[i] -= alpha * Ap[i];
    for (int i = 0; i < n; ++i) z[i] = d[i] * r[i];
    double rz_new = std::inner_product(r.begin(), r.end(), z.begin(), 0.0);
    double beta = rz_new / rz;
    rz = rz_new;
    for (int i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
    rnorm = std::sqrt(std::inner_product(r.begin(), r.end(), r.begin(), 0.0));
    res.iterations = it + 1;
  }
  res.rel_residual = rnorm / bnorm;
  res.converged = res.rel_residual <= tol;
  return res;
}

std::vector<double> solve_dense_spd(const SparseMatrix& A, const std::vector<double>& b) {
  int n = A.dim();
  Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(n, n);
  const auto& rp = A.row_ptr();
  for (int r = 0; r < n; ++r)
    for (int k = rp[r]; k < rp[r + 1]; ++k) dense(r, A.cols()[k]) = A.values()[k];
  Eigen::VectorXd rhs = Eigen::Map<const Eigen::VectorXd>(b.data(), n);
  Eigen::VectorXd x = dense.ldlt().solve(rhs);
  return std::vector<double>(x.data(), x.data() + n);
}

}  // namespace fno
