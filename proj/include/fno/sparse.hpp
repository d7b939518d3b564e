#pragma once

#include <vector>

namespace fno {

/// Accumulation buffer for finite-element scatter; duplicates are summed on
/// assembly.
struct Triplets {
  struct Entry {
    int row, col;
    double val;
  };
  int dim = 0;
  std::vector<Entry> entries;

  explicit Triplets(int dim_) : dim(dim_) {}
  void add(int row, int col, double val) { entries.push_back({row, col, val}); }
};

/// Compressed-row sparse matrix. Assembly drops exact zeros and sums
/// duplicate coordinates.
class SparseMatrix {
 public:
  static SparseMatrix from_triplets(const Triplets& t);

  int dim() const { return n_; }
  void matvec(const std::vector<double>& x, std::vector<double>& y) const;
  std::vector<double> operator*(const std::vector<double>& x) const;
  std::vector<double> diagonal() const;
  /// Entry lookup by binary search; absent entries read as zero.
  double at(int row, int col) const;
  /// Max |A(i,j) - A(j,i)| relative to the larger magnitude.
  double symmetry_error() const;
  int nonzeros() const { return (int)val_.size(); }

  const std::vector<int>& row_ptr() const { return row_ptr_; }
  const std::vector<int>& cols() const { return col_; }
  const std::vector<double>& values() const { return val_; }

 private:
  int n_ = 0;
  std::vector<int> row_ptr_, col_;
  std::vector<double> val_;
};

/// Prescribed values for individual degrees of freedom.
struct DirichletSet {
  struct Entry {
    int dof;
    double value;
  };
  std::vector<Entry> entries;

  void add(int dof, double value) { entries.push_back({dof, value}); }
  bool empty() const { return entries.empty(); }
};

/// Symmetric elimination: constrained rows/columns are zeroed, the diagonal
/// set to 1, and b adjusted so constrained dofs solve exactly to their
/// prescribed values. Requires a symmetric A.
void apply_dirichlet(SparseMatrix& A, std::vector<double>& b, const DirichletSet& bc);

struct CgResult {
  std::vector<double> x;
  int iterations = 0;
  double rel_residual = 0;
  bool converged = false;
};

/// Jacobi-preconditioned conjugate gradient for SPD systems.
CgResult cg_solve(const SparseMatrix& A, const std::vector<double>& b, double tol = 1e-10,
                  int max_iter = 10000, const std::vector<double>* x0 = nullptr);

/// Dense Cholesky-family fallback for small systems; intended for oracles and
/// tight-tolerance solves up to a few thousand dofs.
std::vector<double> solve_dense_spd(const SparseMatrix& A, const std::vector<double>& b);

}  // namespace fno
