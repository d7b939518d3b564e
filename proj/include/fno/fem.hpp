#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "fno/mesh.hpp"
#include "fno/sparse.hpp"

namespace fno {

/// Plane-strain elastic material.
struct Material {
  double E = 0;
  double nu = 0;
  double lambda = 0;
  double mu = 0;
  double rho = 0;

  static Material from_E_nu(double E, double nu, double rho = 0.0);
};

/// Standard plane-strain conversion. nu must lie in [0, 0.5).
std::pair<double, double> lame_from_E_nu(double E, double nu);

/// Per-node displacement (or velocity/acceleration) values, interleaved
/// (x0, y0, x1, y1, ...). The mesh pointer is optional context; algebraic
/// operations only require matching lengths.
struct NodalField {
  const Mesh* mesh = nullptr;
  std::vector<double> values;

  NodalField() = default;
  explicit NodalField(const Mesh& m) : mesh(&m), values(2 * m.nodes.size(), 0.0) {}
  NodalField(const Mesh& m, std::vector<double> vals) : mesh(&m), values(std::move(vals)) {}

  int node_count() const { return (int)values.size() / 2; }
  double& ux(int node) { return values[2 * node]; }
  double& uy(int node) { return values[2 * node + 1]; }
  double ux(int node) const { return values[2 * node]; }
  double uy(int node) const { return values[2 * node + 1]; }
  bool all_finite() const;
};

using Matrix6 = std::array<std::array<double, 6>, 6>;

/// CG1 plane-strain stiffness A·BᵀDB for one triangle. Dof order
/// (u0x, u0y, u1x, u1y, u2x, u2y).
Matrix6 element_stiffness_linear(const std::array<Vec2, 3>& coords, double lambda, double mu);

/// Deformation-gradient determinant det(I + grad u) for one triangle.
double element_jacobian(const std::array<Vec2, 3>& coords, const std::array<double, 6>& u_e);

/// Internal-force vector of the Neo-Hookean weak form for one triangle:
/// r = A · P(F) · grad N with P = mu F + (lambda ln J − mu) F^{-T}.
std::array<double, 6> element_residual_neo_hookean(const std::array<Vec2, 3>& coords,
                                                   const std::array<double, 6>& u_e,
                                                   double lambda, double mu);

/// Exact tangent dR/du of the element residual, by forward differentiation.
Matrix6 element_tangent_neo_hookean(const std::array<Vec2, 3>& coords,
                                    const std::array<double, 6>& u_e, double lambda, double mu);

SparseMatrix assemble_stiffness(const Mesh& mesh, const Material& mat);
/// Row-sum lumped by default; consistent (ρA/12 pattern) otherwise.
SparseMatrix assemble_mass(const Mesh& mesh, const Material& mat, bool lumped = true);

/// K u = 0 with Dirichlet data; the bc must remove all rigid-body modes.
NodalField solve_static_linear(const Mesh& mesh, const Material& mat, const DirichletSet& bc);

struct HyperelasticResult {
  NodalField u;
  int iterations = 0;
  double rel_residual = 0;
};

/// Newton iteration on the Neo-Hookean weak form until the residual drops
/// below 1e-8 of its initial value. Steps that produce J ≤ 0 or raise the
/// residual are halved up to 8 times before the solve is abandoned.
HyperelasticResult solve_hyperelastic_step(const Mesh& mesh, const Material& mat,
                                           const DirichletSet& bc, const NodalField& u_init,
                                           int max_iter = 20);

struct NewmarkState {
  NodalField u, v, a;
  double dt = 1.0;
  double gamma = 0.5;
  double beta = 0.5;
};

/// One implicit step with gamma = beta = 1/2:
///   (M·2/dt² + K) uⁿ = M·(2/dt²·uⁿ⁻¹ + 2/dt·vⁿ⁻¹)
/// then aⁿ = 2/dt²(uⁿ−uⁿ⁻¹) − 2/dt·vⁿ⁻¹ and vⁿ = vⁿ⁻¹ + dt/2·(aⁿ⁻¹+aⁿ).
/// Other parameter values are rejected.
NewmarkState newmark_step(const SparseMatrix& M, const SparseMatrix& K, const NewmarkState& prev,
                          const DirichletSet& bc);

/// Acceleration consistent with the gamma = beta = 1/2 displacement update.
std::vector<double> newmark_acceleration(const std::vector<double>& u_new,
                                         const std::vector<double>& u_old,
                                         const std::vector<double>& v_old, double dt);

enum class StressLaw { linear, neo_hookean };

struct ElementStress {
  double cx, cy;
  double sxx, syy, sxy;
};

/// Piecewise-constant element stress at centroids. For the Neo-Hookean law
/// the columns carry (P11, P22, P12) of the first Piola-Kirchhoff tensor.
std::vector<ElementStress> compute_stress(const Mesh& mesh, const NodalField& u,
                                          const Material& mat, StressLaw law);

/// CSV with header node,x,y,ux,uy and optional vx,vy,ax,ay columns.
std::string field_to_csv(const Mesh& mesh, const NodalField& u, const NodalField* v = nullptr,
                         const NodalField* a = nullptr);
void save_field_csv(const std::string& path, const Mesh& mesh, const NodalField& u,
                    const NodalField* v = nullptr, const NodalField* a = nullptr);
/// Parses the displacement columns and, when present, velocity/acceleration.
struct FieldCsv {
  NodalField u, v, a;
  bool has_dynamics = false;
};
FieldCsv field_from_csv(const std::string& text);
FieldCsv load_field_csv(const std::string& path);

std::string stress_to_csv(const std::vector<ElementStress>& stresses);
void save_stress_csv(const std::string& path, const std::vector<ElementStress>& stresses);

std::vector<int> select_nodes(const Mesh& mesh, const std::function<bool(Vec2)>& pred);
void fix_nodes(DirichletSet& bc, const std::vector<int>& nodes);
/// comp: 0 for x, 1 for y.
void set_component(DirichletSet& bc, const std::vector<int>& nodes, int comp, double value);

}  // namespace fno
