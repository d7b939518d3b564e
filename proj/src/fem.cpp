#include "fno/fem.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fno/ioutil.hpp"

namespace fno {

std::pair<double, double> lame_from_E_nu(double E, double nu) {
  if (!(nu >= 0.0 && nu < 0.5)) throw std::invalid_argument("lame_from_E_nu: nu outside [0, 0.5)");
  double lambda = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
  double mu = E / (2.0 * (1.0 + nu));
  return {lambda, mu};
}

Material Material::from_E_nu(double E, double nu, double rho) {
  Material m;
  m.E = E;
  m.nu = nu;
  std::tie(m.lambda, m.mu) = lame_from_E_nu(E, nu);
  m.rho = rho;
  return m;
}

bool NodalField::all_finite() const {
  for (double v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

namespace {

struct ShapeGradients {
  double area;
  std::array<double, 3> gx, gy;
};

ShapeGradients shape_gradients(const std::array<Vec2, 3>& c) {
  double det = (c[1].x - c[0].x) * (c[2].y - c[0].y) - (c[2].x - c[0].x) * (c[1].y - c[0].y);
  if (det <= 0) throw std::invalid_argument("degenerate or inverted triangle");
  ShapeGradients s;
  s.area = 0.5 * det;
  s.gx = {(c[1].y - c[2].y) / det, (c[2].y - c[0].y) / det, (c[0].y - c[1].y) / det};
  s.gy = {(c[2].x - c[1].x) / det, (c[0].x - c[2].x) / det, (c[1].x - c[0].x) / det};
  return s;
}

// Forward-mode scalar carrying six directional derivatives, used to take the
// exact tangent of the element residual in one evaluation.
struct D6 {
  double v = 0;
  std::array<double, 6> g{};
};

D6 operator+(const D6& a, const D6& b) {
  D6 r{a.v + b.v, {}};
  for (int i = 0; i < 6; ++i) r.g[i] = a.g[i] + b.g[i];
  return r;
}
D6 operator-(const D6& a, const D6& b) {
  D6 r{a.v - b.v, {}};
  for (int i = 0; i < 6; ++i) r.g[i] = a.g[i] - b.g[i];
  return r;
}
D6 operator*(const D6& a, const D6& b) {
  D6 r{a.v * b.v, {}};
  for (int i = 0; i < 6; ++i) r.g[i] = a.g[i] * b.v + a.v * b.g[i];
  return r;
}
D6 operator*(double s, const D6& a) {
  D6 r{s * a.v, {}};
  for (int i = 0; i < 6; ++i) r.g[i] = s * a.g[i];
  return r;
}
D6 operator+(double s, const D6& a) {
  D6 r = a;
  r.v += s;
  return r;
}
D6 operator-(const D6& a, double s) {
  D6 r = a;
  r.v -= s;
  return r;
}
D6 operator/(const D6& a, const D6& b) {
  D6 r{a.v / b.v, {}};
  for (int i = 0; i < 6; ++i) r.g[i] = (a.g[i] - r.v * b.g[i]) / b.v;
  return r;
}
D6 log(const D6& a) {
  D6 r{std::log(a.v), {}};
  for (int i = 0; i < 6; ++i) r.g[i] = a.g[i] / a.v;
  return r;
}

inline double value_of(double x) { return x; }
inline double value_of(const D6& x) { return x.v; }
inline double log_scalar(double x) { return std::log(x); }
inline D6 log_scalar(const D6& x) { return log(x); }

template <class T>
std::array<T, 6> nh_residual_impl(const ShapeGradients& s, const std::array<T, 6>& u,
                                  double lambda, double mu) {
  T f11{}, f12{}, f21{}, f22{};
  f11 = 1.0 + f11;
  f22 = 1.0 + f22;
  for (int i = 0; i < 3; ++i) {
    f11 = f11 + s.gx[i] * u[2 * i];
    f12 = f12 + s.gy[i] * u[2 * i];
    f21 = f21 + s.gx[i] * u[2 * i + 1];
    f22 = f22 + s.gy[i] * u[2 * i + 1];
  }
  T jac = f11 * f22 - f12 * f21;
  if (value_of(jac) <= 0) throw std::domain_error("non-positive deformation jacobian");
  T c = lambda * log_scalar(jac) - mu;
  T c_over_j = c / jac;
  T p11 = mu * f11 + c_over_j * f22;
  T p12 = mu * f12 - c_over_j * f21;
  T p21 = mu * f21 - c_over_j * f12;
  T p22 = mu * f22 + c_over_j * f11;
  std::array<T, 6> r{};
  for (int i = 0; i < 3; ++i) {
    r[2 * i] = s.area * (s.gx[i] * p11 + s.gy[i] * p12);
    r[2 * i + 1] = s.area * (s.gx[i] * p21 + s.gy[i] * p22);
  }
  return r;
}

std::array<double, 4> deformation_gradient(const ShapeGradients& s, const std::array<double, 6>& u) {
  double f11 = 1, f12 = 0, f21 = 0, f22 = 1;
  for (int i = 0; i < 3; ++i) {
    f11 += s.gx[i] * u[2 * i];
    f12 += s.gy[i] * u[2 * i];
    f21 += s.gx[i] * u[2 * i + 1];
    f22 += s.gy[i] * u[2 * i + 1];
  }
  return {f11, f12, f21, f22};
}

std::array<Vec2, 3> tri_coords(const Mesh& mesh, const Tri& t) {
  return {mesh.nodes[t.v[0]], mesh.nodes[t.v[1]], mesh.nodes[t.v[2]]};
}

std::array<double, 6> gather(const std::vector<double>& values, const Tri& t) {
  std::array<double, 6> u;
  for (int i = 0; i < 3; ++i) {
    u[2 * i] = values[2 * t.v[i]];
    u[2 * i + 1] = values[2 * t.v[i] + 1];
  }
  return u;
}

std::vector<double> assemble_nh_residual(const Mesh& mesh, const Material& mat,
                                         const std::vector<double>& u) {
  std::vector<double> r(u.size(), 0.0);
  for (const Tri& t : mesh.tris) {
    ShapeGradients s = shape_gradients(tri_coords(mesh, t));
    std::array<double, 6> re = nh_residual_impl(s, gather(u, t), mat.lambda, mat.mu);
    for (int i = 0; i < 3; ++i) {
      r[2 * t.v[i]] += re[2 * i];
      r[2 * t.v[i] + 1] += re[2 * i + 1];
    }
  }
  return r;
}

SparseMatrix assemble_nh_tangent(const Mesh& mesh, const Material& mat,
                                 const std::vector<double>& u) {
  Triplets trip((int)u.size());
  trip.entries.reserve(mesh.tris.size() * 36);
  for (const Tri& t : mesh.tris) {
    ShapeGradients s = shape_gradients(tri_coords(mesh, t));
    std::array<double, 6> ue = gather(u, t);
    std::array<D6, 6> ud;
    for (int i = 0; i < 6; ++i) {
      ud[i].v = ue[i];
      ud[i].g[i] = 1.0;
    }
    std::array<D6, 6> re = nh_residual_impl(s, ud, mat.lambda, mat.mu);
    int dof[6] = {2 * t.v[0], 2 * t.v[0] + 1, 2 * t.v[1], 2 * t.v[1] + 1,
                  2 * t.v[2], 2 * t.v[2] + 1};
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) trip.add(dof[i], dof[j], re[i].g[j]);
  }
  return SparseMatrix::from_triplets(trip);
}

double norm2(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

bool all_jacobians_positive(const Mesh& mesh, const std::vector<double>& u) {
  for (const Tri& t : mesh.tris) {
    ShapeGradients s = shape_gradients(tri_coords(mesh, t));
    auto f = deformation_gradient(s, gather(u, t));
    if (f[0] * f[3] - f[1] * f[2] <= 0) return false;
  }
  return true;
}

}  // namespace

Matrix6 element_stiffness_linear(const std::array<Vec2, 3>& coords, double lambda, double mu) {
  ShapeGradients s = shape_gradients(coords);
  // B rows: exx, eyy, gxy (engineering shear); D is the plane-strain matrix.
  double B[3][6] = {};
  for (int i = 0; i < 3; ++i) {
    B[0][2 * i] = s.gx[i];
    B[1][2 * i + 1] = s.gy[i];
    B[2][2 * i] = s.gy[i];
    B[2][2 * i + 1] = s.gx[i];
  }
  double D[3][3] = {{lambda + 2 * mu, lambda, 0}, {lambda, lambda + 2 * mu, 0}, {0, 0, mu}};
  double DB[3][6];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 6; ++j) {
      double v = 0;
      for (int k = 0; k < 3; ++k) v += D[i][k] * B[k][j];
      DB[i][j] = v;
    }
  Matrix6 K{};
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) {
      double v = 0;
      for (int k = 0; k < 3; ++k) v += B[k][i] * DB[k][j];
      K[i][j] = s.area * v;
    }
  return K;
}

double element_jacobian(const std::array<Vec2, 3>& coords, const std::array<double, 6>& u_e) {
  ShapeGradients s = shape_gradients(coords);
  auto f = deformation_gradient(s, u_e);
  return f[0] * f[3] - f[1] * f[2];
}

std::array<double, 6> element_residual_neo_hookean(const std::array<Vec2, 3>& coords,
                                                   const std::array<double, 6>& u_e,
                                                   double lambda, double mu) {
  return nh_residual_impl(shape_gradients(coords), u_e, lambda, mu);
}

Matrix6 element_tangent_neo_hookean(const std::array<Vec2, 3>& coords,
                                    const std::array<double, 6>& u_e, double lambda, double mu) {
  ShapeGradients s = shape_gradients(coords);
  std::array<D6, 6> ud;
  for (int i = 0; i < 6; ++i) {
    ud[i].v = u_e[i];
    ud[i].g[i] = 1.0;
  }
  std::array<D6, 6> re = nh_residual_impl(s, ud, lambda, mu);
  Matrix6 K;
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) K[i][j] = re[i].g[j];
  return K;
}

SparseMatrix assemble_stiffness(const Mesh& mesh, const Material& mat) {
  int n = 2 * (int)mesh.nodes.size();
  Triplets trip(n);
  trip.entries.reserve(mesh.tris.size() * 36);
  for (const Tri& t : mesh.tris) {
    Matrix6 K = element_stiffness_linear(tri_coords(mesh, t), mat.lambda, mat.mu);
    int dof[6] = {2 * t.v[0], 2 * t.v[0] + 1, 2 * t.v[1], 2 * t.v[1] + 1,
                  2 * t.v[2], 2 * t.v[2] + 1};
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) trip.add(dof[i], dof[j], K[i][j]);
  }
  return SparseMatrix::from_triplets(trip);
}

SparseMatrix assemble_mass(const Mesh& mesh, const Material& mat, bool lumped) {
  if (mat.rho <= 0) throw std::invalid_argument("assemble_mass: rho must be positive");
  int n = 2 * (int)mesh.nodes.size();
  Triplets trip(n);
  for (size_t ti = 0; ti < mesh.tris.size(); ++ti) {
    const Tri& t = mesh.tris[ti];
    double a = mesh.tri_area((int)ti);
    if (lumped) {
      double m = mat.rho * a / 3.0;
      for (int i = 0; i < 3; ++i) {
        trip.add(2 * t.v[i], 2 * t.v[i], m);
        trip.add(2 * t.v[i] + 1, 2 * t.v[i] + 1, m);
      }
    } else {
      double m = mat.rho * a / 12.0;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          double v = m * (i == j ? 2.0 : 1.0);
          trip.add(2 * t.v[i], 2 * t.v[j], v);
          trip.add(2 * t.v[i] + 1, 2 * t.v[j] + 1, v);
        }
    }
  }
  return SparseMatrix::from_triplets(trip);
}

NodalField solve_static_linear(const Mesh& mesh, const Material& mat, const DirichletSet& bc) {
  if (bc.empty()) throw std::invalid_argument("solve_static_linear: unconstrained system");
  SparseMatrix K = assemble_stiffness(mesh, mat);
  std::vector<double> b(K.dim(), 0.0);
  apply_dirichlet(K, b, bc);
  CgResult res = cg_solve(K, b, 1e-12, std::max(20000, 20 * K.dim()));
  if (!res.converged) throw std::runtime_error("solve_static_linear: solver did not converge");
  return NodalField(mesh, std::move(res.x));
}

HyperelasticResult solve_hyperelastic_step(const Mesh& mesh, const Material& mat,
                                           const DirichletSet& bc, const NodalField& u_init,
                                           int max_iter) {
  int n = 2 * (int)mesh.nodes.size();
  std::vector<double> u = u_init.values;
  if (u.empty()) u.assign(n, 0.0);
  if ((int)u.size() != n) throw std::invalid_argument("solve_hyperelastic_step: field size");

  std::vector<char> constrained(n, 0);
  for (const auto& e : bc.entries) {
    if (e.dof < 0 || e.dof >= n) throw std::out_of_range("solve_hyperelastic_step: dof range");
    constrained[e.dof] = 1;
    u[e.dof] = e.value;
  }
  if (!all_jacobians_positive(mesh, u))
    throw std::domain_error("solve_hyperelastic_step: initial state has non-positive jacobian");

  DirichletSet bc_zero;
  for (const auto& e : bc.entries) bc_zero.add(e.dof, 0.0);

  auto masked = [&](std::vector<double> r) {
    for (int i = 0; i < n; ++i)
      if (constrained[i]) r[i] = 0.0;
    return r;
  };

  std::vector<double> r = masked(assemble_nh_residual(mesh, mat, u));
  double norm0 = norm2(r);
  double floor_norm = 1e-14 * (mat.lambda + 2 * mat.mu) * std::max(mesh.area(), 1.0);
  HyperelasticResult out;
  if (norm0 <= floor_norm) {
    out.u = NodalField(mesh, std::move(u));
    return out;
  }

  double norm = norm0;
  for (int iter = 1; iter <= max_iter; ++iter) {
    SparseMatrix Kt = assemble_nh_tangent(mesh, mat, u);
    std::vector<double> rhs(n);
    for (int i = 0; i < n; ++i) rhs[i] = -r[i];
    apply_dirichlet(Kt, rhs, bc_zero);
    CgResult lin = cg_solve(Kt, rhs, 1e-12, std::max(20000, 20 * n));
    if (!lin.converged) throw std::runtime_error("solve_hyperelastic_step: tangent solve failed");

    double alpha = 1.0;
    bool accepted = false;
    std::vector<double> u_try(n), r_try;
    double norm_try = 0;
    for (int halving = 0; halving <= 8; ++halving) {
      for (int i = 0; i < n; ++i) u_try[i] = u[i] + alpha * lin.x[i];
      if (all_jacobians_positive(mesh, u_try)) {
        r_try = masked(assemble_nh_residual(mesh, mat, u_try));
        norm_try = norm2(r_try);
        if (norm_try < norm) {
          accepted = true;
          break;
        }
      }
      alpha *= 0.5;
    }
    if (!accepted) throw std::runtime_error("solve_hyperelastic_step: diverged after step halving");

    u = u_try;
    r = std::move(r_try);
    norm = norm_try;
    out.iterations = iter;
    out.rel_residual = norm / norm0;
    if (out.rel_residual <= 1e-8) {
      out.u = NodalField(mesh, std::move(u));
      return out;
    }
  }
  throw std::runtime_error("solve_hyperelastic_step: no convergence within iteration budget");
}

std::vector<double> newmark_acceleration(const std::vector<double>& u_new,
                                         const std::vector<double>& u_old,
                                         const std::vector<double>& v_old, double dt) {
  std::vector<double> a(u_new.size());
  for (size_t i = 0; i < a.size(); ++i)
    a[i] = 2.0 / (dt * dt) * (u_new[i] - u_old[i]) - 2.0 / dt * v_old[i];
  return a;
}

NewmarkState newmark_step(const SparseMatrix& M, const SparseMatrix& K, const NewmarkState& prev,
                          const DirichletSet& bc) {
  if (prev.gamma != 0.5 || prev.beta != 0.5)
    throw std::invalid_argument("newmark_step: only gamma = beta = 1/2 is supported");
  if (!(prev.dt > 0)) throw std::invalid_argument("newmark_step: dt must be positive");
  int n = M.dim();
  if (K.dim() != n || (int)prev.u.values.size() != n || (int)prev.v.values.size() != n ||
      (int)prev.a.values.size() != n)
    throw std::invalid_argument("newmark_step: dimension mismatch");

  double dt = prev.dt;
  double c2 = 2.0 / (dt * dt);
  Triplets trip(n);
  const auto& mrp = M.row_ptr();
  for (int r = 0; r < n; ++r)
    for (int k = mrp[r]; k < mrp[r + 1]; ++k) trip.add(r, M.cols()[k], c2 * M.values()[k]);
  const auto& krp = K.row_ptr();
  for (int r = 0; r < n; ++r)
    for (int k = krp[r]; k < krp[r + 1]; ++k) trip.add(r, K.cols()[k], K.values()[k]);
  SparseMatrix A_eff = SparseMatrix::from_triplets(trip);

  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) w[i] = c2 * prev.u.values[i] + (2.0 / dt) * prev.v.values[i];
  std::vector<double> b = M * w;
  apply_dirichlet(A_eff, b, bc);
  CgResult res = cg_solve(A_eff, b, 1e-12, std::max(20000, 20 * n), &prev.u.values);
  if (!res.converged) throw std::runtime_error("newmark_step: solver did not converge");

  NewmarkState next = prev;
  next.u.values = std::move(res.x);
  next.a.values = newmark_acceleration(next.u.values, prev.u.values, prev.v.values, dt);
  for (int i = 0; i < n; ++i)
    next.v.values[i] = prev.v.values[i] + 0.5 * dt * (prev.a.values[i] + next.a.values[i]);
  return next;
}

std::vector<ElementStress> compute_stress(const Mesh& mesh, const NodalField& u,
                                          const Material& mat, StressLaw law) {
  if ((int)u.values.size() != 2 * (int)mesh.nodes.size())
    throw std::invalid_argument("compute_stress: field size mismatch");
  std::vector<ElementStress> out;
  out.reserve(mesh.tris.size());
  for (const Tri& t : mesh.tris) {
    ShapeGradients s = shape_gradients(tri_coords(mesh, t));
    std::array<double, 6> ue = gather(u.values, t);
    Vec2 c = (mesh.nodes[t.v[0]] + mesh.nodes[t.v[1]] + mesh.nodes[t.v[2]]) * (1.0 / 3.0);
    ElementStress es{c.x, c.y, 0, 0, 0};
    auto f = deformation_gradient(s, ue);
    if (law == StressLaw::linear) {
      double exx = f[0] - 1.0, eyy = f[3] - 1.0;
      double gxy = f[1] + f[2];
      double tr = exx + eyy;
      es.sxx = mat.lambda * tr + 2 * mat.mu * exx;
      es.syy = mat.lambda * tr + 2 * mat.mu * eyy;
      es.sxy = mat.mu * gxy;
    } else {
      double jac = f[0] * f[3] - f[1] * f[2];
      if (jac <= 0) throw std::domain_error("compute_stress: non-positive jacobian");
      double c_over_j = (mat.lambda * std::log(jac) - mat.mu) / jac;
      es.sxx = mat.mu * f[0] + c_over_j * f[3];
      es.syy = mat.mu * f[3] + c_over_j * f[0];
      es.sxy = mat.mu * f[1] - c_over_j * f[2];
    }
    out.push_back(es);
  }
  return out;
}

namespace {
std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace

std::string field_to_csv(const Mesh& mesh, const NodalField& u, const NodalField* v,
                         const NodalField* a) {
  bool dyn = v != nullptr && a != nullptr;
  std::string out = dyn ? "node,x,y,ux,uy,vx,vy,ax,ay\n" : "node,x,y,ux,uy\n";
  for (size_t i = 0; i < mesh.nodes.size(); ++i) {
    out += std::to_string(i) + ',' + fmt_g(mesh.nodes[i].x) + ',' + fmt_g(mesh.nodes[i].y) + ',' +
           fmt_g(u.ux((int)i)) + ',' + fmt_g(u.uy((int)i));
    if (dyn) {
      out += ',' + fmt_g(v->ux((int)i)) + ',' + fmt_g(v->uy((int)i)) + ',' + fmt_g(a->ux((int)i)) +
             ',' + fmt_g(a->uy((int)i));
    }
    out += '\n';
  }
  return out;
}

void save_field_csv(const std::string& path, const Mesh& mesh, const NodalField& u,
                    const NodalField* v, const NodalField* a) {
  write_text_file(path, field_to_csv(mesh, u, v, a));
}

FieldCsv field_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("field csv: empty input");
  bool dyn = line.find(",vx") != std::string::npos;
  if (line.rfind("node,x,y,ux,uy", 0) != 0) throw std::runtime_error("field csv: bad header");

  FieldCsv out;
  out.has_dynamics = dyn;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> cols;
    size_t pos = 0;
    while (pos <= line.size()) {
      size_t comma = line.find(',', pos);
      if (comma == std::string::npos) comma = line.size();
      cols.push_back(parse_double(line.substr(pos, comma - pos)));
      pos = comma + 1;
    }
    size_t want = dyn ? 9 : 5;
    if (cols.size() != want) throw std::runtime_error("field csv: bad row");
    out.u.values.push_back(cols[3]);
    out.u.values.push_back(cols[4]);
    if (dyn) {
      out.v.values.push_back(cols[5]);
      out.v.values.push_back(cols[6]);
      out.a.values.push_back(cols[7]);
      out.a.values.push_back(cols[8]);
    }
  }
  return out;
}

FieldCsv load_field_csv(const std::string& path) { return field_from_csv(read_text_file(path)); }

std::string stress_to_csv(const std::vector<ElementStress>& stresses) {
  std::string out = "tri,cx,cy,sxx,syy,sxy\n";
  for (size_t i = 0; i < stresses.size(); ++i) {
    const ElementStress& s = stresses[i];
    out += std::to_string(i) + ',' + fmt_g(s.cx) + ',' + fmt_g(s.cy) + ',' + fmt_g(s.sxx) + ',' +
           fmt_g(s.syy) + ',' + fmt_g(s.sxy) + '\n';
  }
  return out;
}

void save_stress_csv(const std::string& path, const std::vector<ElementStress>& stresses) {
  write_text_file(path, stress_to_csv(stresses));
}

std::vector<int> select_nodes(const Mesh& mesh, const std::function<bool(Vec2)>& pred) {
  std::vector<int> out;
  for (size_t i = 0; i < mesh.nodes.size(); ++i)
    if (pred(mesh.nodes[i])) out.push_back((int)i);
  return out;
}

void fix_nodes(DirichletSet& bc, const std::vector<int>& nodes) {
  for (int n : nodes) {
    bc.add(2 * n, 0.0);
    bc.add(2 * n + 1, 0.0);
  }
}

void set_component(DirichletSet& bc, const std::vector<int>& nodes, int comp, double value) {
  if (comp != 0 && comp != 1) throw std::invalid_argument("set_component: comp must be 0 or 1");
  for (int n : nodes) bc.add(2 * n + comp, value);
}

}  // namespace fno
