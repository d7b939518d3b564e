#include "fno/deeponet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "fno/ioutil.hpp"

namespace fno {

namespace {

double dot(const double* a, const double* b, int n) {
  double s = 0;
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

MlpSpec make_mlp_spec(int in, const std::vector<int>& hidden, int out, const std::string& prefix) {
  MlpSpec s;
  s.sizes.push_back(in);
  for (int h : hidden) s.sizes.push_back(h);
  s.sizes.push_back(out);
  s.prefix = prefix;
  return s;
}

void init_side(ParamStore& params, const OperatorArch& arch, bool ux, std::mt19937_64& rng) {
  const MlpSpec& branch = ux ? arch.branch_ux : arch.branch_uy;
  const MlpSpec& trunk = ux ? arch.trunk_ux : arch.trunk_uy;
  const CnnSpec& cnn = ux ? arch.grid_ux : arch.grid_uy;
  if (arch.boundary_features > 0) init_mlp(params, branch, rng);
  init_mlp(params, trunk, rng);
  if (arch.has_grid_branch) init_cnn(params, cnn, rng);
  params.add(std::string(ux ? "ux" : "uy") + ".bias", 1, 1);
}

OperatorPair make_pair_impl(int boundary_features, const std::vector<int>& branch_hidden,
                            const std::vector<int>& trunk_hidden, int q, int grid_n,
                            int cnn_hidden, double velocity_scale, unsigned long long seed) {
  OperatorArch arch;
  arch.q = q;
  arch.boundary_features = boundary_features;
  arch.velocity_scale = velocity_scale;
  if (boundary_features > 0) {
    arch.branch_ux = make_mlp_spec(boundary_features, branch_hidden, q, "ux.b1");
    arch.branch_uy = make_mlp_spec(boundary_features, branch_hidden, q, "uy.b1");
  }
  arch.trunk_ux = make_mlp_spec(2, trunk_hidden, q, "ux.tr");
  arch.trunk_uy = make_mlp_spec(2, trunk_hidden, q, "uy.tr");
  if (grid_n > 0) {
    arch.has_grid_branch = true;
    for (bool ux : {true, false}) {
      CnnSpec& c = ux ? arch.grid_ux : arch.grid_uy;
      c.grid = grid_n;
      c.in_channels = 4;
      c.hidden = cnn_hidden;
      c.out = q;
      c.prefix = std::string(ux ? "ux" : "uy") + ".b2";
    }
  }
  OperatorPair pair;
  pair.arch = arch;
  std::mt19937_64 rng(seed);
  init_side(pair.params, arch, true, rng);
  init_side(pair.params, arch, false, rng);
  return pair;
}

void check_inputs(const OperatorPair& pair, const BranchInputs& in) {
  const OperatorArch& a = pair.arch;
  if (a.boundary_features > 0 && (int)in.boundary.size() != a.boundary_features)
    throw std::invalid_argument("evaluate: boundary input size mismatch");
  if (a.has_grid_branch &&
      (int)in.grid4.size() != a.grid_ux.in_channels * a.grid_ux.grid * a.grid_ux.grid)
    throw std::invalid_argument("evaluate: grid input size mismatch");
}

// Value and derivatives of the ballistic field u + v*scale for one side,
// interpolated bilinearly from the packed grid channels. Within a cell the
// patch is a + b x + c y + d x y, so dxx = dyy = 0 and dxy is the constant d.
struct SkipJet {
  double v = 0, dx = 0, dy = 0, dxy = 0;
};

bool same_grid(const Grid2& a, const Grid2& b) {
  return a.n == b.n && std::abs(a.xmin - b.xmin) < 1e-9 && std::abs(a.ymin - b.ymin) < 1e-9 &&
         std::abs(a.xmax - b.xmax) < 1e-9 && std::abs(a.ymax - b.ymax) < 1e-9;
}

SkipJet skip_jet(const std::vector<double>& grid4, const Grid2& g, bool ux, double x, double y) {
  const int n = g.n;
  const size_t n2 = (size_t)n * n;
  const size_t cu = ux ? 0 : n2, cv = ux ? 2 * n2 : 3 * n2;
  double fx = (x - g.xmin) / (g.xmax - g.xmin) * (n - 1);
  double fy = (y - g.ymin) / (g.ymax - g.ymin) * (n - 1);
  fx = std::min(std::max(fx, 0.0), (double)(n - 1));
  fy = std::min(std::max(fy, 0.0), (double)(n - 1));
  int j0 = std::min((int)fx, n - 2), i0 = std::min((int)fy, n - 2);
  double tx = fx - j0, ty = fy - i0;
  size_t k00 = (size_t)i0 * n + j0, k10 = k00 + n;
  double v00 = grid4[cu + k00] + grid4[cv + k00];
  double v01 = grid4[cu + k00 + 1] + grid4[cv + k00 + 1];
  double v10 = grid4[cu + k10] + grid4[cv + k10];
  double v11 = grid4[cu + k10 + 1] + grid4[cv + k10 + 1];
  double inv_hx = (n - 1) / (g.xmax - g.xmin);
  double inv_hy = (n - 1) / (g.ymax - g.ymin);
  SkipJet out;
  out.v = (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11);
  out.dx = ((1 - ty) * (v01 - v00) + ty * (v11 - v10)) * inv_hx;
  out.dy = ((1 - tx) * (v10 - v00) + tx * (v11 - v01)) * inv_hy;
  out.dxy = (v00 + v11 - v01 - v10) * inv_hx * inv_hy;
  return out;
}

// Merged branch embedding for one side: boundary branch output, elementwise
// times the grid branch output when present.
std::vector<double> branch_embedding(const OperatorPair& pair, const BranchInputs& in, bool ux) {
  const OperatorArch& a = pair.arch;
  std::vector<double> b;
  if (a.boundary_features > 0)
    b = mlp_forward(pair.params, ux ? a.branch_ux : a.branch_uy, in.boundary);
  if (a.has_grid_branch) {
    std::vector<double> g = cnn_forward(pair.params, ux ? a.grid_ux : a.grid_uy, in.grid4);
    if (b.empty())
      b = std::move(g);
    else
      for (int i = 0; i < a.q; ++i) b[i] *= g[i];
  }
  if (b.empty()) throw std::logic_error("operator pair has no branch network");
  return b;
}

double side_bias(const OperatorPair& pair, bool ux) {
  return pair.params.get(ux ? "ux.bias" : "uy.bias").data[0];
}

// ---- hyperelastic head ----------------------------------------------------
// First-order dual over 10-direction duals: value plus x/y derivatives of an
// expression in the displacement-gradient quantities
//   [0..4]  = dGx/dx, dGx/dy, d2Gx/dx2, d2Gx/dxdy, d2Gx/dy2
//   [5..9]  = same for Gy.
using D10 = DualN<10>;
struct HD {
  D10 v, vx, vy;
};
HD operator+(const HD& a, const HD& b) { return {a.v + b.v, a.vx + b.vx, a.vy + b.vy}; }
HD operator-(const HD& a, const HD& b) { return {a.v - b.v, a.vx - b.vx, a.vy - b.vy}; }
HD operator*(const HD& a, const HD& b) {
  return {a.v * b.v, a.vx * b.v + a.v * b.vx, a.vy * b.v + a.v * b.vy};
}
HD operator*(double s, const HD& a) { return {s * a.v, s * a.vx, s * a.vy}; }
HD hd_div(const HD& a, const HD& b) {
  D10 inv = D10::constant(1.0) / b.v;
  D10 inv2 = inv * inv;
  return {a.v * inv, (a.vx * b.v - a.v * b.vx) * inv2, (a.vy * b.v - a.v * b.vy) * inv2};
}
HD hd_log(const HD& a) {
  D10 inv = D10::constant(1.0) / a.v;
  return {log(a.v), a.vx * inv, a.vy * inv};
}

struct HyperHeadOut {
  double rx = 0, ry = 0, jac = 1;
  double drx[10] = {0}, dry[10] = {0};  // residual sensitivities to the 10 inputs
  bool clamped = false;
};

HyperHeadOut hyper_head(const Dual2& gx, const Dual2& gy, double lambda, double mu) {
  auto in = [](double value, int dir) { return D10::seed(value, dir); };
  HD f11{in(gx.dx, 0) + 1.0, in(gx.dxx, 2), in(gx.dxy, 3)};
  HD f12{in(gx.dy, 1), in(gx.dxy, 3), in(gx.dyy, 4)};
  HD f21{in(gy.dx, 5), in(gy.dxx, 7), in(gy.dxy, 8)};
  HD f22{in(gy.dy, 6) + 1.0, in(gy.dxy, 8), in(gy.dyy, 9)};

  HD jac = f11 * f22 - f12 * f21;
  HyperHeadOut out;
  out.jac = jac.v.v;
  if (!(out.jac > 0)) {
    out.clamped = true;
    return out;
  }
  HD c = lambda * hd_log(jac);
  c.v = c.v - mu;
  HD cj = hd_div(c, jac);
  HD p11 = mu * f11 + cj * f22;
  HD p12 = mu * f12 - cj * f21;
  HD p21 = mu * f21 - cj * f12;
  HD p22 = mu * f22 + cj * f11;

  D10 rx = p11.vx + p12.vy;
  D10 ry = p21.vx + p22.vy;
  out.rx = rx.v;
  out.ry = ry.v;
  for (int k = 0; k < 10; ++k) {
    out.drx[k] = rx.g[k];
    out.dry[k] = ry.g[k];
  }
  return out;
}

void add_hyper_adjoint(Dual2& gxbar, Dual2& gybar, const HyperHeadOut& h, double wx, double wy) {
  auto add = [&](Dual2& gbar, int base) {
    gbar.dx += wx * h.drx[base + 0] + wy * h.dry[base + 0];
    gbar.dy += wx * h.drx[base + 1] + wy * h.dry[base + 1];
    gbar.dxx += wx * h.drx[base + 2] + wy * h.dry[base + 2];
    gbar.dxy += wx * h.drx[base + 3] + wy * h.dry[base + 3];
    gbar.dyy += wx * h.drx[base + 4] + wy * h.dry[base + 4];
  };
  add(gxbar, 0);
  add(gybar, 5);
}

// ---- shared loss machinery -------------------------------------------------

struct SampleRefs {
  // Per selected sample, per side: merged branch embedding and the tapes
  // needed to push adjoints back.
  std::vector<std::vector<double>> b_ux, b_uy;      // embeddings
  std::vector<std::vector<double>> g_ux, g_uy;      // grid-branch outputs (dynamic)
  std::vector<MlpTape> tape_ux, tape_uy;            // boundary branch tapes
  std::vector<CnnTape> ctape_ux, ctape_uy;          // grid branch tapes
  std::vector<std::vector<double>> bbar_ux, bbar_uy;  // merged-embedding adjoints
};

SampleRefs forward_branches(const OperatorPair& pair, const std::vector<const BranchInputs*>& batch,
                            bool with_tapes) {
  const OperatorArch& a = pair.arch;
  SampleRefs refs;
  size_t n = batch.size();
  refs.b_ux.resize(n);
  refs.b_uy.resize(n);
  refs.bbar_ux.assign(n, std::vector<double>(a.q, 0.0));
  refs.bbar_uy.assign(n, std::vector<double>(a.q, 0.0));
  if (with_tapes) {
    refs.tape_ux.resize(n);
    refs.tape_uy.resize(n);
    refs.ctape_ux.resize(n);
    refs.ctape_uy.resize(n);
  }
  if (a.has_grid_branch) {
    refs.g_ux.resize(n);
    refs.g_uy.resize(n);
  }
  for (size_t s = 0; s < n; ++s) {
    check_inputs(pair, *batch[s]);
    for (bool ux : {true, false}) {
      std::vector<double> b;
      if (a.boundary_features > 0) {
        const MlpSpec& spec = ux ? a.branch_ux : a.branch_uy;
        b = with_tapes ? mlp_forward_tape(pair.params, spec, batch[s]->boundary,
                                          ux ? refs.tape_ux[s] : refs.tape_uy[s])
                       : mlp_forward(pair.params, spec, batch[s]->boundary);
      }
      if (a.has_grid_branch) {
        const CnnSpec& spec = ux ? a.grid_ux : a.grid_uy;
        std::vector<double> g = with_tapes
                                    ? cnn_forward_tape(pair.params, spec, batch[s]->grid4,
                                                       ux ? refs.ctape_ux[s] : refs.ctape_uy[s])
                                    : cnn_forward(pair.params, spec, batch[s]->grid4);
        (ux ? refs.g_ux : refs.g_uy)[s] = g;
        if (b.empty())
          b = std::move(g);
        else
          for (int i = 0; i < a.q; ++i) b[i] *= (ux ? refs.g_ux : refs.g_uy)[s][i];
      }
      (ux ? refs.b_ux : refs.b_uy)[s] = std::move(b);
    }
  }
  return refs;
}

// Pushes the accumulated merged-embedding adjoints through both branches.
void backward_branches(const OperatorPair& pair, const std::vector<const BranchInputs*>& batch,
                       SampleRefs& refs, ParamStore& grads) {
  const OperatorArch& a = pair.arch;
  for (size_t s = 0; s < batch.size(); ++s) {
    for (bool ux : {true, false}) {
      std::vector<double>& bbar = (ux ? refs.bbar_ux : refs.bbar_uy)[s];
      if (a.boundary_features > 0 && a.has_grid_branch) {
        // merged = b1 .* b2: split the adjoint between the two branches
        const std::vector<double>& g = (ux ? refs.g_ux : refs.g_uy)[s];
        const MlpTape& t = (ux ? refs.tape_ux : refs.tape_uy)[s];
        std::vector<double> b1 = t.act.back();
        std::vector<double> b1bar(a.q), gbar(a.q);
        for (int i = 0; i < a.q; ++i) {
          b1bar[i] = bbar[i] * g[i];
          gbar[i] = bbar[i] * b1[i];
        }
        mlp_backward(pair.params, ux ? a.branch_ux : a.branch_uy, t, b1bar, grads);
        cnn_backward(pair.params, ux ? a.grid_ux : a.grid_uy, (ux ? refs.ctape_ux : refs.ctape_uy)[s],
                     gbar, grads);
      } else if (a.boundary_features > 0) {
        mlp_backward(pair.params, ux ? a.branch_ux : a.branch_uy,
                     (ux ? refs.tape_ux : refs.tape_uy)[s], bbar, grads);
      } else {
        cnn_backward(pair.params, ux ? a.grid_ux : a.grid_uy,
                     (ux ? refs.ctape_ux : refs.ctape_uy)[s], bbar, grads);
      }
    }
  }
}

struct TrunkDerivs {
  // Per collocation point: trunk outputs as second-order duals, with tapes
  // and adjoint accumulators when gradients are requested.
  std::vector<std::vector<Dual2>> out_ux, out_uy;
  std::vector<Dual2Tape> tape_ux, tape_uy;
  std::vector<std::vector<Dual2>> bar_ux, bar_uy;
};

TrunkDerivs forward_trunks(const OperatorPair& pair, const std::vector<Vec2>& pts, bool with_tapes) {
  const OperatorArch& a = pair.arch;
  TrunkDerivs td;
  size_t n = pts.size();
  td.out_ux.resize(n);
  td.out_uy.resize(n);
  if (with_tapes) {
    td.tape_ux.resize(n);
    td.tape_uy.resize(n);
    td.bar_ux.assign(n, std::vector<Dual2>(a.q));
    td.bar_uy.assign(n, std::vector<Dual2>(a.q));
  }
  for (size_t p = 0; p < n; ++p) {
    Dual2 x = Dual2::var_x(pts[p].x), y = Dual2::var_y(pts[p].y);
    td.out_ux[p] = mlp_forward_dual2(pair.params, a.trunk_ux, x, y, with_tapes ? &td.tape_ux[p] : nullptr);
    td.out_uy[p] = mlp_forward_dual2(pair.params, a.trunk_uy, x, y, with_tapes ? &td.tape_uy[p] : nullptr);
  }
  return td;
}

void backward_trunks(const OperatorPair& pair, TrunkDerivs& td, ParamStore* grads) {
  const OperatorArch& a = pair.arch;
  for (size_t p = 0; p < td.tape_ux.size(); ++p) {
    mlp_backward_dual2(pair.params, a.trunk_ux, td.tape_ux[p], td.bar_ux[p], *grads);
    mlp_backward_dual2(pair.params, a.trunk_uy, td.tape_uy[p], td.bar_uy[p], *grads);
  }
}

// Boundary-value mismatch terms shared by every loss kind. targets_* may be
// null for zero targets (roller edges).
struct BcsAccum {
  std::vector<std::vector<double>> trunk_vals_ux, trunk_vals_uy;
  std::vector<MlpTape> tapes_ux, tapes_uy;
  std::vector<std::vector<double>> tbar_ux, tbar_uy;
};

void boundary_terms(const OperatorPair& pair, const std::vector<Vec2>& pts,
                    const std::vector<const BranchInputs*>& batch, SampleRefs& refs,
                    const std::vector<const double*>& targets_ux,
                    const std::vector<const double*>& targets_uy, bool do_ux, bool do_uy,
                    ParamStore* grads, double& loss_x, double& loss_y) {
  const OperatorArch& a = pair.arch;
  const size_t nb = pts.size(), ns = batch.size();
  if (nb == 0 || ns == 0) return;
  BcsAccum acc;
  acc.trunk_vals_ux.resize(nb);
  acc.trunk_vals_uy.resize(nb);
  if (grads) {
    acc.tapes_ux.resize(nb);
    acc.tapes_uy.resize(nb);
    acc.tbar_ux.assign(nb, std::vector<double>(a.q, 0.0));
    acc.tbar_uy.assign(nb, std::vector<double>(a.q, 0.0));
  }
  for (size_t p = 0; p < nb; ++p) {
    std::vector<double> xy = {pts[p].x, pts[p].y};
    if (do_ux)
      acc.trunk_vals_ux[p] = grads ? mlp_forward_tape(pair.params, a.trunk_ux, xy, acc.tapes_ux[p])
                                   : mlp_forward(pair.params, a.trunk_ux, xy);
    if (do_uy)
      acc.trunk_vals_uy[p] = grads ? mlp_forward_tape(pair.params, a.trunk_uy, xy, acc.tapes_uy[p])
                                   : mlp_forward(pair.params, a.trunk_uy, xy);
  }
  double bias_ux = side_bias(pair, true), bias_uy = side_bias(pair, false);
  const double inv = 1.0 / (double)(ns * nb);
  for (size_t s = 0; s < ns; ++s) {
    for (size_t p = 0; p < nb; ++p) {
      if (do_ux) {
        double g = dot(refs.b_ux[s].data(), acc.trunk_vals_ux[p].data(), a.q) + bias_ux;
        double target = targets_ux[s] ? targets_ux[s][p] : 0.0;
        double err = g - target;
        loss_x += err * err * inv;
        if (grads) {
          double w = 2.0 * err * inv;
          for (int qi = 0; qi < a.q; ++qi) {
            refs.bbar_ux[s][qi] += w * acc.trunk_vals_ux[p][qi];
            acc.tbar_ux[p][qi] += w * refs.b_ux[s][qi];
          }
          grads->get("ux.bias").data[0] += w;
        }
      }
      if (do_uy) {
        double g = dot(refs.b_uy[s].data(), acc.trunk_vals_uy[p].data(), a.q) + bias_uy;
        double target = targets_uy[s] ? targets_uy[s][p] : 0.0;
        double err = g - target;
        loss_y += err * err * inv;
        if (grads) {
          double w = 2.0 * err * inv;
          for (int qi = 0; qi < a.q; ++qi) {
            refs.bbar_uy[s][qi] += w * acc.trunk_vals_uy[p][qi];
            acc.tbar_uy[p][qi] += w * refs.b_uy[s][qi];
          }
          grads->get("uy.bias").data[0] += w;
        }
      }
    }
  }
  if (grads) {
    for (size_t p = 0; p < nb; ++p) {
      if (do_ux) mlp_backward(pair.params, a.trunk_ux, acc.tapes_ux[p], acc.tbar_ux[p], *grads);
      if (do_uy) mlp_backward(pair.params, a.trunk_uy, acc.tapes_uy[p], acc.tbar_uy[p], *grads);
    }
  }
}

double auto_divisor(const Material& mat, LossKind kind, InertiaForm form, double dt) {
  double base = mat.lambda + 2.0 * mat.mu;
  if (kind != LossKind::dynamic) return base;
  double coeff = form == InertiaForm::consistent ? 2.0 * mat.rho / (dt * dt) : 8.0 / (dt * dt);
  return base + coeff;
}

// Full forward/backward pass for one batch. Per-sample previous-state values
// at the collocation points (dynamic only) come via prev_at; targets for the
// boundary terms via bc rows of the batch inputs.
struct PassSpec {
  LossKind kind = LossKind::linear_static;
  const std::vector<Vec2>* collocation = nullptr;
  const std::vector<Vec2>* boundary_points = nullptr;
  std::vector<const BranchInputs*> batch;
  std::vector<const double*> bc_targets_ux, bc_targets_uy;  // per sample, nb values each
  const std::vector<Vec2>* fix_ux = nullptr;
  const std::vector<Vec2>* fix_uy = nullptr;
  Material mat = Material::from_E_nu(1000.0, 0.3);
  double divisor = 0;
  // dynamic terms
  double dt = 1.0;
  InertiaForm form = InertiaForm::consistent;
  // prev_at[s][p] = {ux, uy, vx, vy} at collocation point p, physical units
  const std::vector<std::vector<std::array<double, 4>>>* prev_at = nullptr;
  // skip_at[s][p] = {ball_x, ball_y, dxy ball_x, dxy ball_y}: the ballistic
  // field joins the prediction, so its value enters the inertia term and its
  // cross derivative the elliptic operator. Parameter-free, so no backward.
  const std::vector<std::vector<std::array<double, 4>>>* skip_at = nullptr;
};

LossComponents loss_pass(const OperatorPair& pair, const PassSpec& ps, ParamStore* grads) {
  const OperatorArch& a = pair.arch;
  const std::vector<Vec2>& colloc = *ps.collocation;
  const size_t np = colloc.size(), ns = ps.batch.size();
  const double lambda = ps.mat.lambda, mu = ps.mat.mu;
  const double divisor = ps.divisor > 0 ? ps.divisor : auto_divisor(ps.mat, ps.kind, ps.form, ps.dt);
  const double coeff = ps.kind == LossKind::dynamic
                           ? (ps.form == InertiaForm::consistent ? 2.0 * ps.mat.rho / (ps.dt * ps.dt)
                                                                 : 8.0 / (ps.dt * ps.dt))
                           : 0.0;

  LossComponents comps;
  SampleRefs refs = forward_branches(pair, ps.batch, grads != nullptr);
  TrunkDerivs td = forward_trunks(pair, colloc, grads != nullptr);

  const double inv_sp = ns && np ? 1.0 / (double)(ns * np) : 0.0;
  const double inv_div = 1.0 / divisor;
  size_t clamped = 0;

  if (ps.kind == LossKind::hyperelastic) {
    double bias_ux = side_bias(pair, true), bias_uy = side_bias(pair, false);
    for (size_t p = 0; p < np; ++p) {
      for (size_t s = 0; s < ns; ++s) {
        Dual2 gx, gy;
        for (int qi = 0; qi < a.q; ++qi) {
          gx = gx + refs.b_ux[s][qi] * td.out_ux[p][qi];
          gy = gy + refs.b_uy[s][qi] * td.out_uy[p][qi];
        }
        gx.v += bias_ux;
        gy.v += bias_uy;
        HyperHeadOut h = hyper_head(gx, gy, lambda, mu);
        if (h.clamped) {
          ++clamped;
          continue;
        }
        double rx = h.rx * inv_div, ry = h.ry * inv_div;
        comps.res_x += rx * rx * inv_sp;
        comps.res_y += ry * ry * inv_sp;
        if (grads) {
          double wx = 2.0 * rx * inv_sp * inv_div;
          double wy = 2.0 * ry * inv_sp * inv_div;
          Dual2 gxbar, gybar;
          add_hyper_adjoint(gxbar, gybar, h, wx, wy);
          for (int qi = 0; qi < a.q; ++qi) {
            const Dual2& tx = td.out_ux[p][qi];
            const Dual2& ty = td.out_uy[p][qi];
            refs.bbar_ux[s][qi] += gxbar.dx * tx.dx + gxbar.dy * tx.dy + gxbar.dxx * tx.dxx +
                                   gxbar.dxy * tx.dxy + gxbar.dyy * tx.dyy;
            refs.bbar_uy[s][qi] += gybar.dx * ty.dx + gybar.dy * ty.dy + gybar.dxx * ty.dxx +
                                   gybar.dxy * ty.dxy + gybar.dyy * ty.dyy;
            double bx = refs.b_ux[s][qi], by = refs.b_uy[s][qi];
            Dual2& tbx = td.bar_ux[p][qi];
            tbx.dx += bx * gxbar.dx;
            tbx.dy += bx * gxbar.dy;
            tbx.dxx += bx * gxbar.dxx;
            tbx.dxy += bx * gxbar.dxy;
            tbx.dyy += bx * gxbar.dyy;
            Dual2& tby = td.bar_uy[p][qi];
            tby.dx += by * gybar.dx;
            tby.dy += by * gybar.dy;
            tby.dxx += by * gybar.dxx;
            tby.dxy += by * gybar.dxy;
            tby.dyy += by * gybar.dyy;
          }
        }
      }
    }
  } else {
    // Linear operator kinds: per point, the residual is a fixed linear
    // functional of the trunk duals, so reduce the trunk first.
    std::vector<double> ax((size_t)np * a.q), gxv((size_t)np * a.q);
    std::vector<double> ay((size_t)np * a.q), gyv((size_t)np * a.q);
    for (size_t p = 0; p < np; ++p) {
      for (int qi = 0; qi < a.q; ++qi) {
        const Dual2& tx = td.out_ux[p][qi];
        const Dual2& ty = td.out_uy[p][qi];
        double cx = (lambda + 2 * mu) * tx.dxx + mu * tx.dyy;
        double cy = (lambda + 2 * mu) * ty.dyy + mu * ty.dxx;
        if (ps.kind == LossKind::dynamic) {
          cx -= coeff * tx.v;
          cy -= coeff * ty.v;
        }
        ax[p * a.q + qi] = cx;
        ay[p * a.q + qi] = cy;
        gxv[p * a.q + qi] = (lambda + mu) * ty.dxy;
        gyv[p * a.q + qi] = (lambda + mu) * tx.dxy;
      }
    }
    std::vector<double> axbar, aybar, gxbar, gybar;
    if (grads) {
      axbar.assign((size_t)np * a.q, 0.0);
      aybar.assign((size_t)np * a.q, 0.0);
      gxbar.assign((size_t)np * a.q, 0.0);
      gybar.assign((size_t)np * a.q, 0.0);
    }
    double bias_ux = side_bias(pair, true), bias_uy = side_bias(pair, false);
    double bias_ux_bar = 0, bias_uy_bar = 0;
    for (size_t p = 0; p < np; ++p) {
      const double* axp = &ax[p * a.q];
      const double* ayp = &ay[p * a.q];
      const double* gxp = &gxv[p * a.q];
      const double* gyp = &gyv[p * a.q];
      for (size_t s = 0; s < ns; ++s) {
        double rx = dot(refs.b_ux[s].data(), axp, a.q) + dot(refs.b_uy[s].data(), gxp, a.q);
        double ry = dot(refs.b_uy[s].data(), ayp, a.q) + dot(refs.b_ux[s].data(), gyp, a.q);
        if (ps.kind == LossKind::dynamic) {
          const std::array<double, 4>& prev = (*ps.prev_at)[s][p];
          rx += -coeff * bias_ux + coeff * (prev[0] + ps.dt * prev[2]);
          ry += -coeff * bias_uy + coeff * (prev[1] + ps.dt * prev[3]);
          if (ps.skip_at) {
            const std::array<double, 4>& sk = (*ps.skip_at)[s][p];
            rx += -coeff * sk[0] + (lambda + mu) * sk[3];
            ry += -coeff * sk[1] + (lambda + mu) * sk[2];
          }
        }
        rx *= inv_div;
        ry *= inv_div;
        comps.res_x += rx * rx * inv_sp;
        comps.res_y += ry * ry * inv_sp;
        if (grads) {
          double wx = 2.0 * rx * inv_sp * inv_div;
          double wy = 2.0 * ry * inv_sp * inv_div;
          double* axb = &axbar[p * a.q];
          double* ayb = &aybar[p * a.q];
          double* gxb = &gxbar[p * a.q];
          double* gyb = &gybar[p * a.q];
          for (int qi = 0; qi < a.q; ++qi) {
            refs.bbar_ux[s][qi] += wx * axp[qi] + wy * gyp[qi];
            refs.bbar_uy[s][qi] += wx * gxp[qi] + wy * ayp[qi];
            axb[qi] += wx * refs.b_ux[s][qi];
            ayb[qi] += wy * refs.b_uy[s][qi];
            gxb[qi] += wx * refs.b_uy[s][qi];
            gyb[qi] += wy * refs.b_ux[s][qi];
          }
          if (ps.kind == LossKind::dynamic) {
            bias_ux_bar += wx * -coeff;
            bias_uy_bar += wy * -coeff;
          }
        }
      }
    }
    if (grads) {
      for (size_t p = 0; p < np; ++p) {
        for (int qi = 0; qi < a.q; ++qi) {
          double axb = axbar[p * a.q + qi], ayb = aybar[p * a.q + qi];
          double gxb = gxbar[p * a.q + qi], gyb = gybar[p * a.q + qi];
          Dual2& tbx = td.bar_ux[p][qi];
          tbx.dxx += (lambda + 2 * mu) * axb;
          tbx.dyy += mu * axb;
          tbx.dxy += (lambda + mu) * gyb;
          Dual2& tby = td.bar_uy[p][qi];
          tby.dyy += (lambda + 2 * mu) * ayb;
          tby.dxx += mu * ayb;
          tby.dxy += (lambda + mu) * gxb;
          if (ps.kind == LossKind::dynamic) {
            tbx.v += -coeff * axb;
            tby.v += -coeff * ayb;
          }
        }
      }
      grads->get("ux.bias").data[0] += bias_ux_bar;
      grads->get("uy.bias").data[0] += bias_uy_bar;
    }
  }

  // Boundary mismatch and optional roller-edge terms.
  boundary_terms(pair, *ps.boundary_points, ps.batch, refs, ps.bc_targets_ux, ps.bc_targets_uy,
                 true, true, grads, comps.bcs_x, comps.bcs_y);
  if (ps.fix_ux && !ps.fix_ux->empty()) {
    std::vector<const double*> zeros(ns, nullptr);
    double dummy = 0;
    boundary_terms(pair, *ps.fix_ux, ps.batch, refs, zeros, zeros, true, false, grads,
                   comps.bcs_fix, dummy);
    comps.has_fix = true;
  }
  if (ps.fix_uy && !ps.fix_uy->empty()) {
    std::vector<const double*> zeros(ns, nullptr);
    double dummy = 0;
    boundary_terms(pair, *ps.fix_uy, ps.batch, refs, zeros, zeros, false, true, grads, dummy,
                   comps.bcs_fix);
    comps.has_fix = true;
  }

  if (grads) {
    backward_branches(pair, ps.batch, refs, *grads);
    backward_trunks(pair, td, grads);
  }

  comps.res = comps.res_x + comps.res_y;
  comps.bcs = comps.bcs_x + comps.bcs_y;
  comps.total = comps.res + comps.bcs + comps.bcs_fix;
  comps.clamped_ratio = ns && np ? (double)clamped / (double)(ns * np) : 0.0;
  return comps;
}

}  // namespace

OperatorPair make_static_pair(int boundary_features, const std::vector<int>& branch_hidden,
                              const std::vector<int>& trunk_hidden, int q,
                              unsigned long long seed) {
  if (boundary_features <= 0)
    throw std::invalid_argument("make_static_pair: boundary_features must be positive");
  return make_pair_impl(boundary_features, branch_hidden, trunk_hidden, q, 0, 0, 1.0, seed);
}

OperatorPair make_dynamic_pair(int boundary_features, const std::vector<int>& branch_hidden,
                               const std::vector<int>& trunk_hidden, int q, int grid_n,
                               int cnn_hidden, double velocity_scale, unsigned long long seed) {
  if (boundary_features <= 0 || grid_n <= 0)
    throw std::invalid_argument("make_dynamic_pair: needs boundary and grid branches");
  return make_pair_impl(boundary_features, branch_hidden, trunk_hidden, q, grid_n, cnn_hidden,
                        velocity_scale, seed);
}

OperatorPair make_grid_only_pair(const std::vector<int>& trunk_hidden, int q, int grid_n,
                                 int cnn_hidden, double velocity_scale, unsigned long long seed) {
  if (grid_n <= 0) throw std::invalid_argument("make_grid_only_pair: grid_n must be positive");
  return make_pair_impl(0, {}, trunk_hidden, q, grid_n, cnn_hidden, velocity_scale, seed);
}

std::array<double, 2> evaluate_at(const OperatorPair& pair, const BranchInputs& in, double x,
                                  double y) {
  return evaluate(pair, in, {{x, y}})[0];
}

std::vector<std::array<double, 2>> evaluate(const OperatorPair& pair, const BranchInputs& in,
                                            const std::vector<Vec2>& points) {
  check_inputs(pair, in);
  std::vector<double> b_ux = branch_embedding(pair, in, true);
  std::vector<double> b_uy = branch_embedding(pair, in, false);
  double bias_ux = side_bias(pair, true), bias_uy = side_bias(pair, false);
  std::vector<std::array<double, 2>> out(points.size());
  for (size_t p = 0; p < points.size(); ++p) {
    std::vector<double> xy = {points[p].x, points[p].y};
    std::vector<double> tx = mlp_forward(pair.params, pair.arch.trunk_ux, xy);
    std::vector<double> ty = mlp_forward(pair.params, pair.arch.trunk_uy, xy);
    out[p][0] = dot(b_ux.data(), tx.data(), pair.arch.q) + bias_ux;
    out[p][1] = dot(b_uy.data(), ty.data(), pair.arch.q) + bias_uy;
    if (pair.arch.ballistic_skip) {
      out[p][0] += skip_jet(in.grid4, pair.arch.skip_grid, true, points[p].x, points[p].y).v;
      out[p][1] += skip_jet(in.grid4, pair.arch.skip_grid, false, points[p].x, points[p].y).v;
    }
  }
  return out;
}

PointResiduals residuals_at(const OperatorPair& pair, const BranchInputs& in, double x, double y,
                            const Material& mat, LossKind kind, const DynamicTerms* dyn) {
  check_inputs(pair, in);
  std::vector<double> b_ux = branch_embedding(pair, in, true);
  std::vector<double> b_uy = branch_embedding(pair, in, false);
  std::vector<Dual2> tx = mlp_forward_dual2(pair.params, pair.arch.trunk_ux, Dual2::var_x(x),
                                            Dual2::var_y(y));
  std::vector<Dual2> ty = mlp_forward_dual2(pair.params, pair.arch.trunk_uy, Dual2::var_x(x),
                                            Dual2::var_y(y));
  Dual2 gx, gy;
  for (int qi = 0; qi < pair.arch.q; ++qi) {
    gx = gx + b_ux[qi] * tx[qi];
    gy = gy + b_uy[qi] * ty[qi];
  }
  gx.v += side_bias(pair, true);
  gy.v += side_bias(pair, false);
  if (pair.arch.ballistic_skip) {
    SkipJet sx = skip_jet(in.grid4, pair.arch.skip_grid, true, x, y);
    SkipJet sy = skip_jet(in.grid4, pair.arch.skip_grid, false, x, y);
    gx = gx + Dual2{sx.v, sx.dx, sx.dy, 0, sx.dxy, 0};
    gy = gy + Dual2{sy.v, sy.dx, sy.dy, 0, sy.dxy, 0};
  }

  PointResiduals out;
  if (kind == LossKind::hyperelastic) {
    HyperHeadOut h = hyper_head(gx, gy, mat.lambda, mat.mu);
    out.jac = h.jac;
    out.rx = h.rx;
    out.ry = h.ry;
    return out;
  }
  out.rx = (mat.lambda + 2 * mat.mu) * gx.dxx + mat.mu * gx.dyy + (mat.lambda + mat.mu) * gy.dxy;
  out.ry = (mat.lambda + 2 * mat.mu) * gy.dyy + mat.mu * gy.dxx + (mat.lambda + mat.mu) * gx.dxy;
  if (kind == LossKind::dynamic) {
    if (!dyn) throw std::invalid_argument("residuals_at: dynamic terms required");
    double coeff = dyn->form == InertiaForm::consistent ? 2.0 * mat.rho / (dyn->dt * dyn->dt)
                                                        : 8.0 / (dyn->dt * dyn->dt);
    out.rx -= coeff * (gx.v - dyn->ux_prev - dyn->dt * dyn->vx_prev);
    out.ry -= coeff * (gy.v - dyn->uy_prev - dyn->dt * dyn->vy_prev);
  }
  return out;
}

namespace {

PassSpec static_pass_spec(const StaticDataset& data, const std::vector<int>& indices,
                          const std::vector<Vec2>& collocation, LossKind kind, const Material& mat,
                          double divisor, std::vector<BranchInputs>& inputs_storage) {
  PassSpec ps;
  ps.kind = kind;
  ps.collocation = &collocation;
  ps.boundary_points = &data.boundary_points;
  ps.fix_ux = &data.fix_ux_points;
  ps.fix_uy = &data.fix_uy_points;
  ps.mat = mat;
  ps.divisor = divisor;
  size_t nb = data.boundary_points.size();
  inputs_storage.resize(indices.size());
  for (size_t k = 0; k < indices.size(); ++k) {
    const std::vector<double>& row = data.bc_values.at(indices[k]);
    if (row.size() != 2 * nb) throw std::invalid_argument("static dataset row size mismatch");
    inputs_storage[k].boundary = row;
    ps.batch.push_back(&inputs_storage[k]);
    ps.bc_targets_ux.push_back(row.data());
    ps.bc_targets_uy.push_back(row.data() + nb);
  }
  return ps;
}

PassSpec dynamic_pass_spec(const OperatorPair& pair, const DynamicDataset& data,
                           const std::vector<int>& indices, const std::vector<Vec2>& collocation,
                           const Material& mat, InertiaForm form, double divisor,
                           std::vector<BranchInputs>& inputs_storage,
                           std::vector<std::vector<std::array<double, 4>>>& prev_storage,
                           std::vector<std::vector<std::array<double, 4>>>& skip_storage,
                           std::vector<std::vector<double>>& bc_storage) {
  PassSpec ps;
  ps.kind = LossKind::dynamic;
  ps.collocation = &collocation;
  ps.boundary_points = &data.boundary_points;
  ps.mat = mat;
  ps.divisor = divisor;
  ps.dt = data.dt;
  ps.form = form;
  size_t nb = data.boundary_points.size();
  size_t n2 = (size_t)data.grid.n * data.grid.n;
  double vscale = pair.arch.velocity_scale;
  bool skip = pair.arch.ballistic_skip;
  if (skip && !same_grid(data.grid, pair.arch.skip_grid))
    throw std::invalid_argument("dynamic training: dataset grid differs from the skip grid");
  inputs_storage.resize(indices.size());
  prev_storage.assign(indices.size(), {});
  skip_storage.assign(skip ? indices.size() : 0, {});
  bc_storage.assign(skip ? indices.size() : 0, {});
  for (size_t k = 0; k < indices.size(); ++k) {
    const DynamicSample& s = data.samples.at(indices[k]);
    if (s.bc_values.size() != 2 * nb) throw std::invalid_argument("dynamic bc row size mismatch");
    if (s.grid4.size() != 4 * n2) throw std::invalid_argument("dynamic grid size mismatch");
    inputs_storage[k].boundary = s.bc_values;
    inputs_storage[k].grid4 = s.grid4;
    ps.batch.push_back(&inputs_storage[k]);
    prev_storage[k].resize(collocation.size());
    std::array<std::vector<double>, 4> chans;
    for (int c = 0; c < 4; ++c)
      chans[c].assign(s.grid4.begin() + c * n2, s.grid4.begin() + (c + 1) * n2);
    for (size_t p = 0; p < collocation.size(); ++p) {
      double x = collocation[p].x, y = collocation[p].y;
      std::array<double, 4> vals;
      for (int c = 0; c < 4; ++c) vals[c] = grid_bilinear(chans[c], data.grid, x, y);
      vals[2] /= vscale;
      vals[3] /= vscale;
      prev_storage[k][p] = vals;
    }
    if (!skip) {
      ps.bc_targets_ux.push_back(s.bc_values.data());
      ps.bc_targets_uy.push_back(s.bc_values.data() + nb);
      continue;
    }
    skip_storage[k].resize(collocation.size());
    for (size_t p = 0; p < collocation.size(); ++p) {
      SkipJet sx = skip_jet(s.grid4, data.grid, true, collocation[p].x, collocation[p].y);
      SkipJet sy = skip_jet(s.grid4, data.grid, false, collocation[p].x, collocation[p].y);
      skip_storage[k][p] = {sx.v, sy.v, sx.dxy, sy.dxy};
    }
    // The network carries only the deviation, so the boundary targets shed
    // the ballistic part.
    bc_storage[k] = s.bc_values;
    for (size_t j = 0; j < nb; ++j) {
      const Vec2& bp = data.boundary_points[j];
      bc_storage[k][j] -= skip_jet(s.grid4, data.grid, true, bp.x, bp.y).v;
      bc_storage[k][nb + j] -= skip_jet(s.grid4, data.grid, false, bp.x, bp.y).v;
    }
    ps.bc_targets_ux.push_back(bc_storage[k].data());
    ps.bc_targets_uy.push_back(bc_storage[k].data() + nb);
  }
  ps.prev_at = &prev_storage;
  if (skip) ps.skip_at = &skip_storage;
  return ps;
}

}  // namespace

LossComponents eval_loss_static(const OperatorPair& pair, const StaticDataset& data,
                                const std::vector<int>& sample_indices,
                                const std::vector<Vec2>& collocation, LossKind kind,
                                const Material& mat, double residual_divisor, ParamStore* grads) {
  std::vector<BranchInputs> storage;
  PassSpec ps = static_pass_spec(data, sample_indices, collocation, kind, mat, residual_divisor,
                                 storage);
  return loss_pass(pair, ps, grads);
}

LossComponents eval_loss_dynamic(const OperatorPair& pair, const DynamicDataset& data,
                                 const std::vector<int>& sample_indices,
                                 const std::vector<Vec2>& collocation, const Material& mat,
                                 InertiaForm form, double residual_divisor, ParamStore* grads) {
  std::vector<BranchInputs> storage;
  std::vector<std::vector<std::array<double, 4>>> prev, skip;
  std::vector<std::vector<double>> bc;
  PassSpec ps = dynamic_pass_spec(pair, data, sample_indices, collocation, mat, form,
                                  residual_divisor, storage, prev, skip, bc);
  return loss_pass(pair, ps, grads);
}

namespace {

void zero_store(ParamStore& store) {
  for (auto& [name, t] : store.tensors) std::fill(t.data.begin(), t.data.end(), 0.0);
}

void apply_freeze(ParamStore& grads, const std::vector<std::string>& prefixes) {
  if (prefixes.empty()) return;
  for (auto& [name, t] : grads.tensors) {
    for (const std::string& p : prefixes) {
      if (name.rfind(p, 0) == 0) {
        std::fill(t.data.begin(), t.data.end(), 0.0);
        break;
      }
    }
  }
}

std::string history_csv(const std::vector<std::array<double, 5>>& rows, bool has_fix) {
  std::string out = has_fix ? "iter,loss_total,loss_res,loss_bcs,loss_bcs_fix\n"
                            : "iter,loss_total,loss_res,loss_bcs\n";
  char buf[160];
  for (const auto& r : rows) {
    if (has_fix)
      std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g\n", (int)r[0], r[1], r[2], r[3],
                    r[4]);
    else
      std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", (int)r[0], r[1], r[2], r[3]);
    out += buf;
  }
  return out;
}

using PassFn = std::function<LossComponents(std::mt19937_64&, ParamStore*)>;

TrainResult train_loop(OperatorPair& pair, const TrainConfig& cfg, const PassFn& pass) {
  TrainResult result;
  if (cfg.iterations <= 0) return result;
  std::mt19937_64 rng(cfg.seed);
  AdamState adam = AdamState::init(pair.params, cfg.lr);
  ParamStore grads = pair.params.zeros_like();
  ParamStore last_finite = pair.params;
  bool any_fix = false;

  for (int it = 0; it < cfg.iterations; ++it) {
    if (cfg.lr_final > 0 && cfg.lr_final < cfg.lr && cfg.iterations > 1)
      adam.lr = cfg.lr * std::pow(cfg.lr_final / cfg.lr, (double)it / (cfg.iterations - 1));
    zero_store(grads);
    LossComponents comps = pass(rng, &grads);
    if (!std::isfinite(comps.total)) {
      pair.params = last_finite;
      if (!cfg.abort_checkpoint_path.empty()) save_pair(cfg.abort_checkpoint_path, pair);
      if (!cfg.history_path.empty())
        write_text_file(cfg.history_path, history_csv(result.history, any_fix));
      throw std::runtime_error("training aborted: non-finite loss at iteration " +
                               std::to_string(it));
    }
    last_finite = pair.params;
    any_fix = any_fix || comps.has_fix;
    if (it == 0 || (cfg.history_every > 0 && it % cfg.history_every == 0) ||
        it == cfg.iterations - 1) {
      result.history.push_back({(double)it, comps.total, comps.res, comps.bcs, comps.bcs_fix});
    }
    apply_freeze(grads, cfg.frozen_prefixes);
    adam_step(pair.params, grads, adam);
  }
  result.initial_loss = result.history.front()[1];
  result.final_loss = result.history.back()[1];
  if (!cfg.history_path.empty())
    write_text_file(cfg.history_path, history_csv(result.history, any_fix));
  return result;
}

std::vector<int> draw_batch(std::mt19937_64& rng, size_t dataset_size, int batch) {
  std::vector<int> idx(std::min<size_t>(batch, dataset_size));
  std::uniform_int_distribution<int> pick(0, (int)dataset_size - 1);
  for (int& i : idx) i = pick(rng);
  return idx;
}

std::vector<Vec2> draw_collocation(std::mt19937_64& rng, const PointSampler& sampler, int count) {
  std::vector<Vec2> pts(count);
  for (Vec2& p : pts) p = sampler(rng);
  return pts;
}

}  // namespace

TrainResult train_static(OperatorPair& pair, const StaticDataset& data, LossKind kind,
                         const PointSampler& collocation_sampler, const TrainConfig& cfg) {
  if (kind == LossKind::dynamic) throw std::invalid_argument("train_static: wrong loss kind");
  if (data.bc_values.empty()) throw std::invalid_argument("train_static: empty dataset");
  return train_loop(pair, cfg, [&](std::mt19937_64& rng, ParamStore* grads) {
    std::vector<int> idx = draw_batch(rng, data.bc_values.size(), cfg.batch);
    std::vector<Vec2> colloc = draw_collocation(rng, collocation_sampler, cfg.collocation);
    std::vector<BranchInputs> storage;
    PassSpec ps = static_pass_spec(data, idx, colloc, kind, cfg.material, cfg.residual_divisor,
                                   storage);
    return loss_pass(pair, ps, grads);
  });
}

TrainResult train_dynamic(OperatorPair& pair, const DynamicDataset& data,
                          const PointSampler& collocation_sampler, const TrainConfig& cfg) {
  if (data.samples.empty()) throw std::invalid_argument("train_dynamic: empty dataset");
  return train_loop(pair, cfg, [&](std::mt19937_64& rng, ParamStore* grads) {
    std::vector<int> idx = draw_batch(rng, data.samples.size(), cfg.batch);
    std::vector<Vec2> colloc = draw_collocation(rng, collocation_sampler, cfg.collocation);
    std::vector<BranchInputs> storage;
    std::vector<std::vector<std::array<double, 4>>> prev, skip;
    std::vector<std::vector<double>> bc;
    PassSpec ps = dynamic_pass_spec(pair, data, idx, colloc, cfg.material, cfg.inertia,
                                    cfg.residual_divisor, storage, prev, skip, bc);
    return loss_pass(pair, ps, grads);
  });
}

TrainResult train_supervised_grid(OperatorPair& pair, const DynamicDataset& data,
                                  const TrainConfig& cfg) {
  if (data.samples.empty()) throw std::invalid_argument("train_supervised_grid: empty dataset");
  for (const DynamicSample& s : data.samples)
    if (s.target_ux.empty() || s.target_uy.empty())
      throw std::invalid_argument("train_supervised_grid: samples lack grid targets");

  const OperatorArch& a = pair.arch;
  if (a.ballistic_skip && !same_grid(data.grid, a.skip_grid))
    throw std::invalid_argument("supervised training: dataset grid differs from the skip grid");
  std::vector<Vec2> nodes;
  for (int i = 0; i < data.grid.n; ++i)
    for (int j = 0; j < data.grid.n; ++j) nodes.push_back(data.grid.point(i, j));

  return train_loop(pair, cfg, [&, nodes](std::mt19937_64& rng, ParamStore* grads) {
    std::vector<int> idx = draw_batch(rng, data.samples.size(), cfg.batch);
    std::vector<BranchInputs> storage(idx.size());
    std::vector<const BranchInputs*> batch;
    for (size_t k = 0; k < idx.size(); ++k) {
      const DynamicSample& s = data.samples[idx[k]];
      if (a.boundary_features > 0) storage[k].boundary = s.bc_values;
      storage[k].grid4 = s.grid4;
      batch.push_back(&storage[k]);
    }
    SampleRefs refs = forward_branches(pair, batch, grads != nullptr);

    LossComponents comps;
    size_t ns = idx.size(), np = nodes.size();
    double inv = 1.0 / (double)(ns * np);
    std::vector<MlpTape> tapes_ux(np), tapes_uy(np);
    std::vector<std::vector<double>> tvals_ux(np), tvals_uy(np);
    std::vector<std::vector<double>> tbar_ux, tbar_uy;
    if (grads) {
      tbar_ux.assign(np, std::vector<double>(a.q, 0.0));
      tbar_uy.assign(np, std::vector<double>(a.q, 0.0));
    }
    for (size_t p = 0; p < np; ++p) {
      std::vector<double> xy = {nodes[p].x, nodes[p].y};
      tvals_ux[p] = grads ? mlp_forward_tape(pair.params, a.trunk_ux, xy, tapes_ux[p])
                          : mlp_forward(pair.params, a.trunk_ux, xy);
      tvals_uy[p] = grads ? mlp_forward_tape(pair.params, a.trunk_uy, xy, tapes_uy[p])
                          : mlp_forward(pair.params, a.trunk_uy, xy);
    }
    double bias_ux = side_bias(pair, true), bias_uy = side_bias(pair, false);
    for (size_t k = 0; k < idx.size(); ++k) {
      const DynamicSample& s = data.samples[idx[k]];
      for (size_t p = 0; p < np; ++p) {
        double gx = dot(refs.b_ux[k].data(), tvals_ux[p].data(), a.q) + bias_ux;
        double gy = dot(refs.b_uy[k].data(), tvals_uy[p].data(), a.q) + bias_uy;
        if (a.ballistic_skip) {
          gx += s.grid4[p] + s.grid4[2 * np + p];
          gy += s.grid4[np + p] + s.grid4[3 * np + p];
        }
        double ex = gx - s.target_ux[p];
        double ey = gy - s.target_uy[p];
        comps.res_x += ex * ex * inv;
        comps.res_y += ey * ey * inv;
        if (grads) {
          double wx = 2.0 * ex * inv, wy = 2.0 * ey * inv;
          for (int qi = 0; qi < a.q; ++qi) {
            refs.bbar_ux[k][qi] += wx * tvals_ux[p][qi];
            refs.bbar_uy[k][qi] += wy * tvals_uy[p][qi];
            tbar_ux[p][qi] += wx * refs.b_ux[k][qi];
            tbar_uy[p][qi] += wy * refs.b_uy[k][qi];
          }
          grads->get("ux.bias").data[0] += wx;
          grads->get("uy.bias").data[0] += wy;
        }
      }
    }
    if (grads) {
      for (size_t p = 0; p < np; ++p) {
        mlp_backward(pair.params, a.trunk_ux, tapes_ux[p], tbar_ux[p], *grads);
        mlp_backward(pair.params, a.trunk_uy, tapes_uy[p], tbar_uy[p], *grads);
      }
      backward_branches(pair, batch, refs, *grads);
    }
    comps.res = comps.res_x + comps.res_y;
    comps.total = comps.res;
    return comps;
  });
}

std::vector<std::string> branch_prefixes(const OperatorPair& pair) {
  std::vector<std::string> out;
  if (pair.arch.boundary_features > 0) {
    out.push_back("ux.b1");
    out.push_back("uy.b1");
  }
  if (pair.arch.has_grid_branch) {
    out.push_back("ux.b2");
    out.push_back("uy.b2");
  }
  return out;
}

GridState zero_grid_state(const Grid2& grid) {
  GridState s;
  s.grid = grid;
  size_t n2 = (size_t)grid.n * grid.n;
  s.ux.assign(n2, 0.0);
  s.uy.assign(n2, 0.0);
  s.vx.assign(n2, 0.0);
  s.vy.assign(n2, 0.0);
  s.ax.assign(n2, 0.0);
  s.ay.assign(n2, 0.0);
  return s;
}

std::vector<double> make_grid4(const GridState& state, double velocity_scale) {
  std::vector<double> out;
  out.reserve(state.ux.size() * 4);
  out.insert(out.end(), state.ux.begin(), state.ux.end());
  out.insert(out.end(), state.uy.begin(), state.uy.end());
  for (double v : state.vx) out.push_back(v * velocity_scale);
  for (double v : state.vy) out.push_back(v * velocity_scale);
  return out;
}

GridState time_march_predict(const OperatorPair& pair, const GridState& prev,
                             const std::vector<double>& bc_now, double dt) {
  if (dt <= 0) throw std::invalid_argument("time_march_predict: dt must be positive");
  if (pair.arch.ballistic_skip && !same_grid(prev.grid, pair.arch.skip_grid))
    throw std::invalid_argument("time_march_predict: state grid differs from the skip grid");
  BranchInputs in;
  in.boundary = bc_now;
  in.grid4 = make_grid4(prev, pair.arch.velocity_scale);

  std::vector<Vec2> nodes;
  for (int i = 0; i < prev.grid.n; ++i)
    for (int j = 0; j < prev.grid.n; ++j) nodes.push_back(prev.grid.point(i, j));
  std::vector<std::array<double, 2>> u = evaluate(pair, in, nodes);

  GridState next = zero_grid_state(prev.grid);
  size_t n2 = nodes.size();
  for (size_t k = 0; k < n2; ++k) {
    next.ux[k] = u[k][0];
    next.uy[k] = u[k][1];
    next.ax[k] = 2.0 / (dt * dt) * (next.ux[k] - prev.ux[k]) - 2.0 / dt * prev.vx[k];
    next.ay[k] = 2.0 / (dt * dt) * (next.uy[k] - prev.uy[k]) - 2.0 / dt * prev.vy[k];
    next.vx[k] = prev.vx[k] + 0.5 * dt * (prev.ax[k] + next.ax[k]);
    next.vy[k] = prev.vy[k] + 0.5 * dt * (prev.ay[k] + next.ay[k]);
  }
  return next;
}

std::vector<GridState> rollout_time_march(const OperatorPair& pair, const GridState& init,
                                          const std::vector<std::vector<double>>& bc_per_step,
                                          double dt, int steps) {
  std::vector<GridState> states;
  states.reserve(steps);
  static const std::vector<double> no_bc;
  GridState cur = init;
  for (int n = 0; n < steps; ++n) {
    const std::vector<double>& bc =
        bc_per_step.empty() ? no_bc
                            : bc_per_step.at(std::min<size_t>(n, bc_per_step.size() - 1));
    cur = time_march_predict(pair, cur, bc, dt);
    states.push_back(cur);
  }
  return states;
}

double rel_l2_error(const std::vector<std::array<double, 2>>& pred,
                    const std::vector<std::array<double, 2>>& truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("rel_l2_error: size mismatch");
  double num = 0, den = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    double dx = pred[i][0] - truth[i][0], dy = pred[i][1] - truth[i][1];
    num += dx * dx + dy * dy;
    den += truth[i][0] * truth[i][0] + truth[i][1] * truth[i][1];
  }
  if (den == 0) return num == 0 ? 0.0 : std::sqrt(num);
  return std::sqrt(num / den);
}

std::string pair_to_text(const OperatorPair& pair) {
  const OperatorArch& a = pair.arch;
  std::ostringstream out;
  out << "pair 1\n";
  out << "q " << a.q << "\n";
  out << "bf " << a.boundary_features << "\n";
  out << "vscale " << double_to_hex(a.velocity_scale) << "\n";
  out << "trunk";
  for (int s : a.trunk_ux.sizes) out << " " << s;
  out << "\n";
  out << "branch";
  if (a.boundary_features > 0)
    for (int s : a.branch_ux.sizes) out << " " << s;
  out << "\n";
  out << "cnn";
  if (a.has_grid_branch)
    out << " " << a.grid_ux.grid << " " << a.grid_ux.in_channels << " " << a.grid_ux.c1 << " "
        << a.grid_ux.c2 << " " << a.grid_ux.hidden << " " << a.grid_ux.out;
  out << "\n";
  if (a.ballistic_skip)
    out << "skip " << double_to_hex(a.skip_grid.xmin) << " " << double_to_hex(a.skip_grid.ymin)
        << " " << double_to_hex(a.skip_grid.xmax) << " " << double_to_hex(a.skip_grid.ymax)
        << "\n";
  out << "\n";
  out << params_to_text(pair.params);
  return out.str();
}

OperatorPair pair_from_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("pair", 0) != 0)
    throw std::runtime_error("pair_from_text: bad header");

  int q = 0, bf = 0;
  double vscale = 1.0;
  bool skip = false;
  std::array<double, 4> skip_bounds{};
  std::vector<int> trunk_sizes, branch_sizes, cnn_fields;
  while (std::getline(in, line) && !line.empty()) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "q")
      ls >> q;
    else if (key == "bf")
      ls >> bf;
    else if (key == "vscale") {
      std::string hex;
      ls >> hex;
      vscale = parse_double(hex);
    } else if (key == "trunk") {
      int v;
      while (ls >> v) trunk_sizes.push_back(v);
    } else if (key == "branch") {
      int v;
      while (ls >> v) branch_sizes.push_back(v);
    } else if (key == "cnn") {
      int v;
      while (ls >> v) cnn_fields.push_back(v);
    } else {
      throw std::runtime_error("pair_from_text: unknown key " + key);
    }
  }
  if (q <= 0 || trunk_sizes.size() < 2) throw std::runtime_error("pair_from_text: bad arch");

  std::vector<int> trunk_hidden(trunk_sizes.begin() + 1, trunk_sizes.end() - 1);
  std::vector<int> branch_hidden;
  if (!branch_sizes.empty())
    branch_hidden.assign(branch_sizes.begin() + 1, branch_sizes.end() - 1);
  int grid_n = cnn_fields.size() == 6 ? cnn_fields[0] : 0;
  int cnn_hidden = cnn_fields.size() == 6 ? cnn_fields[4] : 0;

  OperatorPair pair = make_pair_impl(bf, branch_hidden, trunk_hidden, q, grid_n, cnn_hidden,
                                     vscale, 0);
  std::string rest;
  std::getline(in, rest, '\0');
  ParamStore loaded = params_from_text(rest);
  for (auto& [name, t] : pair.params.tensors) {
    const Tensor& src = loaded.get(name);
    if (src.rows != t.rows || src.cols != t.cols)
      throw std::runtime_error("pair_from_text: tensor shape mismatch for " + name);
    t.data = src.data;
  }
  return pair;
}

void save_pair(const std::string& path, const OperatorPair& pair) {
  write_text_file(path, pair_to_text(pair));
}

OperatorPair load_pair(const std::string& path) { return pair_from_text(read_text_file(path)); }

}  // namespace fno
