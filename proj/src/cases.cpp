#include "fno/cases.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <random>
#include <sstream>

#include "fno/grf.hpp"

namespace fno {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr double kPi = 3.14159265358979323846;

struct Stopwatch {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

void ensure_dir(const std::string& dir) {
  if (!dir.empty()) fs::create_directories(dir);
}

void ensure_parent(const std::string& path) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void write_text(const std::string& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CaseError("cannot write " + path);
  out << text;
}

std::string step_file(const std::string& dir, const char* stem, int n) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "/%s_%03d.csv", stem, n);
  return dir + buf;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

// ---------------------------------------------------------------------------
// Field sampling

MeshLocator::Hit locate_near(const MeshLocator& loc, const Vec2& p) {
  auto hit = loc.locate(p, 1e-8);
  if (!hit) hit = loc.locate(p, 1e-6);
  // Boundary points of a peer discretization can fall a chord-sag outside a
  // polygonal mesh of the same curved domain; clamp those onto the rim.
  if (!hit) hit = loc.locate(p, 5e-2);
  if (!hit) {
    std::ostringstream os;
    os << "sample point (" << p.x << ", " << p.y << ") lies outside the mesh";
    throw CaseError(os.str());
  }
  return *hit;
}

std::array<double, 2> field_at(const Mesh& mesh, const MeshLocator& loc,
                               const std::vector<double>& interleaved, const Vec2& p) {
  MeshLocator::Hit hit = locate_near(loc, p);
  std::array<double, 2> out{0.0, 0.0};
  for (int k = 0; k < 3; ++k) {
    int n = mesh.tris[hit.tri].v[k];
    out[0] += hit.lambda[k] * interleaved[2 * n];
    out[1] += hit.lambda[k] * interleaved[2 * n + 1];
  }
  return out;
}

NodalField sample_field(const Mesh& src, const MeshLocator& loc, const std::vector<double>& vals,
                        const Mesh& dst) {
  NodalField out(dst);
  for (size_t i = 0; i < dst.nodes.size(); ++i) {
    auto p = field_at(src, loc, vals, dst.nodes[i]);
    out.values[2 * i] = p[0];
    out.values[2 * i + 1] = p[1];
  }
  return out;
}

NodalField to_field(const Mesh& mesh, const std::vector<std::array<double, 2>>& vals) {
  NodalField f(mesh);
  for (size_t i = 0; i < vals.size(); ++i) {
    f.values[2 * i] = vals[i][0];
    f.values[2 * i + 1] = vals[i][1];
  }
  return f;
}

double weighted_rel_error(const std::vector<std::array<double, 2>>& got,
                          const std::vector<double>& want, const std::vector<double>& w) {
  double num = 0, den = 0;
  for (size_t i = 0; i < w.size(); ++i) {
    double dx = got[i][0] - want[2 * i], dy = got[i][1] - want[2 * i + 1];
    num += w[i] * (dx * dx + dy * dy);
    den += w[i] * (want[2 * i] * want[2 * i] + want[2 * i + 1] * want[2 * i + 1]);
  }
  return den > 0 ? std::sqrt(num / den) : std::sqrt(num);
}

std::array<double, 2> guarded_rel_l2(const std::vector<std::array<double, 2>>& pred,
                                     const std::vector<std::array<double, 2>>& truth) {
  double den = 0;
  for (const auto& t : truth) den += t[0] * t[0] + t[1] * t[1];
  if (den < 1e-12) return {0.0, 0.0};
  return {rel_l2_error(pred, truth), 1.0};
}

// ---------------------------------------------------------------------------
// Boundary-profile interpolation

// Closed curves: profile value at parameter t in [0, 1), samples assumed
// arc-length uniform without a duplicated endpoint.
double periodic_profile(const std::vector<double>& vals, double t) {
  int m = (int)vals.size();
  double x = (t - std::floor(t)) * m;
  int i0 = std::min((int)x, m - 1);
  double f = x - i0;
  return (1 - f) * vals[i0] + f * vals[(i0 + 1) % m];
}

// Open curves: both endpoints included in the samples.
double open_profile(const std::vector<double>& vals, double t) {
  int m = (int)vals.size();
  double x = std::clamp(t, 0.0, 1.0) * (m - 1);
  int i0 = std::min((int)x, m - 2);
  double f = x - i0;
  return (1 - f) * vals[i0] + f * vals[i0 + 1];
}

double circle_param(const Vec2& c, const Vec2& p) {
  double th = std::atan2(p.y - c.y, p.x - c.x);
  if (th < 0) th += 2 * kPi;
  return th / (2 * kPi);
}

double quarter_arc_param(const Vec2& p) {
  double th = std::atan2(p.y, p.x);
  return std::clamp(th / (kPi / 2), 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Gnuplot artifacts

void write_series(const std::string& dir, const std::string& stem,
                  const std::vector<std::string>& titles,
                  const std::vector<std::vector<double>>& cols, bool logy,
                  const std::string& xlabel, const std::string& ylabel) {
  size_t rows = 0;
  for (const auto& c : cols) rows = std::max(rows, c.size());
  std::ostringstream dat;
  for (size_t i = 0; i < rows; ++i) {
    dat << i;
    for (const auto& c : cols) {
      if (i < c.size() && std::isfinite(c[i]))
        dat << " " << c[i];
      else
        dat << " ?";
    }
    dat << "\n";
  }
  write_text(dir + "/" + stem + ".dat", dat.str());

  std::ostringstream gp;
  gp << "set terminal pngcairo size 900,600\n";
  gp << "set output '" << stem << ".png'\n";
  gp << "set datafile missing '?'\n";
  gp << "set xlabel '" << xlabel << "'\n";
  gp << "set ylabel '" << ylabel << "'\n";
  gp << "set grid\n";
  if (logy) gp << "set logscale y\n";
  gp << "plot";
  for (size_t c = 0; c < cols.size(); ++c) {
    if (c) gp << ",";
    gp << " '" << stem << ".dat' using 1:" << (c + 2) << " with linespoints title '" << titles[c]
       << "'";
  }
  gp << "\n";
  write_text(dir + "/" + stem + ".gp", gp.str());
}

void write_convergence_outputs(const std::string& dir, const ConvergenceRecord& rec) {
  save_convergence_csv(dir + "/convergence.csv", rec);
  std::vector<double> upd, inner;
  for (const ConvergenceRow& r : rec.rows) {
    upd.push_back(std::isnan(r.l2) ? std::numeric_limits<double>::quiet_NaN() : r.l2);
    if (rec.multi) inner.push_back(r.l2_p1);
  }
  std::vector<std::string> titles = {"outer update"};
  std::vector<std::vector<double>> cols = {upd};
  if (rec.multi) {
    titles.push_back("inner pair update");
    cols.push_back(inner);
  }
  write_series(dir, "convergence", titles, cols, true, "iteration", "L2 update");
}

void write_error_nodes(const std::string& dir, const Mesh& mesh,
                       const std::vector<std::array<double, 2>>& got,
                       const std::vector<double>& want) {
  std::ostringstream os;
  os << "node,x,y,err\n";
  char buf[160];
  for (size_t i = 0; i < mesh.nodes.size(); ++i) {
    double dx = got[i][0] - want[2 * i], dy = got[i][1] - want[2 * i + 1];
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", i, mesh.nodes[i].x, mesh.nodes[i].y,
                  std::sqrt(dx * dx + dy * dy));
    os << buf;
  }
  write_text(dir + "/error_nodes.csv", os.str());
}

std::string mesh_wire_dat(const Mesh& m) {
  std::ostringstream os;
  for (const Tri& t : m.tris)
    for (int e = 0; e < 3; ++e) {
      const Vec2& a = m.nodes[t.v[e]];
      const Vec2& b = m.nodes[t.v[(e + 1) % 3]];
      os << a.x << " " << a.y << "\n" << b.x << " " << b.y << "\n\n";
    }
  return os.str();
}

// ---------------------------------------------------------------------------
// Geometry bundles and boundary schedules

struct StaticParts {
  Mesh outer, inner, mono;
  CurveSpec hole = Circle{{0, 0}, 0.3};
  CurveSpec rim = Circle{{0, 0}, 0.35};
};

StaticParts make_static_parts(const CaseConfig& cfg) {
  StaticParts p;
  p.outer = build_square_with_hole(2.0, cfg.divisions, Circle{{0, 0}, 0.3});
  p.inner = build_disk(0.35, cfg.rings);
  p.mono = build_square(2.0, cfg.divisions);
  return p;
}

struct DynParts {
  Mesh outer, inner, mono;
};

DynParts make_dyn_parts(const CaseConfig& cfg) {
  DynParts p;
  p.outer = build_square_with_hole(2.0, cfg.dyn_divisions, RectCurve{{0, 0}, 0.6, 0.6});
  p.inner = build_square(0.7, cfg.square_divisions);
  p.mono = build_square(2.0, cfg.dyn_divisions);
  return p;
}

struct ExpParts {
  Mesh outer, upper, lower, mono;
};

ExpParts make_exp_parts(const CaseConfig& cfg) {
  ExpParts p;
  p.outer = build_square_with_hole(2.0, cfg.dyn_divisions, RectCurve{{0, 0}, 0.6, 1.2});
  p.upper = build_square(0.7, cfg.square_divisions, {0, 0.3});
  p.lower = build_square(0.7, cfg.square_divisions, {0, -0.3});
  p.mono = build_square(2.0, cfg.dyn_divisions);
  return p;
}

struct CylParts {
  Mesh outer, window, mono;
};

CylParts make_cyl_parts(const CaseConfig& cfg) {
  CylParts p;
  int res_outer = std::max(3, (int)std::llround(cfg.annulus_res * (4.0 - 1.8) / 3.0));
  p.outer = build_quarter_annulus(1.8, 4.0, res_outer);
  p.window = build_quarter_annulus(1.0, 2.0, cfg.fine_res);
  p.mono = build_quarter_annulus(1.0, 4.0, cfg.annulus_res);
  return p;
}

// Bottom edge fixed, top edge pulled up by `load`.
std::function<void(int, DirichletSet&)> square_pull_bc(const Mesh& mesh, double load) {
  std::vector<int> bottom = tagged_nodes(mesh, {"bottom"});
  std::vector<int> top = tagged_nodes(mesh, {"top"});
  return [bottom, top, load](int, DirichletSet& bc) {
    fix_nodes(bc, bottom);
    set_component(bc, top, 1, load);
  };
}

// Left and bottom edges fixed; top pulled in y and right in x, either by a
// constant value or by a per-step ramp inc*(n+1).
std::function<void(int, DirichletSet&)> square_drive_bc(const Mesh& mesh, double inc, bool ramp) {
  std::vector<int> left = tagged_nodes(mesh, {"left"});
  std::vector<int> bottom = tagged_nodes(mesh, {"bottom"});
  std::vector<int> top = tagged_nodes(mesh, {"top"});
  std::vector<int> right = tagged_nodes(mesh, {"right"});
  return [left, bottom, top, right, inc, ramp](int n, DirichletSet& bc) {
    double s = ramp ? inc * (n + 1) : inc;
    fix_nodes(bc, left);
    fix_nodes(bc, bottom);
    set_component(bc, top, 1, s);
    set_component(bc, right, 0, s);
  };
}

// Quarter-annulus rollers (u_x = 0 on the left edge, u_y = 0 on the bottom
// edge) plus, optionally, u = (load x^2, load y^2) on the inner arc.
std::function<void(int, DirichletSet&)> annulus_bc(const Mesh& mesh, double load,
                                                   bool drive_inner) {
  std::vector<int> left = tagged_nodes(mesh, {"left"});
  std::vector<int> bottom = tagged_nodes(mesh, {"bottom"});
  std::vector<int> inner = drive_inner ? tagged_nodes(mesh, {"inner"}) : std::vector<int>{};
  std::vector<Vec2> inner_pos;
  for (int n : inner) inner_pos.push_back(mesh.nodes[n]);
  return [left, bottom, inner, inner_pos, load](int, DirichletSet& bc) {
    set_component(bc, left, 0, 0.0);
    set_component(bc, bottom, 1, 0.0);
    for (size_t i = 0; i < inner.size(); ++i) {
      bc.add(2 * inner[i], load * inner_pos[i].x * inner_pos[i].x);
      bc.add(2 * inner[i] + 1, load * inner_pos[i].y * inner_pos[i].y);
    }
  };
}

// ---------------------------------------------------------------------------
// Metrics plumbing

RunMetrics base_metrics(const CaseConfig& cfg) {
  RunMetrics m;
  m.case_name = to_string(cfg.id);
  m.mode = to_string(cfg.mode);
  m.eps = cfg.eps;
  m.eps_inner = cfg.eps_inner;
  m.relaxation = cfg.relaxation;
  m.seed = cfg.seed;
  return m;
}

void fill_steps(RunMetrics& m, const SchwarzResult& res) {
  m.converged = res.converged;
  m.steps = (int)res.steps.size();
  m.iterations = 0;
  for (const StepOutcome& s : res.steps) {
    m.iterations_per_step.push_back(s.iterations);
    m.iterations += s.iterations;
  }
}

void finish_run(RunMetrics& m, const CaseConfig& cfg, const Stopwatch& watch) {
  m.seconds = watch.seconds();
  write_text(cfg.out_dir + "/metrics.json", m.to_json());
}

OperatorPair load_checkpoint(const std::string& path, const char* role) {
  if (path.empty()) throw CaseError(std::string("no ") + role + " checkpoint configured");
  if (!fs::exists(path))
    throw CaseError(std::string(role) + " checkpoint not found: " + path +
                    " (run the train subcommand first)");
  return load_pair(path);
}

std::vector<int> net_widths(const CaseConfig& cfg) {
  return std::vector<int>(std::max(1, cfg.depth), cfg.width);
}

TrainConfig base_train_config(const CaseConfig& cfg, const Material& mat,
                              const std::string& history) {
  TrainConfig tc;
  tc.iterations = cfg.iterations;
  tc.batch = cfg.batch;
  tc.collocation = cfg.collocation;
  tc.lr = cfg.lr;
  tc.lr_final = cfg.lr_final > 0 ? cfg.lr_final : cfg.lr * 0.01;
  tc.seed = cfg.seed + 3;
  tc.material = mat;
  tc.history_path = history;
  tc.history_every = cfg.history_every;
  tc.abort_checkpoint_path = cfg.out_dir + "/abort_checkpoint.txt";
  return tc;
}

void write_history_plot(const std::string& dir, const std::string& csv_name,
                        const std::string& stem) {
  std::ostringstream gp;
  gp << "set terminal pngcairo size 900,600\n";
  gp << "set output '" << stem << ".png'\n";
  gp << "set datafile separator ','\n";
  gp << "set xlabel 'iteration'\n";
  gp << "set ylabel 'loss'\n";
  gp << "set logscale y\n";
  gp << "set grid\n";
  gp << "plot '" << csv_name << "' using 1:2 with lines title 'total', '' using 1:3 with lines "
        "title 'residual', '' using 1:4 with lines title 'boundary'\n";
  write_text(dir + "/" + stem + ".gp", gp.str());
}

// ---------------------------------------------------------------------------
// Collocation samplers

PointSampler disk_sampler(Vec2 c, double r) {
  return [c, r](std::mt19937_64& rng) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    double rr = r * std::sqrt(U(rng));
    double th = 2 * kPi * U(rng);
    return Vec2{c.x + rr * std::cos(th), c.y + rr * std::sin(th)};
  };
}

PointSampler box_sampler(double x0, double y0, double x1, double y1) {
  return [x0, y0, x1, y1](std::mt19937_64& rng) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    return Vec2{x0 + (x1 - x0) * U(rng), y0 + (y1 - y0) * U(rng)};
  };
}

PointSampler quarter_annulus_sampler(double r0, double r1) {
  return [r0, r1](std::mt19937_64& rng) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    double rr = std::sqrt(r0 * r0 + (r1 * r1 - r0 * r0) * U(rng));
    double th = kPi / 2 * U(rng);
    return Vec2{rr * std::cos(th), rr * std::sin(th)};
  };
}

// ---------------------------------------------------------------------------
// Shared run helpers

struct InnerSolver {
  std::unique_ptr<SubdomainSolver> solver;
  FeSubdomain* fe = nullptr;  // set when the solver is an FE subdomain
};

std::vector<double> stack_boundary(const Mesh& mesh, const MeshLocator& loc,
                                   const std::vector<double>& vals,
                                   const std::vector<Vec2>& pts) {
  std::vector<double> row(2 * pts.size());
  for (size_t i = 0; i < pts.size(); ++i) {
    auto u = field_at(mesh, loc, vals, pts[i]);
    row[i] = u[0];
    row[i + pts.size()] = u[1];
  }
  return row;
}

GridState grid_state_from(const Grid2& grid, const Mesh& mono, const MeshLocator& loc,
                          const NewmarkState& st) {
  GridState s = zero_grid_state(grid);
  for (int i = 0; i < grid.n; ++i)
    for (int j = 0; j < grid.n; ++j) {
      int k = i * grid.n + j;
      Vec2 p = grid.point(i, j);
      auto u = field_at(mono, loc, st.u.values, p);
      auto v = field_at(mono, loc, st.v.values, p);
      auto a = field_at(mono, loc, st.a.values, p);
      s.ux[k] = u[0];
      s.uy[k] = u[1];
      s.vx[k] = v[0];
      s.vy[k] = v[1];
      s.ax[k] = a[0];
      s.ay[k] = a[1];
    }
  return s;
}

std::vector<Vec2> grid_nodes(const Grid2& grid) {
  std::vector<Vec2> pts;
  pts.reserve((size_t)grid.n * grid.n);
  for (int i = 0; i < grid.n; ++i)
    for (int j = 0; j < grid.n; ++j) pts.push_back(grid.point(i, j));
  return pts;
}

void save_solution_fields(const CaseConfig& cfg, const FeSubdomain& fe, bool dynamic,
                          const Material& mat, StressLaw law) {
  if (dynamic)
    save_field_csv(cfg.out_dir + "/field_fe.csv", fe.mesh(), fe.displacement(), &fe.velocity(),
                   &fe.acceleration());
  else
    save_field_csv(cfg.out_dir + "/field_fe.csv", fe.mesh(), fe.displacement());
  save_stress_csv(cfg.out_dir + "/stress_fe.csv",
                  compute_stress(fe.mesh(), fe.displacement(), mat, law));
}

void save_peer_field(const std::string& path, const SubdomainSolver& peer, const Mesh& mesh) {
  NodalField f = to_field(mesh, peer.trace(mesh.nodes));
  save_field_csv(path, mesh, f);
}

// ---------------------------------------------------------------------------
// Case runners

RunMetrics run_static_elastic(const CaseConfig& cfg) {
  Stopwatch watch;
  ensure_dir(cfg.out_dir);
  Material mat = Material::from_E_nu(cfg.E, cfg.nu, cfg.rho);
  StaticParts parts = make_static_parts(cfg);

  DirichletSet mono_bc;
  square_pull_bc(parts.mono, cfg.load)(0, mono_bc);
  NodalField mono_u = solve_static_linear(parts.mono, mat, mono_bc);
  std::vector<double> mono_w = lumped_area_weights(parts.mono);

  FeSolverConfig fe_cfg;
  fe_cfg.regime = FeRegime::linear_static;
  fe_cfg.mat = mat;
  fe_cfg.external_bc = square_pull_bc(parts.outer, cfg.load);
  FeSubdomain fe(parts.outer, fe_cfg);

  InnerSolver inner;
  if (cfg.mode == RunMode::fe_fe) {
    FeSolverConfig in_cfg;
    in_cfg.regime = FeRegime::linear_static;
    in_cfg.mat = mat;
    in_cfg.interface_tags = {"Gamma_II_out"};
    auto p = std::make_unique<FeSubdomain>(parts.inner, in_cfg);
    inner.fe = p.get();
    inner.solver = std::move(p);
  } else {
    OperatorPair pair = load_checkpoint(cfg.checkpoint, "operator");
    NoStaticConfig nc;
    nc.boundary_points =
        sample_interface(Circle{{0, 0}, 0.35}, cfg.interface_points, "rim").points;
    if (pair.arch.boundary_features != 2 * (int)nc.boundary_points.size())
      throw CaseError("checkpoint boundary layout does not match mesh.interface_points");
    nc.metric_points = parts.inner.nodes;
    nc.metric_weights.assign(nc.metric_points.size(), 1.0);
    inner.solver = std::make_unique<NoStaticSubdomain>(std::move(pair), std::move(nc));
  }

  CouplingSession session;
  session.fe = &fe;
  session.peer = inner.solver.get();
  session.eps = cfg.eps;
  session.eps_inner = cfg.eps_inner;
  session.rho_r = cfg.relaxation;
  session.max_inner = cfg.max_inner;
  SchwarzResult res = schwarz_static(session);

  HybridField hybrid;
  hybrid.fe = &fe;
  hybrid.peer = inner.solver.get();
  hybrid.peer_weight = overlap_blend(parts.hole, parts.rim);
  auto hybrid_u = hybrid.eval(parts.mono.nodes);

  RunMetrics m = base_metrics(cfg);
  fill_steps(m, res);
  m.l2_rel_error = weighted_rel_error(hybrid_u, mono_u.values, mono_w);
  m.error_per_step = {m.l2_rel_error};

  save_solution_fields(cfg, fe, false, mat, StressLaw::linear);
  save_peer_field(cfg.out_dir + "/field_inner.csv", *inner.solver, parts.inner);
  save_field_csv(cfg.out_dir + "/field_hybrid.csv", parts.mono, to_field(parts.mono, hybrid_u));
  save_field_csv(cfg.out_dir + "/field_oracle.csv", parts.mono, mono_u);
  save_stress_csv(cfg.out_dir + "/stress_oracle.csv",
                  compute_stress(parts.mono, mono_u, mat, StressLaw::linear));
  write_convergence_outputs(cfg.out_dir, res.record);
  write_error_nodes(cfg.out_dir, parts.mono, hybrid_u, mono_u.values);
  write_series(cfg.out_dir, "error_per_step", {to_string(cfg.mode)}, {m.error_per_step}, true,
               "step", "relative L2 error");
  finish_run(m, cfg, watch);
  return m;
}

RunMetrics run_quasi_static_hyper(const CaseConfig& cfg) {
  Stopwatch watch;
  ensure_dir(cfg.out_dir);
  Material mat = Material::from_E_nu(cfg.E, cfg.nu, cfg.rho);
  StaticParts parts = make_static_parts(cfg);
  std::vector<double> mono_w = lumped_area_weights(parts.mono);
  auto mono_sched = square_drive_bc(parts.mono, cfg.load, true);
  NodalField mono_u(parts.mono);
  int newton_seen = 0;

  FeSolverConfig fe_cfg;
  fe_cfg.regime = FeRegime::hyperelastic;
  fe_cfg.mat = mat;
  fe_cfg.external_bc = square_drive_bc(parts.outer, cfg.load, true);
  FeSubdomain fe(parts.outer, fe_cfg);

  InnerSolver inner;
  if (cfg.mode == RunMode::fe_fe) {
    FeSolverConfig in_cfg;
    in_cfg.regime = FeRegime::hyperelastic;
    in_cfg.mat = mat;
    in_cfg.interface_tags = {"Gamma_II_out"};
    auto p = std::make_unique<FeSubdomain>(parts.inner, in_cfg);
    inner.fe = p.get();
    inner.solver = std::move(p);
  } else {
    OperatorPair pair = load_checkpoint(cfg.checkpoint, "operator");
    NoStaticConfig nc;
    nc.boundary_points =
        sample_interface(Circle{{0, 0}, 0.35}, cfg.interface_points, "rim").points;
    if (pair.arch.boundary_features != 2 * (int)nc.boundary_points.size())
      throw CaseError("checkpoint boundary layout does not match mesh.interface_points");
    nc.metric_points = parts.inner.nodes;
    nc.metric_weights.assign(nc.metric_points.size(), 1.0);
    inner.solver = std::make_unique<NoStaticSubdomain>(std::move(pair), std::move(nc));
  }

  CouplingSession session;
  session.fe = &fe;
  session.peer = inner.solver.get();
  session.eps = cfg.eps;
  session.eps_inner = cfg.eps_inner;
  session.rho_r = cfg.relaxation;
  session.max_inner = cfg.max_inner;

  HybridField hybrid;
  hybrid.fe = &fe;
  hybrid.peer = inner.solver.get();
  hybrid.peer_weight = overlap_blend(parts.hole, parts.rim);

  std::vector<double> errs;
  auto on_step = [&](int n) {
    DirichletSet bc;
    mono_sched(n, bc);
    HyperelasticResult r = solve_hyperelastic_step(parts.mono, mat, bc, mono_u, 20);
    mono_u = r.u;
    newton_seen = std::max(newton_seen, r.iterations);
    newton_seen = std::max(newton_seen, fe.last_newton_iterations());
    if (inner.fe) newton_seen = std::max(newton_seen, inner.fe->last_newton_iterations());
    auto hyb = hybrid.eval(parts.mono.nodes);
    errs.push_back(weighted_rel_error(hyb, mono_u.values, mono_w));
    save_field_csv(step_file(cfg.out_dir, "field_step", n), parts.mono,
                   to_field(parts.mono, hyb));
  };
  SchwarzResult res = schwarz_time_marching(session, cfg.steps, on_step);

  RunMetrics m = base_metrics(cfg);
  fill_steps(m, res);
  m.newton_iterations_max = newton_seen;
  m.error_per_step = errs;
  m.l2_rel_error = errs.empty() ? 0.0 : errs.back();

  save_solution_fields(cfg, fe, false, mat, StressLaw::neo_hookean);
  save_peer_field(cfg.out_dir + "/field_inner.csv", *inner.solver, parts.inner);
  save_field_csv(cfg.out_dir + "/field_hybrid.csv", parts.mono,
                 to_field(parts.mono, hybrid.eval(parts.mono.nodes)));
  save_field_csv(cfg.out_dir + "/field_oracle.csv", parts.mono, mono_u);
  save_stress_csv(cfg.out_dir + "/stress_oracle.csv",
                  compute_stress(parts.mono, mono_u, mat, StressLaw::neo_hookean));
  write_convergence_outputs(cfg.out_dir, res.record);
  write_series(cfg.out_dir, "error_per_step", {to_string(cfg.mode)}, {errs}, true, "step",
               "relative L2 error");
  finish_run(m, cfg, watch);
  return m;
}

RunMetrics run_elastodynamic(const CaseConfig& cfg) {
  Stopwatch watch;
  ensure_dir(cfg.out_dir);
  Material mat = Material::from_E_nu(cfg.E, cfg.nu, cfg.rho);
  DynParts parts = make_dyn_parts(cfg);
  double dt = cfg.dt_eff();

  SparseMatrix Km = assemble_stiffness(parts.mono, mat);
  SparseMatrix Mm = assemble_mass(parts.mono, mat);
  DirichletSet mono_bc;
  square_drive_bc(parts.mono, cfg.load, false)(0, mono_bc);
  NewmarkState mono_st;
  mono_st.u = NodalField(parts.mono);
  mono_st.v = NodalField(parts.mono);
  mono_st.a = NodalField(parts.mono);
  mono_st.dt = dt;
  std::vector<double> mono_w = lumped_area_weights(parts.mono);

  FeSolverConfig fe_cfg;
  fe_cfg.regime = FeRegime::newmark;
  fe_cfg.mat = mat;
  fe_cfg.dt = dt;
  fe_cfg.external_bc = square_drive_bc(parts.outer, cfg.load, false);
  FeSubdomain fe(parts.outer, fe_cfg);

  InnerSolver inner;
  if (cfg.mode == RunMode::fe_fe) {
    FeSolverConfig in_cfg;
    in_cfg.regime = FeRegime::newmark;
    in_cfg.mat = mat;
    in_cfg.dt = dt;
    in_cfg.interface_tags = {"left", "right", "top", "bottom"};
    auto p = std::make_unique<FeSubdomain>(parts.inner, in_cfg);
    inner.fe = p.get();
    inner.solver = std::move(p);
  } else {
    OperatorPair pair = load_checkpoint(cfg.checkpoint, "operator");
    NoDynamicConfig nc;
    nc.boundary_points =
        sample_interface(SquareCurve{{0, 0}, 0.7}, cfg.rim_points, "rim").points;
    if (pair.arch.boundary_features != 2 * (int)nc.boundary_points.size())
      throw CaseError("checkpoint boundary layout does not match mesh.rim_points");
    if (!pair.arch.has_grid_branch)
      throw CaseError("checkpoint has no grid branch; train the elastodynamic case");
    nc.grid = Grid2{-0.35, -0.35, 0.35, 0.35, pair.arch.grid_ux.grid};
    nc.dt = dt;
    inner.solver = std::make_unique<NoDynamicSubdomain>(std::move(pair), std::move(nc));
  }

  CouplingSession session;
  session.fe = &fe;
  session.peer = inner.solver.get();
  session.eps = cfg.eps;
  session.eps_inner = cfg.eps_inner;
  session.rho_r = cfg.relaxation;
  session.max_inner = cfg.max_inner;

  HybridField hybrid;
  hybrid.fe = &fe;
  hybrid.peer = inner.solver.get();
  hybrid.peer_weight =
      overlap_blend(RectCurve{{0, 0}, 0.6, 0.6}, SquareCurve{{0, 0}, 0.7});

  std::vector<double> errs;
  auto on_step = [&](int n) {
    mono_st = newmark_step(Mm, Km, mono_st, mono_bc);
    auto hyb = hybrid.eval(parts.mono.nodes);
    errs.push_back(weighted_rel_error(hyb, mono_st.u.values, mono_w));
    save_field_csv(step_file(cfg.out_dir, "field_step", n), parts.mono,
                   to_field(parts.mono, hyb));
  };
  SchwarzResult res = schwarz_time_marching(session, cfg.steps, on_step);

  RunMetrics m = base_metrics(cfg);
  fill_steps(m, res);
  m.error_per_step = errs;
  m.l2_rel_error = errs.empty() ? 0.0 : errs.back();

  save_solution_fields(cfg, fe, true, mat, StressLaw::linear);
  save_peer_field(cfg.out_dir + "/field_inner.csv", *inner.solver, parts.inner);
  save_field_csv(cfg.out_dir + "/field_hybrid.csv", parts.mono,
                 to_field(parts.mono, hybrid.eval(parts.mono.nodes)));
  save_field_csv(cfg.out_dir + "/field_oracle.csv", parts.mono, mono_st.u, &mono_st.v,
                 &mono_st.a);
  save_field_csv(cfg.out_dir + "/state.csv", parts.mono, mono_st.u, &mono_st.v, &mono_st.a);
  write_convergence_outputs(cfg.out_dir, res.record);
  write_series(cfg.out_dir, "error_per_step", {to_string(cfg.mode)}, {errs}, true, "step",
               "relative L2 error");
  finish_run(m, cfg, watch);
  return m;
}

RunMetrics run_expansion(const CaseConfig& cfg) {
  Stopwatch watch;
  ensure_dir(cfg.out_dir);
  Material mat = Material::from_E_nu(cfg.E, cfg.nu, cfg.rho);
  ExpParts parts = make_exp_parts(cfg);
  double dt = cfg.dt_eff();

  SparseMatrix Km = assemble_stiffness(parts.mono, mat);
  SparseMatrix Mm = assemble_mass(parts.mono, mat);
  DirichletSet mono_bc;
  square_drive_bc(parts.mono, cfg.load, false)(0, mono_bc);
  std::vector<double> mono_w = lumped_area_weights(parts.mono);

  NewmarkState mono_st;
  mono_st.u = NodalField(parts.mono);
  mono_st.v = NodalField(parts.mono);
  mono_st.a = NodalField(parts.mono);
  mono_st.dt = dt;
  if (!cfg.state_file.empty()) {
    if (!fs::exists(cfg.state_file)) throw CaseError("state file not found: " + cfg.state_file);
    FieldCsv f = load_field_csv(cfg.state_file);
    if (!f.has_dynamics)
      throw CaseError("state file lacks velocity/acceleration columns: " + cfg.state_file);
    if (f.u.values.size() != 2 * parts.mono.nodes.size())
      throw CaseError("state file does not match the reference mesh: " + cfg.state_file);
    mono_st.u.values = f.u.values;
    mono_st.v.values = f.v.values;
    mono_st.a.values = f.a.values;
  } else {
    for (int s = 0; s < cfg.state_steps; ++s) mono_st = newmark_step(Mm, Km, mono_st, mono_bc);
  }
  save_field_csv(cfg.out_dir + "/state_start.csv", parts.mono, mono_st.u, &mono_st.v,
                 &mono_st.a);
  MeshLocator mono_loc(parts.mono);

  FeSolverConfig fe_cfg;
  fe_cfg.regime = FeRegime::newmark;
  fe_cfg.mat = mat;
  fe_cfg.dt = dt;
  fe_cfg.external_bc = square_drive_bc(parts.outer, cfg.load, false);
  FeSubdomain fe(parts.outer, fe_cfg);
  {
    NodalField u0 = sample_field(parts.mono, mono_loc, mono_st.u.values, parts.outer);
    NodalField v0 = sample_field(parts.mono, mono_loc, mono_st.v.values, parts.outer);
    NodalField a0 = sample_field(parts.mono, mono_loc, mono_st.a.values, parts.outer);
    fe.set_state(u0, &v0, &a0);
  }

  InnerSolver up, low;
  auto make_fe_window = [&](const Mesh& mesh) {
    FeSolverConfig c;
    c.regime = FeRegime::newmark;
    c.mat = mat;
    c.dt = dt;
    c.interface_tags = {"left", "right", "top", "bottom"};
    auto p = std::make_unique<FeSubdomain>(mesh, c);
    NodalField u0 = sample_field(parts.mono, mono_loc, mono_st.u.values, mesh);
    NodalField v0 = sample_field(parts.mono, mono_loc, mono_st.v.values, mesh);
    NodalField a0 = sample_field(parts.mono, mono_loc, mono_st.a.values, mesh);
    p->set_state(u0, &v0, &a0);
    return p;
  };
  auto make_no_window = [&](const std::string& ckpt, const char* role, Vec2 center) {
    OperatorPair pair = load_checkpoint(ckpt, role);
    NoDynamicConfig nc;
    nc.boundary_points =
        sample_interface(SquareCurve{center, 0.7}, cfg.rim_points, "rim").points;
    if (pair.arch.boundary_features != 2 * (int)nc.boundary_points.size())
      throw CaseError("checkpoint boundary layout does not match mesh.rim_points");
    if (!pair.arch.has_grid_branch)
      throw CaseError("checkpoint has no grid branch; train the expansion case");
    nc.grid = Grid2{center.x - 0.35, center.y - 0.35, center.x + 0.35, center.y + 0.35,
                    pair.arch.grid_ux.grid};
    nc.dt = dt;
    auto p = std::make_unique<NoDynamicSubdomain>(std::move(pair), std::move(nc));
    p->set_state(grid_state_from(p->state().grid, parts.mono, mono_loc, mono_st));
    return p;
  };
  if (cfg.mode == RunMode::fe_fe) {
    auto pu = make_fe_window(parts.upper);
    up.fe = pu.get();
    up.solver = std::move(pu);
    auto pl = make_fe_window(parts.lower);
    low.fe = pl.get();
    low.solver = std::move(pl);
  } else {
    up.solver = make_no_window(cfg.checkpoint, "upper operator", {0, 0.3});
    low.solver = make_no_window(cfg.checkpoint_second, "lower operator", {0, -0.3});
  }

  CouplingSession session;
  session.fe = &fe;
  session.peer = up.solver.get();
  session.peer2 = low.solver.get();
  session.eps = cfg.eps;
  session.eps_inner = cfg.eps_inner;
  session.rho_r = cfg.relaxation;
  session.max_inner = cfg.max_inner;
  session.max_no_inner = cfg.max_inner;

  auto strictly_inside = [](Vec2 c, const Vec2& p) {
    return std::max(std::abs(p.x - c.x), std::abs(p.y - c.y)) < 0.35 - 1e-9;
  };
  const auto& up_pts = up.solver->interface_points();
  for (size_t i = 0; i < up_pts.size(); ++i)
    (strictly_inside({0, -0.3}, up_pts[i]) ? session.peer_from_peer2 : session.peer_from_fe)
        .push_back((int)i);
  const auto& low_pts = low.solver->interface_points();
  for (size_t i = 0; i < low_pts.size(); ++i)
    (strictly_inside({0, 0.3}, low_pts[i]) ? session.peer2_from_peer : session.peer2_from_fe)
        .push_back((int)i);
  for (const Vec2& p : fe.interface_points())
    session.fe_blend_w1.push_back(std::clamp((p.y + 0.05) / 0.1, 0.0, 1.0));

  HybridField hybrid;
  hybrid.fe = &fe;
  hybrid.peer = up.solver.get();
  hybrid.peer2 = low.solver.get();
  hybrid.peer_weight = [](const Vec2& p) {
    double du = 0.35 - std::max(std::abs(p.x), std::abs(p.y - 0.3));
    double dl = 0.35 - std::max(std::abs(p.x), std::abs(p.y + 0.3));
    return std::clamp(std::max(du, dl) / 0.05, 0.0, 1.0);
  };
  hybrid.peer_split = [](const Vec2& p) { return std::clamp((p.y + 0.05) / 0.1, 0.0, 1.0); };

  std::vector<double> errs;
  auto on_step = [&](int n) {
    mono_st = newmark_step(Mm, Km, mono_st, mono_bc);
    auto hyb = hybrid.eval(parts.mono.nodes);
    errs.push_back(weighted_rel_error(hyb, mono_st.u.values, mono_w));
    save_field_csv(step_file(cfg.out_dir, "field_step", n), parts.mono,
                   to_field(parts.mono, hyb));
  };
  SchwarzResult res = schwarz_multi_no(session, cfg.steps, on_step);

  RunMetrics m = base_metrics(cfg);
  fill_steps(m, res);
  m.error_per_step = errs;
  m.l2_rel_error = errs.empty() ? 0.0 : errs.back();

  save_solution_fields(cfg, fe, true, mat, StressLaw::linear);
  save_peer_field(cfg.out_dir + "/field_inner_upper.csv", *up.solver, parts.upper);
  save_peer_field(cfg.out_dir + "/field_inner_lower.csv", *low.solver, parts.lower);
  save_field_csv(cfg.out_dir + "/field_hybrid.csv", parts.mono,
                 to_field(parts.mono, hybrid.eval(parts.mono.nodes)));
  save_field_csv(cfg.out_dir + "/field_oracle.csv", parts.mono, mono_st.u, &mono_st.v,
                 &mono_st.a);
  save_field_csv(cfg.out_dir + "/state.csv", parts.mono, mono_st.u, &mono_st.v, &mono_st.a);
  write_convergence_outputs(cfg.out_dir, res.record);
  write_series(cfg.out_dir, "error_per_step", {to_string(cfg.mode)}, {errs}, true, "step",
               "relative L2 error");
  finish_run(m, cfg, watch);
  return m;
}

RunMetrics run_cylinder(const CaseConfig& cfg) {
  Stopwatch watch;
  ensure_dir(cfg.out_dir);
  Material mat = Material::from_E_nu(cfg.E, cfg.nu, cfg.rho);
  CylParts parts = make_cyl_parts(cfg);

  DirichletSet mono_bc;
  annulus_bc(parts.mono, cfg.load, true)(0, mono_bc);
  NodalField mono_u = solve_static_linear(parts.mono, mat, mono_bc);
  std::vector<double> mono_w = lumped_area_weights(parts.mono);

  FeSolverConfig fe_cfg;
  fe_cfg.regime = FeRegime::linear_static;
  fe_cfg.mat = mat;
  fe_cfg.external_bc = annulus_bc(parts.outer, 0.0, false);
  fe_cfg.interface_tags = {"inner"};
  FeSubdomain fe(parts.outer, fe_cfg);

  InnerSolver inner;
  if (cfg.mode == RunMode::fe_fe) {
    FeSolverConfig in_cfg;
    in_cfg.regime = FeRegime::linear_static;
    in_cfg.mat = mat;
    in_cfg.external_bc = annulus_bc(parts.window, cfg.load, true);
    in_cfg.interface_tags = {"outer"};
    auto p = std::make_unique<FeSubdomain>(parts.window, in_cfg);
    inner.fe = p.get();
    inner.solver = std::move(p);
  } else {
    OperatorPair pair = load_checkpoint(cfg.checkpoint, "operator");
    auto arc2 = sample_interface(ArcCurve{{0, 0}, 2.0, 0, kPi / 2}, cfg.interface_points,
                                 "coupling_arc")
                    .points;
    auto arc1 =
        sample_interface(ArcCurve{{0, 0}, 1.0, 0, kPi / 2}, cfg.arc_fixed_points, "driven_arc")
            .points;
    NoStaticConfig nc;
    nc.boundary_points = arc2;
    nc.boundary_points.insert(nc.boundary_points.end(), arc1.begin(), arc1.end());
    if (pair.arch.boundary_features != 2 * (int)nc.boundary_points.size())
      throw CaseError(
          "checkpoint boundary layout does not match mesh.interface_points + "
          "mesh.arc_fixed_points");
    for (size_t i = 0; i < arc2.size(); ++i) nc.peer_fed.push_back((int)i);
    double load = cfg.load;
    nc.external_value = [load](int, const Vec2& p) {
      return std::array<double, 2>{load * p.x * p.x, load * p.y * p.y};
    };
    nc.metric_points = parts.window.nodes;
    nc.metric_weights.assign(nc.metric_points.size(), 1.0);
    inner.solver = std::make_unique<NoStaticSubdomain>(std::move(pair), std::move(nc));
  }

  CouplingSession session;
  session.fe = &fe;
  session.peer = inner.solver.get();
  session.eps = cfg.eps;
  session.eps_inner = cfg.eps_inner;
  session.rho_r = cfg.relaxation;
  session.max_inner = cfg.max_inner;
  SchwarzResult res = schwarz_static(session);

  HybridField hybrid;
  hybrid.fe = &fe;
  hybrid.peer = inner.solver.get();
  hybrid.peer_weight =
      overlap_blend(ArcCurve{{0, 0}, 1.8, 0, kPi / 2}, ArcCurve{{0, 0}, 2.0, 0, kPi / 2});
  auto hybrid_u = hybrid.eval(parts.mono.nodes);

  RunMetrics m = base_metrics(cfg);
  fill_steps(m, res);
  m.l2_rel_error = weighted_rel_error(hybrid_u, mono_u.values, mono_w);
  m.error_per_step = {m.l2_rel_error};

  save_solution_fields(cfg, fe, false, mat, StressLaw::linear);
  save_peer_field(cfg.out_dir + "/field_inner.csv", *inner.solver, parts.window);
  save_field_csv(cfg.out_dir + "/field_hybrid.csv", parts.mono, to_field(parts.mono, hybrid_u));
  save_field_csv(cfg.out_dir + "/field_oracle.csv", parts.mono, mono_u);
  save_stress_csv(cfg.out_dir + "/stress_oracle.csv",
                  compute_stress(parts.mono, mono_u, mat, StressLaw::linear));
  write_convergence_outputs(cfg.out_dir, res.record);
  write_error_nodes(cfg.out_dir, parts.mono, hybrid_u, mono_u.values);
  write_series(cfg.out_dir, "error_per_step", {to_string(cfg.mode)}, {m.error_per_step}, true,
               "step", "relative L2 error");
  finish_run(m, cfg, watch);
  return m;
}

// ---------------------------------------------------------------------------
// Training flows

struct WindowSpec {
  Grid2 grid;
  std::vector<Vec2> rim;
};

std::vector<DynamicDataset> build_dynamic_datasets(const CaseConfig& cfg, const Mesh& mono,
                                                   const SparseMatrix& M, const SparseMatrix& K,
                                                   const std::vector<WindowSpec>& wins,
                                                   unsigned long long seed0) {
  double dt = cfg.dt_eff();
  MeshLocator loc(mono);
  std::vector<int> left = tagged_nodes(mono, {"left"});
  std::vector<int> bottom = tagged_nodes(mono, {"bottom"});
  std::vector<int> top = tagged_nodes(mono, {"top"});
  std::vector<int> right = tagged_nodes(mono, {"right"});
  std::vector<Vec2> top_pos, right_pos;
  for (int n : top) top_pos.push_back(mono.nodes[n]);
  for (int n : right) right_pos.push_back(mono.nodes[n]);

  double var = cfg.grf_sigma * cfg.grf_sigma;
  auto prof_top = sample_on_curve(top_pos, {cfg.grf_length, var, seed0}, cfg.grf_samples);
  auto prof_right = sample_on_curve(right_pos, {cfg.grf_length, var, seed0 + 1}, cfg.grf_samples);

  std::vector<DynamicDataset> out(wins.size());
  for (size_t w = 0; w < wins.size(); ++w) {
    out[w].grid = wins[w].grid;
    out[w].boundary_points = wins[w].rim;
    out[w].dt = dt;
  }

  for (int r = 0; r < cfg.grf_samples; ++r) {
    DirichletSet bc;
    fix_nodes(bc, left);
    fix_nodes(bc, bottom);
    for (size_t i = 0; i < top.size(); ++i) bc.add(2 * top[i] + 1, prof_top[r][i]);
    for (size_t i = 0; i < right.size(); ++i) bc.add(2 * right[i], prof_right[r][i]);

    NewmarkState st;
    st.u = NodalField(mono);
    st.v = NodalField(mono);
    st.a = NodalField(mono);
    st.dt = dt;
    int skip = (r % 2 == 0) ? cfg.skip_steps : 0;
    for (int s = 0; s < skip + cfg.record_steps; ++s) {
      NewmarkState prev = st;
      st = newmark_step(M, K, st, bc);
      if (s < skip) continue;
      for (size_t w = 0; w < wins.size(); ++w) {
        const WindowSpec& win = wins[w];
        DynamicSample smp;
        smp.grid4 = make_grid4(grid_state_from(win.grid, mono, loc, prev), dt);
        smp.bc_values = stack_boundary(mono, loc, st.u.values, win.rim);
        smp.target_ux.resize((size_t)win.grid.n * win.grid.n);
        smp.target_uy.resize(smp.target_ux.size());
        for (int i = 0; i < win.grid.n; ++i)
          for (int j = 0; j < win.grid.n; ++j) {
            auto u = field_at(mono, loc, st.u.values, win.grid.point(i, j));
            smp.target_ux[(size_t)i * win.grid.n + j] = u[0];
            smp.target_uy[(size_t)i * win.grid.n + j] = u[1];
          }
        out[w].samples.push_back(std::move(smp));
      }
    }
  }
  return out;
}

double one_step_holdout(const OperatorPair& pair, const DynamicDataset& data) {
  std::vector<Vec2> pts = grid_nodes(data.grid);
  double sum = 0;
  int cnt = 0;
  for (const DynamicSample& s : data.samples) {
    std::vector<std::array<double, 2>> truth(pts.size());
    for (size_t k = 0; k < pts.size(); ++k) truth[k] = {s.target_ux[k], s.target_uy[k]};
    BranchInputs in;
    in.boundary = s.bc_values;
    in.grid4 = s.grid4;
    auto g = guarded_rel_l2(evaluate(pair, in, pts), truth);
    if (g[1] > 0) {
      sum += g[0];
      ++cnt;
    }
  }
  return cnt ? sum / cnt : 0.0;
}

TrainMetrics train_static_family(const CaseConfig& cfg) {
  Stopwatch watch;
  ensure_dir(cfg.out_dir);
  Material mat = Material::from_E_nu(cfg.E, cfg.nu, cfg.rho);
  bool hyper = cfg.id == CaseId::quasi_static_hyper;

  auto pts = sample_interface(Circle{{0, 0}, 0.35}, cfg.interface_points, "rim").points;
  double var = cfg.grf_sigma * cfg.grf_sigma;
  auto gux = sample_on_curve(pts, {cfg.grf_length, var, cfg.seed}, cfg.grf_samples);
  auto guy = sample_on_curve(pts, {cfg.grf_length, var, cfg.seed + 1}, cfg.grf_samples);

  StaticDataset data;
  data.boundary_points = pts;
  for (int i = 0; i < cfg.grf_samples; ++i) {
    std::vector<double> row = gux[i];
    row.insert(row.end(), guy[i].begin(), guy[i].end());
    data.bc_values.push_back(std::move(row));
  }

  OperatorPair pair =
      make_static_pair(2 * (int)pts.size(), net_widths(cfg), net_widths(cfg), cfg.q, cfg.seed + 2);
  TrainConfig tc = base_train_config(cfg, mat, cfg.out_dir + "/history.csv");
  TrainResult tr = train_static(pair, data, hyper ? LossKind::hyperelastic : LossKind::linear_static,
                                disk_sampler({0, 0}, 0.35), tc);
  ensure_parent(cfg.checkpoint);
  save_pair(cfg.checkpoint, pair);
  write_history_plot(cfg.out_dir, "history.csv", "history");

  Mesh disk = build_disk(0.35, cfg.rings);
  std::vector<double> w = lumped_area_weights(disk);
  std::vector<int> rim_nodes = tagged_nodes(disk, {"Gamma_II_out"});
  auto hux = sample_on_curve(pts, {cfg.grf_length, var, cfg.seed + 1000}, cfg.holdout);
  auto huy = sample_on_curve(pts, {cfg.grf_length, var, cfg.seed + 1001}, cfg.holdout);
  double sum = 0;
  for (int h = 0; h < cfg.holdout; ++h) {
    DirichletSet bc;
    for (int n : rim_nodes) {
      double t = circle_param({0, 0}, disk.nodes[n]);
      bc.add(2 * n, periodic_profile(hux[h], t));
      bc.add(2 * n + 1, periodic_profile(huy[h], t));
    }
    NodalField truth = hyper ? solve_hyperelastic_step(disk, mat, bc, NodalField(disk), 20).u
                             : solve_static_linear(disk, mat, bc);
    BranchInputs in;
    in.boundary = hux[h];
    in.boundary.insert(in.boundary.end(), huy[h].begin(), huy[h].end());
    sum += weighted_rel_error(evaluate(pair, in, disk.nodes), truth.values, w);
  }

  TrainMetrics tm;
  tm.case_name = to_string(cfg.id);
  tm.iterations = cfg.iterations;
  tm.initial_loss = tr.initial_loss;
  tm.final_loss = tr.final_loss;
  tm.holdout_rel_error = cfg.holdout > 0 ? sum / cfg.holdout : 0.0;
  tm.checkpoint = cfg.checkpoint;
  tm.seconds = watch.seconds();
  write_text(cfg.out_dir + "/train_metrics.json", tm.to_json());
  return tm;
}

TrainMetrics train_cylinder(const CaseConfig& cfg) {
  Stopwatch watch;
  ensure_dir(cfg.out_dir);
  Material mat = Material::from_E_nu(cfg.E, cfg.nu, cfg.rho);

  auto arc2 =
      sample_interface(ArcCurve{{0, 0}, 2.0, 0, kPi / 2}, cfg.interface_points, "coupling_arc")
          .points;
  auto arc1 =
      sample_interface(ArcCurve{{0, 0}, 1.0, 0, kPi / 2}, cfg.arc_fixed_points, "driven_arc")
          .points;
  double var = cfg.grf_sigma * cfg.grf_sigma;
  auto gux = sample_on_curve(arc2, {cfg.grf_length, var, cfg.seed}, cfg.grf_samples);
  auto guy = sample_on_curve(arc2, {cfg.grf_length, var, cfg.seed + 1}, cfg.grf_samples);

  StaticDataset data;
  data.boundary_points = arc2;
  data.boundary_points.insert(data.boundary_points.end(), arc1.begin(), arc1.end());
  auto stack_row = [&](const std::vector<double>& vx, const std::vector<double>& vy) {
    std::vector<double> row = vx;
    for (const Vec2& p : arc1) row.push_back(cfg.load * p.x * p.x);
    row.insert(row.end(), vy.begin(), vy.end());
    for (const Vec2& p : arc1) row.push_back(cfg.load * p.y * p.y);
    return row;
  };
  for (int i = 0; i < cfg.grf_samples; ++i) data.bc_values.push_back(stack_row(gux[i], guy[i]));
  data.fix_ux_points = sample_interface(SegmentCurve{{0, 1}, {0, 2}}, 12, "left_rollers").points;
  data.fix_uy_points =
      sample_interface(SegmentCurve{{1, 0}, {2, 0}}, 12, "bottom_rollers").points;

  OperatorPair pair = make_static_pair(2 * (int)data.boundary_points.size(), net_widths(cfg),
                                       net_widths(cfg), cfg.q, cfg.seed + 2);
  TrainConfig tc = base_train_config(cfg, mat, cfg.out_dir + "/history.csv");
  TrainResult tr =
      train_static(pair, data, LossKind::linear_static, quarter_annulus_sampler(1.0, 2.0), tc);
  ensure_parent(cfg.checkpoint);
  save_pair(cfg.checkpoint, pair);
  write_history_plot(cfg.out_dir, "history.csv", "history");

  Mesh window = build_quarter_annulus(1.0, 2.0, cfg.fine_res);
  std::vector<double> w = lumped_area_weights(window);
  std::vector<int> outer_nodes = tagged_nodes(window, {"outer"});
  auto hux = sample_on_curve(arc2, {cfg.grf_length, var, cfg.seed + 1000}, cfg.holdout);
  auto huy = sample_on_curve(arc2, {cfg.grf_length, var, cfg.seed + 1001}, cfg.holdout);
  auto rollers = annulus_bc(window, cfg.load, true);
  double sum = 0;
  for (int h = 0; h < cfg.holdout; ++h) {
    DirichletSet bc;
    rollers(0, bc);
    for (int n : outer_nodes) {
      double t = quarter_arc_param(window.nodes[n]);
      bc.add(2 * n, open_profile(hux[h], t));
      bc.add(2 * n + 1, open_profile(huy[h], t));
    }
    NodalField truth = solve_static_linear(window, mat, bc);
    BranchInputs in;
    in.boundary = stack_row(hux[h], huy[h]);
    sum += weighted_rel_error(evaluate(pair, in, window.nodes), truth.values, w);
  }

  TrainMetrics tm;
  tm.case_name = to_string(cfg.id);
  tm.iterations = cfg.iterations;
  tm.initial_loss = tr.initial_loss;
  tm.final_loss = tr.final_loss;
  tm.holdout_rel_error = cfg.holdout > 0 ? sum / cfg.holdout : 0.0;
  tm.checkpoint = cfg.checkpoint;
  tm.seconds = watch.seconds();
  write_text(cfg.out_dir + "/train_metrics.json", tm.to_json());
  return tm;
}

TrainMetrics train_elastodynamic(const CaseConfig& cfg) {
  Stopwatch watch;
  ensure_dir(cfg.out_dir);
  Material mat = Material::from_E_nu(cfg.E, cfg.nu, cfg.rho);
  Mesh mono = build_square(2.0, cfg.dyn_divisions);
  SparseMatrix K = assemble_stiffness(mono, mat);
  SparseMatrix M = assemble_mass(mono, mat);

  WindowSpec win;
  win.grid = Grid2{-0.35, -0.35, 0.35, 0.35, cfg.grid_n};
  win.rim = sample_interface(SquareCurve{{0, 0}, 0.7}, cfg.rim_points, "rim").points;
  DynamicDataset data = std::move(build_dynamic_datasets(cfg, mono, M, K, {win}, cfg.seed)[0]);

  OperatorPair pair =
      make_dynamic_pair(2 * (int)win.rim.size(), net_widths(cfg), net_widths(cfg), cfg.q,
                        cfg.grid_n, cfg.cnn_hidden, cfg.dt_eff(), cfg.seed + 2);
  TrainConfig tc = base_train_config(cfg, mat, cfg.out_dir + "/history.csv");
  TrainResult tr = train_dynamic(pair, data, box_sampler(-0.35, -0.35, 0.35, 0.35), tc);
  ensure_parent(cfg.checkpoint);
  save_pair(cfg.checkpoint, pair);
  write_history_plot(cfg.out_dir, "history.csv", "history");

  TrainMetrics tm;
  tm.case_name = to_string(cfg.id);
  tm.iterations = cfg.iterations;
  tm.initial_loss = tr.initial_loss;
  tm.final_loss = tr.final_loss;
  tm.checkpoint = cfg.checkpoint;

  if (!cfg.checkpoint_baseline.empty()) {
    OperatorPair base = make_grid_only_pair(net_widths(cfg), cfg.q, cfg.grid_n, cfg.cnn_hidden,
                                            cfg.dt_eff(), cfg.seed + 4);
    TrainConfig tb = base_train_config(cfg, mat, cfg.out_dir + "/history_baseline.csv");
    tb.seed = cfg.seed + 5;
    train_supervised_grid(base, data, tb);
    ensure_parent(cfg.checkpoint_baseline);
    save_pair(cfg.checkpoint_baseline, base);
    write_history_plot(cfg.out_dir, "history_baseline.csv", "history_baseline");
  }

  CaseConfig hc = cfg;
  hc.grf_samples = 2;
  DynamicDataset hold =
      std::move(build_dynamic_datasets(hc, mono, M, K, {win}, cfg.seed + 1000)[0]);
  tm.holdout_rel_error = one_step_holdout(pair, hold);
  tm.seconds = watch.seconds();
  write_text(cfg.out_dir + "/train_metrics.json", tm.to_json());
  return tm;
}

TrainMetrics train_expansion(const CaseConfig& cfg) {
  Stopwatch watch;
  ensure_dir(cfg.out_dir);
  Material mat = Material::from_E_nu(cfg.E, cfg.nu, cfg.rho);
  Mesh mono = build_square(2.0, cfg.dyn_divisions);
  SparseMatrix K = assemble_stiffness(mono, mat);
  SparseMatrix M = assemble_mass(mono, mat);

  WindowSpec up, low;
  up.grid = Grid2{-0.35, -0.05, 0.35, 0.65, cfg.grid_n};
  up.rim = sample_interface(SquareCurve{{0, 0.3}, 0.7}, cfg.rim_points, "rim").points;
  low.grid = Grid2{-0.35, -0.65, 0.35, 0.05, cfg.grid_n};
  low.rim = sample_interface(SquareCurve{{0, -0.3}, 0.7}, cfg.rim_points, "rim").points;
  auto data = build_dynamic_datasets(cfg, mono, M, K, {up, low}, cfg.seed);

  OperatorPair upper =
      make_dynamic_pair(2 * (int)up.rim.size(), net_widths(cfg), net_widths(cfg), cfg.q,
                        cfg.grid_n, cfg.cnn_hidden, cfg.dt_eff(), cfg.seed + 2);
  TrainConfig tc = base_train_config(cfg, mat, cfg.out_dir + "/history.csv");
  TrainResult tr = train_dynamic(upper, data[0], box_sampler(-0.35, -0.05, 0.35, 0.65), tc);
  ensure_parent(cfg.checkpoint);
  save_pair(cfg.checkpoint, upper);
  write_history_plot(cfg.out_dir, "history.csv", "history");

  // Transfer learning: start from the trained upper model, keep every branch
  // network frozen and refit the trunks on the lower window with a quarter of
  // the iteration budget.
  OperatorPair lower = upper;
  TrainConfig tl = base_train_config(cfg, mat, cfg.out_dir + "/history_lower.csv");
  tl.iterations = std::max(1, cfg.iterations / 4);
  tl.seed = cfg.seed + 6;
  tl.frozen_prefixes = branch_prefixes(lower);
  TrainResult tr2 = train_dynamic(lower, data[1], box_sampler(-0.35, -0.65, 0.35, 0.05), tl);
  if (cfg.checkpoint_second.empty()) throw CaseError("no lower-window checkpoint configured");
  ensure_parent(cfg.checkpoint_second);
  save_pair(cfg.checkpoint_second, lower);
  write_history_plot(cfg.out_dir, "history_lower.csv", "history_lower");
  (void)tr2;

  CaseConfig hc = cfg;
  hc.grf_samples = 2;
  auto hold = build_dynamic_datasets(hc, mono, M, K, {up, low}, cfg.seed + 1000);

  TrainMetrics tm;
  tm.case_name = to_string(cfg.id);
  tm.iterations = cfg.iterations;
  tm.initial_loss = tr.initial_loss;
  tm.final_loss = tr.final_loss;
  tm.holdout_rel_error = one_step_holdout(upper, hold[0]);
  tm.holdout_rel_error_second = one_step_holdout(lower, hold[1]);
  tm.checkpoint = cfg.checkpoint;
  tm.seconds = watch.seconds();
  write_text(cfg.out_dir + "/train_metrics.json", tm.to_json());
  return tm;
}

// ---------------------------------------------------------------------------
// Rollout comparison (elastodynamic)

void rollout_curves(const CaseConfig& cfg, CompareReport& rep) {
  if (cfg.checkpoint.empty() || !fs::exists(cfg.checkpoint)) return;
  OperatorPair pair = load_pair(cfg.checkpoint);
  bool have_base = !cfg.checkpoint_baseline.empty() && fs::exists(cfg.checkpoint_baseline);
  OperatorPair base;
  if (have_base) base = load_pair(cfg.checkpoint_baseline);

  Material mat = Material::from_E_nu(cfg.E, cfg.nu, cfg.rho);
  Mesh mono = build_square(2.0, cfg.dyn_divisions);
  SparseMatrix K = assemble_stiffness(mono, mat);
  SparseMatrix M = assemble_mass(mono, mat);
  MeshLocator loc(mono);
  DirichletSet bc;
  square_drive_bc(mono, cfg.load, false)(0, bc);

  Grid2 grid{-0.35, -0.35, 0.35, 0.35, pair.arch.grid_ux.grid};
  auto rim = sample_interface(SquareCurve{{0, 0}, 0.7}, cfg.rim_points, "rim").points;
  if (pair.arch.boundary_features != 2 * (int)rim.size())
    throw CaseError("checkpoint boundary layout does not match mesh.rim_points");
  double dt = cfg.dt_eff();

  int warm = std::min(cfg.skip_steps, std::max(0, cfg.steps - 1));
  NewmarkState st;
  st.u = NodalField(mono);
  st.v = NodalField(mono);
  st.a = NodalField(mono);
  st.dt = dt;
  for (int s = 0; s < warm; ++s) st = newmark_step(M, K, st, bc);

  GridState pi_state = grid_state_from(grid, mono, loc, st);
  GridState base_state = pi_state;
  std::vector<Vec2> pts = grid_nodes(grid);
  for (int n = warm; n < cfg.steps; ++n) {
    st = newmark_step(M, K, st, bc);
    std::vector<std::array<double, 2>> truth(pts.size());
    for (size_t k = 0; k < pts.size(); ++k) {
      auto u = field_at(mono, loc, st.u.values, pts[k]);
      truth[k] = {u[0], u[1]};
    }
    std::vector<double> bc_now = stack_boundary(mono, loc, st.u.values, rim);
    pi_state = time_march_predict(pair, pi_state, bc_now, dt);
    std::vector<std::array<double, 2>> pred(pts.size());
    for (size_t k = 0; k < pts.size(); ++k) pred[k] = {pi_state.ux[k], pi_state.uy[k]};
    rep.rollout_error_per_step.push_back(guarded_rel_l2(pred, truth)[0]);
    if (have_base) {
      base_state = time_march_predict(base, base_state, {}, dt);
      for (size_t k = 0; k < pts.size(); ++k) pred[k] = {base_state.ux[k], base_state.uy[k]};
      rep.baseline_error_per_step.push_back(guarded_rel_l2(pred, truth)[0]);
    }
  }

  std::vector<std::string> titles = {"boundary-fed operator"};
  std::vector<std::vector<double>> cols = {rep.rollout_error_per_step};
  if (have_base) {
    titles.push_back("data-driven baseline");
    cols.push_back(rep.baseline_error_per_step);
  }
  write_series(cfg.out_dir, "rollout", titles, cols, true, "rollout step", "relative L2 error");
}

// ---------------------------------------------------------------------------
// Oracle runs

RunMetrics oracle_static(const CaseConfig& cfg, RunMetrics m, const Stopwatch& watch) {
  Material mat = Material::from_E_nu(cfg.E, cfg.nu, cfg.rho);
  Mesh mono = cfg.id == CaseId::cylinder ? build_quarter_annulus(1.0, 4.0, cfg.annulus_res)
                                         : build_square(2.0, cfg.divisions);
  DirichletSet bc;
  if (cfg.id == CaseId::cylinder)
    annulus_bc(mono, cfg.load, true)(0, bc);
  else
    square_pull_bc(mono, cfg.load)(0, bc);
  NodalField u = solve_static_linear(mono, mat, bc);
  save_field_csv(cfg.out_dir + "/field_oracle.csv", mono, u);
  save_stress_csv(cfg.out_dir + "/stress_oracle.csv",
                  compute_stress(mono, u, mat, StressLaw::linear));
  m.steps = 1;
  finish_run(m, cfg, watch);
  return m;
}

RunMetrics oracle_hyper(const CaseConfig& cfg, RunMetrics m, const Stopwatch& watch) {
  Material mat = Material::from_E_nu(cfg.E, cfg.nu, cfg.rho);
  Mesh mono = build_square(2.0, cfg.divisions);
  auto sched = square_drive_bc(mono, cfg.load, true);
  NodalField u(mono);
  for (int n = 0; n < cfg.steps; ++n) {
    DirichletSet bc;
    sched(n, bc);
    HyperelasticResult r = solve_hyperelastic_step(mono, mat, bc, u, 20);
    u = r.u;
    m.newton_iterations_max = std::max(m.newton_iterations_max, r.iterations);
    save_field_csv(step_file(cfg.out_dir, "field_step", n), mono, u);
  }
  save_field_csv(cfg.out_dir + "/field_oracle.csv", mono, u);
  save_stress_csv(cfg.out_dir + "/stress_oracle.csv",
                  compute_stress(mono, u, mat, StressLaw::neo_hookean));
  m.steps = cfg.steps;
  finish_run(m, cfg, watch);
  return m;
}

RunMetrics oracle_dynamic(const CaseConfig& cfg, RunMetrics m, const Stopwatch& watch) {
  Material mat = Material::from_E_nu(cfg.E, cfg.nu, cfg.rho);
  Mesh mono = build_square(2.0, cfg.dyn_divisions);
  SparseMatrix K = assemble_stiffness(mono, mat);
  SparseMatrix M = assemble_mass(mono, mat);
  DirichletSet bc;
  square_drive_bc(mono, cfg.load, false)(0, bc);
  NewmarkState st;
  st.u = NodalField(mono);
  st.v = NodalField(mono);
  st.a = NodalField(mono);
  st.dt = cfg.dt_eff();

  int pre = cfg.id == CaseId::expansion ? cfg.state_steps : 0;
  for (int s = 0; s < pre; ++s) st = newmark_step(M, K, st, bc);
  if (cfg.id == CaseId::expansion)
    save_field_csv(cfg.out_dir + "/state.csv", mono, st.u, &st.v, &st.a);
  for (int n = 0; n < cfg.steps; ++n) {
    st = newmark_step(M, K, st, bc);
    save_field_csv(step_file(cfg.out_dir, "field_step", n), mono, st.u);
  }
  save_field_csv(cfg.out_dir + "/field_oracle.csv", mono, st.u, &st.v, &st.a);
  if (cfg.id == CaseId::elastodynamic)
    save_field_csv(cfg.out_dir + "/state.csv", mono, st.u, &st.v, &st.a);
  m.steps = cfg.steps;
  finish_run(m, cfg, watch);
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config parsing

std::string ConfigMap::str(const std::string& key, const std::string& fallback) const {
  auto it = values.find(key);
  return it == values.end() ? fallback : it->second;
}

double ConfigMap::num(const std::string& key, double fallback) const {
  auto it = values.find(key);
  if (it == values.end()) return fallback;
  try {
    size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw CaseError("config value for " + key + " is not a number: " + it->second);
  }
}

int ConfigMap::integer(const std::string& key, int fallback) const {
  auto it = values.find(key);
  if (it == values.end()) return fallback;
  try {
    size_t pos = 0;
    long v = std::stol(it->second, &pos, 10);
    if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
    return (int)v;
  } catch (const std::exception&) {
    throw CaseError("config value for " + key + " is not an integer: " + it->second);
  }
}

ConfigMap parse_config_text(const std::string& text) {
  ConfigMap m;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw CaseError("config line " + std::to_string(lineno) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw CaseError("config line " + std::to_string(lineno) + ": empty section name");
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw CaseError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty())
      throw CaseError("config line " + std::to_string(lineno) + ": empty key");
    m.values[section.empty() ? key : section + "." + key] = val;
  }
  return m;
}

ConfigMap load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CaseError("cannot read config file: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return parse_config_text(os.str());
}

CaseId case_id_from_name(const std::string& name) {
  if (name == "static_elastic" || name == "static") return CaseId::static_elastic;
  if (name == "quasi_static_hyper" || name == "hyper") return CaseId::quasi_static_hyper;
  if (name == "elastodynamic" || name == "dynamic") return CaseId::elastodynamic;
  if (name == "expansion") return CaseId::expansion;
  if (name == "cylinder") return CaseId::cylinder;
  throw CaseError("unknown case id: " + name);
}

RunMode run_mode_from_name(const std::string& name) {
  if (name == "fe_fe") return RunMode::fe_fe;
  if (name == "fe_no") return RunMode::fe_no;
  throw CaseError("unknown mode: " + name + " (expected fe_fe or fe_no)");
}

std::string to_string(CaseId id) {
  switch (id) {
    case CaseId::static_elastic: return "static_elastic";
    case CaseId::quasi_static_hyper: return "quasi_static_hyper";
    case CaseId::elastodynamic: return "elastodynamic";
    case CaseId::expansion: return "expansion";
    case CaseId::cylinder: return "cylinder";
  }
  return "static_elastic";
}

std::string to_string(RunMode mode) { return mode == RunMode::fe_fe ? "fe_fe" : "fe_no"; }

CaseConfig default_case_config(CaseId id) {
  CaseConfig c;
  c.id = id;
  c.out_dir = "out/" + to_string(id);
  c.checkpoint = "models/" + to_string(id) + ".txt";
  switch (id) {
    case CaseId::static_elastic:
      c.divisions = 160;
      c.rings = 26;
      break;
    case CaseId::quasi_static_hyper:
      c.divisions = 32;
      c.rings = 8;
      c.steps = 5;
      c.load = 0.05;
      c.grf_length = 1.0;
      c.grf_sigma = 0.1;
      c.lr = 1e-4;
      c.iterations = 6000;
      break;
    case CaseId::elastodynamic:
      c.steps = 40;
      c.time_scale = 1.5e-3;
      c.eps = 1e-5;
      c.grf_length = 0.2;
      c.grf_samples = 16;
      c.record_steps = 10;
      c.skip_steps = 30;
      c.checkpoint_baseline = "models/elastodynamic_baseline.txt";
      break;
    case CaseId::expansion:
      c.steps = 10;
      c.state_steps = 30;
      c.time_scale = 1.5e-3;
      c.eps = 1e-5;
      c.grf_length = 0.2;
      c.grf_samples = 16;
      c.record_steps = 10;
      c.skip_steps = 30;
      c.checkpoint = "models/expansion_upper.txt";
      c.checkpoint_second = "models/expansion_lower.txt";
      break;
    case CaseId::cylinder:
      c.annulus_res = 24;
      c.fine_res = 16;
      c.grf_sigma = 0.02;
      c.collocation = 150;
      c.iterations = 5000;
      break;
  }
  return c;
}

CaseConfig case_config_from_map(const ConfigMap& m) {
  static const std::vector<std::string> known = {
      "case.id",           "case.mode",          "case.out",
      "case.seed",         "case.steps",         "case.load",
      "case.state_steps",  "case.state_file",    "material.E",
      "material.nu",       "material.rho",       "time.dt",
      "time.time_scale",   "coupling.eps",       "coupling.eps_inner",
      "coupling.relaxation", "coupling.max_inner", "mesh.divisions",
      "mesh.rings",        "mesh.dyn_divisions", "mesh.square_divisions",
      "mesh.annulus_res",  "mesh.fine_res",      "mesh.interface_points",
      "mesh.arc_fixed_points", "mesh.rim_points", "grf.length_scale",
      "grf.sigma",         "grf.samples",        "grf.record_steps",
      "grf.skip_steps",    "net.q",              "net.width",
      "net.depth",         "net.grid",           "net.cnn_hidden",
      "train.iterations",  "train.batch",        "train.collocation",
      "train.lr",          "train.lr_final",     "train.history_every",
      "train.holdout",
      "train.checkpoint",  "train.checkpoint_second", "train.checkpoint_baseline",
  };
  for (const auto& [key, value] : m.values) {
    (void)value;
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw CaseError("unknown config key: " + key);
  }

  CaseConfig c = default_case_config(case_id_from_name(m.str("case.id", "static_elastic")));
  c.mode = run_mode_from_name(m.str("case.mode", to_string(c.mode)));
  c.out_dir = m.str("case.out", c.out_dir);
  if (m.has("case.seed")) {
    const std::string& s = m.values.at("case.seed");
    try {
      size_t pos = 0;
      c.seed = std::stoull(s, &pos, 10);
      if (pos != s.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw CaseError("config value for case.seed is not an integer: " + s);
    }
  }
  c.steps = m.integer("case.steps", c.steps);
  c.load = m.num("case.load", c.load);
  c.state_steps = m.integer("case.state_steps", c.state_steps);
  c.state_file = m.str("case.state_file", c.state_file);
  c.E = m.num("material.E", c.E);
  c.nu = m.num("material.nu", c.nu);
  c.rho = m.num("material.rho", c.rho);
  c.dt = m.num("time.dt", c.dt);
  c.time_scale = m.num("time.time_scale", c.time_scale);
  c.eps = m.num("coupling.eps", c.eps);
  c.eps_inner = m.num("coupling.eps_inner", c.eps_inner);
  c.relaxation = m.num("coupling.relaxation", c.relaxation);
  c.max_inner = m.integer("coupling.max_inner", c.max_inner);
  c.divisions = m.integer("mesh.divisions", c.divisions);
  c.rings = m.integer("mesh.rings", c.rings);
  c.dyn_divisions = m.integer("mesh.dyn_divisions", c.dyn_divisions);
  c.square_divisions = m.integer("mesh.square_divisions", c.square_divisions);
  c.annulus_res = m.integer("mesh.annulus_res", c.annulus_res);
  c.fine_res = m.integer("mesh.fine_res", c.fine_res);
  c.interface_points = m.integer("mesh.interface_points", c.interface_points);
  c.arc_fixed_points = m.integer("mesh.arc_fixed_points", c.arc_fixed_points);
  c.rim_points = m.integer("mesh.rim_points", c.rim_points);
  c.grf_length = m.num("grf.length_scale", c.grf_length);
  c.grf_sigma = m.num("grf.sigma", c.grf_sigma);
  c.grf_samples = m.integer("grf.samples", c.grf_samples);
  c.record_steps = m.integer("grf.record_steps", c.record_steps);
  c.skip_steps = m.integer("grf.skip_steps", c.skip_steps);
  c.q = m.integer("net.q", c.q);
  c.width = m.integer("net.width", c.width);
  c.depth = m.integer("net.depth", c.depth);
  c.grid_n = m.integer("net.grid", c.grid_n);
  c.cnn_hidden = m.integer("net.cnn_hidden", c.cnn_hidden);
  c.iterations = m.integer("train.iterations", c.iterations);
  c.batch = m.integer("train.batch", c.batch);
  c.collocation = m.integer("train.collocation", c.collocation);
  c.lr = m.num("train.lr", c.lr);
  c.lr_final = m.num("train.lr_final", c.lr_final);
  c.history_every = m.integer("train.history_every", c.history_every);
  c.holdout = m.integer("train.holdout", c.holdout);
  c.checkpoint = m.str("train.checkpoint", c.checkpoint);
  c.checkpoint_second = m.str("train.checkpoint_second", c.checkpoint_second);
  c.checkpoint_baseline = m.str("train.checkpoint_baseline", c.checkpoint_baseline);
  return c;
}

// ---------------------------------------------------------------------------
// Metric serialization

std::string RunMetrics::to_json() const {
  json j;
  j["case"] = case_name;
  j["mode"] = mode;
  j["converged"] = converged;
  j["steps"] = steps;
  j["iterations"] = iterations;
  j["iterations_per_step"] = iterations_per_step;
  j["l2_rel_error"] = l2_rel_error;
  j["error_per_step"] = error_per_step;
  j["eps"] = eps;
  j["eps_inner"] = eps_inner;
  j["relaxation"] = relaxation;
  if (newton_iterations_max > 0) j["newton_iterations_max"] = newton_iterations_max;
  j["seed"] = seed;
  j["seconds"] = seconds;
  return j.dump(2) + "\n";
}

std::string TrainMetrics::to_json() const {
  json j;
  j["case"] = case_name;
  j["iterations"] = iterations;
  j["initial_loss"] = initial_loss;
  j["final_loss"] = final_loss;
  j["holdout_rel_error"] = holdout_rel_error;
  if (holdout_rel_error_second > 0) j["holdout_rel_error_second"] = holdout_rel_error_second;
  j["checkpoint"] = checkpoint;
  j["seconds"] = seconds;
  return j.dump(2) + "\n";
}

std::string CompareReport::to_json() const {
  json j;
  j["first"] = json::parse(first.to_json());
  j["second"] = json::parse(second.to_json());
  if (!rollout_error_per_step.empty()) j["rollout_error_per_step"] = rollout_error_per_step;
  if (!baseline_error_per_step.empty()) j["baseline_error_per_step"] = baseline_error_per_step;
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Entry points

RunMetrics run_case(const CaseConfig& cfg) {
  switch (cfg.id) {
    case CaseId::static_elastic: return run_static_elastic(cfg);
    case CaseId::quasi_static_hyper: return run_quasi_static_hyper(cfg);
    case CaseId::elastodynamic: return run_elastodynamic(cfg);
    case CaseId::expansion: return run_expansion(cfg);
    case CaseId::cylinder: return run_cylinder(cfg);
  }
  throw CaseError("unhandled case id");
}

RunMetrics run_oracle(const CaseConfig& cfg) {
  Stopwatch watch;
  ensure_dir(cfg.out_dir);
  RunMetrics m = base_metrics(cfg);
  m.mode = "oracle";
  m.converged = true;
  switch (cfg.id) {
    case CaseId::static_elastic:
    case CaseId::cylinder: return oracle_static(cfg, std::move(m), watch);
    case CaseId::quasi_static_hyper: return oracle_hyper(cfg, std::move(m), watch);
    case CaseId::elastodynamic:
    case CaseId::expansion: return oracle_dynamic(cfg, std::move(m), watch);
  }
  throw CaseError("unhandled case id");
}

TrainMetrics train_model(const CaseConfig& cfg) {
  switch (cfg.id) {
    case CaseId::static_elastic:
    case CaseId::quasi_static_hyper: return train_static_family(cfg);
    case CaseId::elastodynamic: return train_elastodynamic(cfg);
    case CaseId::expansion: return train_expansion(cfg);
    case CaseId::cylinder: return train_cylinder(cfg);
  }
  throw CaseError("unhandled case id");
}

CompareReport compare_modes(const CaseConfig& cfg, RunMode first, RunMode second) {
  ensure_dir(cfg.out_dir);
  CompareReport rep;
  CaseConfig c1 = cfg;
  c1.mode = first;
  c1.out_dir = cfg.out_dir + "/" + to_string(first);
  CaseConfig c2 = cfg;
  c2.mode = second;
  c2.out_dir = cfg.out_dir + "/" + to_string(second) + (first == second ? "_b" : "");
  rep.first = run_case(c1);
  rep.second = run_case(c2);

  if (cfg.id == CaseId::elastodynamic) rollout_curves(cfg, rep);

  size_t rows = std::min(rep.first.error_per_step.size(), rep.second.error_per_step.size());
  std::vector<double> e1(rep.first.error_per_step.begin(),
                         rep.first.error_per_step.begin() + rows);
  std::vector<double> e2(rep.second.error_per_step.begin(),
                         rep.second.error_per_step.begin() + rows);
  write_series(cfg.out_dir, "errors",
               {to_string(first), to_string(second) + (first == second ? " (repeat)" : "")},
               {e1, e2}, true, "step", "relative L2 error");
  write_text(cfg.out_dir + "/compare.json", rep.to_json());
  return rep;
}

void write_case_meshes(const CaseConfig& cfg) {
  ensure_dir(cfg.out_dir);
  std::vector<std::pair<std::string, Mesh>> meshes;
  switch (cfg.id) {
    case CaseId::static_elastic:
    case CaseId::quasi_static_hyper: {
      StaticParts p = make_static_parts(cfg);
      meshes = {{"mesh_fe", p.outer}, {"mesh_inner", p.inner}, {"mesh_mono", p.mono}};
      break;
    }
    case CaseId::elastodynamic: {
      DynParts p = make_dyn_parts(cfg);
      meshes = {{"mesh_fe", p.outer}, {"mesh_inner", p.inner}, {"mesh_mono", p.mono}};
      break;
    }
    case CaseId::expansion: {
      ExpParts p = make_exp_parts(cfg);
      meshes = {{"mesh_fe", p.outer},
                {"mesh_inner_upper", p.upper},
                {"mesh_inner_lower", p.lower},
                {"mesh_mono", p.mono}};
      break;
    }
    case CaseId::cylinder: {
      CylParts p = make_cyl_parts(cfg);
      meshes = {{"mesh_fe", p.outer}, {"mesh_inner", p.window}, {"mesh_mono", p.mono}};
      break;
    }
  }
  std::ostringstream gp;
  gp << "set terminal pngcairo size 900,900\nset output 'meshes.png'\nset size ratio -1\nplot";
  bool first = true;
  for (const auto& [name, mesh] : meshes) {
    save_mesh(mesh, cfg.out_dir + "/" + name + ".txt");
    write_text(cfg.out_dir + "/" + name + ".dat", mesh_wire_dat(mesh));
    gp << (first ? " " : ", ") << "'" << name << ".dat' with lines title '" << name << "'";
    first = false;
  }
  gp << "\n";
  write_text(cfg.out_dir + "/meshes.gp", gp.str());
}

}  // namespace fno
