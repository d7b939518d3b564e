#include "fno/coupling.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <variant>

#include "fno/ioutil.hpp"

namespace fno {

double l2_field_distance(const std::vector<double>& a, const std::vector<double>& b,
                         const std::vector<double>& weights) {
  if (a.size() != b.size() || a.size() != 2 * weights.size())
    throw std::invalid_argument("l2_field_distance: shape mismatch");
  double acc = 0;
  for (size_t i = 0; i < weights.size(); ++i) {
    double dx = a[2 * i] - b[2 * i];
    double dy = a[2 * i + 1] - b[2 * i + 1];
    acc += weights[i] * (dx * dx + dy * dy);
  }
  return std::sqrt(acc);
}

double l2_update_error(const std::vector<double>& prev_a, const std::vector<double>& curr_a,
                       const std::vector<double>& wa, const std::vector<double>& prev_b,
                       const std::vector<double>& curr_b, const std::vector<double>& wb) {
  return l2_field_distance(prev_a, curr_a, wa) + l2_field_distance(prev_b, curr_b, wb);
}

std::vector<double> lumped_area_weights(const Mesh& mesh) {
  std::vector<double> w(mesh.nodes.size(), 0.0);
  for (int t = 0; t < (int)mesh.tris.size(); ++t) {
    double third = mesh.tri_area(t) / 3.0;
    for (int v : mesh.tris[t].v) w[v] += third;
  }
  return w;
}

std::vector<std::array<double, 2>> relax_interface(
    const std::vector<std::array<double, 2>>& incoming,
    const std::vector<std::array<double, 2>>& previous, double rho_r) {
  if (incoming.size() != previous.size())
    throw std::invalid_argument("relax_interface: length mismatch");
  if (rho_r < 0.0 || rho_r >= 1.0)
    throw std::invalid_argument("relax_interface: rho_r outside [0,1)");
  std::vector<std::array<double, 2>> out(incoming.size());
  for (size_t i = 0; i < incoming.size(); ++i) {
    out[i][0] = (1.0 - rho_r) * incoming[i][0] + rho_r * previous[i][0];
    out[i][1] = (1.0 - rho_r) * incoming[i][1] + rho_r * previous[i][1];
  }
  return out;
}

std::vector<int> tagged_nodes(const Mesh& mesh, const std::vector<std::string>& tags) {
  std::vector<int> nodes;
  std::set<int> seen;
  for (const std::string& tag : tags) {
    auto it = mesh.tags.find(tag);
    if (it == mesh.tags.end()) throw std::invalid_argument("tagged_nodes: unknown tag " + tag);
    for (int n : it->second)
      if (seen.insert(n).second) nodes.push_back(n);
  }
  return nodes;
}

// ---------------------------------------------------------------------------
// FE adapter

FeSubdomain::FeSubdomain(Mesh mesh, FeSolverConfig cfg)
    : mesh_(std::move(mesh)), cfg_(std::move(cfg)), locator_(mesh_) {
  iface_nodes_ = tagged_nodes(mesh_, cfg_.interface_tags);
  iface_pts_.reserve(iface_nodes_.size());
  for (int n : iface_nodes_) iface_pts_.push_back(mesh_.nodes[n]);
  imposed_.assign(iface_pts_.size(), {0.0, 0.0});
  weights_.assign(mesh_.nodes.size(), 1.0);
  u_ = NodalField(mesh_);
  u_state_ = v_state_ = a_state_ = u_;
  if (cfg_.regime == FeRegime::newmark) {
    if (cfg_.dt <= 0) throw std::invalid_argument("FeSubdomain: dt must be positive");
    if (cfg_.mat.rho <= 0) throw std::invalid_argument("FeSubdomain: newmark needs rho > 0");
    K_ = assemble_stiffness(mesh_, cfg_.mat);
    M_ = assemble_mass(mesh_, cfg_.mat, cfg_.lumped_mass);
  }
}

void FeSubdomain::impose(const std::vector<std::array<double, 2>>& values) {
  if (values.size() != iface_pts_.size())
    throw std::invalid_argument("FeSubdomain::impose: value count mismatch");
  imposed_ = values;
}

void FeSubdomain::solve() {
  DirichletSet bc;
  if (cfg_.external_bc) cfg_.external_bc(step_, bc);
  for (size_t i = 0; i < iface_nodes_.size(); ++i) {
    bc.add(2 * iface_nodes_[i], imposed_[i][0]);
    bc.add(2 * iface_nodes_[i] + 1, imposed_[i][1]);
  }
  switch (cfg_.regime) {
    case FeRegime::linear_static:
      u_ = solve_static_linear(mesh_, cfg_.mat, bc);
      newton_iters_ = 0;
      break;
    case FeRegime::hyperelastic: {
      HyperelasticResult r = solve_hyperelastic_step(mesh_, cfg_.mat, bc, u_, cfg_.newton_max);
      u_ = r.u;
      newton_iters_ = r.iterations;
      break;
    }
    case FeRegime::newmark: {
      NewmarkState prev;
      prev.u = u_state_;
      prev.v = v_state_;
      prev.a = a_state_;
      prev.dt = cfg_.dt;
      NewmarkState next = newmark_step(M_, K_, prev, bc);
      u_ = next.u;
      v_cand_ = next.v;
      a_cand_ = next.a;
      newton_iters_ = 0;
      break;
    }
  }
}

void FeSubdomain::advance() {
  u_state_ = u_;
  if (cfg_.regime == FeRegime::newmark) {
    v_state_ = v_cand_;
    a_state_ = a_cand_;
  }
}

std::vector<std::array<double, 2>> FeSubdomain::trace(const std::vector<Vec2>& pts) const {
  std::vector<std::array<double, 2>> out(pts.size());
  for (size_t i = 0; i < pts.size(); ++i) {
    auto hit = locator_.locate(pts[i], 1e-8);
    if (!hit) hit = locator_.locate(pts[i], 1e-6);
    // Boundary points of a peer's mesh can sit a chord-sag outside this
    // polygonal mesh when the shared boundary is curved; accept them and
    // take the nearest element's boundary value.
    if (!hit) hit = locator_.locate(pts[i], 5e-2);
    if (!hit) {
      std::ostringstream msg;
      msg << "FeSubdomain::trace: point (" << pts[i].x << ", " << pts[i].y
          << ") outside the subdomain mesh";
      throw std::runtime_error(msg.str());
    }
    double ux = 0, uy = 0;
    for (int c = 0; c < 3; ++c) {
      int node = mesh_.tris[hit->tri].v[c];
      ux += hit->lambda[c] * u_.values[2 * node];
      uy += hit->lambda[c] * u_.values[2 * node + 1];
    }
    out[i] = {ux, uy};
  }
  return out;
}

void FeSubdomain::set_state(const NodalField& u, const NodalField* v, const NodalField* a) {
  if (u.values.size() != 2 * mesh_.nodes.size())
    throw std::invalid_argument("FeSubdomain::set_state: field size mismatch");
  u_state_ = u;
  u_ = u;
  if (v) v_state_ = *v;
  if (a) a_state_ = *a;
}

// ---------------------------------------------------------------------------
// Neural-operator adapters

namespace {

std::vector<int> resolve_peer_fed(const std::vector<int>& peer_fed, size_t n_boundary,
                                  bool has_external) {
  std::vector<int> fed = peer_fed;
  if (fed.empty()) {
    fed.resize(n_boundary);
    for (size_t i = 0; i < n_boundary; ++i) fed[i] = (int)i;
  }
  for (int i : fed)
    if (i < 0 || i >= (int)n_boundary)
      throw std::invalid_argument("subdomain config: peer_fed index out of range");
  if (fed.size() < n_boundary && !has_external)
    throw std::invalid_argument("subdomain config: external_value required when some "
                                "boundary points are not peer fed");
  return fed;
}

template <class Cfg>
std::vector<double> assemble_boundary(const Cfg& cfg, const std::vector<int>& fed,
                                      const std::vector<std::array<double, 2>>& imposed,
                                      int step) {
  size_t nb = cfg.boundary_points.size();
  std::vector<double> bc(2 * nb, 0.0);
  std::vector<char> from_peer(nb, 0);
  for (size_t i = 0; i < fed.size(); ++i) {
    bc[fed[i]] = imposed[i][0];
    bc[fed[i] + nb] = imposed[i][1];
    from_peer[fed[i]] = 1;
  }
  for (size_t i = 0; i < nb; ++i) {
    if (from_peer[i]) continue;
    auto v = cfg.external_value((int)step, cfg.boundary_points[i]);
    bc[i] = v[0];
    bc[i + nb] = v[1];
  }
  return bc;
}

}  // namespace

NoStaticSubdomain::NoStaticSubdomain(OperatorPair pair, NoStaticConfig cfg)
    : pair_(std::move(pair)), cfg_(std::move(cfg)) {
  if (pair_.arch.boundary_features != 2 * (int)cfg_.boundary_points.size())
    throw std::invalid_argument("NoStaticSubdomain: boundary point count does not match "
                                "the operator's input width");
  cfg_.peer_fed = resolve_peer_fed(cfg_.peer_fed, cfg_.boundary_points.size(),
                                   (bool)cfg_.external_value);
  if (cfg_.metric_points.size() != cfg_.metric_weights.size())
    throw std::invalid_argument("NoStaticSubdomain: metric size mismatch");
  for (int i : cfg_.peer_fed) iface_pts_.push_back(cfg_.boundary_points[i]);
  imposed_.assign(iface_pts_.size(), {0.0, 0.0});
  field_.assign(2 * cfg_.metric_points.size(), 0.0);
}

void NoStaticSubdomain::impose(const std::vector<std::array<double, 2>>& values) {
  if (values.size() != iface_pts_.size())
    throw std::invalid_argument("NoStaticSubdomain::impose: value count mismatch");
  imposed_ = values;
}

void NoStaticSubdomain::solve() {
  in_.boundary = assemble_boundary(cfg_, cfg_.peer_fed, imposed_, step_);
  auto vals = evaluate(pair_, in_, cfg_.metric_points);
  for (size_t i = 0; i < vals.size(); ++i) {
    field_[2 * i] = vals[i][0];
    field_[2 * i + 1] = vals[i][1];
  }
  solved_ = true;
}

std::vector<std::array<double, 2>> NoStaticSubdomain::trace(const std::vector<Vec2>& pts) const {
  if (!solved_) return std::vector<std::array<double, 2>>(pts.size(), {0.0, 0.0});
  return evaluate(pair_, in_, pts);
}

NoDynamicSubdomain::NoDynamicSubdomain(OperatorPair pair, NoDynamicConfig cfg)
    : pair_(std::move(pair)), cfg_(std::move(cfg)) {
  if (!pair_.arch.has_grid_branch)
    throw std::invalid_argument("NoDynamicSubdomain: operator lacks a grid branch");
  if (pair_.arch.boundary_features != 2 * (int)cfg_.boundary_points.size())
    throw std::invalid_argument("NoDynamicSubdomain: boundary point count does not match "
                                "the operator's input width");
  if (cfg_.grid.n != pair_.arch.grid_ux.grid)
    throw std::invalid_argument("NoDynamicSubdomain: grid size does not match the operator");
  if (cfg_.dt <= 0) throw std::invalid_argument("NoDynamicSubdomain: dt must be positive");
  cfg_.peer_fed = resolve_peer_fed(cfg_.peer_fed, cfg_.boundary_points.size(),
                                   (bool)cfg_.external_value);
  for (int i : cfg_.peer_fed) iface_pts_.push_back(cfg_.boundary_points[i]);
  imposed_.assign(iface_pts_.size(), {0.0, 0.0});

  int n = cfg_.grid.n;
  grid_pts_.reserve((size_t)n * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) grid_pts_.push_back(cfg_.grid.point(i, j));
  if (cfg_.metric_weights.empty()) cfg_.metric_weights.assign((size_t)n * n, 1.0);
  if (cfg_.metric_weights.size() != (size_t)n * n)
    throw std::invalid_argument("NoDynamicSubdomain: metric weight count mismatch");
  state_ = zero_grid_state(cfg_.grid);
  cand_ = state_;
  field_.assign(2 * (size_t)n * n, 0.0);
}

void NoDynamicSubdomain::impose(const std::vector<std::array<double, 2>>& values) {
  if (values.size() != iface_pts_.size())
    throw std::invalid_argument("NoDynamicSubdomain::impose: value count mismatch");
  imposed_ = values;
}

void NoDynamicSubdomain::solve() {
  std::vector<double> bc = assemble_boundary(cfg_, cfg_.peer_fed, imposed_, step_);
  cand_ = time_march_predict(pair_, state_, bc, cfg_.dt);
  in_.boundary = std::move(bc);
  in_.grid4 = make_grid4(state_, pair_.arch.velocity_scale);
  for (size_t i = 0; i < cand_.ux.size(); ++i) {
    field_[2 * i] = cand_.ux[i];
    field_[2 * i + 1] = cand_.uy[i];
  }
  solved_ = true;
}

std::vector<std::array<double, 2>> NoDynamicSubdomain::trace(const std::vector<Vec2>& pts) const {
  if (!solved_) return std::vector<std::array<double, 2>>(pts.size(), {0.0, 0.0});
  return evaluate(pair_, in_, pts);
}

FrozenFieldSubdomain::FrozenFieldSubdomain(std::function<std::array<double, 2>(const Vec2&)> f,
                                           std::vector<Vec2> metric_points,
                                           std::vector<double> metric_weights)
    : f_(std::move(f)), weights_(std::move(metric_weights)) {
  if (metric_points.size() != weights_.size())
    throw std::invalid_argument("FrozenFieldSubdomain: metric size mismatch");
  field_.reserve(2 * metric_points.size());
  for (const Vec2& p : metric_points) {
    auto v = f_(p);
    field_.push_back(v[0]);
    field_.push_back(v[1]);
  }
}

std::vector<std::array<double, 2>> FrozenFieldSubdomain::trace(
    const std::vector<Vec2>& pts) const {
  std::vector<std::array<double, 2>> out(pts.size());
  for (size_t i = 0; i < pts.size(); ++i) out[i] = f_(pts[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Convergence records

std::string ConvergenceRecord::to_csv() const {
  std::string out = multi ? "n,j,k,l2,l2_p1,l2_p2,seconds\n" : "n,j,l2,seconds\n";
  char buf[256];
  for (const ConvergenceRow& r : rows) {
    if (multi)
      std::snprintf(buf, sizeof(buf), "%d,%d,%d,%.17g,%.17g,%.17g,%.17g\n", r.n, r.j, r.k, r.l2,
                    r.l2_p1, r.l2_p2, r.seconds);
    else
      std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g\n", r.n, r.j, r.l2, r.seconds);
    out += buf;
  }
  return out;
}

void save_convergence_csv(const std::string& path, const ConvergenceRecord& rec) {
  write_text_file(path, rec.to_csv());
}

// ---------------------------------------------------------------------------
// Alternating orchestration

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_seconds(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void check_session(const CouplingSession& s, bool multi) {
  if (!s.fe || !s.peer) throw std::invalid_argument("coupling session: fe and peer required");
  if (s.eps <= 0 || s.eps_inner <= 0)
    throw std::invalid_argument("coupling session: tolerances must be positive");
  if (s.rho_r < 0 || s.rho_r >= 1)
    throw std::invalid_argument("coupling session: relaxation outside [0,1)");
  if (s.max_inner < 1) throw std::invalid_argument("coupling session: max_inner < 1");
  if (multi && !s.peer2) throw std::invalid_argument("coupling session: peer2 required");
}

void check_partition(const std::vector<int>& a, const std::vector<int>& b, size_t n,
                     const char* who) {
  std::vector<char> hit(n, 0);
  for (int i : a) {
    if (i < 0 || i >= (int)n || hit[i])
      throw std::invalid_argument(std::string("coupling session: bad wiring for ") + who);
    hit[i] = 1;
  }
  for (int i : b) {
    if (i < 0 || i >= (int)n || hit[i])
      throw std::invalid_argument(std::string("coupling session: bad wiring for ") + who);
    hit[i] = 1;
  }
  for (char h : hit)
    if (!h) throw std::invalid_argument(std::string("coupling session: incomplete wiring for ") +
                                        who);
}

std::vector<Vec2> gather_points(const std::vector<Vec2>& pts, const std::vector<int>& idx) {
  std::vector<Vec2> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(pts[i]);
  return out;
}

void scatter_values(std::vector<std::array<double, 2>>& dst, const std::vector<int>& idx,
                    const std::vector<std::array<double, 2>>& vals) {
  for (size_t i = 0; i < idx.size(); ++i) dst[idx[i]] = vals[i];
}

template <class Fn>
auto with_context(int n, int j, const char* what, Fn&& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    std::ostringstream msg;
    msg << what << " failed at step n=" << n << ", iteration j=" << j << ": " << e.what();
    throw std::runtime_error(msg.str());
  }
}

/// Inner loop of the two-solver alternation at one time step.
bool alternate_step(CouplingSession& s, int n, Clock::time_point t0,
                    std::vector<std::array<double, 2>>& imposed_fe, ConvergenceRecord& rec,
                    int& iterations) {
  s.fe->begin_step(n);
  s.peer->begin_step(n);
  std::vector<double> prev_fe = s.fe->field();
  std::vector<double> prev_peer = s.peer->field();

  for (int j = 1; j <= s.max_inner; ++j) {
    s.fe->impose(imposed_fe);
    with_context(n, j, "FE solve", [&] { s.fe->solve(); });

    with_context(n, j, "peer solve", [&] {
      s.peer->impose(s.fe->trace(s.peer->interface_points()));
      s.peer->solve();
    });

    imposed_fe = relax_interface(s.peer->trace(s.fe->interface_points()), imposed_fe, s.rho_r);

    double l2 = l2_update_error(prev_fe, s.fe->field(), s.fe->metric_weights(), prev_peer,
                                s.peer->field(), s.peer->metric_weights());
    ConvergenceRow row;
    row.n = n;
    row.j = j;
    row.l2 = l2;
    row.seconds = elapsed_seconds(t0);
    rec.rows.push_back(row);
    prev_fe = s.fe->field();
    prev_peer = s.peer->field();
    iterations = j;
    if (l2 < s.eps) return true;
  }
  return false;
}

}  // namespace

SchwarzResult schwarz_time_marching(CouplingSession& s, int n_max,
                                    const std::function<void(int)>& on_step) {
  check_session(s, false);
  SchwarzResult result;
  auto t0 = Clock::now();
  std::vector<std::array<double, 2>> imposed_fe(s.fe->interface_points().size(), {0.0, 0.0});
  if (s.warm_start_interface) imposed_fe = s.peer->trace(s.fe->interface_points());

  result.converged = true;
  for (int n = 0; n < n_max; ++n) {
    StepOutcome out;
    out.n = n;
    out.converged = alternate_step(s, n, t0, imposed_fe, result.record, out.iterations);
    result.steps.push_back(out);
    if (!out.converged) {
      result.converged = false;
      result.aborted_step = n;
      break;
    }
    s.fe->advance();
    s.peer->advance();
    if (on_step) on_step(n);
  }
  return result;
}

SchwarzResult schwarz_static(CouplingSession& s) { return schwarz_time_marching(s, 1); }

SchwarzResult schwarz_multi_no(CouplingSession& s, int n_max,
                               const std::function<void(int)>& on_step) {
  check_session(s, true);
  size_t n_peer = s.peer->interface_points().size();
  size_t n_peer2 = s.peer2->interface_points().size();
  check_partition(s.peer_from_fe, s.peer_from_peer2, n_peer, "peer");
  check_partition(s.peer2_from_fe, s.peer2_from_peer, n_peer2, "peer2");
  if (s.fe_blend_w1.size() != s.fe->interface_points().size())
    throw std::invalid_argument("coupling session: fe_blend_w1 size mismatch");

  const auto peer_fe_pts = gather_points(s.peer->interface_points(), s.peer_from_fe);
  const auto peer_no2_pts = gather_points(s.peer->interface_points(), s.peer_from_peer2);
  const auto peer2_fe_pts = gather_points(s.peer2->interface_points(), s.peer2_from_fe);
  const auto peer2_no1_pts = gather_points(s.peer2->interface_points(), s.peer2_from_peer);

  // Each peer is only evaluated at FE interface points where its blend
  // weight is nonzero; the other points lie outside its subdomain.
  std::vector<int> fe_idx_p1, fe_idx_p2;
  for (size_t i = 0; i < s.fe_blend_w1.size(); ++i) {
    if (s.fe_blend_w1[i] > 0.0) fe_idx_p1.push_back((int)i);
    if (s.fe_blend_w1[i] < 1.0) fe_idx_p2.push_back((int)i);
  }
  const auto fe_pts_p1 = gather_points(s.fe->interface_points(), fe_idx_p1);
  const auto fe_pts_p2 = gather_points(s.fe->interface_points(), fe_idx_p2);
  auto combined_no_trace = [&]() {
    std::vector<std::array<double, 2>> out(s.fe->interface_points().size(), {0.0, 0.0});
    auto t1 = s.peer->trace(fe_pts_p1);
    auto t2 = s.peer2->trace(fe_pts_p2);
    for (size_t q = 0; q < fe_idx_p1.size(); ++q) {
      double w = s.fe_blend_w1[fe_idx_p1[q]];
      out[fe_idx_p1[q]][0] += w * t1[q][0];
      out[fe_idx_p1[q]][1] += w * t1[q][1];
    }
    for (size_t q = 0; q < fe_idx_p2.size(); ++q) {
      double w = 1.0 - s.fe_blend_w1[fe_idx_p2[q]];
      out[fe_idx_p2[q]][0] += w * t2[q][0];
      out[fe_idx_p2[q]][1] += w * t2[q][1];
    }
    return out;
  };

  SchwarzResult result;
  result.record.multi = true;
  auto t0 = Clock::now();
  std::vector<std::array<double, 2>> imposed_fe(s.fe->interface_points().size(), {0.0, 0.0});
  bool peers_traced = s.warm_start_interface;
  if (s.warm_start_interface) imposed_fe = combined_no_trace();

  result.converged = true;
  for (int n = 0; n < n_max; ++n) {
    s.fe->begin_step(n);
    s.peer->begin_step(n);
    s.peer2->begin_step(n);
    std::vector<double> prev_fe = s.fe->field();
    std::vector<double> prev_p1 = s.peer->field();
    std::vector<double> prev_p2 = s.peer2->field();

    StepOutcome out;
    out.n = n;
    for (int j = 1; j <= s.max_inner; ++j) {
      s.fe->impose(imposed_fe);
      with_context(n, j, "FE solve", [&] { s.fe->solve(); });
      auto fe_for_p1 = s.fe->trace(peer_fe_pts);
      auto fe_for_p2 = s.fe->trace(peer2_fe_pts);

      std::vector<double> prev_k1 = s.peer->field();
      std::vector<double> prev_k2 = s.peer2->field();
      bool no_converged = false;
      int k = 0;
      while (k < s.max_no_inner) {
        ++k;
        std::vector<std::array<double, 2>> p1_in(n_peer, {0.0, 0.0});
        scatter_values(p1_in, s.peer_from_fe, fe_for_p1);
        if (peers_traced)
          scatter_values(p1_in, s.peer_from_peer2, s.peer2->trace(peer_no2_pts));
        with_context(n, j, "peer solve", [&] {
          s.peer->impose(p1_in);
          s.peer->solve();
        });

        std::vector<std::array<double, 2>> p2_in(n_peer2, {0.0, 0.0});
        scatter_values(p2_in, s.peer2_from_fe, fe_for_p2);
        scatter_values(p2_in, s.peer2_from_peer, s.peer->trace(peer2_no1_pts));
        with_context(n, j, "peer2 solve", [&] {
          s.peer2->impose(p2_in);
          s.peer2->solve();
        });
        peers_traced = true;

        double l2p1 = l2_update_error(prev_k1, s.peer->field(), s.peer->metric_weights(),
                                      prev_k2, s.peer2->field(), s.peer2->metric_weights());
        ConvergenceRow row;
        row.n = n;
        row.j = j;
        row.k = k;
        row.l2_p1 = l2p1;
        row.seconds = elapsed_seconds(t0);
        result.record.rows.push_back(row);
        prev_k1 = s.peer->field();
        prev_k2 = s.peer2->field();
        if (l2p1 < s.eps_inner) {
          no_converged = true;
          break;
        }
      }
      if (!no_converged) {
        result.converged = false;
        result.aborted_step = n;
        out.converged = false;
        out.iterations = j;
        result.steps.push_back(out);
        return result;
      }

      imposed_fe = relax_interface(combined_no_trace(), imposed_fe, s.rho_r);

      double l2p2 = l2_update_error(prev_fe, s.fe->field(), s.fe->metric_weights(), prev_p1,
                                    s.peer->field(), s.peer->metric_weights()) +
                    l2_field_distance(prev_p2, s.peer2->field(), s.peer2->metric_weights());
      ConvergenceRow& last = result.record.rows.back();
      last.l2 = l2p2;
      last.l2_p2 = l2p2;
      prev_fe = s.fe->field();
      prev_p1 = s.peer->field();
      prev_p2 = s.peer2->field();
      out.iterations = j;
      if (l2p2 < s.eps) {
        out.converged = true;
        break;
      }
    }
    result.steps.push_back(out);
    if (!out.converged) {
      result.converged = false;
      result.aborted_step = n;
      break;
    }
    s.fe->advance();
    s.peer->advance();
    s.peer2->advance();
    if (on_step) on_step(n);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Region predicates and field assembly

bool inside_curve(const CurveSpec& spec, const Vec2& p) {
  return std::visit(
      [&p](const auto& c) -> bool {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, Circle>) {
          return (p - c.c).norm() <= c.r;
        } else if constexpr (std::is_same_v<T, SquareCurve>) {
          return std::max(std::abs(p.x - c.c.x), std::abs(p.y - c.c.y)) <= c.side / 2;
        } else if constexpr (std::is_same_v<T, RectCurve>) {
          return std::abs(p.x - c.c.x) <= c.w / 2 && std::abs(p.y - c.c.y) <= c.h / 2;
        } else if constexpr (std::is_same_v<T, ArcCurve>) {
          return (p - c.c).norm() <= c.r;
        } else {
          throw std::invalid_argument("inside_curve: open curve has no interior");
        }
      },
      spec);
}

std::function<double(const Vec2&)> overlap_blend(const CurveSpec& inner, const CurveSpec& outer) {
  return [inner, outer](const Vec2& p) -> double {
    if (!inside_curve(outer, p)) return 0.0;
    if (inside_curve(inner, p)) return 1.0;
    double d_in = curve_distance(inner, p);
    double d_out = curve_distance(outer, p);
    double denom = d_in + d_out;
    return denom > 0 ? d_out / denom : 0.5;
  };
}

std::vector<std::array<double, 2>> HybridField::eval(const std::vector<Vec2>& pts) const {
  if (!fe || !peer || !peer_weight)
    throw std::invalid_argument("HybridField: fe, peer and peer_weight required");
  if (peer2 && !peer_split)
    throw std::invalid_argument("HybridField: peer_split required with two peers");

  size_t n = pts.size();
  std::vector<double> w(n), split(n, 1.0);
  std::vector<int> fe_idx, p1_idx, p2_idx;
  for (size_t i = 0; i < n; ++i) {
    w[i] = peer_weight(pts[i]);
    if (peer2) split[i] = peer_split(pts[i]);
    if (w[i] < 1.0) fe_idx.push_back((int)i);
    if (w[i] > 0.0 && split[i] > 0.0) p1_idx.push_back((int)i);
    if (w[i] > 0.0 && peer2 && split[i] < 1.0) p2_idx.push_back((int)i);
  }

  std::vector<std::array<double, 2>> out(n, {0.0, 0.0});
  auto add = [&](const std::vector<int>& idx, const SubdomainSolver* solver,
                 const std::function<double(size_t)>& coeff) {
    if (idx.empty()) return;
    std::vector<Vec2> sub;
    sub.reserve(idx.size());
    for (int i : idx) sub.push_back(pts[i]);
    auto vals = solver->trace(sub);
    for (size_t q = 0; q < idx.size(); ++q) {
      double c = coeff(idx[q]);
      out[idx[q]][0] += c * vals[q][0];
      out[idx[q]][1] += c * vals[q][1];
    }
  };
  add(fe_idx, fe, [&](size_t i) { return 1.0 - w[i]; });
  add(p1_idx, peer, [&](size_t i) { return w[i] * split[i]; });
  add(p2_idx, peer2, [&](size_t i) { return w[i] * (1.0 - split[i]); });
  return out;
}

}  // namespace fno
