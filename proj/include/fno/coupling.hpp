#pragma once

#include <array>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "fno/deeponet.hpp"
#include "fno/fem.hpp"
#include "fno/mesh.hpp"

namespace fno {

/// Mass-weighted L2 distance between two interleaved (ux, uy) point fields.
/// `weights` carries one area weight per point, so values has 2x its length.
double l2_field_distance(const std::vector<double>& a, const std::vector<double>& b,
                         const std::vector<double>& weights);

/// Sum of the per-subdomain L2 distances between successive iterates.
double l2_update_error(const std::vector<double>& prev_a, const std::vector<double>& curr_a,
                       const std::vector<double>& wa, const std::vector<double>& prev_b,
                       const std::vector<double>& curr_b, const std::vector<double>& wb);

/// Per-node area weights: each triangle contributes a third of its area to
/// each vertex. Sums exactly to the mesh area.
std::vector<double> lumped_area_weights(const Mesh& mesh);

/// Convex blend (1-rho)*incoming + rho*previous, pointwise.
std::vector<std::array<double, 2>> relax_interface(
    const std::vector<std::array<double, 2>>& incoming,
    const std::vector<std::array<double, 2>>& previous, double rho_r);

/// One side of an alternating solve. Implementations own their mesh/grid,
/// external boundary schedule and committed time state; the orchestrator only
/// feeds interface values and asks for traces.
class SubdomainSolver {
 public:
  virtual ~SubdomainSolver() = default;

  /// Points where this solver receives values from its peer(s).
  virtual const std::vector<Vec2>& interface_points() const = 0;
  /// Store peer values for the next solve, one pair per interface point.
  virtual void impose(const std::vector<std::array<double, 2>>& values) = 0;
  /// Most recently imposed values (diagnostics and relaxation state).
  virtual const std::vector<std::array<double, 2>>& imposed() const = 0;

  /// Advance the external loading schedule to step n.
  virtual void begin_step(int n) = 0;
  /// Recompute the candidate field from current boundary data.
  virtual void solve() = 0;
  /// Commit the candidate as the converged state of this step.
  virtual void advance() = 0;

  /// Evaluate the candidate field at arbitrary points inside the subdomain.
  virtual std::vector<std::array<double, 2>> trace(const std::vector<Vec2>& pts) const = 0;

  /// Candidate field at the metric sample points, interleaved (ux, uy).
  virtual const std::vector<double>& field() const = 0;
  /// Weight per metric sample point in the iterate-update norm. Unit weights
  /// give the plain discrete l2 norm of the solution vector.
  virtual const std::vector<double>& metric_weights() const = 0;
};

enum class FeRegime { linear_static, hyperelastic, newmark };

struct FeSolverConfig {
  FeRegime regime = FeRegime::linear_static;
  Material mat;
  double dt = 1.0;
  int newton_max = 20;
  bool lumped_mass = true;
  /// Adds the external Dirichlet data for step n. Interface values are
  /// applied after these, so they win at shared nodes.
  std::function<void(int, DirichletSet&)> external_bc;
  /// Mesh tags whose nodes receive peer values, concatenated and deduped.
  std::vector<std::string> interface_tags = {"Gamma_I_in"};
};

class FeSubdomain : public SubdomainSolver {
 public:
  FeSubdomain(Mesh mesh, FeSolverConfig cfg);

  const std::vector<Vec2>& interface_points() const override { return iface_pts_; }
  void impose(const std::vector<std::array<double, 2>>& values) override;
  const std::vector<std::array<double, 2>>& imposed() const override { return imposed_; }
  void begin_step(int n) override { step_ = n; }
  void solve() override;
  void advance() override;
  std::vector<std::array<double, 2>> trace(const std::vector<Vec2>& pts) const override;
  const std::vector<double>& field() const override { return u_.values; }
  const std::vector<double>& metric_weights() const override { return weights_; }

  const Mesh& mesh() const { return mesh_; }
  const NodalField& displacement() const { return u_; }
  const NodalField& velocity() const { return v_state_; }
  const NodalField& acceleration() const { return a_state_; }
  const std::vector<int>& interface_nodes() const { return iface_nodes_; }
  int last_newton_iterations() const { return newton_iters_; }
  /// Overwrite the committed state (continuation runs).
  void set_state(const NodalField& u, const NodalField* v = nullptr,
                 const NodalField* a = nullptr);

 private:
  Mesh mesh_;
  FeSolverConfig cfg_;
  MeshLocator locator_;
  std::vector<int> iface_nodes_;
  std::vector<Vec2> iface_pts_;
  std::vector<std::array<double, 2>> imposed_;
  std::vector<double> weights_;
  NodalField u_, u_state_, v_state_, a_state_;
  NodalField v_cand_, a_cand_;
  SparseMatrix K_, M_;
  int step_ = 0;
  int newton_iters_ = 0;
};

struct NoStaticConfig {
  /// Boundary sample points in the operator's training layout.
  std::vector<Vec2> boundary_points;
  /// Indices of boundary_points fed by the peer; empty means all of them.
  std::vector<int> peer_fed;
  /// Values for the remaining points, as a function of (step, point).
  std::function<std::array<double, 2>(int, const Vec2&)> external_value;
  std::vector<Vec2> metric_points;
  std::vector<double> metric_weights;
};

class NoStaticSubdomain : public SubdomainSolver {
 public:
  NoStaticSubdomain(OperatorPair pair, NoStaticConfig cfg);

  const std::vector<Vec2>& interface_points() const override { return iface_pts_; }
  void impose(const std::vector<std::array<double, 2>>& values) override;
  const std::vector<std::array<double, 2>>& imposed() const override { return imposed_; }
  void begin_step(int n) override { step_ = n; }
  void solve() override;
  void advance() override {}
  std::vector<std::array<double, 2>> trace(const std::vector<Vec2>& pts) const override;
  const std::vector<double>& field() const override { return field_; }
  const std::vector<double>& metric_weights() const override { return cfg_.metric_weights; }

  const OperatorPair& model() const { return pair_; }

 private:
  OperatorPair pair_;
  NoStaticConfig cfg_;
  std::vector<Vec2> iface_pts_;
  std::vector<std::array<double, 2>> imposed_;
  BranchInputs in_;
  std::vector<double> field_;
  int step_ = 0;
  bool solved_ = false;
};

struct NoDynamicConfig {
  std::vector<Vec2> boundary_points;
  std::vector<int> peer_fed;
  std::function<std::array<double, 2>(int, const Vec2&)> external_value;
  Grid2 grid;
  double dt = 1.0;
  /// One weight per grid node; empty selects a uniform cell area.
  std::vector<double> metric_weights;
};

class NoDynamicSubdomain : public SubdomainSolver {
 public:
  NoDynamicSubdomain(OperatorPair pair, NoDynamicConfig cfg);

  const std::vector<Vec2>& interface_points() const override { return iface_pts_; }
  void impose(const std::vector<std::array<double, 2>>& values) override;
  const std::vector<std::array<double, 2>>& imposed() const override { return imposed_; }
  void begin_step(int n) override { step_ = n; }
  void solve() override;
  void advance() override { state_ = cand_; }
  std::vector<std::array<double, 2>> trace(const std::vector<Vec2>& pts) const override;
  const std::vector<double>& field() const override { return field_; }
  const std::vector<double>& metric_weights() const override { return cfg_.metric_weights; }

  const GridState& state() const { return state_; }
  const GridState& candidate() const { return cand_; }
  void set_state(const GridState& s) { state_ = s; }
  const OperatorPair& model() const { return pair_; }

 private:
  OperatorPair pair_;
  NoDynamicConfig cfg_;
  std::vector<Vec2> iface_pts_;
  std::vector<Vec2> grid_pts_;
  std::vector<std::array<double, 2>> imposed_;
  GridState state_, cand_;
  BranchInputs in_;
  std::vector<double> field_;
  int step_ = 0;
  bool solved_ = false;
};

/// Test and oracle double: a fixed analytic field with no own unknowns.
class FrozenFieldSubdomain : public SubdomainSolver {
 public:
  FrozenFieldSubdomain(std::function<std::array<double, 2>(const Vec2&)> f,
                       std::vector<Vec2> metric_points = {},
                       std::vector<double> metric_weights = {});

  const std::vector<Vec2>& interface_points() const override { return iface_pts_; }
  void impose(const std::vector<std::array<double, 2>>& values) override { imposed_ = values; }
  const std::vector<std::array<double, 2>>& imposed() const override { return imposed_; }
  void begin_step(int n) override { (void)n; }
  void solve() override {}
  void advance() override {}
  std::vector<std::array<double, 2>> trace(const std::vector<Vec2>& pts) const override;
  const std::vector<double>& field() const override { return field_; }
  const std::vector<double>& metric_weights() const override { return weights_; }

 private:
  std::function<std::array<double, 2>(const Vec2&)> f_;
  std::vector<Vec2> iface_pts_;
  std::vector<std::array<double, 2>> imposed_;
  std::vector<double> field_, weights_;
};

struct ConvergenceRow {
  int n = 0;
  int j = 0;
  int k = -1;
  double l2 = std::numeric_limits<double>::quiet_NaN();
  double l2_p1 = std::numeric_limits<double>::quiet_NaN();
  double l2_p2 = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
};

struct ConvergenceRecord {
  bool multi = false;
  std::vector<ConvergenceRow> rows;

  std::string to_csv() const;
};

void save_convergence_csv(const std::string& path, const ConvergenceRecord& rec);

struct CouplingSession {
  SubdomainSolver* fe = nullptr;
  SubdomainSolver* peer = nullptr;
  SubdomainSolver* peer2 = nullptr;

  double rho_r = 0.0;
  double eps = 1e-3;
  double eps_inner = 1e-5;
  int max_inner = 200;
  int max_no_inner = 200;
  /// Start from the peers' current traces instead of zero interface data
  /// (continuation of a previous run).
  bool warm_start_interface = false;

  /// Wiring for the three-solver topology: which of each peer's interface
  /// points are fed by the FE trace and which by the other peer.
  std::vector<int> peer_from_fe, peer_from_peer2;
  std::vector<int> peer2_from_fe, peer2_from_peer;
  /// Blend weight of `peer` (versus peer2) per FE interface point.
  std::vector<double> fe_blend_w1;
};

struct StepOutcome {
  int n = 0;
  bool converged = false;
  int iterations = 0;
};

struct SchwarzResult {
  bool converged = false;
  int aborted_step = -1;
  std::vector<StepOutcome> steps;
  ConvergenceRecord record;
};

/// Single-step alternating solve between session.fe and session.peer; stops
/// when the summed field-update error drops under session.eps.
SchwarzResult schwarz_static(CouplingSession& s);

/// n_max steps, each converged as in schwarz_static before the solvers commit
/// their states. Interface data carries over between steps. `on_step` runs
/// after each committed step. A non-converged step stops the march.
SchwarzResult schwarz_time_marching(CouplingSession& s, int n_max,
                                    const std::function<void(int)>& on_step = nullptr);

/// Three-solver topology: the two peers iterate to session.eps_inner inside
/// each outer FE exchange, which runs to session.eps.
SchwarzResult schwarz_multi_no(CouplingSession& s, int n_max,
                               const std::function<void(int)>& on_step = nullptr);

/// True for points enclosed by a closed curve; arcs count as full circles.
bool inside_curve(const CurveSpec& spec, const Vec2& p);

/// Weight of the inner-region solver when blending the two subdomain fields:
/// 1 inside `inner` (the FE hole boundary), 0 outside `outer` (the peer's
/// outer boundary), linear in relative curve distance across the overlap.
std::function<double(const Vec2&)> overlap_blend(const CurveSpec& inner, const CurveSpec& outer);

/// Assembled global field: FE values outside the overlap, peer values inside
/// the FE hole, blended in between. For two peers, `peer_split` gives the
/// weight of `peer` against `peer2` within the combined region.
struct HybridField {
  const SubdomainSolver* fe = nullptr;
  const SubdomainSolver* peer = nullptr;
  const SubdomainSolver* peer2 = nullptr;
  std::function<double(const Vec2&)> peer_weight;
  std::function<double(const Vec2&)> peer_split;

  std::vector<std::array<double, 2>> eval(const std::vector<Vec2>& pts) const;
};

/// Ordered union of the nodes carrying the given tags, first occurrence wins.
std::vector<int> tagged_nodes(const Mesh& mesh, const std::vector<std::string>& tags);

}  // namespace fno
