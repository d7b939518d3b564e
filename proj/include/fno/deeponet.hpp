#pragma once

#include <array>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fno/autodiff.hpp"
#include "fno/fem.hpp"
#include "fno/interp.hpp"
#include "fno/mesh.hpp"

namespace fno {

enum class LossKind { linear_static, hyperelastic, dynamic };
enum class InertiaForm { consistent, printed };

// Architecture of one operator pair: independent u_x / u_y networks with a
// shared layout. Each side combines a boundary branch (and optionally a grid
// branch, merged by elementwise product) with a coordinate trunk through a
// dot product plus a trainable scalar bias.
struct OperatorArch {
  int q = 64;
  int boundary_features = 0;  // stacked boundary values; 0 disables the boundary branch
  MlpSpec branch_ux, branch_uy;
  MlpSpec trunk_ux, trunk_uy;
  bool has_grid_branch = false;
  CnnSpec grid_ux, grid_uy;
  double velocity_scale = 1.0;  // factor applied to velocity channels of the grid input
  // With the skip enabled the prediction is bilinear(u + v*scale)(x, y) plus
  // the network output, so the network only carries the deviation from the
  // ballistic update. skip_grid fixes the geometry of the grid input.
  bool ballistic_skip = false;
  Grid2 skip_grid;
};

struct OperatorPair {
  OperatorArch arch;
  ParamStore params;
};

OperatorPair make_static_pair(int boundary_features, const std::vector<int>& branch_hidden,
                              const std::vector<int>& trunk_hidden, int q,
                              unsigned long long seed);
OperatorPair make_dynamic_pair(int boundary_features, const std::vector<int>& branch_hidden,
                               const std::vector<int>& trunk_hidden, int q, int grid_n,
                               int cnn_hidden, double velocity_scale, unsigned long long seed);
// Grid branch only; used by the autoregressive data-driven baseline.
OperatorPair make_grid_only_pair(const std::vector<int>& trunk_hidden, int q, int grid_n,
                                 int cnn_hidden, double velocity_scale, unsigned long long seed);
// Turns on the ballistic pass-through for a pair with a grid branch. grid
// must match the grid input resolution the pair was built with.
void enable_ballistic_skip(OperatorPair& pair, const Grid2& grid);

struct BranchInputs {
  std::vector<double> boundary;  // u_x at all boundary points, then u_y
  std::vector<double> grid4;     // channels u_x, u_y, v_x*scale, v_y*scale, each row-major
};

std::array<double, 2> evaluate_at(const OperatorPair& pair, const BranchInputs& in, double x,
                                  double y);
std::vector<std::array<double, 2>> evaluate(const OperatorPair& pair, const BranchInputs& in,
                                            const std::vector<Vec2>& points);

// Strong-form residuals at a point, unscaled. jac is the deformation
// Jacobian determinant for the hyperelastic law, 1 otherwise.
struct DynamicTerms {
  double dt = 1.0;
  InertiaForm form = InertiaForm::consistent;
  double ux_prev = 0, uy_prev = 0, vx_prev = 0, vy_prev = 0;
};
struct PointResiduals {
  double rx = 0, ry = 0, jac = 1;
};
PointResiduals residuals_at(const OperatorPair& pair, const BranchInputs& in, double x, double y,
                            const Material& mat, LossKind kind,
                            const DynamicTerms* dyn = nullptr);

struct LossComponents {
  double total = 0;
  double res = 0, bcs = 0, bcs_fix = 0;
  double res_x = 0, res_y = 0, bcs_x = 0, bcs_y = 0;
  double clamped_ratio = 0;  // share of collocation evaluations skipped for J <= 0
  bool has_fix = false;
};

struct StaticDataset {
  std::vector<Vec2> boundary_points;
  std::vector<std::vector<double>> bc_values;  // per sample: stacked boundary features
  std::vector<Vec2> fix_ux_points;             // optional roller edges with u_x pinned to zero
  std::vector<Vec2> fix_uy_points;             // optional roller edges with u_y pinned to zero
};

struct DynamicSample {
  std::vector<double> grid4;      // state at the previous step, velocity channels pre-scaled
  std::vector<double> bc_values;  // stacked boundary features at the current step
  std::vector<double> target_ux,
      target_uy;  // current-step grid values for supervised training; may be empty
};
struct DynamicDataset {
  Grid2 grid;
  std::vector<Vec2> boundary_points;
  double dt = 1.0;
  std::vector<DynamicSample> samples;
};

using PointSampler = std::function<Vec2(std::mt19937_64&)>;

// grads, when given, receives accumulated parameter gradients of the total.
LossComponents eval_loss_static(const OperatorPair& pair, const StaticDataset& data,
                                const std::vector<int>& sample_indices,
                                const std::vector<Vec2>& collocation, LossKind kind,
                                const Material& mat, double residual_divisor = 0,
                                ParamStore* grads = nullptr);
LossComponents eval_loss_dynamic(const OperatorPair& pair, const DynamicDataset& data,
                                 const std::vector<int>& sample_indices,
                                 const std::vector<Vec2>& collocation, const Material& mat,
                                 InertiaForm form = InertiaForm::consistent,
                                 double residual_divisor = 0, ParamStore* grads = nullptr);

struct TrainConfig {
  int iterations = 1000;
  int batch = 16;
  int collocation = 200;
  double lr = 1e-3;
  double lr_final = 0;  // > 0 decays the rate geometrically to this value by the last iteration
  unsigned long long seed = 0;
  double residual_divisor = 0;  // 0 selects an automatic scale
  InertiaForm inertia = InertiaForm::consistent;
  Material material = Material::from_E_nu(1000.0, 0.3);
  std::string history_path;  // per-component loss history CSV; empty disables
  int history_every = 100;
  std::string abort_checkpoint_path;  // written when a non-finite loss aborts training
  std::vector<std::string> frozen_prefixes;  // parameters with these name prefixes stay fixed
};

struct TrainResult {
  std::vector<std::array<double, 5>> history;  // iter, total, res, bcs, bcs_fix
  double initial_loss = 0, final_loss = 0;
};

TrainResult train_static(OperatorPair& pair, const StaticDataset& data, LossKind kind,
                         const PointSampler& collocation_sampler, const TrainConfig& cfg);
TrainResult train_dynamic(OperatorPair& pair, const DynamicDataset& data,
                          const PointSampler& collocation_sampler, const TrainConfig& cfg);
// Supervised mean-squared-error training against the stored grid targets.
TrainResult train_supervised_grid(OperatorPair& pair, const DynamicDataset& data,
                                  const TrainConfig& cfg);

// Prefixes that freeze every branch network of the pair (transfer learning).
std::vector<std::string> branch_prefixes(const OperatorPair& pair);

struct GridState {
  Grid2 grid;
  std::vector<double> ux, uy, vx, vy, ax, ay;
};
GridState zero_grid_state(const Grid2& grid);
std::vector<double> make_grid4(const GridState& state, double velocity_scale);

// One implicit time step: u from the operator, then the acceleration and
// velocity updates of the average-acceleration scheme.
GridState time_march_predict(const OperatorPair& pair, const GridState& prev,
                             const std::vector<double>& bc_now, double dt);
std::vector<GridState> rollout_time_march(const OperatorPair& pair, const GridState& init,
                                          const std::vector<std::vector<double>>& bc_per_step,
                                          double dt, int steps);

double rel_l2_error(const std::vector<std::array<double, 2>>& pred,
                    const std::vector<std::array<double, 2>>& truth);

std::string pair_to_text(const OperatorPair& pair);
OperatorPair pair_from_text(const std::string& text);
void save_pair(const std::string& path, const OperatorPair& pair);
OperatorPair load_pair(const std::string& path);

}  // namespace fno
