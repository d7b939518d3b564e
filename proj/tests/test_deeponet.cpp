#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "fno/deeponet.hpp"

using namespace fno;

namespace {

double rel_err(double got, double want) {
  return std::abs(got - want) / std::max({std::abs(got), std::abs(want), 1.0});
}

void set_tensor(ParamStore& p, const std::string& name, const std::vector<double>& vals) {
  Tensor& t = p.get(name);
  REQUIRE(t.data.size() == vals.size());
  t.data = vals;
}

void zero_tensor(ParamStore& p, const std::string& name) {
  Tensor& t = p.get(name);
  std::fill(t.data.begin(), t.data.end(), 0.0);
}

// Pair predicting u_x = ax, u_y = by exactly: single-layer linear trunk
// t = (x, y), constant branch embeddings (a, 0) and (0, b).
OperatorPair affine_pair(int boundary_features, double a, double b) {
  OperatorPair pair = make_static_pair(boundary_features, {}, {}, 2, 0);
  for (const char* side : {"ux", "uy"}) {
    std::string s(side);
    set_tensor(pair.params, s + ".tr.w0", {1, 0, 0, 1});
    zero_tensor(pair.params, s + ".tr.b0");
    zero_tensor(pair.params, s + ".b1.w0");
  }
  set_tensor(pair.params, "ux.b1.b0", {a, 0});
  set_tensor(pair.params, "uy.b1.b0", {0, b});
  return pair;
}

std::vector<Vec2> square_boundary(int per_edge, double half) {
  std::vector<Vec2> pts;
  for (int k = 0; k < per_edge; ++k) {
    double t = -half + 2 * half * k / (per_edge - 1);
    pts.push_back({t, -half});
    pts.push_back({t, half});
    pts.push_back({-half, t});
    pts.push_back({half, t});
  }
  return pts;
}

std::vector<double> stacked_values(const std::vector<Vec2>& pts,
                                   const std::function<double(double, double)>& fx,
                                   const std::function<double(double, double)>& fy) {
  std::vector<double> row;
  for (const Vec2& p : pts) row.push_back(fx(p.x, p.y));
  for (const Vec2& p : pts) row.push_back(fy(p.x, p.y));
  return row;
}

PointSampler box_sampler(double half) {
  return [half](std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unif(-half, half);
    return Vec2{unif(rng), unif(rng)};
  };
}

}  // namespace

TEST_CASE("zeroed trunk head collapses the prediction to the bias") {
  OperatorPair pair = make_static_pair(8, {6}, {6}, 4, 1);
  int last = (int)pair.arch.trunk_ux.layer_count() - 1;
  for (const char* side : {"ux", "uy"}) {
    std::string s(side);
    zero_tensor(pair.params, pair.arch.trunk_ux.prefix == s + ".tr"
                                 ? pair.arch.trunk_ux.wname(last)
                                 : pair.arch.trunk_uy.wname(last));
    zero_tensor(pair.params, s + ".tr.b" + std::to_string(last));
  }
  pair.params.get("ux.bias").data[0] = 3.7;
  pair.params.get("uy.bias").data[0] = -1.2;
  BranchInputs in;
  in.boundary.assign(8, 0.33);
  for (double x : {-0.4, 0.0, 0.9}) {
    auto uv = evaluate_at(pair, in, x, 0.1 * x);
    CHECK(uv[0] == 3.7);
    CHECK(uv[1] == -1.2);
  }
}

TEST_CASE("latent width one obeys the dot-product law") {
  OperatorPair pair = make_static_pair(4, {}, {5}, 1, 2);
  zero_tensor(pair.params, "ux.b1.w0");
  set_tensor(pair.params, "ux.b1.b0", {2.0});
  pair.params.get("ux.bias").data[0] = 0.25;
  BranchInputs in;
  in.boundary.assign(4, 0.0);
  double x = 0.3, y = -0.5;
  std::vector<double> t = mlp_forward(pair.params, pair.arch.trunk_ux, {x, y});
  CHECK(evaluate_at(pair, in, x, y)[0] == doctest::Approx(2.0 * t[0] + 0.25).epsilon(1e-15));
}

TEST_CASE("prediction is linear in the branch embedding") {
  OperatorPair pair = make_static_pair(6, {}, {8, 8}, 5, 3);  // single-layer branch is linear
  BranchInputs a, b, sum;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> unif(-1, 1);
  for (int i = 0; i < 6; ++i) {
    a.boundary.push_back(unif(rng));
    b.boundary.push_back(unif(rng));
    sum.boundary.push_back(a.boundary[i] + b.boundary[i]);
  }
  double bias = pair.params.get("ux.bias").data[0];
  double ga = evaluate_at(pair, a, 0.2, 0.7)[0] - bias;
  double gb = evaluate_at(pair, b, 0.2, 0.7)[0] - bias;
  double gs = evaluate_at(pair, sum, 0.2, 0.7)[0] - bias;
  CHECK(rel_err(gs, ga + gb) <= 1e-12);
}

TEST_CASE("constant-strain fields have exactly zero static loss") {
  auto pts = square_boundary(6, 0.35);
  int nb = (int)pts.size();
  OperatorPair pair = affine_pair(2 * nb, 0.013, -0.007);

  StaticDataset data;
  data.boundary_points = pts;
  data.bc_values.push_back(stacked_values(
      pts, [](double x, double) { return 0.013 * x; }, [](double, double y) { return -0.007 * y; }));

  std::vector<Vec2> colloc = {{0.0, 0.0}, {0.1, 0.2}, {-0.3, 0.05}, {0.21, -0.17}};
  Material mat = Material::from_E_nu(1000.0, 0.3);
  LossComponents c = eval_loss_static(pair, data, {0}, colloc, LossKind::linear_static, mat);
  CHECK(c.res == 0.0);
  CHECK(c.bcs == 0.0);
  CHECK(c.total == 0.0);
}

TEST_CASE("zero-displacement networks have exactly zero hyperelastic loss") {
  auto pts = square_boundary(5, 0.35);
  int nb = (int)pts.size();
  OperatorPair pair = make_static_pair(2 * nb, {}, {6}, 4, 5);
  zero_tensor(pair.params, "ux.b1.w0");
  zero_tensor(pair.params, "ux.b1.b0");
  zero_tensor(pair.params, "uy.b1.w0");
  zero_tensor(pair.params, "uy.b1.b0");

  StaticDataset data;
  data.boundary_points = pts;
  data.bc_values.push_back(std::vector<double>(2 * nb, 0.0));
  std::vector<Vec2> colloc = {{0.05, 0.0}, {-0.2, 0.11}, {0.3, -0.3}};
  Material mat = Material::from_E_nu(1000.0, 0.3);
  LossComponents c = eval_loss_static(pair, data, {0}, colloc, LossKind::hyperelastic, mat);
  CHECK(c.total == 0.0);
  CHECK(c.clamped_ratio == 0.0);
}

TEST_CASE("hyperelastic residual linearizes at small amplitude") {
  OperatorPair pair = make_static_pair(6, {}, {10, 10}, 8, 7);
  Material mat = Material::from_E_nu(1000.0, 0.3);
  BranchInputs in;
  in.boundary.assign(6, 0.5);

  auto scaled_defect = [&](double amp) {
    OperatorPair scaled = pair;
    for (const char* n : {"ux.b1.w0", "ux.b1.b0", "uy.b1.w0", "uy.b1.b0"}) {
      for (double& v : scaled.params.get(n).data) v *= amp;
    }
    for (const char* n : {"ux.bias", "uy.bias"}) scaled.params.get(n).data[0] = 0.0;
    double worst = 0;
    for (auto [x, y] : {std::pair{0.1, 0.2}, {-0.25, 0.0}, {0.3, -0.3}}) {
      PointResiduals lin = residuals_at(scaled, in, x, y, mat, LossKind::linear_static);
      PointResiduals hyp = residuals_at(scaled, in, x, y, mat, LossKind::hyperelastic);
      worst = std::max({worst, std::abs(hyp.rx - lin.rx), std::abs(hyp.ry - lin.ry)});
    }
    return worst;
  };

  double d2 = scaled_defect(1e-2);
  double d3 = scaled_defect(1e-3);
  CHECK(d3 > 0.0);
  double slope = d2 / d3;  // quadratic defect scales 100x per decade
  CHECK(slope >= 30.0);
  CHECK(slope <= 300.0);
}

TEST_CASE("loss components from the batched path match pointwise evaluation") {
  auto pts = square_boundary(5, 0.35);
  int nb = (int)pts.size();
  OperatorPair pair = make_static_pair(2 * nb, {12}, {10, 10}, 6, 11);
  Material mat = Material::from_E_nu(800.0, 0.25);

  StaticDataset data;
  data.boundary_points = pts;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> unif(-0.01, 0.01);
  for (int s = 0; s < 3; ++s) {
    std::vector<double> row(2 * nb);
    for (double& v : row) v = unif(rng);
    data.bc_values.push_back(row);
  }
  std::vector<Vec2> colloc;
  for (int k = 0; k < 7; ++k) colloc.push_back({0.05 * k - 0.15, 0.04 * k - 0.1});

  for (LossKind kind : {LossKind::linear_static, LossKind::hyperelastic}) {
    double divisor = mat.lambda + 2 * mat.mu;
    LossComponents fast = eval_loss_static(pair, data, {0, 1, 2}, colloc, kind, mat);

    double res_x = 0, res_y = 0, bcs_x = 0, bcs_y = 0;
    for (int s = 0; s < 3; ++s) {
      BranchInputs in;
      in.boundary = data.bc_values[s];
      for (const Vec2& p : colloc) {
        PointResiduals r = residuals_at(pair, in, p.x, p.y, mat, kind);
        res_x += r.rx * r.rx / (divisor * divisor);
        res_y += r.ry * r.ry / (divisor * divisor);
      }
      auto pred = evaluate(pair, in, pts);
      for (int p = 0; p < nb; ++p) {
        double ex = pred[p][0] - data.bc_values[s][p];
        double ey = pred[p][1] - data.bc_values[s][p + nb];
        bcs_x += ex * ex;
        bcs_y += ey * ey;
      }
    }
    res_x /= 3.0 * colloc.size();
    res_y /= 3.0 * colloc.size();
    bcs_x /= 3.0 * nb;
    bcs_y /= 3.0 * nb;
    CHECK(rel_err(fast.res_x, res_x) <= 1e-12);
    CHECK(rel_err(fast.res_y, res_y) <= 1e-12);
    CHECK(rel_err(fast.bcs_x, bcs_x) <= 1e-12);
    CHECK(rel_err(fast.bcs_y, bcs_y) <= 1e-12);
    CHECK(fast.total == doctest::Approx(fast.res + fast.bcs + fast.bcs_fix).epsilon(1e-15));
    CHECK(fast.res_x >= 0);
    CHECK(fast.bcs_x >= 0);
  }
}

TEST_CASE("static and hyperelastic loss gradients match finite differences") {
  auto pts = square_boundary(3, 0.35);
  int nb = (int)pts.size();
  OperatorPair pair = make_static_pair(2 * nb, {5}, {6, 6}, 4, 13);
  Material mat = Material::from_E_nu(900.0, 0.3);

  StaticDataset data;
  data.boundary_points = pts;
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> unif(-0.02, 0.02);
  for (int s = 0; s < 2; ++s) {
    std::vector<double> row(2 * nb);
    for (double& v : row) v = unif(rng);
    data.bc_values.push_back(row);
  }
  data.fix_ux_points = {{-0.35, 0.0}, {-0.35, 0.2}};
  std::vector<Vec2> colloc = {{0.0, 0.0}, {0.12, -0.2}, {-0.28, 0.15}, {0.2, 0.2}};

  for (LossKind kind : {LossKind::linear_static, LossKind::hyperelastic}) {
    ParamStore grads = pair.params.zeros_like();
    eval_loss_static(pair, data, {0, 1}, colloc, kind, mat, 0, &grads);

    double h = 1e-6;
    for (auto& [name, t] : pair.params.tensors) {
      const Tensor& gt = grads.get(name);
      for (size_t k = 0; k < t.size(); ++k) {
        OperatorPair pp = pair;
        pp.params.get(name).data[k] = t.data[k] + h;
        double lp = eval_loss_static(pp, data, {0, 1}, colloc, kind, mat).total;
        pp.params.get(name).data[k] = t.data[k] - h;
        double lm = eval_loss_static(pp, data, {0, 1}, colloc, kind, mat).total;
        double fd = (lp - lm) / (2 * h);
        CHECK(std::abs(gt.data[k] - fd) <= 1e-5 * std::max({1.0, std::abs(fd)}));
      }
    }
  }
}

namespace {

DynamicDataset tiny_dynamic_dataset(const OperatorPair& pair, int nb_pts, unsigned seed) {
  DynamicDataset data;
  data.grid = {-0.35, -0.35, 0.35, 0.35, pair.arch.grid_ux.grid};
  data.dt = 0.02;
  data.boundary_points = square_boundary(nb_pts, 0.35);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-0.01, 0.01);
  size_t n2 = (size_t)data.grid.n * data.grid.n;
  for (int s = 0; s < 2; ++s) {
    DynamicSample smp;
    smp.grid4.resize(4 * n2);
    for (double& v : smp.grid4) v = unif(rng);
    smp.bc_values.resize(2 * data.boundary_points.size());
    for (double& v : smp.bc_values) v = unif(rng);
    smp.target_ux.assign(n2, 0.0);
    smp.target_uy.assign(n2, 0.0);
    for (size_t k = 0; k < n2; ++k) {
      smp.target_ux[k] = unif(rng);
      smp.target_uy[k] = unif(rng);
    }
    data.samples.push_back(std::move(smp));
  }
  return data;
}

}  // namespace

TEST_CASE("dynamic loss gradients match finite differences") {
  OperatorPair pair = make_dynamic_pair(2 * 4 * 3, {5}, {6, 6}, 4, 8, 4, 0.02, 19);
  Material mat = Material::from_E_nu(1000.0, 0.3, 5.0);
  DynamicDataset data = tiny_dynamic_dataset(pair, 3, 23);
  std::vector<Vec2> colloc = {{0.0, 0.0}, {0.15, -0.1}, {-0.2, 0.25}};

  ParamStore grads = pair.params.zeros_like();
  eval_loss_dynamic(pair, data, {0, 1}, colloc, mat, InertiaForm::consistent, 0, &grads);

  std::vector<std::pair<std::string, size_t>> probes;
  std::mt19937_64 rng(5);
  for (auto& [name, t] : pair.params.tensors) {
    for (size_t k = 0; k < t.size(); ++k) probes.push_back({name, k});
  }
  std::shuffle(probes.begin(), probes.end(), rng);
  if (probes.size() > 400) probes.resize(400);

  double h = 1e-6;
  for (auto& [name, k] : probes) {
    OperatorPair pp = pair;
    double orig = pair.params.get(name).data[k];
    pp.params.get(name).data[k] = orig + h;
    double lp = eval_loss_dynamic(pp, data, {0, 1}, colloc, mat).total;
    pp.params.get(name).data[k] = orig - h;
    double lm = eval_loss_dynamic(pp, data, {0, 1}, colloc, mat).total;
    double fd = (lp - lm) / (2 * h);
    CHECK(std::abs(grads.get(name).data[k] - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("dynamic residual equals the static operator minus the inertia term") {
  OperatorPair pair = make_static_pair(6, {8}, {8, 8}, 5, 29);
  Material mat = Material::from_E_nu(1000.0, 0.3, 5.0);
  BranchInputs in;
  in.boundary = {0.01, -0.02, 0.005, 0.0, 0.015, -0.01};
  double x = 0.12, y = -0.2;

  DynamicTerms dyn;
  dyn.dt = 0.05;
  dyn.ux_prev = 0.003;
  dyn.uy_prev = -0.001;
  dyn.vx_prev = 0.2;
  dyn.vy_prev = -0.1;

  PointResiduals rs = residuals_at(pair, in, x, y, mat, LossKind::linear_static);
  PointResiduals rd = residuals_at(pair, in, x, y, mat, LossKind::dynamic, &dyn);
  auto uv = evaluate_at(pair, in, x, y);
  double coeff = 2.0 * mat.rho / (dyn.dt * dyn.dt);
  CHECK(rel_err(rd.rx, rs.rx - coeff * (uv[0] - dyn.ux_prev - dyn.dt * dyn.vx_prev)) <= 1e-12);
  CHECK(rel_err(rd.ry, rs.ry - coeff * (uv[1] - dyn.uy_prev - dyn.dt * dyn.vy_prev)) <= 1e-12);

  DynamicTerms printed = dyn;
  printed.form = InertiaForm::printed;
  PointResiduals rp = residuals_at(pair, in, x, y, mat, LossKind::dynamic, &printed);
  double coeff_p = 8.0 / (dyn.dt * dyn.dt);
  CHECK(rel_err(rp.rx, rs.rx - coeff_p * (uv[0] - dyn.ux_prev - dyn.dt * dyn.vx_prev)) <= 1e-12);
}

TEST_CASE("steady state is a fixed point of time marching") {
  OperatorPair pair = make_dynamic_pair(8, {4}, {4}, 3, 8, 4, 1.0, 31);
  zero_tensor(pair.params, "ux.b1.w0");
  zero_tensor(pair.params, "ux.b1.b0");
  zero_tensor(pair.params, "uy.b1.w0");
  zero_tensor(pair.params, "uy.b1.b0");
  pair.params.get("ux.bias").data[0] = 0.01;
  pair.params.get("uy.bias").data[0] = -0.02;

  Grid2 grid{-0.35, -0.35, 0.35, 0.35, 8};
  GridState prev = zero_grid_state(grid);
  std::fill(prev.ux.begin(), prev.ux.end(), 0.01);
  std::fill(prev.uy.begin(), prev.uy.end(), -0.02);

  std::vector<double> bc(8, 0.0);
  GridState next = time_march_predict(pair, prev, bc, 0.1);
  for (size_t k = 0; k < next.ux.size(); ++k) {
    CHECK(next.ux[k] == 0.01);
    CHECK(next.uy[k] == -0.02);
    CHECK(next.ax[k] == 0.0);
    CHECK(next.vx[k] == 0.0);
  }
}

TEST_CASE("affine fields give exactly zero dynamic loss when the state carries them") {
  int nb_per_edge = 4;
  auto pts = square_boundary(nb_per_edge, 0.35);
  int nb = (int)pts.size();
  int grid_n = 8;
  OperatorPair pair = make_dynamic_pair(2 * nb, {}, {}, 2, grid_n, 4, 1.0, 37);
  double a = 0.011, b = -0.009;
  for (const char* side : {"ux", "uy"}) {
    std::string s(side);
    set_tensor(pair.params, s + ".tr.w0", {1, 0, 0, 1});
    zero_tensor(pair.params, s + ".tr.b0");
    // boundary branch outputs 1 so the merged embedding is the grid branch's
    zero_tensor(pair.params, s + ".b1.w0");
    set_tensor(pair.params, s + ".b1.b0", {1, 1});
    for (const char* t : {".b2.conv0w", ".b2.conv0b", ".b2.conv1w", ".b2.conv1b", ".b2.dense0w",
                          ".b2.dense0b", ".b2.dense1w"})
      zero_tensor(pair.params, s + t);
  }
  set_tensor(pair.params, "ux.b2.dense1b", {a, 0});
  set_tensor(pair.params, "uy.b2.dense1b", {0, b});

  DynamicDataset data;
  data.grid = {-0.35, -0.35, 0.35, 0.35, grid_n};
  data.dt = 0.05;
  data.boundary_points = pts;
  DynamicSample smp;
  size_t n2 = (size_t)grid_n * grid_n;
  smp.grid4.assign(4 * n2, 0.0);
  for (int i = 0; i < grid_n; ++i)
    for (int j = 0; j < grid_n; ++j) {
      Vec2 p = data.grid.point(i, j);
      smp.grid4[(size_t)i * grid_n + j] = a * p.x;           // u_x channel
      smp.grid4[n2 + (size_t)i * grid_n + j] = b * p.y;      // u_y channel
    }
  smp.bc_values = stacked_values(
      pts, [&](double x, double) { return a * x; }, [&](double, double y) { return b * y; });
  data.samples.push_back(smp);

  std::vector<Vec2> colloc = {{0.0, 0.0}, {0.1, -0.14}, {-0.21, 0.3}};
  Material mat = Material::from_E_nu(1000.0, 0.3, 5.0);
  LossComponents c = eval_loss_dynamic(pair, data, {0}, colloc, mat);
  CHECK(c.total <= 1e-20);
}

TEST_CASE("zero training iterations leave parameters untouched") {
  auto pts = square_boundary(3, 0.35);
  OperatorPair pair = make_static_pair(2 * (int)pts.size(), {6}, {6}, 4, 41);
  ParamStore before = pair.params;
  StaticDataset data;
  data.boundary_points = pts;
  data.bc_values.push_back(std::vector<double>(2 * pts.size(), 0.001));
  TrainConfig cfg;
  cfg.iterations = 0;
  train_static(pair, data, LossKind::linear_static, box_sampler(0.35), cfg);
  for (auto& [name, t] : pair.params.tensors) CHECK(t.data == before.get(name).data);
}

TEST_CASE("short static training run reduces the loss and logs history") {
  auto pts = square_boundary(5, 0.35);
  int nb = (int)pts.size();
  OperatorPair pair = make_static_pair(2 * nb, {16}, {16, 16}, 8, 43);

  StaticDataset data;
  data.boundary_points = pts;
  std::mt19937_64 rng(47);
  std::uniform_real_distribution<double> unif(-0.01, 0.01);
  for (int s = 0; s < 8; ++s) {
    double a = unif(rng), b = unif(rng);
    data.bc_values.push_back(stacked_values(
        pts, [a](double x, double) { return a * x; }, [b](double, double y) { return b * y; }));
  }

  std::vector<Vec2> probe;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) probe.push_back({-0.3 + 0.2 * i, -0.3 + 0.2 * j});
  std::vector<int> all = {0, 1, 2, 3, 4, 5, 6, 7};
  Material mat = Material::from_E_nu(1000.0, 0.3);
  double before =
      eval_loss_static(pair, data, all, probe, LossKind::linear_static, mat).total;

  TrainConfig cfg;
  cfg.iterations = 1200;
  cfg.batch = 4;
  cfg.collocation = 24;
  cfg.lr = 2e-3;
  cfg.seed = 7;
  cfg.material = mat;
  cfg.history_every = 50;
  cfg.history_path = "deeponet_history_test.csv";
  TrainResult r = train_static(pair, data, LossKind::linear_static, box_sampler(0.35), cfg);

  double after = eval_loss_static(pair, data, all, probe, LossKind::linear_static, mat).total;
  CHECK(after < 0.3 * before);
  CHECK(r.history.size() >= 3);
  CHECK(r.history.front()[0] == 0);
  CHECK(r.history.back()[0] == 1199);

  FILE* f = std::fopen("deeponet_history_test.csv", "r");
  REQUIRE(f != nullptr);
  char line[256];
  REQUIRE(std::fgets(line, sizeof line, f) != nullptr);
  CHECK(std::string(line) == "iter,loss_total,loss_res,loss_bcs\n");
  std::fclose(f);
  std::remove("deeponet_history_test.csv");
}

TEST_CASE("non-finite loss aborts training and restores the last finite state") {
  auto pts = square_boundary(3, 0.35);
  int nb = (int)pts.size();
  OperatorPair pair = make_static_pair(2 * nb, {4}, {4}, 3, 53);

  StaticDataset data;
  data.boundary_points = pts;
  std::vector<double> row(2 * nb, 0.001);
  row[0] = std::numeric_limits<double>::quiet_NaN();
  data.bc_values.push_back(row);

  TrainConfig cfg;
  cfg.iterations = 10;
  cfg.batch = 1;
  cfg.collocation = 4;
  cfg.abort_checkpoint_path = "deeponet_abort_test.ckpt";
  ParamStore before = pair.params;
  CHECK_THROWS_AS(train_static(pair, data, LossKind::linear_static, box_sampler(0.35), cfg),
                  std::runtime_error);
  for (auto& [name, t] : pair.params.tensors) CHECK(t.data == before.get(name).data);
  OperatorPair saved = load_pair("deeponet_abort_test.ckpt");
  CHECK(saved.params.get("ux.tr.w0").data == before.get("ux.tr.w0").data);
  std::remove("deeponet_abort_test.ckpt");
}

TEST_CASE("frozen branch prefixes stay bitwise fixed while the trunk adapts") {
  auto pts = square_boundary(4, 0.35);
  int nb = (int)pts.size();
  OperatorPair pair = make_static_pair(2 * nb, {8}, {8}, 4, 59);

  StaticDataset data;
  data.boundary_points = pts;
  std::mt19937_64 rng(61);
  std::uniform_real_distribution<double> unif(-0.01, 0.01);
  for (int s = 0; s < 4; ++s) {
    std::vector<double> row(2 * nb);
    for (double& v : row) v = unif(rng);
    data.bc_values.push_back(row);
  }

  ParamStore before = pair.params;
  TrainConfig cfg;
  cfg.iterations = 30;
  cfg.batch = 2;
  cfg.collocation = 8;
  cfg.frozen_prefixes = branch_prefixes(pair);
  train_static(pair, data, LossKind::linear_static, box_sampler(0.35), cfg);

  CHECK(pair.params.get("ux.b1.w0").data == before.get("ux.b1.w0").data);
  CHECK(pair.params.get("ux.b1.b0").data == before.get("ux.b1.b0").data);
  CHECK(pair.params.get("uy.b1.w0").data == before.get("uy.b1.w0").data);
  CHECK(pair.params.get("ux.tr.w0").data != before.get("ux.tr.w0").data);
}

TEST_CASE("operator checkpoints round trip bitwise") {
  OperatorPair dyn = make_dynamic_pair(12, {6}, {8, 8}, 5, 8, 4, 0.015, 67);
  save_pair("deeponet_pair_test.ckpt", dyn);
  OperatorPair loaded = load_pair("deeponet_pair_test.ckpt");
  std::remove("deeponet_pair_test.ckpt");

  CHECK(loaded.arch.q == dyn.arch.q);
  CHECK(loaded.arch.boundary_features == dyn.arch.boundary_features);
  CHECK(loaded.arch.velocity_scale == dyn.arch.velocity_scale);
  CHECK(loaded.arch.has_grid_branch);
  CHECK(loaded.arch.trunk_ux.sizes == dyn.arch.trunk_ux.sizes);
  for (auto& [name, t] : dyn.params.tensors) CHECK(loaded.params.get(name).data == t.data);

  BranchInputs in;
  in.boundary.assign(12, 0.01);
  in.grid4.assign(4 * 8 * 8, 0.002);
  auto a = evaluate_at(dyn, in, 0.1, 0.2);
  auto b = evaluate_at(loaded, in, 0.1, 0.2);
  CHECK(a[0] == b[0]);
  CHECK(a[1] == b[1]);

  OperatorPair stat = make_static_pair(10, {5}, {6}, 4, 71);
  save_pair("deeponet_pair_test2.ckpt", stat);
  OperatorPair loaded2 = load_pair("deeponet_pair_test2.ckpt");
  std::remove("deeponet_pair_test2.ckpt");
  CHECK(!loaded2.arch.has_grid_branch);
  for (auto& [name, t] : stat.params.tensors) CHECK(loaded2.params.get(name).data == t.data);
}

TEST_CASE("grid-only rollout of a constant predictor stays constant") {
  OperatorPair pair = make_grid_only_pair({6}, 4, 8, 4, 1.0, 73);
  for (const char* side : {"ux", "uy"}) {
    std::string s(side);
    for (const char* t : {".b2.conv0w", ".b2.conv0b", ".b2.conv1w", ".b2.conv1b", ".b2.dense0w",
                          ".b2.dense0b", ".b2.dense1w", ".b2.dense1b"})
      zero_tensor(pair.params, s + t);
  }
  pair.params.get("ux.bias").data[0] = 0.004;
  pair.params.get("uy.bias").data[0] = -0.003;

  Grid2 grid{-0.35, -0.35, 0.35, 0.35, 8};
  GridState init = zero_grid_state(grid);
  std::fill(init.ux.begin(), init.ux.end(), 0.004);
  std::fill(init.uy.begin(), init.uy.end(), -0.003);

  auto states = rollout_time_march(pair, init, {}, 0.05, 5);
  REQUIRE(states.size() == 5);
  for (const GridState& s : states) {
    for (double v : s.ux) CHECK(v == 0.004);
    for (double v : s.vy) CHECK(v == 0.0);
  }
}

TEST_CASE("supervised grid training reduces the target mismatch") {
  OperatorPair pair = make_grid_only_pair({12, 12}, 6, 8, 6, 1.0, 79);
  DynamicDataset data = tiny_dynamic_dataset(make_dynamic_pair(6, {4}, {12, 12}, 6, 8, 6, 1.0, 80),
                                             2, 83);
  // constant targets are learnable by bias alone
  for (DynamicSample& s : data.samples) {
    std::fill(s.target_ux.begin(), s.target_ux.end(), 0.006);
    std::fill(s.target_uy.begin(), s.target_uy.end(), -0.002);
  }
  TrainConfig cfg;
  cfg.iterations = 150;
  cfg.batch = 2;
  cfg.lr = 5e-3;
  TrainResult r = train_supervised_grid(pair, data, cfg);
  CHECK(r.final_loss < 0.2 * r.initial_loss);
}

TEST_CASE("relative l2 distance behaves as a norm ratio") {
  std::vector<std::array<double, 2>> truth = {{1, 0}, {0, 1}, {1, 1}};
  CHECK(rel_l2_error(truth, truth) == 0.0);
  std::vector<std::array<double, 2>> pred = {{1.1, 0}, {0, 1.1}, {1.1, 1.1}};
  CHECK(rel_l2_error(pred, truth) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK_THROWS(rel_l2_error(pred, {{1, 0}}));
}

TEST_CASE("input shape mismatches are rejected") {
  OperatorPair pair = make_static_pair(8, {4}, {4}, 3, 89);
  BranchInputs bad;
  bad.boundary.assign(7, 0.0);
  CHECK_THROWS(evaluate_at(pair, bad, 0, 0));
  OperatorPair dyn = make_dynamic_pair(8, {4}, {4}, 3, 8, 4, 1.0, 90);
  BranchInputs bad2;
  bad2.boundary.assign(8, 0.0);
  bad2.grid4.assign(10, 0.0);
  CHECK_THROWS(evaluate_at(dyn, bad2, 0, 0));
}
