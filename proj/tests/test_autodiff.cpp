#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "fno/autodiff.hpp"

using namespace fno;

namespace {

double rel_err(double got, double want) {
  return std::abs(got - want) / std::max({std::abs(got), std::abs(want), 1.0});
}

ParamStore random_mlp(const MlpSpec& spec, unsigned seed) {
  ParamStore p;
  std::mt19937_64 rng(seed);
  init_mlp(p, spec, rng);
  return p;
}

// Scalar test function evaluated through Dual2 arithmetic.
Dual2 sample_fn(Dual2 x, Dual2 y) {
  return tanh(x * y) + x * x + 0.5 * (y * y * y) - 2.0 * (x * y);
}
double sample_fn_plain(double x, double y) {
  return std::tanh(x * y) + x * x + 0.5 * y * y * y - 2.0 * x * y;
}

}  // namespace

TEST_CASE("dual2 arithmetic reproduces finite-difference derivatives") {
  double x = 0.7, y = -0.4, h = 1e-5;
  Dual2 out = sample_fn(Dual2::var_x(x), Dual2::var_y(y));

  auto f = sample_fn_plain;
  double fdx = (f(x + h, y) - f(x - h, y)) / (2 * h);
  double fdy = (f(x, y + h) - f(x, y - h)) / (2 * h);
  double fdxx = (f(x + h, y) - 2 * f(x, y) + f(x - h, y)) / (h * h);
  double fdyy = (f(x, y + h) - 2 * f(x, y) + f(x, y - h)) / (h * h);
  double fdxy = (f(x + h, y + h) - f(x + h, y - h) - f(x - h, y + h) + f(x - h, y - h)) / (4 * h * h);

  CHECK(out.v == doctest::Approx(f(x, y)).epsilon(1e-14));
  CHECK(rel_err(out.dx, fdx) <= 1e-9);
  CHECK(rel_err(out.dy, fdy) <= 1e-9);
  CHECK(rel_err(out.dxx, fdxx) <= 1e-5);
  CHECK(rel_err(out.dyy, fdyy) <= 1e-5);
  CHECK(rel_err(out.dxy, fdxy) <= 1e-5);
}

TEST_CASE("identity single-layer network returns its input") {
  MlpSpec spec{{3, 3}, "net"};
  ParamStore p;
  Tensor& w = p.add("net.w0", 3, 3);
  for (int i = 0; i < 3; ++i) w.at(i, i) = 1.0;
  p.add("net.b0", 3, 1);
  std::vector<double> x = {0.3, -1.2, 5.0};
  CHECK(mlp_forward(p, spec, x) == x);
}

TEST_CASE("wide architecture produces the declared output length") {
  MlpSpec spec{{2, 100, 100, 100, 100, 800}, "trunk"};
  ParamStore p = random_mlp(spec, 1);
  std::vector<double> out = mlp_forward(p, spec, {0.1, 0.2});
  CHECK(out.size() == 800);
  CHECK(spec.param_count() == (size_t)(2 * 100 + 100) + 3 * (100 * 100 + 100) + (100 * 800 + 800));
}

TEST_CASE("forward perturbations match the backward input adjoint") {
  MlpSpec spec{{4, 8, 6, 3}, "net"};
  ParamStore p = random_mlp(spec, 7);
  std::vector<double> x = {0.3, -0.2, 0.9, -0.5};

  MlpTape tape;
  std::vector<double> y = mlp_forward_tape(p, spec, x, tape);
  // loss = 0.5 * ||y||^2, so the output adjoint is y itself.
  ParamStore g = p.zeros_like();
  std::vector<double> xbar = mlp_backward(p, spec, tape, y, g);

  double h = 1e-6;
  for (size_t j = 0; j < x.size(); ++j) {
    auto loss_at = [&](double xj) {
      std::vector<double> xx = x;
      xx[j] = xj;
      std::vector<double> yy = mlp_forward(p, spec, xx);
      double s = 0;
      for (double v : yy) s += v * v;
      return 0.5 * s;
    };
    double fd = (loss_at(x[j] + h) - loss_at(x[j] - h)) / (2 * h);
    CHECK(rel_err(xbar[j], fd) <= 1e-7);
  }
}

TEST_CASE("half squared norm of a linear layer has the closed-form gradient") {
  MlpSpec spec{{2, 3}, "net"};
  ParamStore p;
  Tensor& w = p.add("net.w0", 3, 2);
  std::vector<double> wvals = {0.5, -1.0, 2.0, 0.25, -0.75, 1.5};
  w.data = wvals;
  p.add("net.b0", 3, 1);

  std::vector<double> x = {1.2, -0.8};
  MlpTape tape;
  std::vector<double> y = mlp_forward_tape(p, spec, x, tape);
  ParamStore g = p.zeros_like();
  mlp_backward(p, spec, tape, y, g);

  const Tensor& wg = g.get("net.w0");
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) CHECK(wg.at(i, j) == doctest::Approx(y[i] * x[j]).epsilon(1e-14));
  const Tensor& bg = g.get("net.b0");
  for (int i = 0; i < 3; ++i) CHECK(bg.data[i] == doctest::Approx(y[i]).epsilon(1e-14));
}

TEST_CASE("mlp parameter gradients match central finite differences") {
  MlpSpec spec{{2, 6, 5, 3}, "net"};
  ParamStore p = random_mlp(spec, 21);
  std::vector<double> x = {0.4, -0.7};

  auto loss_of = [&](const ParamStore& ps) {
    std::vector<double> y = mlp_forward(ps, spec, x);
    double s = 0;
    for (double v : y) s += v * v;
    return 0.5 * s;
  };

  MlpTape tape;
  std::vector<double> y = mlp_forward_tape(p, spec, x, tape);
  ParamStore g = p.zeros_like();
  mlp_backward(p, spec, tape, y, g);

  double h = 1e-5;
  for (auto& [name, t] : p.tensors) {
    const Tensor& gt = g.get(name);
    for (size_t k = 0; k < t.size(); ++k) {
      ParamStore pp = p;
      pp.get(name).data[k] = t.data[k] + h;
      double lp = loss_of(pp);
      pp.get(name).data[k] = t.data[k] - h;
      double lm = loss_of(pp);
      CHECK(rel_err(gt.data[k], (lp - lm) / (2 * h)) <= 1e-7);
    }
  }
}

TEST_CASE("dual-valued backward matches finite differences of derivative outputs") {
  MlpSpec spec{{2, 6, 5, 3}, "net"};
  ParamStore p = random_mlp(spec, 33);
  double x = 0.3, y = -0.6;

  // Random linear functional over every derivative component of each output.
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  std::vector<Dual2> coef(3);
  for (Dual2& c : coef) c = {unif(rng), unif(rng), unif(rng), unif(rng), unif(rng), unif(rng)};

  auto loss_of = [&](const ParamStore& ps) {
    std::vector<Dual2> out = mlp_forward_dual2(ps, spec, Dual2::var_x(x), Dual2::var_y(y));
    double s = 0;
    for (int i = 0; i < 3; ++i) {
      s += coef[i].v * out[i].v + coef[i].dx * out[i].dx + coef[i].dy * out[i].dy +
           coef[i].dxx * out[i].dxx + coef[i].dxy * out[i].dxy + coef[i].dyy * out[i].dyy;
    }
    return s;
  };

  Dual2Tape tape;
  mlp_forward_dual2(p, spec, Dual2::var_x(x), Dual2::var_y(y), &tape);
  ParamStore g = p.zeros_like();
  mlp_backward_dual2(p, spec, tape, coef, g);

  double h = 1e-6;
  for (auto& [name, t] : p.tensors) {
    const Tensor& gt = g.get(name);
    for (size_t k = 0; k < t.size(); ++k) {
      ParamStore pp = p;
      pp.get(name).data[k] = t.data[k] + h;
      double lp = loss_of(pp);
      pp.get(name).data[k] = t.data[k] - h;
      double lm = loss_of(pp);
      CHECK(rel_err(gt.data[k], (lp - lm) / (2 * h)) <= 1e-5);
    }
  }
}

TEST_CASE("spatial derivatives of a constructed quadratic are exact") {
  Deriv2 d = spatial_derivatives([](Dual2 x, Dual2 y) { return x * x; }, 1.3, -2.0, 2);
  CHECK(d.v == doctest::Approx(1.69).epsilon(1e-14));
  CHECK(d.dx == doctest::Approx(2.6).epsilon(1e-14));
  CHECK(d.dxx == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(d.dxy == 0.0);
  CHECK(d.dyy == 0.0);

  Deriv2 first = spatial_derivatives([](Dual2 x, Dual2 y) { return x * x; }, 1.3, -2.0, 1);
  CHECK(first.dxx == 0.0);
  CHECK_THROWS(spatial_derivatives([](Dual2 x, Dual2 y) { return x; }, 0, 0, 3));
}

TEST_CASE("mlp hessian matches finite differences at random probes") {
  MlpSpec spec{{2, 8, 8, 1}, "net"};
  ParamStore p = random_mlp(spec, 13);
  auto eval = [&](Dual2 x, Dual2 y) { return mlp_forward_dual2(p, spec, x, y)[0]; };
  auto plain = [&](double x, double y) { return mlp_forward(p, spec, {x, y})[0]; };

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unif(-0.8, 0.8);
  double h = 1e-4;
  for (int probe = 0; probe < 20; ++probe) {
    double x = unif(rng), y = unif(rng);
    Deriv2 d = spatial_derivatives(eval, x, y, 2);
    double fdxx = (plain(x + h, y) - 2 * plain(x, y) + plain(x - h, y)) / (h * h);
    double fdyy = (plain(x, y + h) - 2 * plain(x, y) + plain(x, y - h)) / (h * h);
    double fdxy =
        (plain(x + h, y + h) - plain(x + h, y - h) - plain(x - h, y + h) + plain(x - h, y - h)) /
        (4 * h * h);
    CHECK(rel_err(d.dxx, fdxx) <= 1e-5);
    CHECK(rel_err(d.dyy, fdyy) <= 1e-5);
    CHECK(rel_err(d.dxy, fdxy) <= 1e-5);
  }
}

TEST_CASE("derivatives pass through weighted combinations linearly") {
  MlpSpec spec{{2, 8, 4}, "trunk"};
  ParamStore p = random_mlp(spec, 3);
  std::vector<double> weights = {0.5, -1.5, 2.0, 0.25};

  Dual2 combo = [&] {
    std::vector<Dual2> t = mlp_forward_dual2(p, spec, Dual2::var_x(0.2), Dual2::var_y(0.4));
    Dual2 s;
    for (int q = 0; q < 4; ++q) s = s + weights[q] * t[q];
    return s;
  }();

  std::vector<Dual2> t = mlp_forward_dual2(p, spec, Dual2::var_x(0.2), Dual2::var_y(0.4));
  double want_dxx = 0;
  for (int q = 0; q < 4; ++q) want_dxx += weights[q] * t[q].dxx;
  CHECK(combo.dxx == doctest::Approx(want_dxx).epsilon(1e-14));
}

TEST_CASE("cnn zero input with zero biases embeds to zero") {
  CnnSpec spec;
  spec.grid = 12;
  spec.hidden = 10;
  spec.out = 6;
  spec.prefix = "cnn";
  ParamStore p;
  std::mt19937_64 rng(2);
  init_cnn(p, spec, rng);
  std::vector<double> zero(spec.in_channels * spec.grid * spec.grid, 0.0);
  for (double v : cnn_forward(p, spec, zero)) CHECK(v == 0.0);
}

TEST_CASE("cnn with table-scale input produces the declared embedding") {
  CnnSpec spec;
  spec.grid = 82;
  spec.hidden = 256;
  spec.out = 800;
  spec.prefix = "cnn";
  ParamStore p;
  std::mt19937_64 rng(4);
  init_cnn(p, spec, rng);
  std::vector<double> input(4 * 82 * 82);
  std::uniform_real_distribution<double> unif(-0.01, 0.01);
  for (double& v : input) v = unif(rng);
  CHECK(cnn_forward(p, spec, input).size() == 800);
}

TEST_CASE("cnn feature maps translate with the input") {
  CnnSpec spec;
  spec.grid = 24;
  spec.hidden = 8;
  spec.out = 4;
  spec.prefix = "cnn";
  ParamStore p;
  std::mt19937_64 rng(11);
  init_cnn(p, spec, rng);

  std::vector<double> a(4 * 24 * 24, 0.0), b(4 * 24 * 24, 0.0);
  a[(0 * 24 + 12) * 24 + 12] = 1.0;
  b[(0 * 24 + 14) * 24 + 12] = 1.0;  // shifted two rows, one pooled cell

  CnnTape ta, tb;
  cnn_forward_tape(p, spec, a, ta);
  cnn_forward_tape(p, spec, b, tb);
  int m = spec.pooled();
  for (int c = 0; c < spec.c2; ++c)
    for (int i = 3; i < m - 4; ++i)
      for (int j = 3; j < m - 3; ++j) {
        double va = ta.conv2_act[((size_t)c * m + i) * m + j];
        double vb = tb.conv2_act[((size_t)c * m + i + 1) * m + j];
        CHECK(std::abs(va - vb) <= 1e-12);
      }
}

TEST_CASE("cnn parameter gradients match central finite differences") {
  CnnSpec spec;
  spec.grid = 8;
  spec.in_channels = 2;
  spec.c1 = 2;
  spec.c2 = 3;
  spec.hidden = 5;
  spec.out = 4;
  spec.prefix = "cnn";
  ParamStore p;
  std::mt19937_64 rng(6);
  init_cnn(p, spec, rng);

  std::vector<double> input(2 * 8 * 8);
  std::uniform_real_distribution<double> unif(-0.5, 0.5);
  for (double& v : input) v = unif(rng);

  auto loss_of = [&](const ParamStore& ps) {
    std::vector<double> y = cnn_forward(ps, spec, input);
    double s = 0;
    for (double v : y) s += v * v;
    return 0.5 * s;
  };

  CnnTape tape;
  std::vector<double> y = cnn_forward_tape(p, spec, input, tape);
  ParamStore g = p.zeros_like();
  cnn_backward(p, spec, tape, y, g);

  double h = 1e-6;
  for (auto& [name, t] : p.tensors) {
    const Tensor& gt = g.get(name);
    for (size_t k = 0; k < t.size(); ++k) {
      ParamStore pp = p;
      pp.get(name).data[k] = t.data[k] + h;
      double lp = loss_of(pp);
      pp.get(name).data[k] = t.data[k] - h;
      double lm = loss_of(pp);
      CHECK(rel_err(gt.data[k], (lp - lm) / (2 * h)) <= 1e-6);
    }
  }
}

TEST_CASE("adam leaves parameters alone under zero gradient") {
  MlpSpec spec{{2, 3}, "net"};
  ParamStore p = random_mlp(spec, 8);
  ParamStore before = p;
  AdamState st = AdamState::init(p, 1e-3);
  adam_step(p, p.zeros_like(), st);
  for (auto& [name, t] : p.tensors) CHECK(t.data == before.get(name).data);
}

TEST_CASE("first adam step follows the bias-corrected closed form") {
  ParamStore p;
  Tensor& w = p.add("w", 2, 1);
  w.data = {1.0, -2.0};
  ParamStore g = p.zeros_like();
  g.get("w").data = {0.3, -0.1};
  AdamState st = AdamState::init(p, 1e-3);
  adam_step(p, g, st);
  for (int i = 0; i < 2; ++i) {
    double gi = g.get("w").data[i];
    double want = (i == 0 ? 1.0 : -2.0) - 1e-3 * gi / (std::sqrt(gi * gi) + 1e-8);
    CHECK(p.get("w").data[i] == doctest::Approx(want).epsilon(1e-12));
  }
}

namespace {

struct BowlLoss : LossEvaluator {
  double forward(const ParamStore& params) override {
    const Tensor& w = params.get("w");
    double a = w.data[0] - 3.0, b = w.data[1] + 1.0;
    return 0.5 * (a * a + 4.0 * b * b);
  }
  void backward(const ParamStore& params, ParamStore& grads) override {
    const Tensor& w = params.get("w");
    grads.get("w").data[0] += w.data[0] - 3.0;
    grads.get("w").data[1] += 4.0 * (w.data[1] + 1.0);
  }
};

}  // namespace

TEST_CASE("adam descends a quadratic bowl monotonically after warmup") {
  ParamStore p;
  p.add("w", 2, 1);
  BowlLoss loss;
  AdamState st = AdamState::init(p, 1e-2);
  double prev = loss.forward(p);
  double first = prev;
  for (int k = 0; k < 1500; ++k) {
    ParamStore g = grad_params(loss, p);
    adam_step(p, g, st);
    double now = loss.forward(p);
    if (k > 50 && k < 400) CHECK(now <= prev + 1e-12);
    prev = now;
  }
  CHECK(prev < 1e-4 * first);
}

namespace {

struct PoisonLoss : LossEvaluator {
  double forward(const ParamStore&) override { return 1.0; }
  void backward(const ParamStore&, ParamStore& grads) override {
    grads.get("net.w0").data[0] = std::numeric_limits<double>::quiet_NaN();
  }
};

}  // namespace

TEST_CASE("non-finite gradients raise an error naming the tensor") {
  MlpSpec spec{{2, 3}, "net"};
  ParamStore p = random_mlp(spec, 12);
  PoisonLoss loss;
  CHECK_THROWS_WITH_AS(grad_params(loss, p), doctest::Contains("net.w0"), std::runtime_error);
}

TEST_CASE("checkpoint text round trips bitwise") {
  MlpSpec spec{{2, 7, 3}, "model"};
  ParamStore p = random_mlp(spec, 77);
  p.get("model.w0").data[0] = 1.0 / 3.0;
  p.get("model.b1").data[2] = -0.0;

  ParamStore q = params_from_text(params_to_text(p));
  CHECK(q.tensors.size() == p.tensors.size());
  for (auto& [name, t] : p.tensors) {
    const Tensor& u = q.get(name);
    CHECK(u.rows == t.rows);
    CHECK(u.cols == t.cols);
    REQUIRE(u.data.size() == t.data.size());
    for (size_t k = 0; k < t.data.size(); ++k) {
      CHECK(std::memcmp(&u.data[k], &t.data[k], sizeof(double)) == 0);
    }
  }
  CHECK_THROWS(params_from_text("w 2\n"));
  CHECK_THROWS(params_from_text("w 2 2\n1.0 2.0 3.0\n"));
}

TEST_CASE("initialization is reproducible and respects glorot bounds") {
  MlpSpec spec{{2, 16, 8}, "net"};
  ParamStore a = random_mlp(spec, 42);
  ParamStore b = random_mlp(spec, 42);
  ParamStore c = random_mlp(spec, 43);
  CHECK(a.get("net.w0").data == b.get("net.w0").data);
  CHECK(a.get("net.w1").data != c.get("net.w1").data);

  double limit0 = std::sqrt(6.0 / (2 + 16));
  for (double v : a.get("net.w0").data) CHECK(std::abs(v) <= limit0);
  for (double v : a.get("net.b0").data) CHECK(v == 0.0);
  CHECK(a.all_finite());
}
