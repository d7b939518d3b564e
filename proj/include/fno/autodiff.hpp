#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace fno {

/// Forward-mode scalar carrying first and second derivatives with respect to
/// two spatial inputs (x, y).
struct Dual2 {
  double v = 0, dx = 0, dy = 0, dxx = 0, dxy = 0, dyy = 0;

  static Dual2 var_x(double x) { return {x, 1, 0, 0, 0, 0}; }
  static Dual2 var_y(double y) { return {y, 0, 1, 0, 0, 0}; }
  static Dual2 constant(double c) { return {c, 0, 0, 0, 0, 0}; }
};

inline Dual2 operator+(const Dual2& a, const Dual2& b) {
  return {a.v + b.v, a.dx + b.dx, a.dy + b.dy, a.dxx + b.dxx, a.dxy + b.dxy, a.dyy + b.dyy};
}
inline Dual2 operator-(const Dual2& a, const Dual2& b) {
  return {a.v - b.v, a.dx - b.dx, a.dy - b.dy, a.dxx - b.dxx, a.dxy - b.dxy, a.dyy - b.dyy};
}
inline Dual2 operator*(double s, const Dual2& a) {
  return {s * a.v, s * a.dx, s * a.dy, s * a.dxx, s * a.dxy, s * a.dyy};
}
inline Dual2 operator*(const Dual2& a, const Dual2& b) {
  return {a.v * b.v,
          a.dx * b.v + a.v * b.dx,
          a.dy * b.v + a.v * b.dy,
          a.dxx * b.v + 2 * a.dx * b.dx + a.v * b.dxx,
          a.dxy * b.v + a.dx * b.dy + a.dy * b.dx + a.v * b.dxy,
          a.dyy * b.v + 2 * a.dy * b.dy + a.v * b.dyy};
}
inline Dual2 operator+(const Dual2& a, double s) {
  Dual2 r = a;
  r.v += s;
  return r;
}

inline Dual2 tanh(const Dual2& u) {
  double t = std::tanh(u.v);
  double s = 1.0 - t * t;
  double ts2 = 2.0 * t * s;
  return {t,
          s * u.dx,
          s * u.dy,
          s * u.dxx - ts2 * u.dx * u.dx,
          s * u.dxy - ts2 * u.dx * u.dy,
          s * u.dyy - ts2 * u.dy * u.dy};
}

/// Forward-mode scalar with N tracked directions, for small closed-form
/// compositions that need exact input Jacobians.
template <int N>
struct DualN {
  double v = 0;
  std::array<double, N> g{};

  static DualN seed(double value, int dir) {
    DualN d;
    d.v = value;
    d.g[dir] = 1.0;
    return d;
  }
  static DualN constant(double value) {
    DualN d;
    d.v = value;
    return d;
  }
};

template <int N>
DualN<N> operator+(const DualN<N>& a, const DualN<N>& b) {
  DualN<N> r;
  r.v = a.v + b.v;
  for (int i = 0; i < N; ++i) r.g[i] = a.g[i] + b.g[i];
  return r;
}
template <int N>
DualN<N> operator-(const DualN<N>& a, const DualN<N>& b) {
  DualN<N> r;
  r.v = a.v - b.v;
  for (int i = 0; i < N; ++i) r.g[i] = a.g[i] - b.g[i];
  return r;
}
template <int N>
DualN<N> operator*(const DualN<N>& a, const DualN<N>& b) {
  DualN<N> r;
  r.v = a.v * b.v;
  for (int i = 0; i < N; ++i) r.g[i] = a.g[i] * b.v + a.v * b.g[i];
  return r;
}
template <int N>
DualN<N> operator*(double s, const DualN<N>& a) {
  DualN<N> r;
  r.v = s * a.v;
  for (int i = 0; i < N; ++i) r.g[i] = s * a.g[i];
  return r;
}
template <int N>
DualN<N> operator+(const DualN<N>& a, double s) {
  DualN<N> r = a;
  r.v += s;
  return r;
}
template <int N>
DualN<N> operator-(const DualN<N>& a, double s) {
  DualN<N> r = a;
  r.v -= s;
  return r;
}
template <int N>
DualN<N> operator/(const DualN<N>& a, const DualN<N>& b) {
  DualN<N> r;
  r.v = a.v / b.v;
  for (int i = 0; i < N; ++i) r.g[i] = (a.g[i] - r.v * b.g[i]) / b.v;
  return r;
}
template <int N>
DualN<N> log(const DualN<N>& a) {
  DualN<N> r;
  r.v = std::log(a.v);
  for (int i = 0; i < N; ++i) r.g[i] = a.g[i] / a.v;
  return r;
}

/// Dense matrix (cols=1 for vectors), row-major.
struct Tensor {
  int rows = 0, cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), data((size_t)r * c, 0.0) {}
  double& at(int r, int c) { return data[(size_t)r * cols + c]; }
  double at(int r, int c) const { return data[(size_t)r * cols + c]; }
  size_t size() const { return data.size(); }
};

/// Named parameter tensors. Map ordering makes every traversal deterministic.
struct ParamStore {
  std::map<std::string, Tensor> tensors;

  Tensor& add(const std::string& name, int rows, int cols);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const { return tensors.count(name) > 0; }
  size_t total_size() const;
  /// Same names and shapes, all values zero.
  ParamStore zeros_like() const;
  bool all_finite() const;
};

/// Fully connected network: tanh on hidden layers, linear final layer.
/// Parameters are named <prefix>.w<l> / <prefix>.b<l>.
struct MlpSpec {
  std::vector<int> sizes;
  std::string prefix;

  int layer_count() const { return (int)sizes.size() - 1; }
  std::string wname(int l) const { return prefix + ".w" + std::to_string(l); }
  std::string bname(int l) const { return prefix + ".b" + std::to_string(l); }
  size_t param_count() const;
};

void init_mlp(ParamStore& params, const MlpSpec& spec, std::mt19937_64& rng);
std::vector<double> mlp_forward(const ParamStore& params, const MlpSpec& spec,
                                const std::vector<double>& input);

struct MlpTape {
  // act[0] is the input; act[l+1] the activation leaving layer l.
  std::vector<std::vector<double>> act;
};
std::vector<double> mlp_forward_tape(const ParamStore& params, const MlpSpec& spec,
                                     const std::vector<double>& input, MlpTape& tape);
/// Accumulates parameter gradients and returns the input adjoint.
std::vector<double> mlp_backward(const ParamStore& params, const MlpSpec& spec,
                                 const MlpTape& tape, const std::vector<double>& out_adjoint,
                                 ParamStore& grads);

struct Dual2Tape {
  std::vector<std::vector<Dual2>> pre;  // pre-activation entering each tanh
  std::vector<std::vector<Dual2>> act;  // act[0] is the input pair
};
std::vector<Dual2> mlp_forward_dual2(const ParamStore& params, const MlpSpec& spec, Dual2 x,
                                     Dual2 y, Dual2Tape* tape = nullptr);
/// Reverse pass through the dual-valued network: out_adjoint carries one
/// adjoint per derivative component of each output.
void mlp_backward_dual2(const ParamStore& params, const MlpSpec& spec, const Dual2Tape& tape,
                        const std::vector<Dual2>& out_adjoint, ParamStore& grads);

/// Two 3x3 same-padding tanh convolutions (widths c1, c2) with a 2x2 mean
/// pool between, then a tanh dense layer and a linear head.
struct CnnSpec {
  int grid = 0;
  int in_channels = 4;
  int c1 = 8, c2 = 16;
  int hidden = 0, out = 0;
  std::string prefix;

  int pooled() const { return grid / 2; }
  int flat_size() const { return c2 * pooled() * pooled(); }
  size_t param_count() const;
};

void init_cnn(ParamStore& params, const CnnSpec& spec, std::mt19937_64& rng);
std::vector<double> cnn_forward(const ParamStore& params, const CnnSpec& spec,
                                const std::vector<double>& input);

struct CnnTape {
  std::vector<double> input;      // in_channels x grid x grid
  std::vector<double> conv1_act;  // c1 x grid x grid, after tanh
  std::vector<double> pooled;     // c1 x grid/2 x grid/2
  std::vector<double> conv2_act;  // c2 x grid/2 x grid/2, after tanh
  std::vector<double> hidden_act;
  std::vector<double> out;
};
std::vector<double> cnn_forward_tape(const ParamStore& params, const CnnSpec& spec,
                                     const std::vector<double>& input, CnnTape& tape);
void cnn_backward(const ParamStore& params, const CnnSpec& spec, const CnnTape& tape,
                  const std::vector<double>& out_adjoint, ParamStore& grads);

struct Deriv2 {
  double v = 0, dx = 0, dy = 0, dxx = 0, dxy = 0, dyy = 0;
};
/// Derivatives of a smooth scalar evaluation at (x, y). order 1 leaves the
/// second-derivative entries zero; order 2 fills them; anything else throws.
Deriv2 spatial_derivatives(const std::function<Dual2(Dual2, Dual2)>& eval, double x, double y,
                           int order);

/// A differentiable loss: forward() records whatever intermediate state
/// backward() needs. grad_params runs both and checks for non-finite values.
struct LossEvaluator {
  virtual ~LossEvaluator() = default;
  virtual double forward(const ParamStore& params) = 0;
  virtual void backward(const ParamStore& params, ParamStore& grads) = 0;
};
ParamStore grad_params(LossEvaluator& loss, const ParamStore& params);

struct AdamState {
  ParamStore m, v;
  long step = 0;
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  static AdamState init(const ParamStore& params, double lr);
};
void adam_step(ParamStore& params, const ParamStore& grads, AdamState& state);

std::string params_to_text(const ParamStore& params);
ParamStore params_from_text(const std::string& text);
void save_params(const std::string& path, const ParamStore& params);
ParamStore load_params(const std::string& path);

}  // namespace fno
