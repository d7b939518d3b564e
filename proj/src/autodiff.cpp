#include "fno/autodiff.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "fno/ioutil.hpp"

namespace fno {

Tensor& ParamStore::add(const std::string& name, int rows, int cols) {
  if (name.find_first_of(" \t\n") != std::string::npos)
    throw std::invalid_argument("tensor name must not contain whitespace: " + name);
  if (tensors.count(name)) throw std::invalid_argument("duplicate tensor: " + name);
  return tensors[name] = Tensor(rows, cols);
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::out_of_range("missing tensor: " + name);
  return it->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::out_of_range("missing tensor: " + name);
  return it->second;
}

size_t ParamStore::total_size() const {
  size_t n = 0;
  for (const auto& [name, t] : tensors) n += t.size();
  return n;
}

ParamStore ParamStore::zeros_like() const {
  ParamStore z;
  for (const auto& [name, t] : tensors) z.tensors[name] = Tensor(t.rows, t.cols);
  return z;
}

bool ParamStore::all_finite() const {
  for (const auto& [name, t] : tensors)
    for (double v : t.data)
      if (!std::isfinite(v)) return false;
  return true;
}

namespace {

double uniform_symmetric(std::mt19937_64& rng) {
  // 53-bit mantissa draw, stable across standard library implementations.
  double u = (double)(rng() >> 11) * (1.0 / 9007199254740992.0);
  return 2.0 * u - 1.0;
}

void glorot_fill(Tensor& w, int fan_in, int fan_out, std::mt19937_64& rng) {
  double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (double& v : w.data) v = limit * uniform_symmetric(rng);
}

}  // namespace

size_t MlpSpec::param_count() const {
  size_t n = 0;
  for (int l = 0; l < layer_count(); ++l) n += (size_t)sizes[l + 1] * sizes[l] + sizes[l + 1];
  return n;
}

void init_mlp(ParamStore& params, const MlpSpec& spec, std::mt19937_64& rng) {
  if (spec.sizes.size() < 2) throw std::invalid_argument("init_mlp: need at least two sizes");
  for (int l = 0; l < spec.layer_count(); ++l) {
    Tensor& w = params.add(spec.wname(l), spec.sizes[l + 1], spec.sizes[l]);
    glorot_fill(w, spec.sizes[l], spec.sizes[l + 1], rng);
    params.add(spec.bname(l), spec.sizes[l + 1], 1);
  }
}

std::vector<double> mlp_forward_tape(const ParamStore& params, const MlpSpec& spec,
                                     const std::vector<double>& input, MlpTape& tape) {
  if ((int)input.size() != spec.sizes[0]) throw std::invalid_argument("mlp_forward: input size");
  int L = spec.layer_count();
  tape.act.assign(L + 1, {});
  tape.act[0] = input;
  for (int l = 0; l < L; ++l) {
    const Tensor& w = params.get(spec.wname(l));
    const Tensor& b = params.get(spec.bname(l));
    const std::vector<double>& a = tape.act[l];
    std::vector<double> z(w.rows);
    for (int i = 0; i < w.rows; ++i) {
      double s = b.data[i];
      const double* row = &w.data[(size_t)i * w.cols];
      for (int j = 0; j < w.cols; ++j) s += row[j] * a[j];
      z[i] = (l + 1 < L) ? std::tanh(s) : s;
    }
    tape.act[l + 1] = std::move(z);
  }
  return tape.act[L];
}

std::vector<double> mlp_forward(const ParamStore& params, const MlpSpec& spec,
                                const std::vector<double>& input) {
  MlpTape tape;
  return mlp_forward_tape(params, spec, input, tape);
}

std::vector<double> mlp_backward(const ParamStore& params, const MlpSpec& spec,
                                 const MlpTape& tape, const std::vector<double>& out_adjoint,
                                 ParamStore& grads) {
  int L = spec.layer_count();
  if ((int)out_adjoint.size() != spec.sizes[L]) throw std::invalid_argument("mlp_backward: size");
  std::vector<double> zbar = out_adjoint;  // adjoint of the layer pre-activation
  for (int l = L - 1; l >= 0; --l) {
    const Tensor& w = params.get(spec.wname(l));
    Tensor& wg = grads.get(spec.wname(l));
    Tensor& bg = grads.get(spec.bname(l));
    const std::vector<double>& a = tape.act[l];
    std::vector<double> abar(w.cols, 0.0);
    for (int i = 0; i < w.rows; ++i) {
      double zi = zbar[i];
      bg.data[i] += zi;
      const double* row = &w.data[(size_t)i * w.cols];
      double* grow = &wg.data[(size_t)i * w.cols];
      for (int j = 0; j < w.cols; ++j) {
        grow[j] += zi * a[j];
        abar[j] += zi * row[j];
      }
    }
    if (l > 0) {
      // act[l] = tanh(pre), so the tanh adjoint uses the stored activation.
      for (int j = 0; j < w.cols; ++j) abar[j] *= 1.0 - a[j] * a[j];
    }
    zbar = std::move(abar);
  }
  return zbar;
}

std::vector<Dual2> mlp_forward_dual2(const ParamStore& params, const MlpSpec& spec, Dual2 x,
                                     Dual2 y, Dual2Tape* tape) {
  if (spec.sizes[0] != 2) throw std::invalid_argument("mlp_forward_dual2: first size must be 2");
  int L = spec.layer_count();
  Dual2Tape local;
  Dual2Tape& tp = tape ? *tape : local;
  tp.pre.assign(L, {});
  tp.act.assign(L + 1, {});
  tp.act[0] = {x, y};
  for (int l = 0; l < L; ++l) {
    const Tensor& w = params.get(spec.wname(l));
    const Tensor& b = params.get(spec.bname(l));
    const std::vector<Dual2>& a = tp.act[l];
    std::vector<Dual2> u(w.rows);
    for (int i = 0; i < w.rows; ++i) {
      double sv = b.data[i], sdx = 0, sdy = 0, sdxx = 0, sdxy = 0, sdyy = 0;
      const double* row = &w.data[(size_t)i * w.cols];
      for (int j = 0; j < w.cols; ++j) {
        double wij = row[j];
        const Dual2& aj = a[j];
        sv += wij * aj.v;
        sdx += wij * aj.dx;
        sdy += wij * aj.dy;
        sdxx += wij * aj.dxx;
        sdxy += wij * aj.dxy;
        sdyy += wij * aj.dyy;
      }
      u[i] = {sv, sdx, sdy, sdxx, sdxy, sdyy};
    }
    tp.pre[l] = u;
    if (l + 1 < L) {
      std::vector<Dual2> act(w.rows);
      for (int i = 0; i < w.rows; ++i) act[i] = tanh(u[i]);
      tp.act[l + 1] = std::move(act);
    } else {
      tp.act[l + 1] = std::move(u);
    }
  }
  return tp.act[L];
}

namespace {

// Adjoint of y = tanh(u) through all six derivative components.
Dual2 tanh_adjoint_dual2(const Dual2& u, const Dual2& ybar) {
  double t = std::tanh(u.v);
  double s = 1.0 - t * t;
  double ts = t * s;
  double q = s * s - 2.0 * t * t * s;  // d(t*s)/du.v
  Dual2 ubar;
  ubar.v = s * ybar.v -
           2.0 * ts * (u.dx * ybar.dx + u.dy * ybar.dy + u.dxx * ybar.dxx + u.dxy * ybar.dxy +
                       u.dyy * ybar.dyy) -
           2.0 * q * (u.dx * u.dx * ybar.dxx + u.dx * u.dy * ybar.dxy + u.dy * u.dy * ybar.dyy);
  ubar.dx = s * ybar.dx - 4.0 * ts * u.dx * ybar.dxx - 2.0 * ts * u.dy * ybar.dxy;
  ubar.dy = s * ybar.dy - 4.0 * ts * u.dy * ybar.dyy - 2.0 * ts * u.dx * ybar.dxy;
  ubar.dxx = s * ybar.dxx;
  ubar.dxy = s * ybar.dxy;
  ubar.dyy = s * ybar.dyy;
  return ubar;
}

}  // namespace

void mlp_backward_dual2(const ParamStore& params, const MlpSpec& spec, const Dual2Tape& tape,
                        const std::vector<Dual2>& out_adjoint, ParamStore& grads) {
  int L = spec.layer_count();
  if ((int)out_adjoint.size() != spec.sizes[L])
    throw std::invalid_argument("mlp_backward_dual2: size");
  std::vector<Dual2> ubar = out_adjoint;
  for (int l = L - 1; l >= 0; --l) {
    const Tensor& w = params.get(spec.wname(l));
    Tensor& wg = grads.get(spec.wname(l));
    Tensor& bg = grads.get(spec.bname(l));
    const std::vector<Dual2>& a = tape.act[l];
    std::vector<Dual2> abar(w.cols);
    for (int i = 0; i < w.rows; ++i) {
      const Dual2& ui = ubar[i];
      bg.data[i] += ui.v;
      const double* row = &w.data[(size_t)i * w.cols];
      double* grow = &wg.data[(size_t)i * w.cols];
      for (int j = 0; j < w.cols; ++j) {
        const Dual2& aj = a[j];
        grow[j] += ui.v * aj.v + ui.dx * aj.dx + ui.dy * aj.dy + ui.dxx * aj.dxx +
                   ui.dxy * aj.dxy + ui.dyy * aj.dyy;
        double wij = row[j];
        Dual2& ab = abar[j];
        ab.v += wij * ui.v;
        ab.dx += wij * ui.dx;
        ab.dy += wij * ui.dy;
        ab.dxx += wij * ui.dxx;
        ab.dxy += wij * ui.dxy;
        ab.dyy += wij * ui.dyy;
      }
    }
    if (l > 0) {
      const std::vector<Dual2>& upre = tape.pre[l - 1];
      for (int j = 0; j < w.cols; ++j) abar[j] = tanh_adjoint_dual2(upre[j], abar[j]);
    }
    ubar = std::move(abar);
  }
}

size_t CnnSpec::param_count() const {
  return (size_t)c1 * in_channels * 9 + c1 + (size_t)c2 * c1 * 9 + c2 +
         (size_t)hidden * flat_size() + hidden + (size_t)out * hidden + out;
}

void init_cnn(ParamStore& params, const CnnSpec& spec, std::mt19937_64& rng) {
  if (spec.grid <= 0 || spec.grid % 2 != 0)
    throw std::invalid_argument("init_cnn: grid must be positive and even");
  Tensor& w1 = params.add(spec.prefix + ".conv0w", spec.c1, spec.in_channels * 9);
  glorot_fill(w1, spec.in_channels * 9, spec.c1, rng);
  params.add(spec.prefix + ".conv0b", spec.c1, 1);
  Tensor& w2 = params.add(spec.prefix + ".conv1w", spec.c2, spec.c1 * 9);
  glorot_fill(w2, spec.c1 * 9, spec.c2, rng);
  params.add(spec.prefix + ".conv1b", spec.c2, 1);
  Tensor& d0 = params.add(spec.prefix + ".dense0w", spec.hidden, spec.flat_size());
  glorot_fill(d0, spec.flat_size(), spec.hidden, rng);
  params.add(spec.prefix + ".dense0b", spec.hidden, 1);
  Tensor& d1 = params.add(spec.prefix + ".dense1w", spec.out, spec.hidden);
  glorot_fill(d1, spec.hidden, spec.out, rng);
  params.add(spec.prefix + ".dense1b", spec.out, 1);
}

namespace {

// out[co,i,j] = tanh(b[co] + sum_{ci,di,dj} w[co, ci*9+(di*3+dj)] * in[ci, i+di-1, j+dj-1])
void conv3x3_tanh(const Tensor& w, const Tensor& b, const std::vector<double>& in, int channels_in,
                  int n, std::vector<double>& out) {
  int channels_out = w.rows;
  out.assign((size_t)channels_out * n * n, 0.0);
  for (int co = 0; co < channels_out; ++co) {
    const double* wrow = &w.data[(size_t)co * w.cols];
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double s = b.data[co];
        for (int ci = 0; ci < channels_in; ++ci) {
          const double* plane = &in[(size_t)ci * n * n];
          const double* wk = wrow + ci * 9;
          for (int di = -1; di <= 1; ++di) {
            int ii = i + di;
            if (ii < 0 || ii >= n) continue;
            for (int dj = -1; dj <= 1; ++dj) {
              int jj = j + dj;
              if (jj < 0 || jj >= n) continue;
              s += wk[(di + 1) * 3 + (dj + 1)] * plane[(size_t)ii * n + jj];
            }
          }
        }
        out[((size_t)co * n + i) * n + j] = std::tanh(s);
      }
  }
}

void conv3x3_backward(const Tensor& w, const std::vector<double>& in, int channels_in, int n,
                      const std::vector<double>& act, const std::vector<double>& act_adj,
                      Tensor& wg, Tensor& bg, std::vector<double>* in_adj) {
  int channels_out = w.rows;
  if (in_adj) in_adj->assign(in.size(), 0.0);
  for (int co = 0; co < channels_out; ++co) {
    const double* wrow = &w.data[(size_t)co * w.cols];
    double* grow = &wg.data[(size_t)co * w.cols];
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double a = act[((size_t)co * n + i) * n + j];
        double pre_adj = act_adj[((size_t)co * n + i) * n + j] * (1.0 - a * a);
        if (pre_adj == 0.0) continue;
        bg.data[co] += pre_adj;
        for (int ci = 0; ci < channels_in; ++ci) {
          const double* plane = &in[(size_t)ci * n * n];
          double* padj = in_adj ? &(*in_adj)[(size_t)ci * n * n] : nullptr;
          const double* wk = wrow + ci * 9;
          double* gk = grow + ci * 9;
          for (int di = -1; di <= 1; ++di) {
            int ii = i + di;
            if (ii < 0 || ii >= n) continue;
            for (int dj = -1; dj <= 1; ++dj) {
              int jj = j + dj;
              if (jj < 0 || jj >= n) continue;
              gk[(di + 1) * 3 + (dj + 1)] += pre_adj * plane[(size_t)ii * n + jj];
              if (padj) padj[(size_t)ii * n + jj] += pre_adj * wk[(di + 1) * 3 + (dj + 1)];
            }
          }
        }
      }
  }
}

void mean_pool2(const std::vector<double>& in, int channels, int n, std::vector<double>& out) {
  int m = n / 2;
  out.assign((size_t)channels * m * m, 0.0);
  for (int c = 0; c < channels; ++c)
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) {
        const double* plane = &in[(size_t)c * n * n];
        double s = plane[(size_t)(2 * i) * n + 2 * j] + plane[(size_t)(2 * i) * n + 2 * j + 1] +
                   plane[(size_t)(2 * i + 1) * n + 2 * j] +
                   plane[(size_t)(2 * i + 1) * n + 2 * j + 1];
        out[((size_t)c * m + i) * m + j] = 0.25 * s;
      }
}

void mean_pool2_backward(const std::vector<double>& out_adj, int channels, int n,
                         std::vector<double>& in_adj) {
  int m = n / 2;
  in_adj.assign((size_t)channels * n * n, 0.0);
  for (int c = 0; c < channels; ++c)
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) {
        double g = 0.25 * out_adj[((size_t)c * m + i) * m + j];
        double* plane = &in_adj[(size_t)c * n * n];
        plane[(size_t)(2 * i) * n + 2 * j] += g;
        plane[(size_t)(2 * i) * n + 2 * j + 1] += g;
        plane[(size_t)(2 * i + 1) * n + 2 * j] += g;
        plane[(size_t)(2 * i + 1) * n + 2 * j + 1] += g;
      }
}

}  // namespace

std::vector<double> cnn_forward_tape(const ParamStore& params, const CnnSpec& spec,
                                     const std::vector<double>& input, CnnTape& tape) {
  if ((int)input.size() != spec.in_channels * spec.grid * spec.grid)
    throw std::invalid_argument("cnn_forward: input size");
  tape.input = input;
  conv3x3_tanh(params.get(spec.prefix + ".conv0w"), params.get(spec.prefix + ".conv0b"), input,
               spec.in_channels, spec.grid, tape.conv1_act);
  mean_pool2(tape.conv1_act, spec.c1, spec.grid, tape.pooled);
  conv3x3_tanh(params.get(spec.prefix + ".conv1w"), params.get(spec.prefix + ".conv1b"),
               tape.pooled, spec.c1, spec.pooled(), tape.conv2_act);

  const Tensor& d0 = params.get(spec.prefix + ".dense0w");
  const Tensor& d0b = params.get(spec.prefix + ".dense0b");
  tape.hidden_act.assign(spec.hidden, 0.0);
  for (int i = 0; i < spec.hidden; ++i) {
    double s = d0b.data[i];
    const double* row = &d0.data[(size_t)i * d0.cols];
    for (int j = 0; j < d0.cols; ++j) s += row[j] * tape.conv2_act[j];
    tape.hidden_act[i] = std::tanh(s);
  }
  const Tensor& d1 = params.get(spec.prefix + ".dense1w");
  const Tensor& d1b = params.get(spec.prefix + ".dense1b");
  tape.out.assign(spec.out, 0.0);
  for (int i = 0; i < spec.out; ++i) {
    double s = d1b.data[i];
    const double* row = &d1.data[(size_t)i * d1.cols];
    for (int j = 0; j < d1.cols; ++j) s += row[j] * tape.hidden_act[j];
    tape.out[i] = s;
  }
  return tape.out;
}

std::vector<double> cnn_forward(const ParamStore& params, const CnnSpec& spec,
                                const std::vector<double>& input) {
  CnnTape tape;
  return cnn_forward_tape(params, spec, input, tape);
}

void cnn_backward(const ParamStore& params, const CnnSpec& spec, const CnnTape& tape,
                  const std::vector<double>& out_adjoint, ParamStore& grads) {
  if ((int)out_adjoint.size() != spec.out) throw std::invalid_argument("cnn_backward: size");
  const Tensor& d1 = params.get(spec.prefix + ".dense1w");
  Tensor& d1g = grads.get(spec.prefix + ".dense1w");
  Tensor& d1bg = grads.get(spec.prefix + ".dense1b");
  std::vector<double> hbar(spec.hidden, 0.0);
  for (int i = 0; i < spec.out; ++i) {
    double zi = out_adjoint[i];
    d1bg.data[i] += zi;
    const double* row = &d1.data[(size_t)i * d1.cols];
    double* grow = &d1g.data[(size_t)i * d1.cols];
    for (int j = 0; j < spec.hidden; ++j) {
      grow[j] += zi * tape.hidden_act[j];
      hbar[j] += zi * row[j];
    }
  }
  for (int j = 0; j < spec.hidden; ++j)
    hbar[j] *= 1.0 - tape.hidden_act[j] * tape.hidden_act[j];

  const Tensor& d0 = params.get(spec.prefix + ".dense0w");
  Tensor& d0g = grads.get(spec.prefix + ".dense0w");
  Tensor& d0bg = grads.get(spec.prefix + ".dense0b");
  std::vector<double> fbar(spec.flat_size(), 0.0);
  for (int i = 0; i < spec.hidden; ++i) {
    double zi = hbar[i];
    d0bg.data[i] += zi;
    const double* row = &d0.data[(size_t)i * d0.cols];
    double* grow = &d0g.data[(size_t)i * d0.cols];
    for (int j = 0; j < d0.cols; ++j) {
      grow[j] += zi * tape.conv2_act[j];
      fbar[j] += zi * row[j];
    }
  }

  std::vector<double> pooled_adj;
  conv3x3_backward(params.get(spec.prefix + ".conv1w"), tape.pooled, spec.c1, spec.pooled(),
                   tape.conv2_act, fbar, grads.get(spec.prefix + ".conv1w"),
                   grads.get(spec.prefix + ".conv1b"), &pooled_adj);
  std::vector<double> conv1_adj;
  mean_pool2_backward(pooled_adj, spec.c1, spec.grid, conv1_adj);
  conv3x3_backward(params.get(spec.prefix + ".conv0w"), tape.input, spec.in_channels, spec.grid,
                   tape.conv1_act, conv1_adj, grads.get(spec.prefix + ".conv0w"),
                   grads.get(spec.prefix + ".conv0b"), nullptr);
}

Deriv2 spatial_derivatives(const std::function<Dual2(Dual2, Dual2)>& eval, double x, double y,
                           int order) {
  if (order != 1 && order != 2) throw std::invalid_argument("spatial_derivatives: order must be 1 or 2");
  Dual2 out = eval(Dual2::var_x(x), Dual2::var_y(y));
  Deriv2 d;
  d.v = out.v;
  d.dx = out.dx;
  d.dy = out.dy;
  if (order == 2) {
    d.dxx = out.dxx;
    d.dxy = out.dxy;
    d.dyy = out.dyy;
  }
  return d;
}

ParamStore grad_params(LossEvaluator& loss, const ParamStore& params) {
  double value = loss.forward(params);
  if (!std::isfinite(value)) throw std::runtime_error("non-finite loss value");
  ParamStore grads = params.zeros_like();
  loss.backward(params, grads);
  for (const auto& [name, t] : grads.tensors)
    for (double v : t.data)
      if (!std::isfinite(v)) throw std::runtime_error("non-finite gradient in " + name);
  return grads;
}

AdamState AdamState::init(const ParamStore& params, double lr) {
  AdamState st;
  st.m = params.zeros_like();
  st.v = params.zeros_like();
  st.lr = lr;
  return st;
}

void adam_step(ParamStore& params, const ParamStore& grads, AdamState& state) {
  state.step += 1;
  double bc1 = 1.0 - std::pow(state.beta1, (double)state.step);
  double bc2 = 1.0 - std::pow(state.beta2, (double)state.step);
  auto pit = params.tensors.begin();
  for (; pit != params.tensors.end(); ++pit) {
    const Tensor& g = grads.get(pit->first);
    Tensor& m = state.m.get(pit->first);
    Tensor& v = state.v.get(pit->first);
    Tensor& p = pit->second;
    if (g.size() != p.size()) throw std::invalid_argument("adam_step: shape mismatch");
    for (size_t k = 0; k < p.size(); ++k) {
      m.data[k] = state.beta1 * m.data[k] + (1.0 - state.beta1) * g.data[k];
      v.data[k] = state.beta2 * v.data[k] + (1.0 - state.beta2) * g.data[k] * g.data[k];
      double mhat = m.data[k] / bc1;
      double vhat = v.data[k] / bc2;
      p.data[k] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

std::string params_to_text(const ParamStore& params) {
  std::string out;
  for (const auto& [name, t] : params.tensors) {
    out += name + ' ' + std::to_string(t.rows) + ' ' + std::to_string(t.cols) + '\n';
    for (int r = 0; r < t.rows; ++r) {
      for (int c = 0; c < t.cols; ++c) {
        if (c) out += ' ';
        out += double_to_hex(t.at(r, c));
      }
      out += '\n';
    }
  }
  return out;
}

ParamStore params_from_text(const std::string& text) {
  std::istringstream in(text);
  ParamStore params;
  std::string name;
  while (in >> name) {
    int rows, cols;
    if (!(in >> rows >> cols)) throw std::runtime_error("parameter text: bad header");
    if (rows < 0 || cols < 0) throw std::runtime_error("parameter text: bad shape");
    Tensor& t = params.add(name, rows, cols);
    std::string tok;
    for (size_t k = 0; k < t.size(); ++k) {
      if (!(in >> tok)) throw std::runtime_error("parameter text: truncated values");
      t.data[k] = parse_double(tok);
    }
  }
  return params;
}

void save_params(const std::string& path, const ParamStore& params) {
  write_text_file(path, params_to_text(params));
}

ParamStore load_params(const std::string& path) { return params_from_text(read_text_file(path)); }

}  // namespace fno
