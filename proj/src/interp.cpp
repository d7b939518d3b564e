#include "fno/interp.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace fno {

namespace {

double tps_kernel(double dx, double dy) {
  double r2 = dx * dx + dy * dy;
  if (r2 <= 0.0) return 0.0;
  return 0.5 * r2 * std::log(r2);  // r^2 log r
}

void validate_points(const std::vector<Vec2>& points) {
  const size_t n = points.size();
  if (n < 3) throw std::invalid_argument("rbf_fit: need at least 3 points");
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) {
      double dx = points[i].x - points[j].x;
      double dy = points[i].y - points[j].y;
      if (dx * dx + dy * dy < 1e-24) throw std::invalid_argument("rbf_fit: duplicate points");
    }
  Eigen::MatrixXd p(n, 3);
  for (size_t i = 0; i < n; ++i) {
    p(i, 0) = 1.0;
    p(i, 1) = points[i].x;
    p(i, 2) = points[i].y;
  }
  if (Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(p).rank() < 3)
    throw std::invalid_argument("rbf_fit: points are collinear");
}

}  // namespace

double RbfInterpolant::eval(double x, double y) const {
  const size_t n = points.size();
  double acc = weights[n] + weights[n + 1] * x + weights[n + 2] * y;
  for (size_t i = 0; i < n; ++i) acc += weights[i] * tps_kernel(x - points[i].x, y - points[i].y);
  return acc;
}

RbfFactor rbf_prepare(const std::vector<Vec2>& points) {
  validate_points(points);
  const int n = (int)points.size();
  const int m = n + 3;

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(m, m);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j)
      a(i, j) = tps_kernel(points[i].x - points[j].x, points[i].y - points[j].y);
    a(i, n) = a(n, i) = 1.0;
    a(i, n + 1) = a(n + 1, i) = points[i].x;
    a(i, n + 2) = a(n + 2, i) = points[i].y;
  }

  Eigen::VectorXd probe = Eigen::VectorXd::Zero(m);
  for (int i = 0; i < m; ++i) probe(i) = std::cos(1.0 + i);

  double jitter = 0.0;
  for (int attempt = 0; attempt < 7; ++attempt) {
    Eigen::MatrixXd aj = a;
    if (jitter > 0)
      for (int i = 0; i < n; ++i) aj(i, i) += jitter;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(aj);
    Eigen::MatrixXd inv = lu.inverse();
    double err = (aj * (inv * probe) - probe).cwiseAbs().maxCoeff();
    if (std::isfinite(err) && err <= 1e-7 * (1.0 + probe.cwiseAbs().maxCoeff())) {
      RbfFactor factor;
      factor.points = points;
      factor.inverse.assign(m * m, 0.0);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) factor.inverse[(size_t)i * m + j] = inv(i, j);
      return factor;
    }
    jitter = jitter == 0.0 ? 1e-10 : jitter * 10.0;
  }
  throw std::runtime_error("rbf_prepare: kernel system is singular");
}

RbfInterpolant RbfFactor::fit(const std::vector<double>& values) const {
  const size_t n = points.size();
  if (values.size() != n) throw std::invalid_argument("RbfFactor::fit: size mismatch");
  const size_t m = n + 3;
  RbfInterpolant f;
  f.points = points;
  f.weights.assign(m, 0.0);
  for (size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    const double* row = &inverse[i * m];
    for (size_t j = 0; j < n; ++j) acc += row[j] * values[j];
    f.weights[i] = acc;
  }
  return f;
}

RbfInterpolant rbf_fit(const std::vector<Vec2>& points, const std::vector<double>& values) {
  if (values.size() != points.size()) throw std::invalid_argument("rbf_fit: size mismatch");
  return rbf_prepare(points).fit(values);
}

GridMask make_grid_mask(const Grid2& grid, const std::function<bool(double, double)>& inside) {
  GridMask mask;
  const int n = grid.n;
  mask.inside.assign((size_t)n * n, 0);
  mask.fill_from.assign((size_t)n * n, -1);

  std::vector<int> inside_idx;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      Vec2 p = grid.point(i, j);
      int idx = i * n + j;
      if (inside(p.x, p.y)) {
        mask.inside[idx] = 1;
        mask.fill_from[idx] = idx;
        inside_idx.push_back(idx);
      }
    }
  if (inside_idx.empty()) throw std::invalid_argument("make_grid_mask: no grid node is inside");

  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      int idx = i * n + j;
      if (mask.inside[idx]) continue;
      Vec2 p = grid.point(i, j);
      double best = 0;
      int arg = -1;
      for (int src : inside_idx) {
        Vec2 q = grid.point(src / n, src % n);
        double d = (p.x - q.x) * (p.x - q.x) + (p.y - q.y) * (p.y - q.y);
        if (arg < 0 || d < best) {
          best = d;
          arg = src;
        }
      }
      mask.fill_from[idx] = arg;
    }
  return mask;
}

double grid_bilinear(const std::vector<double>& values, const Grid2& grid, double x, double y) {
  const int n = grid.n;
  if (n < 2) throw std::invalid_argument("grid_bilinear: grid too small");
  if ((int)values.size() != n * n) throw std::invalid_argument("grid_bilinear: size mismatch");
  double fx = (x - grid.xmin) / (grid.xmax - grid.xmin) * (n - 1);
  double fy = (y - grid.ymin) / (grid.ymax - grid.ymin) * (n - 1);
  fx = std::min(std::max(fx, 0.0), (double)(n - 1));
  fy = std::min(std::max(fy, 0.0), (double)(n - 1));
  int j0 = std::min((int)fx, n - 2), i0 = std::min((int)fy, n - 2);
  double tx = fx - j0, ty = fy - i0;
  double v00 = values[(size_t)i0 * n + j0], v01 = values[(size_t)i0 * n + j0 + 1];
  double v10 = values[(size_t)(i0 + 1) * n + j0], v11 = values[(size_t)(i0 + 1) * n + j0 + 1];
  return (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11);
}

std::vector<double> eval_on_grid(const RbfInterpolant& f, const Grid2& grid, const GridMask* mask,
                                 bool zero_fill) {
  const int n = grid.n;
  std::vector<double> out((size_t)n * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      int idx = i * n + j;
      if (mask && !mask->inside[idx]) continue;
      Vec2 p = grid.point(i, j);
      out[idx] = f.eval(p.x, p.y);
    }
  if (mask) {
    for (size_t idx = 0; idx < out.size(); ++idx) {
      if (mask->inside[idx]) continue;
      out[idx] = zero_fill ? 0.0 : out[mask->fill_from[idx]];
    }
  }
  return out;
}

}  // namespace fno
