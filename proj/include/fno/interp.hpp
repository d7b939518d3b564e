#pragma once

#include <functional>
#include <vector>

#include "fno/mesh.hpp"

namespace fno {

// Thin-plate-spline interpolant with a linear polynomial tail.
struct RbfInterpolant {
  std::vector<Vec2> points;
  std::vector<double> weights;  // n point weights followed by the 1, x, y coefficients

  double eval(double x, double y) const;
};

// Reusable fit operator for repeated interpolation on a fixed point set.
// Building it factorizes the kernel system once; each fit is then a
// matrix-vector product.
struct RbfFactor {
  std::vector<Vec2> points;
  std::vector<double> inverse;  // (n+3)^2 row-major

  RbfInterpolant fit(const std::vector<double>& values) const;
};

RbfFactor rbf_prepare(const std::vector<Vec2>& points);
RbfInterpolant rbf_fit(const std::vector<Vec2>& points, const std::vector<double>& values);

// Square structured grid, row-major with i indexing y and j indexing x.
struct Grid2 {
  double xmin = 0, ymin = 0, xmax = 1, ymax = 1;
  int n = 2;  // nodes per side

  int size() const { return n * n; }
  Vec2 point(int i, int j) const {
    double fx = n > 1 ? (double)j / (n - 1) : 0.0;
    double fy = n > 1 ? (double)i / (n - 1) : 0.0;
    return {xmin + fx * (xmax - xmin), ymin + fy * (ymax - ymin)};
  }
};

struct GridMask {
  std::vector<char> inside;
  std::vector<int> fill_from;  // nearest inside node index; self when inside
};

GridMask make_grid_mask(const Grid2& grid, const std::function<bool(double, double)>& inside);

// Evaluates the interpolant at every grid node. With a mask, nodes outside
// the domain take the nearest inside node's value, or zero when zero_fill.
std::vector<double> eval_on_grid(const RbfInterpolant& f, const Grid2& grid,
                                 const GridMask* mask = nullptr, bool zero_fill = false);

// Bilinear sample of one row-major channel; coordinates clamp to the box.
double grid_bilinear(const std::vector<double>& values, const Grid2& grid, double x, double y);

}  // namespace fno
