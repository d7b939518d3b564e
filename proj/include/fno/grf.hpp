#pragma once

#include <string>
#include <vector>

#include "fno/mesh.hpp"

namespace fno {

struct GrfSpec {
  double length_scale = 1.0;
  double variance = 1.0;
  unsigned long long seed = 0;
};

// Draws zero-mean Gaussian fields over the ordered points with a
// squared-exponential covariance in chordal distance. Returns `count`
// samples, each holding one value per point.
std::vector<std::vector<double>> sample_on_curve(const std::vector<Vec2>& points,
                                                 const GrfSpec& spec, int count);

// One row per sample, comma-separated point values.
std::string grf_to_csv(const std::vector<std::vector<double>>& samples);
void save_grf_csv(const std::string& path, const std::vector<std::vector<double>>& samples);

}  // namespace fno
