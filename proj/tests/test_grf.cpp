#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>

#include "fno/grf.hpp"

using namespace fno;

namespace {

std::vector<Vec2> unit_circle(int n) {
  std::vector<Vec2> pts(n);
  for (int i = 0; i < n; ++i) {
    double a = 2.0 * M_PI * i / n;
    pts[i] = {std::cos(a), std::sin(a)};
  }
  return pts;
}

}  // namespace

TEST_CASE("huge length scale yields nearly constant fields") {
  GrfSpec spec;
  spec.length_scale = 1e6;
  spec.variance = 1.0;
  spec.seed = 3;
  auto samples = sample_on_curve(unit_circle(64), spec, 10);
  for (const auto& s : samples) {
    double lo = s[0], hi = s[0];
    for (double v : s) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    CHECK(hi - lo <= 1e-3);
  }
}

TEST_CASE("fixed seed resamples bit-identically") {
  GrfSpec spec;
  spec.length_scale = 0.5;
  spec.seed = 42;
  auto pts = unit_circle(40);
  auto a = sample_on_curve(pts, spec, 5);
  auto b = sample_on_curve(pts, spec, 5);
  CHECK(a == b);
  spec.seed = 43;
  CHECK(sample_on_curve(pts, spec, 5) != a);
}

TEST_CASE("monte carlo covariance matches the kernel") {
  const int n_pts = 100, n_samples = 1000;
  GrfSpec spec;
  spec.length_scale = 0.2;
  spec.variance = 1.0;
  spec.seed = 7;
  auto pts = unit_circle(n_pts);

  auto t0 = std::chrono::steady_clock::now();
  auto samples = sample_on_curve(pts, spec, n_samples);
  double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(seconds < 10.0);

  // Variance at lag zero, averaged over all points.
  double var = 0;
  for (const auto& s : samples)
    for (double v : s) var += v * v;
  var /= (double)n_samples * n_pts;
  CHECK(std::abs(var - spec.variance) <= 0.10 * spec.variance);

  // Covariance at the separation closest to one length scale.
  int lag = 0;
  double best = 1e300;
  for (int k = 1; k < n_pts / 2; ++k) {
    double chord = 2.0 * std::sin(M_PI * k / n_pts);
    if (std::abs(chord - spec.length_scale) < best) {
      best = std::abs(chord - spec.length_scale);
      lag = k;
    }
  }
  double chord = 2.0 * std::sin(M_PI * lag / n_pts);
  double want = spec.variance * std::exp(-chord * chord / (2 * spec.length_scale * spec.length_scale));
  double cov = 0;
  for (const auto& s : samples)
    for (int i = 0; i < n_pts; ++i) cov += s[i] * s[(i + lag) % n_pts];
  cov /= (double)n_samples * n_pts;
  CHECK(std::abs(cov - want) <= 0.15 * want);

  // Empirical mean bound per point.
  for (int i = 0; i < n_pts; ++i) {
    double mean = 0;
    for (const auto& s : samples) mean += s[i];
    mean /= n_samples;
    CHECK(std::abs(mean) <= 4.0 / std::sqrt((double)n_samples));
  }
}

TEST_CASE("coincident points take the jitter path and stay coherent") {
  std::vector<Vec2> pts = unit_circle(20);
  pts.push_back(pts[0]);  // exact duplicate makes the covariance singular
  GrfSpec spec;
  spec.length_scale = 0.5;
  spec.seed = 1;
  auto samples = sample_on_curve(pts, spec, 20);
  for (const auto& s : samples) CHECK(std::abs(s.front() - s.back()) <= 1e-2);
}

TEST_CASE("invalid sampling requests are rejected") {
  auto pts = unit_circle(8);
  GrfSpec spec;
  CHECK_THROWS(sample_on_curve({}, spec, 1));
  CHECK_THROWS(sample_on_curve(pts, spec, 0));
  spec.length_scale = -1;
  CHECK_THROWS(sample_on_curve(pts, spec, 1));
  spec.length_scale = 1;
  spec.variance = 0;
  CHECK_THROWS(sample_on_curve(pts, spec, 1));
}

TEST_CASE("csv export writes one row per sample") {
  GrfSpec spec;
  spec.length_scale = 2.0;
  spec.seed = 5;
  auto samples = sample_on_curve(unit_circle(6), spec, 3);
  std::string csv = grf_to_csv(samples);
  size_t rows = 0;
  for (char c : csv)
    if (c == '\n') ++rows;
  CHECK(rows == 3);

  // First row parses back to the first sample.
  std::vector<double> parsed;
  size_t pos = 0, end = csv.find('\n');
  std::string row = csv.substr(0, end);
  while (pos < row.size()) {
    size_t next = row.find(',', pos);
    if (next == std::string::npos) next = row.size();
    parsed.push_back(std::strtod(row.substr(pos, next - pos).c_str(), nullptr));
    pos = next + 1;
  }
  REQUIRE(parsed.size() == samples[0].size());
  for (size_t i = 0; i < parsed.size(); ++i)
    CHECK(parsed[i] == doctest::Approx(samples[0][i]).epsilon(1e-15));
}
