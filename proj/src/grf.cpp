#include "fno/grf.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>

#include "fno/ioutil.hpp"

namespace fno {

std::vector<std::vector<double>> sample_on_curve(const std::vector<Vec2>& points,
                                                 const GrfSpec& spec, int count) {
  if (points.empty()) throw std::invalid_argument("sample_on_curve: no points");
  if (count < 1) throw std::invalid_argument("sample_on_curve: count must be >= 1");
  if (spec.length_scale <= 0) throw std::invalid_argument("sample_on_curve: length_scale must be > 0");
  if (spec.variance <= 0) throw std::invalid_argument("sample_on_curve: variance must be > 0");

  const int n = (int)points.size();
  Eigen::MatrixXd k(n, n);
  const double inv2l2 = 1.0 / (2.0 * spec.length_scale * spec.length_scale);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      double dx = points[i].x - points[j].x;
      double dy = points[i].y - points[j].y;
      double v = spec.variance * std::exp(-(dx * dx + dy * dy) * inv2l2);
      k(i, j) = v;
      k(j, i) = v;
    }
  }

  Eigen::LLT<Eigen::MatrixXd> llt(k);
  double jitter = 1e-10;
  while (llt.info() != Eigen::Success && jitter <= 1e-6) {
    Eigen::MatrixXd kj = k;
    kj.diagonal().array() += jitter;
    llt.compute(kj);
    jitter *= 10.0;
  }
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("sample_on_curve: covariance factorization failed");
  Eigen::MatrixXd lower = llt.matrixL();

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> samples(count);
  Eigen::VectorXd z(n);
  for (int s = 0; s < count; ++s) {
    for (int i = 0; i < n; ++i) z(i) = normal(rng);
    Eigen::VectorXd x = lower * z;
    samples[s].assign(x.data(), x.data() + n);
  }
  return samples;
}

std::string grf_to_csv(const std::vector<std::vector<double>>& samples) {
  std::string out;
  char buf[64];
  for (const auto& row : samples) {
    for (size_t i = 0; i < row.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", row[i]);
      if (i) out += ',';
      out += buf;
    }
    out += '\n';
  }
  return out;
}

void save_grf_csv(const std::string& path, const std::vector<std::vector<double>>& samples) {
  write_text_file(path, grf_to_csv(samples));
}

}  // namespace fno
