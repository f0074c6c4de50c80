// Small statistics helpers: quantiles, moments, PSD square roots.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "synthpi/common.hpp"

namespace synthpi {

// Order-statistic quantile with linear interpolation and inclusive
// endpoints (the "type 7" definition).  Takes an unsorted copy.
inline double quantile(std::vector<double> x, double p) {
  if (x.empty()) throw usage_error("quantile: empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw usage_error("quantile: p outside [0,1]");
  std::sort(x.begin(), x.end());
  const double h = (static_cast<double>(x.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= x.size()) return x.back();
  const double frac = h - static_cast<double>(lo);
  return x[lo] + frac * (x[lo + 1] - x[lo]);
}

inline double mean(const Eigen::VectorXd& x) {
  if (x.size() == 0) throw usage_error("mean: empty sample");
  return x.mean();
}

// Sample standard deviation (n-1 denominator).
inline double stddev(const Eigen::VectorXd& x) {
  const auto n = x.size();
  if (n < 2) throw usage_error("stddev: need at least 2 observations");
  const double m = x.mean();
  return std::sqrt((x.array() - m).square().sum() / static_cast<double>(n - 1));
}

// Root of the uncentered second moment, (1/n) sum x^2.
inline double root_second_moment(const Eigen::VectorXd& x) {
  if (x.size() == 0) throw usage_error("root_second_moment: empty sample");
  return std::sqrt(x.squaredNorm() / static_cast<double>(x.size()));
}

// Symmetric PSD square root via eigendecomposition.  Small negative
// eigenvalues (roundoff) are clipped to zero; min_eig reports the
// smallest eigenvalue before clipping so callers can sanity-check.
struct PsdSqrt {
  Eigen::MatrixXd root;  // root * root' == input (after clipping)
  double min_eig = 0.0;
  bool clipped = false;
};

inline PsdSqrt psd_sqrt(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) throw usage_error("psd_sqrt: matrix not square");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success)
    throw numeric_error("psd_sqrt: eigendecomposition failed");
  PsdSqrt out;
  out.min_eig = es.eigenvalues().minCoeff();
  Eigen::VectorXd lam = es.eigenvalues();
  for (Eigen::Index i = 0; i < lam.size(); ++i) {
    if (lam[i] < 0.0) {
      lam[i] = 0.0;
      out.clipped = true;
    }
  }
  out.root = es.eigenvectors() * lam.cwiseSqrt().asDiagonal();
  return out;
}

}  // namespace synthpi
