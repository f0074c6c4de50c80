// Out-of-sample uncertainty: residual mean/variance models and the
// concentration, location-scale and quantile-regression bounds on the
// post-treatment error, plus the sensitivity grid.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "synthpi/common.hpp"
#include "synthpi/regression.hpp"
#include "synthpi/stats.hpp"

namespace synthpi {

enum class Approach { subgaussian, polynomial, location_scale, quantile_reg };

inline std::string to_string(Approach a) {
  switch (a) {
    case Approach::subgaussian:
      return "subg";
    case Approach::polynomial:
      return "poly";
    case Approach::location_scale:
      return "locscale";
    case Approach::quantile_reg:
      return "qreg";
  }
  return "subg";
}

struct OutSampleResult {
  double M2_L = 0.0;
  double M2_U = 0.0;
  double alpha2 = 0.0;
  Approach approach = Approach::subgaussian;
  int poly_order = 0;               // for the polynomial bound
  double conditional_mean = 0.0;    // m-hat where applicable
  double conditional_sd = 0.0;      // s-hat where applicable
  std::vector<std::string> notes;
};

// Mean and log-variance regressions on a shared polynomial basis.  The
// exponential variance model keeps predictions positive; the
// log-of-squares fit is biased downward under a Gaussian error, which
// the additive E[log chi^2_1] = -1.2704 correction undoes.
struct ResidualModel {
  Eigen::VectorXd mean_coeffs;
  Eigen::VectorXd logvar_coeffs;
  int degree = 1;
  bool bias_correction = true;
  double variance_floor = 0.0;

  static constexpr double log_chi2_mean = -1.2703628454614782;

  double mean_at(const Eigen::RowVectorXd& x) const {
    return polynomial_basis_row(x, degree).dot(mean_coeffs);
  }
  double variance_at(const Eigen::RowVectorXd& x) const {
    const double raw = polynomial_basis_row(x, degree).dot(logvar_coeffs);
    const double corrected = raw - (bias_correction ? log_chi2_mean : 0.0);
    return std::max(std::exp(corrected), variance_floor);
  }
  double sd_at(const Eigen::RowVectorXd& x) const {
    return std::sqrt(variance_at(x));
  }
};

inline ResidualModel fit_residual_model(const Eigen::VectorXd& proxy_residuals,
                                        const Eigen::MatrixXd& regressors,
                                        int degree, bool bias_correction = true) {
  if (regressors.rows() != proxy_residuals.size())
    throw usage_error("fit_residual_model: row mismatch");
  const Eigen::MatrixXd basis = polynomial_basis(regressors, degree);
  if (proxy_residuals.size() < 3 * basis.cols())
    throw config_error("fit_residual_model: underdetermined (need at least 3 "
                       "observations per basis column)");

  ResidualModel model;
  model.degree = degree;
  model.bias_correction = bias_correction;
  model.mean_coeffs = lstsq(basis, proxy_residuals, "residual mean").coeffs;

  const Eigen::VectorXd centered = proxy_residuals - basis * model.mean_coeffs;
  const double sample_var =
      centered.squaredNorm() / std::max<double>(1, centered.size() - 1);
  model.variance_floor = 1e-8 * sample_var;

  Eigen::VectorXd log_sq(centered.size());
  for (Eigen::Index i = 0; i < centered.size(); ++i)
    log_sq[i] = std::log(std::max(centered[i] * centered[i], 1e-300));
  model.logvar_coeffs = lstsq(basis, log_sq, "residual log-variance").coeffs;
  return model;
}

// Gaussian concentration: eps = s sqrt(2 log(2/alpha2)).
inline OutSampleResult bound_subgaussian(double m, double s, double alpha2) {
  if (!(alpha2 > 0.0 && alpha2 < 1.0))
    throw usage_error("bound_subgaussian: alpha2 must be in (0,1)");
  if (s < 0.0) throw usage_error("bound_subgaussian: negative scale");
  const double eps = s * std::sqrt(2.0 * std::log(2.0 / alpha2));
  OutSampleResult out;
  out.approach = Approach::subgaussian;
  out.alpha2 = alpha2;
  out.conditional_mean = m;
  out.conditional_sd = s;
  out.M2_L = m - eps;
  out.M2_U = m + eps;
  return out;
}

// Markov bound on the k-th central moment: eps = (moment / alpha2)^{1/k}.
inline OutSampleResult bound_polynomial(double m, double central_moment_k,
                                        int k, double alpha2) {
  if (k < 2) throw usage_error("bound_polynomial: k must be >= 2");
  if (central_moment_k < 0.0)
    throw usage_error("bound_polynomial: negative moment");
  if (!(alpha2 > 0.0 && alpha2 < 1.0))
    throw usage_error("bound_polynomial: alpha2 must be in (0,1)");
  const double eps = std::pow(central_moment_k / alpha2, 1.0 / k);
  OutSampleResult out;
  out.approach = Approach::polynomial;
  out.poly_order = k;
  out.alpha2 = alpha2;
  out.conditional_mean = m;
  out.M2_L = m - eps;
  out.M2_U = m + eps;
  return out;
}

// Location-scale model: standardized pre-treatment residuals supply
// the quantiles, the model supplies location and scale at x_T.
inline OutSampleResult bound_location_scale(const ResidualModel& model,
                                            const Eigen::VectorXd& residuals,
                                            const Eigen::MatrixXd& regressors,
                                            const Eigen::RowVectorXd& x_row,
                                            double alpha2) {
  if (!(alpha2 > 0.0 && alpha2 < 1.0))
    throw usage_error("bound_location_scale: alpha2 must be in (0,1)");
  if (regressors.rows() != residuals.size())
    throw usage_error("bound_location_scale: row mismatch");
  const Eigen::MatrixXd basis = polynomial_basis(regressors, model.degree);
  std::vector<double> standardized(static_cast<std::size_t>(residuals.size()));
  bool floored = false;
  for (Eigen::Index t = 0; t < residuals.size(); ++t) {
    const double m_t = basis.row(t).dot(model.mean_coeffs);
    const double raw = basis.row(t).dot(model.logvar_coeffs) -
                       (model.bias_correction ? ResidualModel::log_chi2_mean : 0.0);
    double var_t = std::exp(raw);
    if (var_t < model.variance_floor) {
      var_t = model.variance_floor;
      floored = true;
    }
    standardized[static_cast<std::size_t>(t)] =
        (residuals[t] - m_t) / std::sqrt(var_t);
  }
  if (floored)
    detail::warn("bound_location_scale: variance floor active on some "
                 "pre-treatment periods");

  OutSampleResult out;
  out.approach = Approach::location_scale;
  out.alpha2 = alpha2;
  out.conditional_mean = model.mean_at(x_row);
  out.conditional_sd = model.sd_at(x_row);
  out.M2_L = out.conditional_mean +
             out.conditional_sd * quantile(standardized, alpha2 / 2.0);
  out.M2_U = out.conditional_mean +
             out.conditional_sd * quantile(standardized, 1.0 - alpha2 / 2.0);
  return out;
}

namespace detail {

inline double pinball_loss(const Eigen::VectorXd& y, const Eigen::MatrixXd& x,
                           const Eigen::VectorXd& theta, double tau) {
  double loss = 0.0;
  const Eigen::VectorXd r = y - x * theta;
  for (Eigen::Index i = 0; i < r.size(); ++i)
    loss += r[i] >= 0.0 ? tau * r[i] : (tau - 1.0) * (-r[i]);
  return loss;
}

// Check-loss minimization by iteratively reweighted least squares with
// an annealed smoothing floor, then a polish step that tries exact
// interpolation through the points nearest the fitted line (the
// optimum interpolates basis-many observations in general position).
inline Eigen::VectorXd pinball_fit(const Eigen::VectorXd& y,
                                   const Eigen::MatrixXd& x, double tau) {
  const Eigen::Index n = y.size();
  const Eigen::Index p = x.cols();
  if (n < p) throw config_error("quantile regression: underdetermined");

  Eigen::VectorXd theta = lstsq(x, y, "quantile regression init").coeffs;
  const double yscale = y.cwiseAbs().maxCoeff() + 1.0;

  for (double kappa = 1e-2 * yscale; kappa >= 1e-8 * yscale; kappa *= 0.1) {
    for (int iter = 0; iter < 100; ++iter) {
      Eigen::VectorXd r = y - x * theta;
      Eigen::MatrixXd xw(n, p);
      Eigen::VectorXd yw(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double weight_num = r[i] >= 0.0 ? tau : 1.0 - tau;
        const double wi = weight_num / std::max(std::abs(r[i]), kappa);
        const double sq = std::sqrt(wi);
        xw.row(i) = sq * x.row(i);
        yw[i] = sq * y[i];
      }
      Eigen::VectorXd next =
          xw.colPivHouseholderQr().solve(yw);
      const double change = (next - theta).lpNorm<Eigen::Infinity>();
      theta = next;
      if (change <= 1e-12 * (1.0 + theta.lpNorm<Eigen::Infinity>())) break;
    }
  }

  // Polish: enumerate small interpolation subsets among the closest
  // residuals and keep the best vertex.
  double best = pinball_loss(y, x, theta, tau);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  const Eigen::VectorXd r = (y - x * theta).cwiseAbs();
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index a, Eigen::Index b) { return r[a] < r[b]; });
  const Eigen::Index pool =
      std::min<Eigen::Index>(n, std::max<Eigen::Index>(2 * p + 4, p));
  std::vector<Eigen::Index> subset(static_cast<std::size_t>(p));
  std::vector<Eigen::Index> stack;
  // Depth-first enumeration of all p-subsets of the pool.
  std::function<void(Eigen::Index, Eigen::Index)> recurse =
      [&](Eigen::Index start, Eigen::Index depth) {
        if (depth == p) {
          Eigen::MatrixXd xs(p, p);
          Eigen::VectorXd ys(p);
          for (Eigen::Index k = 0; k < p; ++k) {
            xs.row(k) = x.row(subset[static_cast<std::size_t>(k)]);
            ys[k] = y[subset[static_cast<std::size_t>(k)]];
          }
          Eigen::FullPivLU<Eigen::MatrixXd> lu(xs);
          if (!lu.isInvertible()) return;
          const Eigen::VectorXd cand = lu.solve(ys);
          const double loss = pinball_loss(y, x, cand, tau);
          if (loss < best) {
            best = loss;
            theta = cand;
          }
          return;
        }
        for (Eigen::Index i = start; i < pool; ++i) {
          subset[static_cast<std::size_t>(depth)] =
              order[static_cast<std::size_t>(i)];
          recurse(i + 1, depth + 1);
        }
      };
  recurse(0, 0);
  return theta;
}

}  // namespace detail

inline OutSampleResult bound_quantile_regression(
    const Eigen::VectorXd& residuals, const Eigen::MatrixXd& regressors,
    const Eigen::RowVectorXd& x_row, double alpha2, int degree) {
  if (!(alpha2 > 0.0 && alpha2 < 1.0))
    throw usage_error("bound_quantile_regression: alpha2 must be in (0,1)");
  if (regressors.rows() != residuals.size())
    throw usage_error("bound_quantile_regression: row mismatch");
  const Eigen::MatrixXd basis = polynomial_basis(regressors, degree);
  if (residuals.size() < 3 * basis.cols())
    throw config_error("bound_quantile_regression: underdetermined");
  const Eigen::RowVectorXd basis_row = polynomial_basis_row(x_row, degree);

  const Eigen::VectorXd theta_lo =
      detail::pinball_fit(residuals, basis, alpha2 / 2.0);
  const Eigen::VectorXd theta_hi =
      detail::pinball_fit(residuals, basis, 1.0 - alpha2 / 2.0);

  OutSampleResult out;
  out.approach = Approach::quantile_reg;
  out.alpha2 = alpha2;
  out.M2_L = basis_row.dot(theta_lo);
  out.M2_U = basis_row.dot(theta_hi);
  if (out.M2_L > out.M2_U) {
    std::swap(out.M2_L, out.M2_U);
    out.notes.push_back("crossed quantile fits were swapped");
    detail::warn("bound_quantile_regression: crossed quantiles swapped");
  }
  return out;
}

// Sensitivity grid: the subgaussian bound at scale factors times s.
inline std::vector<std::pair<double, OutSampleResult>> sensitivity_grid(
    double m, double s, double alpha2,
    const std::vector<double>& factors = {0.25, 0.5, 1.0, 1.5, 2.0}) {
  std::vector<std::pair<double, OutSampleResult>> grid;
  grid.reserve(factors.size());
  for (double f : factors) {
    if (!(f > 0.0)) throw usage_error("sensitivity_grid: factors must be positive");
    grid.emplace_back(f, bound_subgaussian(m, f * s, alpha2));
  }
  return grid;
}

}  // namespace synthpi
