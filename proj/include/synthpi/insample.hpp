// In-sample uncertainty: score-variance estimation, the weight
// threshold rule, and the Gaussian simulation that turns conic bounds
// into (M1_L, M1_U).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "synthpi/common.hpp"
#include "synthpi/constraints.hpp"
#include "synthpi/fit.hpp"
#include "synthpi/panel.hpp"
#include "synthpi/qclp.hpp"
#include "synthpi/regression.hpp"
#include "synthpi/rng.hpp"
#include "synthpi/stats.hpp"
#include "synthpi/threading.hpp"

namespace synthpi {

enum class SigmaMethod {
  hc_iid,              // per-row plug-in (heteroskedasticity robust)
  plugin_diag,         // same formula, named after the scaled version
  long_run,            // Bartlett-weighted autocovariances of the scores
  cointegration_plugin // contemporaneous score outer products
};

inline std::string to_string(SigmaMethod m) {
  switch (m) {
    case SigmaMethod::hc_iid:
      return "hc_iid";
    case SigmaMethod::plugin_diag:
      return "plugin_diag";
    case SigmaMethod::long_run:
      return "long_run";
    case SigmaMethod::cointegration_plugin:
      return "cointegration_plugin";
  }
  return "plugin_diag";
}

inline SigmaMethod parse_sigma_method(const std::string& s) {
  if (s == "hc_iid") return SigmaMethod::hc_iid;
  if (s == "plugin_diag") return SigmaMethod::plugin_diag;
  if (s == "long_run") return SigmaMethod::long_run;
  if (s == "cointegration_plugin") return SigmaMethod::cointegration_plugin;
  throw config_error("unknown sigma method '" + s + "'");
}

struct SigmaEstimate {
  Eigen::MatrixXd sigma;
  SigmaMethod method = SigmaMethod::plugin_diag;
  Eigen::VectorXd centered_residuals;
  double min_eig_preclip = 0.0;
  bool clipped = false;
  bool degenerate = false;  // all-zero residuals
};

// Least-squares fit of the residuals on a polynomial basis of the
// selected regressors; returns the fitted conditional means.  Degree 0
// is the grand mean.
inline Eigen::VectorXd conditional_mean_residuals(
    const Eigen::VectorXd& residuals, const Eigen::MatrixXd& regressors,
    int degree) {
  if (degree < 0 || degree > 2)
    throw usage_error("conditional_mean_residuals: degree must be 0, 1 or 2");
  if (degree == 0)
    return Eigen::VectorXd::Constant(residuals.size(), residuals.mean());
  if (regressors.rows() != residuals.size())
    throw usage_error("conditional_mean_residuals: row mismatch");
  if (regressors.cols() == 0)
    throw usage_error("conditional_mean_residuals: no regressors selected");
  const Eigen::MatrixXd basis = polynomial_basis(regressors, degree);
  const auto ls = lstsq(basis, residuals, "conditional mean");
  return basis * ls.coeffs;
}

inline int default_bandwidth(int t0) {
  return static_cast<int>(
      std::floor(4.0 * std::pow(static_cast<double>(t0) / 100.0, 2.0 / 9.0)));
}

// Variance of the scaled score gamma_hat = D^-1 Z' U, plugged in from
// centered residuals.  All variants share the same per-period scores
// s_t = sum_l D^-1 z_{t,l} u~_{t,l}:
//   * hc_iid / plugin_diag ignore cross-equation products at equal t,
//   * cointegration_plugin keeps them,
//   * long_run adds Bartlett-weighted lag covariances on top.
inline SigmaEstimate estimate_sigma(const SCDesign& design, const FittedSC& fit,
                                    const Eigen::VectorXd& centered_residuals,
                                    SigmaMethod method, int bandwidth = -1) {
  (void)fit;
  const int d = design.dim();
  const int t0 = design.t0;
  const int m = design.m;
  if (centered_residuals.size() != design.rows())
    throw usage_error("estimate_sigma: residual length mismatch");

  SigmaEstimate out;
  out.method = method;
  out.centered_residuals = centered_residuals;

  if (centered_residuals.cwiseAbs().maxCoeff() == 0.0) {
    detail::warn("estimate_sigma: residuals are identically zero; the "
                 "simulation will be degenerate");
    out.sigma = Eigen::MatrixXd::Zero(d, d);
    out.degenerate = true;
    return out;
  }

  const Eigen::VectorXd dinv = design.D.cwiseInverse();
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(d, d);

  if (method == SigmaMethod::hc_iid || method == SigmaMethod::plugin_diag) {
    // D^-1 Z' diag{u~^2} Z D^-1, accumulated row by row in time order.
    for (int t = 0; t < t0; ++t)
      for (int l = 0; l < m; ++l) {
        const int r = l * t0 + t;
        const Eigen::VectorXd z = dinv.cwiseProduct(design.Z.row(r).transpose());
        const double u2 = centered_residuals[r] * centered_residuals[r];
        sigma.noalias() += u2 * z * z.transpose();
      }
  } else {
    Eigen::MatrixXd scores(d, t0);
    for (int t = 0; t < t0; ++t) {
      Eigen::VectorXd s = Eigen::VectorXd::Zero(d);
      for (int l = 0; l < m; ++l) {
        const int r = l * t0 + t;
        s.noalias() +=
            centered_residuals[r] * dinv.cwiseProduct(design.Z.row(r).transpose());
      }
      scores.col(t) = s;
    }
    sigma.noalias() = scores * scores.transpose();
    if (method == SigmaMethod::long_run) {
      int bw = bandwidth >= 0 ? bandwidth : default_bandwidth(t0);
      bw = std::min(bw, t0 - 1);
      for (int k = 1; k <= bw; ++k) {
        const double weight = 1.0 - static_cast<double>(k) / (bw + 1.0);
        Eigen::MatrixXd lag = Eigen::MatrixXd::Zero(d, d);
        for (int t = 0; t + k < t0; ++t)
          lag.noalias() += scores.col(t) * scores.col(t + k).transpose();
        sigma.noalias() += weight * (lag + lag.transpose());
      }
    }
  }

  sigma = 0.5 * (sigma + sigma.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma);
  out.min_eig_preclip = es.eigenvalues().minCoeff();
  if (out.min_eig_preclip < 0.0) {
    Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
    sigma = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
    out.clipped = true;
    const double scale = es.eigenvalues().cwiseAbs().maxCoeff() + 1e-300;
    if (out.min_eig_preclip < -1e-10 * scale)
      detail::warn("estimate_sigma: clipped negative eigenvalue " +
                   std::to_string(out.min_eig_preclip));
  }
  out.sigma = sigma;
  return out;
}

// Threshold level from the basic optimization inequality:
//   rho = sd(u) (log T0)^c / (min_j m2(b_j) sqrt(T0)),
// with c = 1 under the cointegration regime and 0.5 otherwise.
inline double rho_rule(const Eigen::VectorXd& residuals,
                       const Eigen::MatrixXd& donor_matrix, Regime regime,
                       int t0) {
  if (t0 < 2) throw usage_error("rho_rule: need T0 >= 2");
  const double sigma_u = stddev(residuals);
  double min_b = std::numeric_limits<double>::infinity();
  int used = 0;
  for (Eigen::Index j = 0; j < donor_matrix.cols(); ++j) {
    const Eigen::VectorXd col = donor_matrix.col(j);
    const double centered_var =
        (col.array() - col.mean()).square().sum() / std::max<double>(1, col.size() - 1);
    if (centered_var <= 1e-300) {
      detail::warn("rho_rule: donor column " + std::to_string(j) +
                   " has zero variance; excluded from the minimum");
      continue;
    }
    min_b = std::min(min_b, root_second_moment(col));
    ++used;
  }
  if (used == 0) throw data_error("rho_rule: every donor column is degenerate");
  const double c = regime == Regime::cointegration ? 1.0 : 0.5;
  return sigma_u * std::pow(std::log(static_cast<double>(t0)), c) /
         (min_b * std::sqrt(static_cast<double>(t0)));
}

struct InSampleResult {
  double M1_L = 0.0;
  double M1_U = 0.0;
  double alpha1 = 0.0;
  int draws = 0;
  int dropped = 0;
  // The two empirical quantiles the bounds came from.
  double quantile_lo_sigma_L = 0.0;
  double quantile_hi_sigma_U = 0.0;
  double rho = 0.0;
  std::uint64_t seed = 0;
};

// Gaussian simulation of the optimization bounds for several
// predictors at once (they share every draw and the feasible region;
// only the objective direction changes).
inline std::vector<InSampleResult> simulate_bounds_multi(
    const FittedSC& fit, const SigmaEstimate& sigma,
    const DeltaStarSpec& delta_star, const std::vector<PredictorVector>& ps,
    double alpha1, int draws, std::uint64_t seed, int threads = 0) {
  if (draws < 100) throw usage_error("simulate_bounds: need at least 100 draws");
  if (!(alpha1 > 0.0 && alpha1 < 0.5))
    throw usage_error("simulate_bounds: alpha1 must be in (0, 0.5)");
  if (ps.empty()) throw usage_error("simulate_bounds: no predictors");
  const int d = delta_star.dim();
  if (fit.Q.rows() != d)
    throw usage_error("simulate_bounds: Q/region dimension mismatch");

  const PsdSqrt root = psd_sqrt(sigma.sigma);
  const std::size_t n_shift = ps.size();
  std::vector<Eigen::VectorXd> cs(n_shift);
  for (std::size_t s = 0; s < n_shift; ++s) {
    if (ps[s].p.size() != d)
      throw usage_error("simulate_bounds: predictor dimension mismatch");
    cs[s] = ps[s].p.cwiseQuotient(delta_star.d_scale);
  }

  const int n_workers = std::max(1, threads > 0 ? threads : max_threads());
  std::vector<qclp::Solver> solvers(static_cast<std::size_t>(n_workers));
  std::vector<std::uint8_t> solver_ready(static_cast<std::size_t>(n_workers), 0);

  std::vector<std::vector<double>> sig_u(n_shift),
      sig_l(n_shift);  // per shift, per draw
  for (auto& v : sig_u) v.assign(static_cast<std::size_t>(draws), 0.0);
  for (auto& v : sig_l) v.assign(static_cast<std::size_t>(draws), 0.0);
  std::vector<std::uint8_t> ok(static_cast<std::size_t>(draws), 1);

  parallel_for(
      static_cast<std::size_t>(draws),
      [&](int worker, std::size_t b) {
        auto& solver = solvers[static_cast<std::size_t>(worker)];
        if (!solver_ready[static_cast<std::size_t>(worker)]) {
          solver.prepare(fit.Q, delta_star);
          solver_ready[static_cast<std::size_t>(worker)] = 1;
        }
        RngStream stream(seed, stream_tag::gaussian_draw, b);
        const Eigen::VectorXd g = root.root * stream.normal_vector(d);
        try {
          for (std::size_t s = 0; s < n_shift; ++s) {
            const auto hi = solver.solve_prepared(g, cs[s], qclp::Sense::sup);
            const auto lo = solver.solve_prepared(g, cs[s], qclp::Sense::inf);
            if (hi.status == qclp::Status::unbounded_flagged ||
                lo.status == qclp::Status::unbounded_flagged)
              throw numeric_error("qclp: unbounded region");
            sig_u[s][b] = hi.value;
            sig_l[s][b] = lo.value;
          }
        } catch (const std::exception&) {
          ok[b] = 0;
        }
      },
      threads);

  int dropped = 0;
  for (auto flag : ok)
    if (!flag) ++dropped;
  if (dropped > 0 && dropped * 100 > draws)
    throw numeric_error("simulate_bounds: more than 1% of draws failed (" +
                        std::to_string(dropped) + "/" + std::to_string(draws) +
                        ")");

  std::vector<InSampleResult> results(n_shift);
  for (std::size_t s = 0; s < n_shift; ++s) {
    std::vector<double> u_vals, l_vals;
    u_vals.reserve(static_cast<std::size_t>(draws));
    l_vals.reserve(static_cast<std::size_t>(draws));
    for (int b = 0; b < draws; ++b)
      if (ok[static_cast<std::size_t>(b)]) {
        u_vals.push_back(sig_u[s][static_cast<std::size_t>(b)]);
        l_vals.push_back(sig_l[s][static_cast<std::size_t>(b)]);
      }
    InSampleResult& r = results[s];
    r.alpha1 = alpha1;
    r.draws = draws;
    r.dropped = dropped;
    r.seed = seed;
    r.rho = delta_star.rho;
    r.quantile_lo_sigma_L = quantile(l_vals, alpha1 / 2.0);
    r.quantile_hi_sigma_U = quantile(u_vals, 1.0 - alpha1 / 2.0);
    // Sign convention: the in-sample term is p'(beta0 - beta_hat)
    // = -p' D^-1 delta_hat, so the bounds flip.
    r.M1_U = -r.quantile_lo_sigma_L;
    r.M1_L = -r.quantile_hi_sigma_U;
  }
  return results;
}

inline InSampleResult simulate_bounds(const FittedSC& fit,
                                      const SigmaEstimate& sigma,
                                      const DeltaStarSpec& delta_star,
                                      const PredictorVector& p, double alpha1,
                                      int draws, std::uint64_t seed,
                                      int threads = 0) {
  return simulate_bounds_multi(fit, sigma, delta_star, {p}, alpha1, draws,
                               seed, threads)
      .front();
}

}  // namespace synthpi
