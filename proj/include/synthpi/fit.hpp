// Constrained least-squares fit of the stacked design.
//
// The control coefficients have a closed-form update for any weight
// vector, so they are eliminated through the projector onto the
// orthogonal complement of the control columns, and accelerated
// projected gradient runs on the weights alone.  The step size comes
// from a power-iteration estimate of the reduced Gram matrix's largest
// eigenvalue.
#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "synthpi/common.hpp"
#include "synthpi/constraints.hpp"
#include "synthpi/panel.hpp"

namespace synthpi {

struct SolverReport {
  int iterations = 0;
  double kkt_residual = 0.0;
  bool converged = true;
  std::vector<std::string> warnings;
};

struct FittedSC {
  Eigen::VectorXd beta;       // (w', r')'
  Eigen::VectorXd residuals;  // A - Z beta
  Eigen::MatrixXd Q;          // D^-1 Z' Z D^-1
  double objective = 0.0;     // attained sum of squared residuals
  int w_dim = 0;
  SolverReport report;

  Eigen::VectorXd w() const { return beta.head(w_dim); }
  Eigen::VectorXd r() const { return beta.tail(beta.size() - w_dim); }
};

struct convergence_error : std::runtime_error {
  explicit convergence_error(const std::string& msg, FittedSC best_iterate)
      : std::runtime_error(msg), best(std::move(best_iterate)) {}
  FittedSC best;
};

struct FitOptions {
  int max_iterations = 50000;
  double tol_objective = 1e-12;  // relative decrease
  double tol_projection = 1e-10;
  std::optional<Eigen::VectorXd> w_start;  // test hook; default is uniform
};

namespace detail {

inline double power_iteration_norm(const Eigen::MatrixXd& g) {
  if (g.rows() == 0) return 0.0;
  Eigen::VectorXd v = Eigen::VectorXd::Ones(g.rows());
  v.normalize();
  double lambda = 0.0;
  for (int it = 0; it < 100; ++it) {
    Eigen::VectorXd gv = g * v;
    const double next = gv.norm();
    if (next == 0.0) return 0.0;
    gv /= next;
    if (std::abs(next - lambda) <= 1e-12 * std::max(1.0, next)) {
      lambda = next;
      break;
    }
    lambda = next;
    v = gv;
  }
  return lambda;
}

// KKT stationarity residual for a simplex-constrained fit: on the
// support the projected gradient must be flat, off the support it must
// not point inward.
inline double simplex_kkt_residual(const Eigen::VectorXd& grad_w,
                                   const Eigen::VectorXd& w) {
  double lambda = 0.0;
  double weight = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (w[i] > 1e-12) {
      lambda += grad_w[i] * w[i];
      weight += w[i];
    }
  }
  if (weight > 0.0) lambda /= weight;
  double resid = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (w[i] > 1e-12)
      resid = std::max(resid, std::abs(grad_w[i] - lambda));
    else
      resid = std::max(resid, std::max(0.0, lambda - grad_w[i]));
  }
  return resid;
}

}  // namespace detail

inline FittedSC fit(const SCDesign& design, const FitOptions& options = {}) {
  design.validate();
  const int rows = design.rows();
  const int j = design.j;
  const int kt = design.k_total();
  const bool r_free =
      design.constraint.r_space == ConstraintSpec::RSpace::free_dims && kt > 0;

  FittedSC out;
  out.w_dim = j;

  auto finalize = [&](const Eigen::VectorXd& beta) {
    out.beta = beta;
    out.residuals = design.A - design.Z * beta;
    out.objective = out.residuals.squaredNorm();
    const Eigen::VectorXd dinv = design.D.cwiseInverse();
    out.Q = dinv.asDiagonal() * (design.Z.transpose() * design.Z) *
            dinv.asDiagonal();
    out.Q = 0.5 * (out.Q + out.Q.transpose()).eval();
  };

  // Fully unconstrained problems have a closed form: the minimum-norm
  // least-squares solution.
  if (design.constraint.kind == ConstraintSpec::Kind::unconstrained) {
    Eigen::MatrixXd zfit(rows, r_free || kt == 0 ? design.dim() : j);
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(design.dim());
    if (r_free || kt == 0) {
      beta = design.Z.completeOrthogonalDecomposition().solve(design.A);
    } else {
      beta.head(j) = design.B.completeOrthogonalDecomposition().solve(design.A);
    }
    finalize(beta);
    out.report.converged = true;
    out.report.kkt_residual =
        (design.Z.transpose() * out.residuals).lpNorm<Eigen::Infinity>();
    return out;
  }

  // Eliminate the controls: P projects onto the orthogonal complement
  // of span(C).
  Eigen::MatrixXd b_reduced = design.B;
  Eigen::VectorXd a_reduced = design.A;
  Eigen::MatrixXd c_basis;  // orthonormal basis of span(C)
  if (r_free) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design.C);
    const auto rank = qr.rank();
    if (rank < kt)
      out.report.warnings.push_back(
          "controls are rank-deficient; using minimum-norm coefficients");
    c_basis = qr.householderQ() * Eigen::MatrixXd::Identity(rows, rank);
    a_reduced -= c_basis * (c_basis.transpose() * design.A);
    b_reduced -= c_basis * (c_basis.transpose() * design.B);
  }

  const Eigen::MatrixXd gram = b_reduced.transpose() * b_reduced;
  const Eigen::VectorXd lin = b_reduced.transpose() * a_reduced;
  const double const_term = a_reduced.squaredNorm();
  auto objective_of = [&](const Eigen::VectorXd& w) {
    return w.dot(gram * w) - 2.0 * lin.dot(w) + const_term;
  };

  const double lipschitz =
      std::max(2.0 * detail::power_iteration_norm(gram), 1e-300);
  const double step = 1.0 / lipschitz;

  Eigen::VectorXd w = options.w_start
                          ? project(*options.w_start, design.constraint)
                          : project(Eigen::VectorXd::Constant(j, 1.0 / j),
                                    design.constraint);
  Eigen::VectorXd y = w;
  Eigen::VectorXd w_prev = w;
  double theta = 1.0;
  double obj = objective_of(w);
  double proj_resid = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;

  for (int it = 1; it <= options.max_iterations; ++it) {
    iterations = it;
    const Eigen::VectorXd grad_y = 2.0 * (gram * y - lin);
    Eigen::VectorXd w_next = project(y - step * grad_y, design.constraint);
    const double obj_next = objective_of(w_next);

    if (obj_next > obj) {
      // Momentum overshot; restart from the last good point.
      y = w;
      theta = 1.0;
      const Eigen::VectorXd grad_w = 2.0 * (gram * w - lin);
      w_next = project(w - step * grad_w, design.constraint);
      const double restarted = objective_of(w_next);
      if (restarted > obj) {
        proj_resid = (w_next - w).lpNorm<Eigen::Infinity>();
        break;  // cannot improve within machine precision
      }
      w_prev = w;
      w = w_next;
      obj = restarted;
      continue;
    }

    const double theta_next =
        0.5 * (1.0 + std::sqrt(1.0 + 4.0 * theta * theta));
    y = w_next + ((theta - 1.0) / theta_next) * (w_next - w);
    theta = theta_next;

    const double decrease = obj - obj_next;
    w_prev = w;
    w = w_next;
    obj = obj_next;

    const Eigen::VectorXd grad_w = 2.0 * (gram * w - lin);
    proj_resid =
        (w - project(w - step * grad_w, design.constraint)).lpNorm<Eigen::Infinity>();
    if (decrease <= options.tol_objective * (1.0 + std::abs(obj)) &&
        proj_resid <= options.tol_projection * (1.0 + w.lpNorm<Eigen::Infinity>())) {
      converged = true;
      break;
    }
  }

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(design.dim());
  beta.head(j) = w;
  if (r_free)
    beta.tail(kt) = design.C.completeOrthogonalDecomposition().solve(
        design.A - design.B * w);

  finalize(beta);
  out.report.iterations = iterations;
  out.report.converged = converged;
  if (design.constraint.kind == ConstraintSpec::Kind::simplex ||
      design.constraint.kind == ConstraintSpec::Kind::simplex_l2) {
    const Eigen::VectorXd grad =
        2.0 * design.Z.transpose() * (design.Z * out.beta - design.A);
    out.report.kkt_residual = detail::simplex_kkt_residual(grad.head(j), w);
  } else {
    out.report.kkt_residual = proj_resid;
  }

  if (!converged) {
    const double scale = 1.0 + design.A.squaredNorm();
    // Accept the iterate if it is optimal for practical purposes even
    // though the stopping rule never fired.
    if (out.report.kkt_residual > 1e-6 * scale)
      throw convergence_error("fit did not converge after " +
                                  std::to_string(iterations) + " iterations",
                              out);
    out.report.warnings.push_back("stopping tolerance not reached; iterate "
                                  "accepted on KKT residual");
  }
  return out;
}

inline double predict(const FittedSC& fit, const PredictorVector& p) {
  if (p.p.size() != fit.beta.size())
    throw usage_error("predict: predictor dimension mismatch");
  return p.p.dot(fit.beta);
}

inline double treatment_effect(const FittedSC& fit, const PredictorVector& p) {
  if (!p.y1_observed)
    throw usage_error("treatment_effect: treated outcome not observed");
  return *p.y1_observed - predict(fit, p);
}

}  // namespace synthpi
