// Feasibility sets for the weight vector, Euclidean projections used by
// the solvers, and the relaxed simulation set built from thresholded
// weights.
#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "synthpi/common.hpp"

namespace synthpi {

struct ConstraintSpec {
  enum class Kind {
    simplex,       // w >= 0, ||w||_1 = 1
    l1_ball,       // ||w||_1 <= q
    l2_ball,       // ||w||_2 <= q
    simplex_l2,    // w >= 0, ||w||_1 = 1, ||w||_2 <= q
    elastic_net,   // (1-alpha)/2 ||w||_2^2 + alpha ||w||_1 <= q
    unconstrained  // w in R^J
  };
  enum class RSpace { free_dims, zero };

  Kind kind = Kind::simplex;
  double q = 1.0;      // tuning constant for the ball-type sets
  double alpha = 0.5;  // elastic-net mixing in [0, 1]
  RSpace r_space = RSpace::free_dims;

  void validate() const {
    switch (kind) {
      case Kind::l1_ball:
      case Kind::l2_ball:
      case Kind::simplex_l2:
      case Kind::elastic_net:
        if (!(q > 0.0)) throw config_error("constraint: Q must be positive");
        break;
      default:
        break;
    }
    if (kind == Kind::elastic_net && !(alpha >= 0.0 && alpha <= 1.0))
      throw config_error("constraint: elastic-net alpha must be in [0,1]");
  }

  std::string to_string() const {
    std::ostringstream os;
    switch (kind) {
      case Kind::simplex:
        os << "simplex";
        break;
      case Kind::l1_ball:
        os << "l1 Q=" << q;
        break;
      case Kind::l2_ball:
        os << "l2 Q=" << q;
        break;
      case Kind::simplex_l2:
        os << "simplex+l2 Q=" << q;
        break;
      case Kind::elastic_net:
        os << "elastic Q=" << q << " alpha=" << alpha;
        break;
      case Kind::unconstrained:
        os << "unconstrained";
        break;
    }
    if (r_space == RSpace::zero) os << " r=zero";
    return os.str();
  }

  // Parses the config syntax: "simplex", "l1 Q=2", "l2 Q=1.5",
  // "simplex+l2 Q=1", "elastic Q=1 alpha=0.5", "unconstrained",
  // optionally followed by "r=zero".
  static ConstraintSpec parse(const std::string& text) {
    ConstraintSpec spec;
    std::istringstream is(text);
    std::string word;
    if (!(is >> word)) throw config_error("constraint: empty spec");
    if (word == "simplex")
      spec.kind = Kind::simplex;
    else if (word == "l1")
      spec.kind = Kind::l1_ball;
    else if (word == "l2")
      spec.kind = Kind::l2_ball;
    else if (word == "simplex+l2")
      spec.kind = Kind::simplex_l2;
    else if (word == "elastic")
      spec.kind = Kind::elastic_net;
    else if (word == "unconstrained")
      spec.kind = Kind::unconstrained;
    else
      throw config_error("constraint: unknown kind '" + word + "'");
    while (is >> word) {
      if (word.rfind("Q=", 0) == 0)
        spec.q = std::stod(word.substr(2));
      else if (word.rfind("alpha=", 0) == 0)
        spec.alpha = std::stod(word.substr(6));
      else if (word == "r=zero")
        spec.r_space = RSpace::zero;
      else if (word == "r=free")
        spec.r_space = RSpace::free_dims;
      else
        throw config_error("constraint: unknown token '" + word + "'");
    }
    spec.validate();
    return spec;
  }
};

// Exact Euclidean projection onto {w >= 0, sum w = total} by the
// sort-and-threshold construction; O(n log n).
inline Eigen::VectorXd project_scaled_simplex(const Eigen::VectorXd& v,
                                              double total) {
  if (v.size() == 0) throw usage_error("project_simplex: empty vector");
  if (total < 0.0) throw usage_error("project_simplex: negative total");
  if (total == 0.0) return Eigen::VectorXd::Zero(v.size());
  std::vector<double> u(v.data(), v.data() + v.size());
  std::sort(u.begin(), u.end(), std::greater<double>());
  double cumsum = 0.0;
  double theta = 0.0;
  int support = 0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    cumsum += u[k];
    const double candidate =
        (cumsum - total) / static_cast<double>(k + 1);
    if (u[k] - candidate > 0.0) {
      theta = candidate;
      support = static_cast<int>(k + 1);
    } else {
      break;
    }
  }
  if (support == 0) theta = (cumsum - total) / static_cast<double>(u.size());
  return (v.array() - theta).cwiseMax(0.0).matrix();
}

inline Eigen::VectorXd project_simplex(const Eigen::VectorXd& v) {
  return project_scaled_simplex(v, 1.0);
}

namespace detail {

inline Eigen::VectorXd project_l1_ball(const Eigen::VectorXd& v, double q) {
  if (v.lpNorm<1>() <= q) return v;
  Eigen::VectorXd absproj = project_scaled_simplex(v.cwiseAbs(), q);
  return absproj.array() * v.array().sign();
}

inline Eigen::VectorXd project_l2_ball(const Eigen::VectorXd& v, double q) {
  const double norm = v.norm();
  return norm <= q ? v : Eigen::VectorXd((q / norm) * v);
}

// Projection onto {w >= 0, sum w = 1, ||w||_2 <= q}.  With a
// multiplier mu on the norm constraint the minimizer is
// proj_simplex(v / (1 + mu)), whose norm decreases monotonically in mu
// (down to the uniform point), so a bisection solves it exactly.
inline Eigen::VectorXd project_simplex_l2(const Eigen::VectorXd& v, double q) {
  const Eigen::VectorXd plain = project_simplex(v);
  if (plain.norm() <= q) return plain;
  const double uniform_norm =
      1.0 / std::sqrt(static_cast<double>(v.size()));
  if (q < uniform_norm)
    throw config_error("simplex+l2: Q is below the uniform-weight norm; the "
                       "set is empty");
  double lo = 0.0, hi = 1.0;
  while (project_simplex(v / (1.0 + hi)).norm() > q) {
    hi *= 2.0;
    if (hi > 1e18) return Eigen::VectorXd::Constant(v.size(), 1.0 / v.size());
  }
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (project_simplex(v / (1.0 + mid)).norm() > q)
      lo = mid;
    else
      hi = mid;
  }
  return project_simplex(v / (1.0 + hi));
}

inline double elastic_net_value(const Eigen::VectorXd& w, double alpha) {
  return 0.5 * (1.0 - alpha) * w.squaredNorm() + alpha * w.lpNorm<1>();
}

// Projection onto {(1-alpha)/2 ||w||^2 + alpha ||w||_1 <= q} by
// bisection on the constraint multiplier; the inner prox is
// soft-threshold-then-shrink.
inline Eigen::VectorXd project_elastic_net(const Eigen::VectorXd& v, double q,
                                           double alpha) {
  if (elastic_net_value(v, alpha) <= q) return v;
  auto shrink = [&](double lam) {
    Eigen::VectorXd w(v.size());
    const double denom = 1.0 + lam * (1.0 - alpha);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double soft = std::max(std::abs(v[i]) - lam * alpha, 0.0);
      w[i] = (v[i] < 0.0 ? -soft : soft) / denom;
    }
    return w;
  };
  double lo = 0.0, hi = 1.0;
  while (elastic_net_value(shrink(hi), alpha) > q) {
    hi *= 2.0;
    if (hi > 1e18) throw numeric_error("elastic-net projection diverged");
  }
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (elastic_net_value(shrink(mid), alpha) > q)
      lo = mid;
    else
      hi = mid;
  }
  return shrink(hi);
}

}  // namespace detail

// Euclidean projection of a candidate weight vector onto the set.
inline Eigen::VectorXd project(const Eigen::VectorXd& v,
                               const ConstraintSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case ConstraintSpec::Kind::simplex:
      return project_simplex(v);
    case ConstraintSpec::Kind::l1_ball:
      return detail::project_l1_ball(v, spec.q);
    case ConstraintSpec::Kind::l2_ball:
      return detail::project_l2_ball(v, spec.q);
    case ConstraintSpec::Kind::simplex_l2:
      return detail::project_simplex_l2(v, spec.q);
    case ConstraintSpec::Kind::elastic_net:
      return detail::project_elastic_net(v, spec.q, spec.alpha);
    case ConstraintSpec::Kind::unconstrained:
      return v;
  }
  throw config_error("constraint: unknown kind");
}

inline bool contains(const Eigen::VectorXd& w, const ConstraintSpec& spec,
                     double tol = 1e-10) {
  spec.validate();
  switch (spec.kind) {
    case ConstraintSpec::Kind::simplex:
      return w.minCoeff() >= -tol && std::abs(w.lpNorm<1>() - 1.0) <= tol;
    case ConstraintSpec::Kind::l1_ball:
      return w.lpNorm<1>() <= spec.q + tol;
    case ConstraintSpec::Kind::l2_ball:
      return w.norm() <= spec.q + tol;
    case ConstraintSpec::Kind::simplex_l2:
      return w.minCoeff() >= -tol && std::abs(w.lpNorm<1>() - 1.0) <= tol &&
             w.norm() <= spec.q + tol;
    case ConstraintSpec::Kind::elastic_net:
      return detail::elastic_net_value(w, spec.alpha) <= spec.q + tol;
    case ConstraintSpec::Kind::unconstrained:
      return true;
  }
  return false;
}

// Relaxed constraint set used in the Gaussian simulation, expressed in
// the scaled deviation coordinates delta = D (beta - beta_star).  A
// point is a member when the implied beta has a componentwise
// non-negative weight block summing to l1_target; coordinates past
// w_dim (the fitted controls) stay unrestricted.  With w_dim = 0 the
// set is all of R^d.
struct DeltaStarSpec {
  Eigen::VectorXd beta_star;  // center (thresholded fit)
  Eigen::VectorXd d_scale;    // diagonal of the scaling matrix D
  int w_dim = 0;              // leading coordinates subject to the simplex
  double l1_target = 1.0;     // sum of the surviving weights
  double rho = 0.0;           // threshold that produced beta_star

  int dim() const { return static_cast<int>(beta_star.size()); }

  Eigen::VectorXd beta_of(const Eigen::VectorXd& delta) const {
    return beta_star + delta.cwiseQuotient(d_scale);
  }
};

inline bool contains(const Eigen::VectorXd& delta, const DeltaStarSpec& spec,
                     double tol = 1e-10) {
  if (delta.size() != spec.beta_star.size())
    throw usage_error("delta-star membership: dimension mismatch");
  if (spec.w_dim == 0) return true;
  const Eigen::VectorXd beta = spec.beta_of(delta);
  const auto w = beta.head(spec.w_dim);
  const double scale = 1.0 + std::abs(spec.l1_target);
  return w.minCoeff() >= -tol && std::abs(w.sum() - spec.l1_target) <= tol * scale;
}

struct ThresholdResult {
  Eigen::VectorXd beta_star;
  double l1_target = 0.0;
  double rho_used = 0.0;
  bool degenerate_fallback = false;
};

// Zeroes weight coordinates with magnitude <= rho; control coordinates
// are untouched.  If thresholding kills every weight the set would
// collapse, so fall back to half the largest weight magnitude.
inline ThresholdResult threshold_weights(const Eigen::VectorXd& beta_hat,
                                         int w_dim, double rho) {
  if (rho < 0.0) throw usage_error("threshold_weights: rho must be >= 0");
  if (w_dim < 0 || w_dim > beta_hat.size())
    throw usage_error("threshold_weights: bad weight dimension");
  ThresholdResult out;
  out.rho_used = rho;
  out.beta_star = beta_hat;
  auto apply = [&](double r) {
    out.beta_star = beta_hat;
    for (int j = 0; j < w_dim; ++j)
      if (std::abs(beta_hat[j]) <= r) out.beta_star[j] = 0.0;
    out.l1_target = out.beta_star.head(w_dim).cwiseAbs().sum();
  };
  apply(rho);
  if (w_dim > 0 && out.l1_target == 0.0 &&
      beta_hat.head(w_dim).cwiseAbs().maxCoeff() > 0.0) {
    const double fallback = beta_hat.head(w_dim).cwiseAbs().maxCoeff() / 2.0;
    detail::warn(
        "threshold_weights: all weights thresholded away; falling back to "
        "rho=" +
        std::to_string(fallback));
    out.rho_used = fallback;
    out.degenerate_fallback = true;
    apply(fallback);
  }
  return out;
}

// Builds the simulation set for a fitted coefficient vector.  The
// relaxation is defined for the simplex family; for the other sets we
// reuse the simplex recipe when the fit lands on a simplex-like face
// (non-negative weights with an active l1 budget) and otherwise leave
// the weight block unrestricted.  Those paths are experimental.
inline DeltaStarSpec make_delta_star(const ConstraintSpec& constraint,
                                     const Eigen::VectorXd& beta_hat,
                                     int w_dim, const Eigen::VectorXd& d_scale,
                                     double rho) {
  DeltaStarSpec spec;
  spec.d_scale = d_scale;
  spec.rho = rho;
  const bool simplex_family =
      constraint.kind == ConstraintSpec::Kind::simplex ||
      constraint.kind == ConstraintSpec::Kind::simplex_l2;
  bool simplex_like = simplex_family;
  if (!simplex_family && constraint.kind != ConstraintSpec::Kind::unconstrained) {
    const auto w = beta_hat.head(w_dim);
    simplex_like = w_dim > 0 && w.minCoeff() >= -1e-10 &&
                   w.lpNorm<1>() >= 0.99 * constraint.q;
    detail::warn(
        "delta-star: non-simplex constraint; using the " +
        std::string(simplex_like ? "simplex recipe on the active face"
                                 : "unrestricted relaxation") +
        " (experimental)");
  }
  if (constraint.kind == ConstraintSpec::Kind::unconstrained || !simplex_like) {
    spec.beta_star = beta_hat;
    spec.w_dim = 0;
    spec.l1_target = 0.0;
    return spec;
  }
  ThresholdResult thr = threshold_weights(beta_hat, w_dim, rho);
  spec.beta_star = thr.beta_star;
  spec.w_dim = w_dim;
  spec.l1_target = thr.l1_target;
  spec.rho = thr.rho_used;
  return spec;
}

}  // namespace synthpi
