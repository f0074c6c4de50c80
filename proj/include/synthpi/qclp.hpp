// Sup/inf of a linear functional over the intersection of the relaxed
// constraint set with the quadratic region
//
//     M_xi = { delta in Delta* : delta' Q delta - 2 xi' delta <= 0 }.
//
// The Lagrangian dual in the single constraint multiplier mu is a 1-D
// convex problem: for each mu the inner maximization is a quadratic
// program over Delta* (a scaled simplex on the weight block, free
// elsewhere), solved exactly by a primal active-set method.  The dual
// value at any mu upper-bounds the sup and every inner iterate with a
// non-positive quadratic value is feasible, so the solver carries a
// certified optimality gap: value is the best feasible objective and
// kkt_residual the remaining gap to the dual bound.
//
// Determinism: the solve path is a pure function of the problem, so
// identical inputs produce bit-identical solutions regardless of how
// many solves ran before or on which thread.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "synthpi/common.hpp"
#include "synthpi/constraints.hpp"
#include "synthpi/fit.hpp"
#include "synthpi/panel.hpp"

namespace synthpi {
namespace qclp {

enum class Sense { sup, inf };
enum class Status { optimal, max_iter, unbounded_flagged };

struct ConicProblem {
  Eigen::VectorXd c;   // objective direction (usually D^-1 p_T)
  Eigen::MatrixXd Q;   // symmetric PSD
  Eigen::VectorXd xi;  // localization of the quadratic region
  DeltaStarSpec region;
  Sense sense = Sense::sup;
};

struct ConicSolution {
  double value = 0.0;
  Eigen::VectorXd argpoint;
  double kkt_residual = 0.0;
  Status status = Status::optimal;
};

struct SolveOptions {
  double tol = 1e-8;            // relative certified-gap tolerance
  double tol_feasibility = 1e-9;  // quadratic-constraint violation
  int max_outer = 200;          // multiplier evaluations
  int max_inner = 20000;        // total active-set pivots per solve
};

// Reusable solver: prepare() fixes (Q, region) and solve_prepared()
// runs against many (xi, c) pairs without reallocating.  All buffers
// are owned here, so one instance per worker thread is the intended
// usage in simulation loops.
class Solver {
 public:
  Solver() = default;

  void prepare(const Eigen::MatrixXd& q_matrix, const DeltaStarSpec& region) {
    const int d = region.dim();
    if (q_matrix.rows() != d || q_matrix.cols() != d)
      throw usage_error("qclp: Q dimension does not match the region");
    const double qscale = q_matrix.cwiseAbs().maxCoeff() + 1e-300;
    if ((q_matrix - q_matrix.transpose()).cwiseAbs().maxCoeff() >
        1e-8 * qscale)
      throw numeric_error("qclp: Q is not symmetric");
    {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(q_matrix);
      if (es.eigenvalues().minCoeff() < -1e-10 * std::max(1.0, qscale))
        throw numeric_error("qclp: Q has negative eigenvalues beyond the clip "
                            "threshold");
    }

    d_ = d;
    w_dim_ = region.w_dim;
    s_ = region.l1_target;
    beta_star_ = region.beta_star;
    d_scale_ = region.d_scale;

    // Work in beta coordinates: H = D Q D turns the quadratic form in
    // delta into one in beta - beta_star with plain simplex constraints.
    h_ = d_scale_.asDiagonal() * q_matrix * d_scale_.asDiagonal();
    h_ = 0.5 * (h_ + h_.transpose()).eval();
    h_scale_ = h_.cwiseAbs().maxCoeff() + 1e-300;
    ridge_ = 1e-13 * h_scale_;

    // The weight block of Delta* is compact; free coordinates are
    // bounded only through the quadratic form, so it must be positive
    // definite on them or the sup can run away along a null direction.
    unbounded_ = false;
    const int n_free = d_ - w_dim_;
    if (n_free > 0) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
          h_.bottomRightCorner(n_free, n_free));
      if (es.eigenvalues().minCoeff() <= 1e-12 * h_scale_) unbounded_ = true;
    }

    beta_.resize(d_);
    beta_hat_.resize(d_);
    g_work_.resize(d_);
    grad_.resize(d_);
    chat_.resize(d_);
    btil_.resize(d_);
    lin_base_.resize(d_);
    u_.resize(d_);
    v_.resize(d_);
    chol_.resize(d_, d_);
    free_idx_.resize(static_cast<std::size_t>(d_));
    active_.assign(static_cast<std::size_t>(d_), 0);
    factored_mask_ = ~0ULL;
    factored_count_ = -1;
    prepared_ = true;
  }

  ConicSolution solve_prepared(const Eigen::VectorXd& xi,
                               const Eigen::VectorXd& c, Sense sense,
                               const SolveOptions& options = {}) {
    if (!prepared_) throw usage_error("qclp: solve before prepare");
    if (xi.size() != d_ || c.size() != d_)
      throw usage_error("qclp: xi/c dimension mismatch");

    ConicSolution sol;
    if (unbounded_) {
      sol.status = Status::unbounded_flagged;
      sol.value = std::numeric_limits<double>::infinity();
      sol.argpoint = Eigen::VectorXd::Zero(d_);
      sol.kkt_residual = std::numeric_limits<double>::infinity();
      return sol;
    }

    const double flip = sense == Sense::inf ? -1.0 : 1.0;
    chat_ = flip * d_scale_.cwiseProduct(c);
    btil_ = d_scale_.cwiseProduct(xi);
    lin_base_.noalias() = h_ * beta_star_;
    lin_base_ += btil_;  // H beta_star + D xi

    // Deterministic start: uniform weights, controls at the center.
    beta_ = beta_star_;
    if (w_dim_ > 0)
      beta_.head(w_dim_).setConstant(s_ / static_cast<double>(w_dim_));
    std::fill(active_.begin(), active_.end(), 0);
    factored_mask_ = ~0ULL;
    factored_count_ = -1;
    pivots_left_ = options.max_inner;

    // delta = 0 is always feasible, so the running lower bound starts
    // at zero.
    double best_value = 0.0;
    Eigen::VectorXd best_beta = beta_star_;
    double upper = std::numeric_limits<double>::infinity();

    const double cnorm = chat_.norm();
    if (cnorm == 0.0) {
      sol.value = 0.0;
      sol.argpoint = Eigen::VectorXd::Zero(d_);
      sol.kkt_residual = 0.0;
      return sol;
    }

    struct Eval {
      double q = 0.0;      // quadratic constraint value
      double value = 0.0;  // objective at the inner solution
      double dual = 0.0;   // Lagrangian dual bound
      bool exact = true;   // inner solve finished within the pivot budget
    };

    auto evaluate = [&](double mu) {
      // Inner problem: min 1/2 b'Hb - (H beta_star + D xi + c/(2mu))' b.
      g_work_ = -lin_base_ - chat_ / (2.0 * mu);
      Eval ev;
      ev.exact = inner_solve();
      const Eigen::VectorXd diff = beta_ - beta_star_;
      ev.q = diff.dot(h_ * diff) - 2.0 * btil_.dot(diff);
      ev.value = chat_.dot(diff);
      ev.dual = ev.value - mu * ev.q;
      return ev;
    };

    auto q_tolerance = [&](const Eigen::VectorXd& beta) {
      const Eigen::VectorXd diff = beta - beta_star_;
      const double scale =
          std::abs(diff.dot(h_ * diff)) + 2.0 * std::abs(btil_.dot(diff));
      return options.tol_feasibility * (1.0 + scale);
    };

    auto gap_tol = [&](double lo) { return options.tol * (1.0 + std::abs(lo)); };

    // Starting multiplier on the scale where the objective and the
    // constraint gradient balance.
    double mu = cnorm / (2.0 * btil_.norm() + h_scale_ / d_ + 1e-300);
    mu = std::clamp(mu, 1e-12, 1e12);

    double mu_infeas = 0.0, mu_feas = 0.0;
    double q_infeas = 0.0, q_feas = 0.0;
    bool have_infeas = false, have_feas = false;
    int evals = 0;
    bool converged = false;

    auto record = [&](double m, const Eval& ev) {
      if (ev.exact) upper = std::min(upper, ev.dual);
      if (ev.q <= q_tolerance(beta_)) {
        if (ev.value > best_value) {
          best_value = ev.value;
          best_beta = beta_;
        }
        have_feas = true;
        mu_feas = m;
        q_feas = ev.q;
      } else {
        have_infeas = true;
        mu_infeas = m;
        q_infeas = ev.q;
      }
      if (upper - best_value <= gap_tol(best_value)) converged = true;
    };

    // Walk the multiplier until both sides of the constraint boundary
    // are seen (or the gap already certifies optimality).
    double mu_probe = mu;
    while (evals < options.max_outer && !converged && !have_feas) {
      const Eval ev = evaluate(mu_probe);
      ++evals;
      record(mu_probe, ev);
      if (!have_feas) {
        mu_probe *= 8.0;
        if (mu_probe > 1e18) break;
      }
    }
    mu_probe = mu / 8.0;
    while (evals < options.max_outer && !converged && !have_infeas &&
           mu_probe > 1e-18) {
      const Eval ev = evaluate(mu_probe);
      ++evals;
      record(mu_probe, ev);
      mu_probe /= 8.0;
    }

    // Secant on q(mu) inside the bracket, safeguarded by the geometric
    // mean when the step leaves the central part of the interval.
    while (evals < options.max_outer && !converged && have_feas &&
           have_infeas) {
      double next;
      const double denom = q_infeas - q_feas;
      if (denom > 0.0) {
        next = mu_infeas + (mu_feas - mu_infeas) * (q_infeas / denom);
        const double lo = std::min(mu_infeas, mu_feas);
        const double hi = std::max(mu_infeas, mu_feas);
        const double span = hi - lo;
        if (!(next > lo + 0.05 * span && next < hi - 0.05 * span))
          next = std::sqrt(lo * hi);
      } else {
        next = std::sqrt(std::min(mu_infeas, mu_feas) *
                         std::max(mu_infeas, mu_feas));
      }
      if (!(next > 0.0) || !std::isfinite(next)) break;
      const Eval ev = evaluate(next);
      ++evals;
      record(next, ev);
      if (std::abs(mu_feas - mu_infeas) <=
          1e-15 * std::max(mu_feas, mu_infeas))
        break;
    }

    sol.value = flip * best_value;
    sol.argpoint = d_scale_.cwiseProduct(best_beta - beta_star_);
    sol.kkt_residual = std::max(0.0, upper - best_value);
    sol.status = (converged || sol.kkt_residual <= gap_tol(best_value))
                     ? Status::optimal
                     : Status::max_iter;
    // Report the objective of the returned point exactly.
    sol.value = c.dot(sol.argpoint);
    return sol;
  }

 private:
  // Primal active-set method for
  //   min 1/2 b'Hb + g'b   s.t.  b_i >= 0 and sum_i b_i = s on the
  // weight block, remaining coordinates free.  Starts from the current
  // feasible beta_ / active_ state (warm across multiplier updates
  // within one solve) and ends at the exact minimizer.  Returns false
  // if the pivot budget ran out.
  bool inner_solve() {
    const double tolz = 1e-12 * std::max(1.0, std::abs(s_));
    for (;;) {
      if (pivots_left_-- <= 0) return false;
      if (!solve_eqp()) return false;

      // Ratio test toward the equality-constrained minimizer.
      double t = 1.0;
      int blocking = -1;
      for (int k = 0; k < n_free_; ++k) {
        const int i = free_idx_[static_cast<std::size_t>(k)];
        if (i >= w_dim_) continue;
        const double target = beta_hat_[i];
        if (target < -tolz) {
          const double cur = std::max(beta_[i], 0.0);
          const double step = cur / (cur - target);
          if (step < t) {
            t = step;
            blocking = i;
          }
        }
      }

      if (blocking < 0) {
        for (int k = 0; k < n_free_; ++k) {
          const int i = free_idx_[static_cast<std::size_t>(k)];
          beta_[i] = beta_hat_[i];
        }
        // Dual feasibility of the pinned coordinates.
        grad_.noalias() = h_ * beta_;
        grad_ += g_work_;
        const double dual_tol =
            1e-10 * (grad_.cwiseAbs().maxCoeff() + std::abs(lambda_) + 1.0);
        int release = -1;
        double most_negative = -dual_tol;
        for (int i = 0; i < w_dim_; ++i) {
          if (!active_[static_cast<std::size_t>(i)]) continue;
          const double nu = grad_[i] - lambda_;
          if (nu < most_negative) {
            most_negative = nu;
            release = i;
          }
        }
        if (release < 0) return true;
        active_[static_cast<std::size_t>(release)] = 0;
        continue;
      }

      for (int k = 0; k < n_free_; ++k) {
        const int i = free_idx_[static_cast<std::size_t>(k)];
        beta_[i] += t * (beta_hat_[i] - beta_[i]);
      }
      beta_[blocking] = 0.0;
      active_[static_cast<std::size_t>(blocking)] = 1;
    }
  }

  // Equality-constrained solve on the current free set; result in
  // beta_hat_ (free coordinates only) and lambda_.
  bool solve_eqp() {
    n_free_ = 0;
    std::uint64_t mask = 0;
    int n_free_w = 0;
    for (int i = 0; i < d_; ++i) {
      const bool is_active = i < w_dim_ && active_[static_cast<std::size_t>(i)];
      if (is_active) continue;
      free_idx_[static_cast<std::size_t>(n_free_)] = i;
      ++n_free_;
      if (i < w_dim_) ++n_free_w;
      if (d_ <= 64) mask |= (1ULL << i);
    }
    if (n_free_w == 0 && w_dim_ > 0 && std::abs(s_) > 1e-12)
      // Cannot satisfy the sum with every weight pinned; release the
      // first pinned weight and retry.
      for (int i = 0; i < w_dim_; ++i)
        if (active_[static_cast<std::size_t>(i)]) {
          active_[static_cast<std::size_t>(i)] = 0;
          return solve_eqp();
        }

    if (d_ > 64 || mask != factored_mask_ || n_free_ != factored_count_) {
      if (!factorize()) return false;
      factored_mask_ = mask;
      factored_count_ = n_free_;
    }

    // u solves H_FF u = -g_F ; v solves H_FF v = a_F.
    for (int k = 0; k < n_free_; ++k) {
      const int i = free_idx_[static_cast<std::size_t>(k)];
      u_[k] = -g_work_[i];
      v_[k] = i < w_dim_ ? 1.0 : 0.0;
    }
    cholesky_solve(u_);
    cholesky_solve(v_);

    double a_u = 0.0, a_v = 0.0;
    for (int k = 0; k < n_free_; ++k) {
      const int i = free_idx_[static_cast<std::size_t>(k)];
      if (i < w_dim_) {
        a_u += u_[k];
        a_v += v_[k];
      }
    }
    if (n_free_w > 0 && a_v > 0.0)
      lambda_ = (s_ - a_u) / a_v;
    else
      lambda_ = 0.0;
    for (int k = 0; k < n_free_; ++k) {
      const int i = free_idx_[static_cast<std::size_t>(k)];
      beta_hat_[i] = u_[k] + lambda_ * v_[k];
    }
    return true;
  }

  bool factorize() {
    double ridge = ridge_;
    for (int attempt = 0; attempt < 4; ++attempt) {
      for (int r = 0; r < n_free_; ++r) {
        const int i = free_idx_[static_cast<std::size_t>(r)];
        for (int cix = 0; cix <= r; ++cix)
          chol_(r, cix) = h_(i, free_idx_[static_cast<std::size_t>(cix)]);
        chol_(r, r) += ridge;
      }
      bool ok = true;
      for (int k = 0; k < n_free_ && ok; ++k) {
        double diag = chol_(k, k);
        for (int m = 0; m < k; ++m) diag -= chol_(k, m) * chol_(k, m);
        if (diag <= 0.0) {
          ok = false;
          break;
        }
        const double lkk = std::sqrt(diag);
        chol_(k, k) = lkk;
        for (int r = k + 1; r < n_free_; ++r) {
          double val = chol_(r, k);
          for (int m = 0; m < k; ++m) val -= chol_(r, m) * chol_(k, m);
          chol_(r, k) = val / lkk;
        }
      }
      if (ok) return true;
      ridge = std::max(ridge * 100.0, 1e-10 * h_scale_);
    }
    return false;
  }

  void cholesky_solve(Eigen::VectorXd& x) const {
    for (int r = 0; r < n_free_; ++r) {
      double val = x[r];
      for (int m = 0; m < r; ++m) val -= chol_(r, m) * x[m];
      x[r] = val / chol_(r, r);
    }
    for (int r = n_free_ - 1; r >= 0; --r) {
      double val = x[r];
      for (int m = r + 1; m < n_free_; ++m) val -= chol_(m, r) * x[m];
      x[r] = val / chol_(r, r);
    }
  }

  bool prepared_ = false;
  int d_ = 0, w_dim_ = 0;
  double s_ = 0.0, h_scale_ = 1.0, ridge_ = 0.0, lambda_ = 0.0;
  bool unbounded_ = false;
  Eigen::MatrixXd h_, chol_;
  Eigen::VectorXd beta_star_, d_scale_;
  Eigen::VectorXd beta_, beta_hat_, g_work_, grad_, chat_, btil_, lin_base_,
      u_, v_;
  std::vector<int> free_idx_;
  std::vector<std::uint8_t> active_;
  std::uint64_t factored_mask_ = ~0ULL;
  int factored_count_ = -1;
  int n_free_ = 0;
  int pivots_left_ = 0;
};

inline ConicSolution solve(const ConicProblem& problem,
                           const SolveOptions& options = {}) {
  Solver solver;
  solver.prepare(problem.Q, problem.region);
  return solver.solve_prepared(problem.xi, problem.c, problem.sense, options);
}

// Region for the un-relaxed constraint set centered at a known
// coefficient vector (used when the pseudo-true value is available,
// e.g. on synthetic data).
inline DeltaStarSpec exact_region(const SCDesign& design,
                                  const Eigen::VectorXd& beta0) {
  DeltaStarSpec region;
  region.beta_star = beta0;
  region.d_scale = design.D;
  region.w_dim = design.j;
  region.l1_target = beta0.head(design.j).cwiseAbs().sum();
  region.rho = 0.0;
  return region;
}

// Optimization-bounds containment check, usable when the centering of
// the score is known (synthetic data): p' D^-1 delta_hat must lie
// between the inf and sup over M_xi with xi = gamma_hat - gamma and the
// region centered at beta0.
inline bool sandwich_check(const SCDesign& design, const FittedSC& fit,
                           const Eigen::VectorXd& beta0,
                           const Eigen::VectorXd& gamma_diff,
                           const PredictorVector& p, double slack = 1e-7) {
  const Eigen::VectorXd c = p.p.cwiseQuotient(design.D);
  ConicProblem problem;
  problem.c = c;
  problem.Q = fit.Q;
  problem.xi = gamma_diff;
  problem.region = exact_region(design, beta0);

  Solver solver;
  solver.prepare(problem.Q, problem.region);
  const ConicSolution hi =
      solver.solve_prepared(problem.xi, problem.c, Sense::sup);
  const ConicSolution lo =
      solver.solve_prepared(problem.xi, problem.c, Sense::inf);

  const Eigen::VectorXd delta_hat =
      design.D.cwiseProduct(fit.beta - beta0);
  const double observed = c.dot(delta_hat);
  const double tol = slack * (1.0 + std::abs(observed));
  return observed >= lo.value - tol && observed <= hi.value + tol;
}

}  // namespace qclp
}  // namespace synthpi
