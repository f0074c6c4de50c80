// Assembly of prediction intervals from the two uncertainty components.
#pragma once

#include <cmath>
#include <string>

#include "synthpi/common.hpp"

namespace synthpi {

struct UncertaintyBounds {
  double lower = 0.0;
  double upper = 0.0;
  double alpha = 0.0;
  std::string method;
};

struct PredictionInterval {
  enum class Target { tau, counterfactual };
  Target target = Target::tau;
  double point = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double alpha1 = 0.0;
  double alpha2 = 0.0;
  UncertaintyBounds in_sample;
  UncertaintyBounds out_sample;

  double alpha_total() const { return alpha1 + alpha2; }
  double width() const { return upper - lower; }
};

namespace detail {
inline void check_bounds(const UncertaintyBounds& m1,
                         const UncertaintyBounds& m2) {
  if (m1.lower > m1.upper || m2.lower > m2.upper)
    throw usage_error("interval assembly: bounds are not ordered");
  if (!(m1.alpha >= 0.0 && m2.alpha >= 0.0 && m1.alpha + m2.alpha < 1.0))
    throw usage_error("interval assembly: component levels are inconsistent");
}
}  // namespace detail

// [tau_hat - M1_U - M2_U, tau_hat - M1_L - M2_L] at level
// 1 - alpha1 - alpha2.
inline PredictionInterval assemble_tau(double tau_hat,
                                       const UncertaintyBounds& m1,
                                       const UncertaintyBounds& m2) {
  detail::check_bounds(m1, m2);
  PredictionInterval pi;
  pi.target = PredictionInterval::Target::tau;
  pi.point = tau_hat;
  pi.lower = tau_hat - m1.upper - m2.upper;
  pi.upper = tau_hat - m1.lower - m2.lower;
  pi.alpha1 = m1.alpha;
  pi.alpha2 = m2.alpha;
  pi.in_sample = m1;
  pi.out_sample = m2;
  return pi;
}

// [y_hat0 + M1_L + M2_L, y_hat0 + M1_U + M2_U]: the same algebra seen
// from the counterfactual outcome.
inline PredictionInterval assemble_counterfactual(double y_hat0,
                                                  const UncertaintyBounds& m1,
                                                  const UncertaintyBounds& m2) {
  detail::check_bounds(m1, m2);
  PredictionInterval pi;
  pi.target = PredictionInterval::Target::counterfactual;
  pi.point = y_hat0;
  pi.lower = y_hat0 + m1.lower + m2.lower;
  pi.upper = y_hat0 + m1.upper + m2.upper;
  pi.alpha1 = m1.alpha;
  pi.alpha2 = m2.alpha;
  pi.in_sample = m1;
  pi.out_sample = m2;
  return pi;
}

}  // namespace synthpi
