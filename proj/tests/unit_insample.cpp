#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "synthpi/fit.hpp"
#include "synthpi/insample.hpp"
#include "synthpi/montecarlo.hpp"
#include "synthpi/rng.hpp"
#include "synthpi/threading.hpp"

using namespace synthpi;

namespace {

SCDesign tiny_design(const Eigen::MatrixXd& z_w, double d_value) {
  SCDesign design;
  design.constraint.kind = ConstraintSpec::Kind::simplex;
  design.regime = Regime::iid;
  design.t0 = static_cast<int>(z_w.rows());
  design.m = 1;
  design.j = static_cast<int>(z_w.cols());
  design.k_per_eq = {0};
  design.features = {"y"};
  design.donor_ids.resize(design.j, "d");
  design.feature_scale = {1.0};
  design.A = Eigen::VectorXd::Zero(design.t0);
  design.B = z_w;
  design.C.resize(design.t0, 0);
  design.Z = z_w;
  design.D = Eigen::VectorXd::Constant(design.j, d_value);
  design.validate();
  return design;
}

}  // namespace

TEST_CASE("conditional mean: degree 0 is the grand mean") {
  Eigen::VectorXd u(3);
  u << 1.0, 2.0, 3.0;
  const Eigen::VectorXd fitted =
      conditional_mean_residuals(u, Eigen::MatrixXd::Zero(3, 1), 0);
  REQUIRE((fitted.array() == 2.0).all());
}

TEST_CASE("conditional mean: degree 1 interpolates an exactly linear signal") {
  RngStream stream(61, stream_tag::test, 0);
  Eigen::MatrixXd b(50, 2);
  for (int t = 0; t < 50; ++t)
    for (int j = 0; j < 2; ++j) b(t, j) = stream.normal();
  const Eigen::VectorXd u = 0.7 * b.col(0) - 0.4 * b.col(1) +
                            Eigen::VectorXd::Constant(50, 0.2);
  const Eigen::VectorXd fitted = conditional_mean_residuals(u, b, 1);
  REQUIRE((fitted - u).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("conditional mean: quadratic beats constant on a misspecified fit") {
  mc::DGPSpec spec;
  spec.rho = 0.5;
  spec.misspecified = true;
  const mc::SimDraw draw = mc::generate(spec, 62);
  Eigen::VectorXd a(spec.t0);
  for (int t = 0; t < spec.t0; ++t) a[t] = draw.panel.value(0, 0, t);
  const SCDesign design = mc::detail_mc::design_from_matrices(
      draw.truth.donors.topRows(spec.t0), a, Regime::weakly_dependent);
  const FittedSC fitted = fit(design);
  const Eigen::MatrixXd b1 = design.B.leftCols(3);

  auto r_squared = [&](int degree) {
    const Eigen::VectorXd f =
        conditional_mean_residuals(fitted.residuals, b1, degree);
    const double ss_res = (fitted.residuals - f).squaredNorm();
    const double mean = fitted.residuals.mean();
    const double ss_tot = (fitted.residuals.array() - mean).square().sum();
    return 1.0 - ss_res / ss_tot;
  };
  REQUIRE(r_squared(2) >= r_squared(0));
}

TEST_CASE("sigma plug-in agrees with a scalar hand computation") {
  Eigen::MatrixXd z(4, 1);
  z << 1.0, 2.0, 3.0, 4.0;
  const SCDesign design = tiny_design(z, 2.0);  // D = sqrt(T0) = 2
  FittedSC fitted;
  const Eigen::VectorXd u_tilde = Eigen::VectorXd::Ones(4);
  const SigmaEstimate sigma =
      estimate_sigma(design, fitted, u_tilde, SigmaMethod::hc_iid);
  // D^-1 Z' diag(1) Z D^-1 = (1 + 4 + 9 + 16) / 4
  REQUIRE(sigma.sigma(0, 0) == Catch::Approx(7.5).epsilon(1e-14));
}

TEST_CASE("sigma plug-in is unbiased for the analytic value (iid design)") {
  const int t0 = 100, d = 3, reps = 500;
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(d, d);
  Eigen::MatrixXd sum_sq = Eigen::MatrixXd::Zero(d, d);
  for (int rep = 0; rep < reps; ++rep) {
    RngStream stream(63, stream_tag::test, rep);
    Eigen::MatrixXd z(t0, d);
    for (int t = 0; t < t0; ++t)
      for (int j = 0; j < d; ++j) z(t, j) = stream.normal();
    const Eigen::VectorXd u = std::sqrt(0.5) * stream.normal_vector(t0);
    const SCDesign design = tiny_design(z, std::sqrt(double(t0)));
    FittedSC fitted;
    const SigmaEstimate sigma =
        estimate_sigma(design, fitted, u, SigmaMethod::plugin_diag);
    sum += sigma.sigma;
    sum_sq += sigma.sigma.cwiseProduct(sigma.sigma);
  }
  const Eigen::MatrixXd avg = sum / reps;
  // Analytic Sigma = E[z z'] sigma_u^2 = 0.5 I.
  const Eigen::MatrixXd truth = 0.5 * Eigen::MatrixXd::Identity(d, d);
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c) {
      const double var = sum_sq(r, c) / reps - avg(r, c) * avg(r, c);
      const double se = std::sqrt(std::max(var, 0.0) / reps);
      REQUIRE(std::abs(avg(r, c) - truth(r, c)) <= 3.0 * se + 1e-12);
    }
}

TEST_CASE("long-run variance at bandwidth zero reduces to the plug-in") {
  RngStream stream(64, stream_tag::test, 0);
  Eigen::MatrixXd z(40, 3);
  for (int t = 0; t < 40; ++t)
    for (int j = 0; j < 3; ++j) z(t, j) = stream.normal();
  const SCDesign design = tiny_design(z, std::sqrt(40.0));
  FittedSC fitted;
  const Eigen::VectorXd u = stream.normal_vector(40);
  const SigmaEstimate base =
      estimate_sigma(design, fitted, u, SigmaMethod::hc_iid);
  const SigmaEstimate lr =
      estimate_sigma(design, fitted, u, SigmaMethod::long_run, 0);
  REQUIRE((lr.sigma - base.sigma).cwiseAbs().maxCoeff() <
          1e-12 * base.sigma.cwiseAbs().maxCoeff());
  const SigmaEstimate coint =
      estimate_sigma(design, fitted, u, SigmaMethod::cointegration_plugin);
  REQUIRE((coint.sigma - base.sigma).cwiseAbs().maxCoeff() <
          1e-12 * base.sigma.cwiseAbs().maxCoeff());
}

TEST_CASE("long-run variance with positive bandwidth stays PSD") {
  RngStream stream(65, stream_tag::test, 0);
  Eigen::MatrixXd z(60, 4);
  Eigen::VectorXd state = Eigen::VectorXd::Zero(4);
  for (int t = 0; t < 60; ++t) {
    state = 0.6 * state + stream.normal_vector(4);
    z.row(t) = state.transpose();
  }
  const SCDesign design = tiny_design(z, std::sqrt(60.0));
  FittedSC fitted;
  Eigen::VectorXd u(60);
  double uu = 0.0;
  for (int t = 0; t < 60; ++t) {
    uu = 0.5 * uu + stream.normal();
    u[t] = uu;
  }
  const SigmaEstimate lr =
      estimate_sigma(design, fitted, u, SigmaMethod::long_run);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lr.sigma);
  REQUIRE(es.eigenvalues().minCoeff() >= -1e-12);
  REQUIRE(default_bandwidth(60) >= 1);
}

TEST_CASE("zero residuals produce a degenerate (flagged) estimate") {
  Eigen::MatrixXd z(10, 2);
  z.setOnes();
  const SCDesign design = tiny_design(z, std::sqrt(10.0));
  FittedSC fitted;
  const SigmaEstimate sigma = estimate_sigma(
      design, fitted, Eigen::VectorXd::Zero(10), SigmaMethod::plugin_diag);
  REQUIRE(sigma.degenerate);
  REQUIRE(sigma.sigma.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("rho rule evaluates its closed form") {
  // sigma_u = 1, min m2(b_j) = 1, T0 = 100, c = 0.5.
  const int t0 = 100;
  RngStream stream(66, stream_tag::test, 0);
  Eigen::VectorXd u = stream.normal_vector(t0);
  u = ((u.array() - u.mean()) / stddev(u)).matrix();  // sd exactly 1
  Eigen::MatrixXd b(t0, 2);
  for (int t = 0; t < t0; ++t) {
    b(t, 0) = t % 2 == 0 ? 1.0 : -1.0;  // second moment exactly 1
    b(t, 1) = 2.0 * (t % 2 == 0 ? 1.0 : -1.0);
  }
  const double rho = rho_rule(u, b, Regime::iid, t0);
  REQUIRE(rho ==
          Catch::Approx(std::sqrt(std::log(100.0)) / 10.0).epsilon(1e-12));
  REQUIRE(rho == Catch::Approx(0.2145966026289347).epsilon(1e-10));

  // Cointegration exponent doubles the log power.
  const double rho_coint = rho_rule(u, b, Regime::cointegration, t0);
  REQUIRE(rho_coint / rho ==
          Catch::Approx(std::sqrt(std::log(100.0))).epsilon(1e-10));

  // Monotone decreasing in T0 for fixed moments.
  const double rho_400 = rho_rule(u, b, Regime::iid, 400);
  const double rho_1600 = rho_rule(u, b, Regime::iid, 1600);
  REQUIRE(rho > rho_400);
  REQUIRE(rho_400 > rho_1600);
}

TEST_CASE("rho rule excludes degenerate donor columns") {
  const int t0 = 50;
  RngStream stream(67, stream_tag::test, 0);
  Eigen::VectorXd u = stream.normal_vector(t0);
  Eigen::MatrixXd b(t0, 2);
  b.col(0).setConstant(5.0);  // zero variance: excluded
  for (int t = 0; t < t0; ++t) b(t, 1) = (t % 2 == 0) ? 2.0 : -2.0;
  const double rho = rho_rule(u, b, Regime::iid, t0);
  const double expected =
      stddev(u) * std::sqrt(std::log(50.0)) / (2.0 * std::sqrt(50.0));
  REQUIRE(rho == Catch::Approx(expected).epsilon(1e-12));

  Eigen::MatrixXd all_const(t0, 1);
  all_const.setConstant(1.0);
  REQUIRE_THROWS_AS(rho_rule(u, all_const, Regime::iid, t0), data_error);
}

namespace {

struct SimFixture {
  SCDesign design;
  FittedSC fitted;
  SigmaEstimate sigma;
  DeltaStarSpec delta_star;
  PredictorVector predictor;
};

SimFixture make_fixture(std::uint64_t seed, int n_donors = 4, int t0 = 60) {
  RngStream stream(seed, stream_tag::test, 0);
  Eigen::MatrixXd b(t0, n_donors);
  for (int t = 0; t < t0; ++t)
    for (int j = 0; j < n_donors; ++j) b(t, j) = stream.normal();
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n_donors);
  w[0] = 0.5;
  w[1] = 0.5;
  const Eigen::VectorXd u = 0.5 * stream.normal_vector(t0);

  SimFixture f;
  f.design = tiny_design(b, std::sqrt(double(t0)));
  f.design.A = b * w + u;
  f.fitted = fit(f.design);
  const Eigen::VectorXd centered =
      f.fitted.residuals.array() - f.fitted.residuals.mean();
  f.sigma =
      estimate_sigma(f.design, f.fitted, centered, SigmaMethod::plugin_diag);
  const double rho =
      rho_rule(f.fitted.residuals, f.design.B, f.design.regime, t0);
  f.delta_star = make_delta_star(f.design.constraint, f.fitted.beta,
                                 f.design.j, f.design.D, rho);
  f.predictor.x = stream.normal_vector(n_donors);
  f.predictor.g.resize(0);
  f.predictor.p = f.predictor.x;
  return f;
}

}  // namespace

TEST_CASE("zero covariance collapses the simulated bounds to zero") {
  SimFixture f = make_fixture(71);
  f.sigma.sigma.setZero();
  const InSampleResult r = simulate_bounds(f.fitted, f.sigma, f.delta_star,
                                           f.predictor, 0.05, 100, 9);
  REQUIRE(r.M1_L == 0.0);
  REQUIRE(r.M1_U == 0.0);
  REQUIRE(r.dropped == 0);
}

TEST_CASE("bounds are ordered, deterministic, and widen as alpha1 falls") {
  const SimFixture f = make_fixture(72);
  const InSampleResult a = simulate_bounds(f.fitted, f.sigma, f.delta_star,
                                           f.predictor, 0.10, 200, 13);
  const InSampleResult b = simulate_bounds(f.fitted, f.sigma, f.delta_star,
                                           f.predictor, 0.10, 200, 13);
  REQUIRE(a.M1_L == b.M1_L);
  REQUIRE(a.M1_U == b.M1_U);
  REQUIRE(a.M1_L <= 0.0);
  REQUIRE(a.M1_U >= 0.0);

  const InSampleResult narrow = simulate_bounds(
      f.fitted, f.sigma, f.delta_star, f.predictor, 0.02, 200, 13);
  REQUIRE(narrow.M1_L <= a.M1_L);
  REQUIRE(narrow.M1_U >= a.M1_U);
}

TEST_CASE("simulation respects worker-count independence") {
  const SimFixture f = make_fixture(73);
  const InSampleResult serial = simulate_bounds(
      f.fitted, f.sigma, f.delta_star, f.predictor, 0.05, 150, 17, 1);
  const InSampleResult parallel = simulate_bounds(
      f.fitted, f.sigma, f.delta_star, f.predictor, 0.05, 150, 17, 2);
  REQUIRE(serial.M1_L == parallel.M1_L);
  REQUIRE(serial.M1_U == parallel.M1_U);
}

TEST_CASE("scaling the covariance by four nests the interval per seed") {
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    const SimFixture f = make_fixture(1000 + seed, 3, 40);
    SigmaEstimate scaled = f.sigma;
    scaled.sigma *= 4.0;
    const InSampleResult base = simulate_bounds(
        f.fitted, f.sigma, f.delta_star, f.predictor, 0.10, 100, seed);
    const InSampleResult wide = simulate_bounds(
        f.fitted, scaled, f.delta_star, f.predictor, 0.10, 100, seed);
    REQUIRE(wide.M1_L <= base.M1_L + 1e-9);
    REQUIRE(wide.M1_U >= base.M1_U - 1e-9);
  }
}

TEST_CASE("input contracts are enforced") {
  const SimFixture f = make_fixture(74);
  REQUIRE_THROWS_AS(
      simulate_bounds(f.fitted, f.sigma, f.delta_star, f.predictor, 0.05, 50,
                      1),
      usage_error);
  REQUIRE_THROWS_AS(
      simulate_bounds(f.fitted, f.sigma, f.delta_star, f.predictor, 0.7, 200,
                      1),
      usage_error);
}

// Spec-scale reproduction of the in-sample guarantee: the simulated
// interval covers the realized p'(beta0 - beta_hat) with probability
// well above 1 - alpha1.
TEST_CASE("M1 covers the in-sample deviation at spec scale", "[slow]") {
  mc::DGPSpec spec;
  spec.rho = 0.0;
  RngStream design_stream(81, stream_tag::mc_design, 0);
  const mc::DonorPath path = mc::draw_donors(spec, design_stream);
  const Eigen::VectorXd w_true = spec.weights();
  const Eigen::MatrixXd b_pre = path.b.topRows(spec.t0);

  const int reps = 1000;
  for (const int draws : {1000, 2000}) {
    std::vector<std::uint8_t> hits(reps, 0);
    parallel_for(reps, [&](int, std::size_t rep) {
      RngStream error_stream(81, stream_tag::mc_rep, rep);
      const mc::ErrorDraw errors = mc::draw_errors(spec, error_stream);
      Eigen::VectorXd a(spec.t0);
      for (int t = 0; t < spec.t0; ++t)
        a[t] = path.b.row(t).dot(w_true) + errors.noise[t];
      const SCDesign design =
          mc::detail_mc::design_from_matrices(b_pre, a, Regime::iid);
      const FittedSC fitted = fit(design);
      const double rho =
          rho_rule(fitted.residuals, design.B, design.regime, design.t0);
      const DeltaStarSpec delta_star = make_delta_star(
          design.constraint, fitted.beta, design.j, design.D, rho);
      const Eigen::VectorXd centered =
          fitted.residuals.array() - fitted.residuals.mean();
      const SigmaEstimate sigma = estimate_sigma(design, fitted, centered,
                                                 SigmaMethod::plugin_diag);
      PredictorVector p;
      p.x = path.b.row(spec.t0).transpose();
      p.g.resize(0);
      p.p = p.x;
      const InSampleResult m1 = simulate_bounds(
          fitted, sigma, delta_star, p, 0.05, draws, detail::mix64(500, rep));
      const double deviation = p.p.dot(w_true - fitted.beta);
      hits[rep] = deviation >= m1.M1_L && deviation <= m1.M1_U;
    });
    double cp = 0.0;
    for (auto h : hits) cp += h;
    cp /= reps;
    INFO("draws=" << draws << " coverage=" << cp);
    REQUIRE(cp >= (draws == 1000 ? 0.93 : 0.92));
  }
}
