#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "synthpi/fit.hpp"
#include "synthpi/montecarlo.hpp"
#include "synthpi/qclp.hpp"
#include "synthpi/rng.hpp"

using namespace synthpi;

namespace {

// Weight-only region over a scaled simplex, the common case in tests.
DeltaStarSpec simplex_region(const Eigen::VectorXd& w_star, double l1_target,
                             double d_scale) {
  DeltaStarSpec region;
  region.beta_star = w_star;
  region.d_scale = Eigen::VectorXd::Constant(w_star.size(), d_scale);
  region.w_dim = static_cast<int>(w_star.size());
  region.l1_target = l1_target;
  return region;
}

qclp::ConicProblem random_problem(int dim, RngStream& stream) {
  Eigen::MatrixXd root(dim, dim);
  for (int r = 0; r < dim; ++r)
    for (int c = 0; c < dim; ++c) root(r, c) = stream.normal();
  qclp::ConicProblem problem;
  problem.Q = root * root.transpose() / dim + 0.1 * Eigen::MatrixXd::Identity(dim, dim);
  problem.c = stream.normal_vector(dim);
  // xi = Q delta0 for an interior delta0 keeps the region comfortably
  // two-dimensional.
  problem.region = simplex_region(
      oracles::sample_scaled_simplex(stream, dim, 1.0), 1.0, 1.0);
  const Eigen::VectorXd w_inner = oracles::sample_scaled_simplex(stream, dim, 1.0);
  const Eigen::VectorXd delta0 =
      problem.region.d_scale.cwiseProduct(w_inner - problem.region.beta_star);
  problem.xi = problem.Q * delta0;
  return problem;
}

}  // namespace

TEST_CASE("zero xi with definite Q pins the region to the origin") {
  const int dim = 4;
  qclp::ConicProblem problem;
  problem.Q = Eigen::MatrixXd::Identity(dim, dim);
  problem.c = Eigen::VectorXd::Ones(dim);
  problem.xi = Eigen::VectorXd::Zero(dim);
  problem.region =
      simplex_region(Eigen::VectorXd::Constant(dim, 0.25), 1.0, 2.0);
  const auto sol = qclp::solve(problem);
  REQUIRE(sol.status == qclp::Status::optimal);
  REQUIRE(std::abs(sol.value) < 1e-7);
}

TEST_CASE("free-space disk geometry is solved exactly") {
  // Region {q <= 0} with Q = I, xi = (1, 0) is the disk |delta - xi| <= 1;
  // sup of c = (1,0) is 2 at (2,0).
  qclp::ConicProblem problem;
  problem.Q = Eigen::MatrixXd::Identity(2, 2);
  problem.c = Eigen::VectorXd::Zero(2);
  problem.c[0] = 1.0;
  problem.xi = Eigen::VectorXd::Zero(2);
  problem.xi[0] = 1.0;
  problem.region.beta_star = Eigen::VectorXd::Zero(2);
  problem.region.d_scale = Eigen::VectorXd::Ones(2);
  problem.region.w_dim = 0;  // all coordinates free
  const auto sup = qclp::solve(problem);
  REQUIRE(sup.status == qclp::Status::optimal);
  REQUIRE(sup.value == Catch::Approx(2.0).margin(1e-6));
  REQUIRE(sup.argpoint[0] == Catch::Approx(2.0).margin(1e-5));

  problem.sense = qclp::Sense::inf;
  const auto inf = qclp::solve(problem);
  REQUIRE(inf.value == Catch::Approx(0.0).margin(1e-6));
}

TEST_CASE("solution invariants: feasibility and exact objective") {
  RngStream stream(41, stream_tag::test, 0);
  for (int rep = 0; rep < 25; ++rep) {
    qclp::ConicProblem problem = random_problem(4, stream);
    const auto sol = qclp::solve(problem);
    REQUIRE(sol.status == qclp::Status::optimal);
    REQUIRE(contains(sol.argpoint, problem.region, 1e-7));
    const double quad = sol.argpoint.dot(problem.Q * sol.argpoint) -
                        2.0 * problem.xi.dot(sol.argpoint);
    REQUIRE(quad <= 1e-7 * (1.0 + std::abs(quad)));
    REQUIRE(sol.value == Catch::Approx(problem.c.dot(sol.argpoint)).margin(1e-12));
  }
}

TEST_CASE("solver matches rejection sampling on random d=3 instances") {
  RngStream stream(42, stream_tag::test, 0);
  for (int rep = 0; rep < 10; ++rep) {
    qclp::ConicProblem problem = random_problem(3, stream);
    const auto sol = qclp::solve(problem);
    REQUIRE(sol.status == qclp::Status::optimal);
    RngStream sampler(43, stream_tag::test, rep);
    const auto oracle = oracles::rejection_max(
        problem.c, problem.Q, problem.xi, problem.region.beta_star,
        problem.region.d_scale, problem.region.l1_target, 200000, sampler);
    REQUIRE(oracle.feasible > 1000);
    REQUIRE(sol.value >= oracle.best - 1e-9);
    REQUIRE(sol.value - oracle.best < 5e-3);
  }
}

TEST_CASE("doubling xi grows the region and the sup") {
  RngStream stream(44, stream_tag::test, 0);
  for (int rep = 0; rep < 20; ++rep) {
    qclp::ConicProblem problem = random_problem(5, stream);
    const auto base = qclp::solve(problem);
    qclp::ConicProblem doubled = problem;
    doubled.xi *= 2.0;
    const auto grown = qclp::solve(doubled);
    REQUIRE(grown.value >= base.value - 1e-7 * (1.0 + std::abs(base.value)));
  }
}

TEST_CASE("midpoints of solutions stay feasible (convex region)") {
  RngStream stream(45, stream_tag::test, 0);
  qclp::ConicProblem problem = random_problem(4, stream);
  const auto sup = qclp::solve(problem);
  qclp::ConicProblem flipped = problem;
  flipped.sense = qclp::Sense::inf;
  const auto inf = qclp::solve(flipped);
  for (double t : {0.25, 0.5, 0.75}) {
    const Eigen::VectorXd mid = t * sup.argpoint + (1.0 - t) * inf.argpoint;
    REQUIRE(contains(mid, problem.region, 1e-6));
    const double quad =
        mid.dot(problem.Q * mid) - 2.0 * problem.xi.dot(mid);
    REQUIRE(quad <= 1e-6);
  }
}

TEST_CASE("identical problems give bit-identical solutions") {
  RngStream stream(46, stream_tag::test, 0);
  qclp::ConicProblem problem = random_problem(6, stream);
  const auto a = qclp::solve(problem);
  const auto b = qclp::solve(problem);
  REQUIRE(a.value == b.value);
  REQUIRE(a.kkt_residual == b.kkt_residual);
  REQUIRE((a.argpoint.array() == b.argpoint.array()).all());

  // Reused solver instances must not leak state between solves.
  qclp::Solver solver;
  solver.prepare(problem.Q, problem.region);
  const auto first =
      solver.solve_prepared(problem.xi, problem.c, qclp::Sense::sup);
  solver.solve_prepared(2.0 * problem.xi, -problem.c, qclp::Sense::inf);
  const auto again =
      solver.solve_prepared(problem.xi, problem.c, qclp::Sense::sup);
  REQUIRE(first.value == again.value);
  REQUIRE((first.argpoint.array() == again.argpoint.array()).all());
}

TEST_CASE("non-PSD input and unbounded free blocks are rejected") {
  qclp::ConicProblem problem;
  problem.Q = Eigen::MatrixXd::Identity(2, 2);
  problem.Q(1, 1) = -0.5;
  problem.c = Eigen::VectorXd::Ones(2);
  problem.xi = Eigen::VectorXd::Zero(2);
  problem.region.beta_star = Eigen::VectorXd::Zero(2);
  problem.region.d_scale = Eigen::VectorXd::Ones(2);
  problem.region.w_dim = 0;
  REQUIRE_THROWS_AS(qclp::solve(problem), numeric_error);

  // PSD but singular along a free coordinate: flagged, not solved.
  problem.Q = Eigen::MatrixXd::Zero(2, 2);
  problem.Q(0, 0) = 1.0;
  const auto sol = qclp::solve(problem);
  REQUIRE(sol.status == qclp::Status::unbounded_flagged);
}

namespace {

struct SandwichCase {
  SCDesign design;
  FittedSC fitted;
  Eigen::VectorXd beta0;
  Eigen::VectorXd xi;
  PredictorVector predictor;
};

SandwichCase make_sandwich_case(std::uint64_t seed) {
  mc::DGPSpec spec;
  spec.rho = 0.0;
  spec.n = 10;
  const mc::SimDraw draw = mc::generate(spec, seed);
  SandwichCase out;
  Eigen::VectorXd a_pre(spec.t0);
  for (int t = 0; t < spec.t0; ++t) a_pre[t] = draw.panel.value(0, 0, t);
  out.design = mc::detail_mc::design_from_matrices(
      draw.truth.donors.topRows(spec.t0), a_pre, Regime::iid);
  out.fitted = fit(out.design);
  out.beta0 = draw.truth.beta0;
  // gamma_hat - gamma = D^-1 Z' u with the centered true errors (the
  // DGP error has conditional mean zero here).
  out.xi = out.design.D.cwiseInverse().asDiagonal() *
           (out.design.Z.transpose() * draw.truth.u.head(spec.t0));
  out.predictor.x = draw.truth.donors.row(spec.t0).transpose();
  out.predictor.g.resize(0);
  out.predictor.p = out.predictor.x;
  return out;
}

}  // namespace

TEST_CASE("optimization bounds sandwich the realized deviation") {
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const SandwichCase c = make_sandwich_case(seed);
    REQUIRE(qclp::sandwich_check(c.design, c.fitted, c.beta0, c.xi,
                                 c.predictor));
  }
}

TEST_CASE("a wrong localization can break the sandwich (negative control)") {
  int violations = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const SandwichCase c = make_sandwich_case(seed);
    // Flip the sign of the score: the region through the origin now
    // grows in the wrong direction.
    if (!qclp::sandwich_check(c.design, c.fitted, c.beta0,
                              Eigen::VectorXd(-c.xi), c.predictor))
      ++violations;
  }
  REQUIRE(violations > 0);
}

TEST_CASE("max_iter status still returns a feasible value") {
  RngStream stream(47, stream_tag::test, 0);
  qclp::ConicProblem problem = random_problem(5, stream);
  qclp::SolveOptions options;
  options.max_outer = 1;
  options.max_inner = 3;
  const auto sol = qclp::solve(problem, options);
  REQUIRE(contains(sol.argpoint, problem.region, 1e-7));
  const double quad = sol.argpoint.dot(problem.Q * sol.argpoint) -
                      2.0 * problem.xi.dot(sol.argpoint);
  REQUIRE(quad <= 1e-7);
}
