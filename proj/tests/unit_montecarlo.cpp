#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "synthpi/montecarlo.hpp"
#include "synthpi/rng.hpp"

using namespace synthpi;
using namespace synthpi::mc;

TEST_CASE("iid donors are uncorrelated with the error by construction") {
  DGPSpec spec;
  spec.rho = 0.0;
  spec.t0 = 100000;
  const SimDraw draw = generate(spec, 121);
  const Eigen::VectorXd b1 = draw.truth.donors.col(0).head(spec.t0);
  const Eigen::VectorXd u = draw.truth.u.head(spec.t0);
  const double corr =
      ((b1.array() - b1.mean()) * (u.array() - u.mean())).mean() /
      (stddev(b1) * stddev(u));
  REQUIRE(std::abs(corr) < 0.02);
}

TEST_CASE("random-walk donors difference to unit-variance noise") {
  DGPSpec spec;
  spec.rho = 1.0;
  spec.t0 = 10000;
  RngStream stream(122, stream_tag::mc_design, 0);
  const DonorPath path = draw_donors(spec, stream);
  Eigen::VectorXd diffs(spec.t0 - 1);
  for (int t = 1; t < spec.t0; ++t) diffs[t - 1] = path.b(t, 0) - path.b(t - 1, 0);
  const double var = diffs.squaredNorm() / (diffs.size() - 1);
  REQUIRE(var == Catch::Approx(1.0).epsilon(0.05));
  // Starts at zero: the first value is a single innovation.
  REQUIRE(std::abs(path.pre_sample[0]) == 0.0);
}

TEST_CASE("stationary donors match the AR(1) variance after burn-in") {
  DGPSpec spec;
  spec.rho = 0.5;
  spec.t0 = 20000;
  RngStream stream(123, stream_tag::mc_design, 0);
  const DonorPath path = draw_donors(spec, stream);
  const double var =
      path.b.col(0).head(spec.t0).squaredNorm() / spec.t0;
  REQUIRE(var == Catch::Approx(1.0 / 0.75).epsilon(0.06));
}

TEST_CASE("misspecified error carries the documented slope") {
  DGPSpec spec;
  spec.rho = 0.5;
  spec.t0 = 10000;
  spec.misspecified = true;
  const SimDraw draw = generate(spec, 124);
  const Eigen::VectorXd b1 = draw.truth.donors.col(0).head(spec.t0);
  const Eigen::VectorXd u = draw.truth.u.head(spec.t0);
  const double slope =
      ((b1.array() - b1.mean()) * (u.array() - u.mean())).sum() /
      (b1.array() - b1.mean()).square().sum();
  REQUIRE(slope == Catch::Approx(0.2).margin(0.03));
}

TEST_CASE("pseudo-true coefficients: exact when correct, shifted when not") {
  DGPSpec spec;
  spec.rho = 0.0;
  const SimDraw correct = generate(spec, 125);
  REQUIRE((correct.truth.beta0 - correct.truth.w_true)
              .lpNorm<Eigen::Infinity>() < 1e-9);

  spec.misspecified = true;
  const SimDraw shifted = generate(spec, 125);
  REQUIRE(shifted.truth.beta0.minCoeff() >= -1e-10);
  REQUIRE(shifted.truth.beta0.sum() == Catch::Approx(1.0).margin(1e-8));
  // The 0.2 b1 term drags weight toward the first donor.
  REQUIRE(shifted.truth.beta0[0] > shifted.truth.w_true[0] + 0.05);
}

TEST_CASE("generated panel is balanced and labeled") {
  DGPSpec spec;
  const SimDraw draw = generate(spec, 126);
  draw.panel.validate();
  REQUIRE(draw.panel.n_donors() == spec.n);
  REQUIRE(draw.panel.t0 == spec.t0);
  REQUIRE(draw.panel.unit_ids.front() == "treated");
  REQUIRE(draw.panel.missing_count() == 0);
  // Treated value composes weights and error.
  const double y0 = draw.panel.value(0, 0, 0);
  const double check =
      draw.truth.donors.row(0).dot(draw.truth.w_true) + draw.truth.u[0];
  REQUIRE(y0 == Catch::Approx(check).margin(1e-12));
}

namespace {

DGPSpec quick_spec() {
  DGPSpec spec;
  spec.rho = 0.0;
  spec.t0 = 50;
  spec.n = 5;
  spec.eval_shifts = {0.0};
  return spec;
}

CoverageSettings quick_settings() {
  CoverageSettings s;
  s.sim_draws = 100;
  return s;
}

}  // namespace

TEST_CASE("trivial method covers everything with infinite length") {
  const CoverageTable table =
      run_coverage(quick_spec(), {MethodSpec::parse("trivial")}, 100, 131,
                   quick_settings());
  REQUIRE(table.rows.size() == 1);
  REQUIRE(table.rows[0].cp == 1.0);
  REQUIRE(std::isinf(table.rows[0].al));
}

TEST_CASE("oracle method calibrates the harness to nominal") {
  DGPSpec spec = quick_spec();
  spec.t0 = 100;
  spec.n = 10;
  const CoverageTable table = run_coverage(
      spec, {MethodSpec::parse("oracle")}, 1000, 132, quick_settings());
  const double cp = table.rows[0].cp;
  const double se = table.rows[0].mc_se;
  REQUIRE(std::abs(cp - 0.90) <= 2.0 * se);
}

TEST_CASE("coverage tables are deterministic and fixed designs constant") {
  const auto spec = quick_spec();
  const std::vector<MethodSpec> methods{MethodSpec::parse("subg"),
                                        MethodSpec::parse("oracle")};
  const CoverageTable a = run_coverage(spec, methods, 100, 133, quick_settings());
  const CoverageTable b = run_coverage(spec, methods, 100, 133, quick_settings());
  REQUIRE(a.to_csv() == b.to_csv());
  REQUIRE(a.design_hash == b.design_hash);

  DGPSpec redrawn = spec;
  redrawn.conditioning = DGPSpec::Conditioning::redrawn;
  const CoverageTable c =
      run_coverage(redrawn, methods, 100, 133, quick_settings());
  REQUIRE(c.to_csv() != a.to_csv());
}

TEST_CASE("subgaussian intervals cover well on a quick run") {
  DGPSpec spec = quick_spec();
  const CoverageTable table = run_coverage(
      spec, {MethodSpec::parse("subg")}, 100, 134, quick_settings());
  REQUIRE(table.rows[0].cp >= 0.85);
  REQUIRE(table.rows[0].al > 0.0);
  REQUIRE(table.failures == 0);
}

TEST_CASE("method grammar parses and rejects") {
  REQUIRE(MethodSpec::parse("subg").kind == MethodSpec::Kind::subg);
  REQUIRE(MethodSpec::parse("subg2x").scale == 2.0);
  REQUIRE(MethodSpec::parse("subg:deg=0").mean_degree == 0);
  REQUIRE(MethodSpec::parse("poly:4").k == 4);
  REQUIRE(MethodSpec::parse("locscale:deg=2").mean_degree == 2);
  REQUIRE_THROWS_AS(MethodSpec::parse("nope"), config_error);
  REQUIRE_THROWS_AS(MethodSpec::parse("subg:bad=1"), config_error);
}

TEST_CASE("csv layout is stable") {
  const CoverageTable table =
      run_coverage(quick_spec(), {MethodSpec::parse("oracle")}, 100, 135,
                   quick_settings());
  const std::string csv = table.to_csv();
  REQUIRE(csv.rfind("method,shift,CP,AL,reps,mc_se\n", 0) == 0);
  REQUIRE(csv.find("oracle,0,") != std::string::npos);
}
