// Simulation designs and the coverage harness: AR(1) donor paths, a
// treated unit built from known weights, evaluation-point shifts on the
// first donor, and per-rep interval construction with hit/length
// bookkeeping.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "synthpi/common.hpp"
#include "synthpi/constraints.hpp"
#include "synthpi/fit.hpp"
#include "synthpi/insample.hpp"
#include "synthpi/intervals.hpp"
#include "synthpi/outsample.hpp"
#include "synthpi/panel.hpp"
#include "synthpi/rng.hpp"
#include "synthpi/stats.hpp"
#include "synthpi/threading.hpp"

namespace synthpi {
namespace mc {

struct DGPSpec {
  double rho = 0.0;  // 0, 0.5 or 1
  int t0 = 100;
  int t1 = 1;
  int n = 10;  // donors
  Eigen::VectorXd w_true;  // empty selects (0.3, 0.4, 0.3, 0, ...)
  double sigma_u2 = 0.5;
  bool misspecified = false;
  std::vector<double> eval_shifts = {-1.0, -0.5, 0.0, 0.5, 1.0};
  enum class Conditioning { fixed_design, redrawn };
  Conditioning conditioning = Conditioning::fixed_design;
  int burn_in = 100;  // stationary AR(1) start; the random walk starts at 0

  Eigen::VectorXd weights() const {
    if (w_true.size() > 0) return w_true;
    if (n < 3) throw config_error("dgp: default weights need >= 3 donors");
    Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
    w[0] = 0.3;
    w[1] = 0.4;
    w[2] = 0.3;
    return w;
  }

  Regime regime() const {
    if (rho == 1.0) return Regime::cointegration;
    return rho == 0.0 ? Regime::iid : Regime::weakly_dependent;
  }

  void validate() const {
    if (!(rho == 0.0 || rho == 0.5 || rho == 1.0))
      throw config_error("dgp: rho must be 0, 0.5 or 1");
    if (t0 < 2 || t1 < 1 || n < 1) throw config_error("dgp: bad sizes");
    if (!(sigma_u2 > 0.0)) throw config_error("dgp: sigma_u2 must be positive");
    const Eigen::VectorXd w = weights();
    if (w.size() != n || w.minCoeff() < 0.0 ||
        std::abs(w.sum() - 1.0) > 1e-12)
      throw config_error("dgp: w_true must lie on the simplex");
  }
};

struct DonorPath {
  Eigen::MatrixXd b;           // (t0 + t1) x n
  Eigen::VectorXd pre_sample;  // state one step before the sample window
};

inline DonorPath draw_donors(const DGPSpec& spec, RngStream& stream) {
  DonorPath path;
  const int total = spec.t0 + spec.t1;
  path.b.resize(total, spec.n);
  path.pre_sample = Eigen::VectorXd::Zero(spec.n);
  Eigen::VectorXd state = Eigen::VectorXd::Zero(spec.n);
  if (spec.rho != 0.0 && spec.rho != 1.0)
    for (int t = 0; t < spec.burn_in; ++t)
      state = spec.rho * state + stream.normal_vector(spec.n);
  path.pre_sample = state;
  for (int t = 0; t < total; ++t) {
    state = spec.rho * state + stream.normal_vector(spec.n);
    path.b.row(t) = state.transpose();
  }
  return path;
}

// Conditional mean of the error given the donor path (zero when
// correctly specified).
inline double misspec_mean(const DGPSpec& spec, const DonorPath& path, int t) {
  if (!spec.misspecified) return 0.0;
  if (spec.rho == 1.0) {
    const double prev = t > 0 ? path.b(t - 1, 0) : path.pre_sample[0];
    return 0.9 * (path.b(t, 0) - prev);
  }
  return 0.2 * path.b(t, 0);
}

struct ErrorDraw {
  Eigen::VectorXd noise;  // iid N(0, sigma_u2), one per period
};

inline ErrorDraw draw_errors(const DGPSpec& spec, RngStream& stream) {
  ErrorDraw e;
  e.noise = std::sqrt(spec.sigma_u2) * stream.normal_vector(spec.t0 + spec.t1);
  return e;
}

inline double error_at(const DGPSpec& spec, const DonorPath& path,
                       const ErrorDraw& errors, int t) {
  return misspec_mean(spec, path, t) + errors.noise[t];
}

struct SimTruth {
  Eigen::VectorXd w_true;
  Eigen::VectorXd beta0;  // pseudo-true coefficients under the design
  Eigen::VectorXd u;      // DGP errors, one per period
  double u_T = 0.0;       // error at the first post period (unshifted)
  double tau_T = 0.0;     // no treatment is simulated
  Eigen::MatrixXd donors;
  double sd_b1_pre = 0.0;
};

struct SimDraw {
  PanelDataset panel;
  SimTruth truth;
};

namespace detail_mc {

inline SCDesign design_from_matrices(const Eigen::MatrixXd& b_pre,
                                     const Eigen::VectorXd& a_pre,
                                     Regime regime) {
  SCDesign design;
  design.constraint.kind = ConstraintSpec::Kind::simplex;
  design.regime = regime;
  design.t0 = static_cast<int>(b_pre.rows());
  design.m = 1;
  design.j = static_cast<int>(b_pre.cols());
  design.k_per_eq = {0};
  design.features = {"y"};
  design.donor_ids.resize(static_cast<std::size_t>(design.j));
  for (int jx = 0; jx < design.j; ++jx)
    design.donor_ids[static_cast<std::size_t>(jx)] =
        "donor" + std::to_string(jx + 1);
  design.feature_scale = {1.0};
  design.A = a_pre;
  design.B = b_pre;
  design.C.resize(design.t0, 0);
  design.Z = b_pre;
  design.D.resize(design.j);
  const double rt = std::sqrt(static_cast<double>(design.t0));
  design.D.setConstant(regime == Regime::cointegration
                           ? static_cast<double>(design.t0)
                           : rt);
  design.validate();
  return design;
}

// Pseudo-true coefficients: the constrained fit of the conditional
// mean outcome on the donors (exact when correctly specified).
inline Eigen::VectorXd pseudo_true(const DGPSpec& spec, const DonorPath& path) {
  const Eigen::VectorXd w = spec.weights();
  if (!spec.misspecified) return w;
  Eigen::VectorXd mean_outcome(spec.t0);
  for (int t = 0; t < spec.t0; ++t)
    mean_outcome[t] = path.b.row(t).head(spec.n).dot(w) +
                      misspec_mean(spec, path, t);
  SCDesign design = design_from_matrices(path.b.topRows(spec.t0),
                                         mean_outcome, spec.regime());
  return fit(design).beta;
}

}  // namespace detail_mc

inline SimDraw generate(const DGPSpec& spec, std::uint64_t seed) {
  spec.validate();
  RngStream design_stream(seed, stream_tag::mc_design, 0);
  RngStream error_stream(seed, stream_tag::mc_rep, 0);
  const DonorPath path = draw_donors(spec, design_stream);
  const ErrorDraw errors = draw_errors(spec, error_stream);
  const Eigen::VectorXd w = spec.weights();
  const int total = spec.t0 + spec.t1;

  SimDraw draw;
  draw.truth.w_true = w;
  draw.truth.donors = path.b;
  draw.truth.u.resize(total);
  for (int t = 0; t < total; ++t)
    draw.truth.u[t] = error_at(spec, path, errors, t);
  draw.truth.u_T = draw.truth.u[spec.t0];
  draw.truth.beta0 = detail_mc::pseudo_true(spec, path);
  draw.truth.sd_b1_pre = stddev(path.b.col(0).head(spec.t0));

  PanelDataset& panel = draw.panel;
  panel.unit_ids.resize(static_cast<std::size_t>(spec.n) + 1);
  panel.unit_ids[0] = "treated";
  for (int jx = 0; jx < spec.n; ++jx) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "donor%02d", jx + 1);
    panel.unit_ids[static_cast<std::size_t>(jx) + 1] = buf;
  }
  panel.periods.resize(static_cast<std::size_t>(total));
  for (int t = 0; t < total; ++t)
    panel.periods[static_cast<std::size_t>(t)] = t + 1;
  panel.feature_labels = {"y"};
  panel.t0 = spec.t0;
  panel.t1 = spec.t1;
  panel.allocate();
  for (int t = 0; t < total; ++t) {
    panel.set(0, 0, t, path.b.row(t).dot(w) + draw.truth.u[t]);
    for (int jx = 0; jx < spec.n; ++jx)
      panel.set(0, jx + 1, t, path.b(t, jx));
  }
  panel.validate();
  return draw;
}

struct MethodSpec {
  enum class Kind { insample, subg, poly, locscale, qreg, oracle, trivial };
  Kind kind = Kind::subg;
  int mean_degree = 1;
  double scale = 1.0;  // multiplier on the estimated conditional sd
  int k = 4;           // polynomial-bound order
  std::string label;

  // Grammar: name[:k][:deg=D][:scale=S], e.g. "subg", "subg:deg=0",
  // "poly:4", "subg2x".
  static MethodSpec parse(const std::string& text) {
    MethodSpec m;
    m.label = text;
    std::string rest = text;
    auto take = [&]() {
      const auto pos = rest.find(':');
      std::string head = rest.substr(0, pos);
      rest = pos == std::string::npos ? "" : rest.substr(pos + 1);
      return head;
    };
    const std::string name = take();
    if (name == "insample")
      m.kind = Kind::insample;
    else if (name == "subg")
      m.kind = Kind::subg;
    else if (name == "subg2x") {
      m.kind = Kind::subg;
      m.scale = 2.0;
    } else if (name == "poly")
      m.kind = Kind::poly;
    else if (name == "locscale")
      m.kind = Kind::locscale;
    else if (name == "qreg")
      m.kind = Kind::qreg;
    else if (name == "oracle")
      m.kind = Kind::oracle;
    else if (name == "trivial")
      m.kind = Kind::trivial;
    else
      throw config_error("unknown method '" + name + "'");
    while (!rest.empty()) {
      const std::string tok = take();
      if (tok.rfind("deg=", 0) == 0)
        m.mean_degree = std::stoi(tok.substr(4));
      else if (tok.rfind("scale=", 0) == 0)
        m.scale = std::stod(tok.substr(6));
      else if (m.kind == Kind::poly)
        m.k = std::stoi(tok);
      else
        throw config_error("bad method option '" + tok + "'");
    }
    return m;
  }

  bool needs_m1() const {
    return kind != Kind::oracle && kind != Kind::trivial;
  }
};

struct CoverageRow {
  std::string method;
  double shift = 0.0;
  double cp = 0.0;
  double al = 0.0;
  int reps = 0;
  double mc_se = 0.0;
};

struct CoverageTable {
  std::vector<CoverageRow> rows;
  std::uint64_t design_hash = 0;  // fixed-design donor path fingerprint
  int failures = 0;

  std::string to_csv() const {
    std::string out = "method,shift,CP,AL,reps,mc_se\n";
    char buf[256];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof(buf), "%s,%.10g,%.10g,%.10g,%d,%.10g\n",
                    r.method.c_str(), r.shift, r.cp, r.al, r.reps, r.mc_se);
      out += buf;
    }
    return out;
  }
};

struct CoverageSettings {
  double alpha_total = 0.10;
  int sim_draws = 1000;
  SigmaMethod sigma_method = SigmaMethod::plugin_diag;
  int threads = 0;
};

namespace detail_mc {

inline std::uint64_t hash_matrix(const Eigen::MatrixXd& m) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  const auto* bytes = reinterpret_cast<const unsigned char*>(m.data());
  const std::size_t n = static_cast<std::size_t>(m.size()) * sizeof(double);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace detail_mc

inline CoverageTable run_coverage(const DGPSpec& spec,
                                  const std::vector<MethodSpec>& methods,
                                  int reps, std::uint64_t base_seed,
                                  const CoverageSettings& settings = {}) {
  spec.validate();
  if (reps < 100) throw usage_error("run_coverage: need at least 100 reps");
  if (methods.empty()) throw usage_error("run_coverage: no methods");
  const double alpha = settings.alpha_total;
  if (!(alpha > 0.0 && alpha < 1.0))
    throw usage_error("run_coverage: alpha_total must be in (0,1)");

  const Eigen::VectorXd w_true = spec.weights();
  const std::size_t n_methods = methods.size();
  const std::size_t n_shifts = spec.eval_shifts.size();
  const std::size_t cells = n_methods * n_shifts;

  const bool fixed = spec.conditioning == DGPSpec::Conditioning::fixed_design;
  DonorPath fixed_path;
  if (fixed) {
    RngStream design_stream(base_seed, stream_tag::mc_design, 0);
    fixed_path = draw_donors(spec, design_stream);
  }

  // Distinct centering degrees that require their own simulation pass.
  std::vector<int> degrees;
  for (const auto& m : methods)
    if (m.needs_m1() &&
        std::find(degrees.begin(), degrees.end(), m.mean_degree) ==
            degrees.end())
      degrees.push_back(m.mean_degree);

  std::vector<std::uint8_t> hits(static_cast<std::size_t>(reps) * cells, 0);
  std::vector<double> widths(static_cast<std::size_t>(reps) * cells, 0.0);
  std::vector<std::uint8_t> rep_failed(static_cast<std::size_t>(reps), 0);
  std::vector<std::uint64_t> rep_hash(static_cast<std::size_t>(reps), 0);

  const double z_oracle =
      synthpi::detail::inverse_normal_cdf(1.0 - alpha / 2.0);

  parallel_for(
      static_cast<std::size_t>(reps),
      [&](int, std::size_t rep) {
        try {
          DonorPath local_path;
          const DonorPath* path = &fixed_path;
          if (!fixed) {
            RngStream design_stream(base_seed, stream_tag::mc_design, rep);
            local_path = draw_donors(spec, design_stream);
            path = &local_path;
          }
          rep_hash[rep] = detail_mc::hash_matrix(path->b);

          RngStream error_stream(base_seed, stream_tag::mc_rep, rep);
          const ErrorDraw errors = draw_errors(spec, error_stream);

          Eigen::VectorXd a_pre(spec.t0);
          for (int t = 0; t < spec.t0; ++t)
            a_pre[t] = path->b.row(t).dot(w_true) +
                       error_at(spec, *path, errors, t);

          const SCDesign design = detail_mc::design_from_matrices(
              path->b.topRows(spec.t0), a_pre, spec.regime());
          const FittedSC fitted = fit(design);

          const double rho = rho_rule(fitted.residuals, design.B,
                                      design.regime, design.t0);
          const DeltaStarSpec delta_star = make_delta_star(
              design.constraint, fitted.beta, design.j, design.D, rho);

          // Regressor subset: donors whose thresholded weight survived.
          std::vector<int> selected;
          for (int jx = 0; jx < design.j; ++jx)
            if (delta_star.beta_star[jx] != 0.0) selected.push_back(jx);
          if (selected.empty()) selected.push_back(0);
          Eigen::MatrixXd b_sel(spec.t0, selected.size());
          for (std::size_t k = 0; k < selected.size(); ++k)
            b_sel.col(static_cast<Eigen::Index>(k)) =
                design.B.col(selected[k]).head(spec.t0);

          // Evaluation points: first post period with the first donor
          // coordinate shifted by c * sd(b_1).
          const double sd_b1 = stddev(path->b.col(0).head(spec.t0));
          std::vector<PredictorVector> predictors(n_shifts);
          std::vector<double> y_true(n_shifts);
          const int t_post = spec.t0;
          for (std::size_t s = 0; s < n_shifts; ++s) {
            Eigen::VectorXd x = path->b.row(t_post).transpose();
            x[0] += spec.eval_shifts[s] * sd_b1;
            PredictorVector p;
            p.x = x;
            p.g.resize(0);
            p.p = x;
            p.period = spec.t0 + 1;
            predictors[s] = p;
            // The truth responds to the shifted conditioning variable.
            double mean_term = 0.0;
            if (spec.misspecified) {
              if (spec.rho == 1.0)
                mean_term = 0.9 * (x[0] - path->b(t_post - 1, 0));
              else
                mean_term = 0.2 * x[0];
            }
            y_true[s] = x.dot(w_true) + mean_term + errors.noise[t_post];
          }

          // One simulation pass per centering degree, shared across
          // the methods that use it.
          struct DegreePass {
            ResidualModel model;
            std::vector<InSampleResult> m1;
          };
          std::map<int, DegreePass> passes;
          const std::uint64_t sim_seed =
              synthpi::detail::mix64(base_seed, 0xc0ffee ^ rep);
          for (int degree : degrees) {
            DegreePass pass;
            pass.model = fit_residual_model(fitted.residuals, b_sel, degree);
            const Eigen::MatrixXd basis = polynomial_basis(b_sel, degree);
            const Eigen::VectorXd centered =
                fitted.residuals - basis * pass.model.mean_coeffs;
            const SigmaEstimate sigma = estimate_sigma(
                design, fitted, centered, settings.sigma_method);
            pass.m1 = simulate_bounds_multi(fitted, sigma, delta_star,
                                            predictors, alpha / 2.0,
                                            settings.sim_draws, sim_seed);
            passes.emplace(degree, std::move(pass));
          }
          // The in-sample-only method spends the whole budget on M1.
          std::map<int, std::vector<InSampleResult>> m1_full;
          for (const auto& m : methods)
            if (m.kind == MethodSpec::Kind::insample &&
                m1_full.find(m.mean_degree) == m1_full.end()) {
              const auto& pass = passes.at(m.mean_degree);
              const Eigen::MatrixXd basis =
                  polynomial_basis(b_sel, m.mean_degree);
              const Eigen::VectorXd centered =
                  fitted.residuals - basis * pass.model.mean_coeffs;
              const SigmaEstimate sigma = estimate_sigma(
                  design, fitted, centered, settings.sigma_method);
              m1_full.emplace(
                  m.mean_degree,
                  simulate_bounds_multi(fitted, sigma, delta_star, predictors,
                                        alpha, settings.sim_draws, sim_seed));
            }

          for (std::size_t s = 0; s < n_shifts; ++s) {
            const Eigen::RowVectorXd x_sel_row = [&] {
              Eigen::RowVectorXd row(selected.size());
              for (std::size_t k = 0; k < selected.size(); ++k)
                row[static_cast<Eigen::Index>(k)] =
                    predictors[s].x[selected[k]];
              return row;
            }();
            const double y_hat = predict(fitted, predictors[s]);

            for (std::size_t mi = 0; mi < n_methods; ++mi) {
              const MethodSpec& method = methods[mi];
              double lo = 0.0, hi = 0.0;
              switch (method.kind) {
                case MethodSpec::Kind::trivial:
                  lo = -std::numeric_limits<double>::infinity();
                  hi = std::numeric_limits<double>::infinity();
                  break;
                case MethodSpec::Kind::oracle: {
                  double mean_term = 0.0;
                  if (spec.misspecified) {
                    mean_term = spec.rho == 1.0
                                    ? 0.9 * (predictors[s].x[0] -
                                             path->b(t_post - 1, 0))
                                    : 0.2 * predictors[s].x[0];
                  }
                  const double center =
                      predictors[s].x.dot(w_true) + mean_term;
                  const double band = z_oracle * std::sqrt(spec.sigma_u2);
                  lo = center - band;
                  hi = center + band;
                  break;
                }
                case MethodSpec::Kind::insample: {
                  const auto& m1 = m1_full.at(method.mean_degree)[s];
                  lo = y_hat + m1.M1_L;
                  hi = y_hat + m1.M1_U;
                  break;
                }
                default: {
                  const auto& pass = passes.at(method.mean_degree);
                  const auto& m1 = pass.m1[s];
                  UncertaintyBounds m1b{m1.M1_L, m1.M1_U, m1.alpha1,
                                        "simulation"};
                  OutSampleResult m2;
                  const double m_hat = pass.model.mean_at(x_sel_row);
                  const double s_hat = pass.model.sd_at(x_sel_row);
                  if (method.kind == MethodSpec::Kind::subg) {
                    m2 = bound_subgaussian(m_hat, method.scale * s_hat,
                                           alpha / 2.0);
                  } else if (method.kind == MethodSpec::Kind::poly) {
                    const Eigen::MatrixXd basis =
                        polynomial_basis(b_sel, method.mean_degree);
                    const Eigen::VectorXd centered =
                        fitted.residuals - basis * pass.model.mean_coeffs;
                    const double moment =
                        centered.array().abs().pow(method.k).mean();
                    m2 = bound_polynomial(m_hat, moment, method.k, alpha / 2.0);
                  } else if (method.kind == MethodSpec::Kind::locscale) {
                    m2 = bound_location_scale(pass.model, fitted.residuals,
                                              b_sel, x_sel_row, alpha / 2.0);
                  } else {
                    m2 = bound_quantile_regression(fitted.residuals, b_sel,
                                                   x_sel_row, alpha / 2.0,
                                                   method.mean_degree);
                  }
                  UncertaintyBounds m2b{m2.M2_L, m2.M2_U, m2.alpha2,
                                        to_string(m2.approach)};
                  const PredictionInterval pi =
                      assemble_counterfactual(y_hat, m1b, m2b);
                  lo = pi.lower;
                  hi = pi.upper;
                  break;
                }
              }
              const std::size_t cell = rep * cells + mi * n_shifts + s;
              hits[cell] = (y_true[s] >= lo && y_true[s] <= hi) ? 1 : 0;
              widths[cell] = hi - lo;
            }
          }
        } catch (const std::exception& e) {
          rep_failed[rep] = 1;
          detail::warn("run_coverage: rep " + std::to_string(rep) +
                       " failed: " + e.what());
        }
      },
      settings.threads);

  int failures = 0;
  for (auto f : rep_failed)
    if (f) ++failures;
  if (failures * 100 > reps)
    throw numeric_error("run_coverage: more than 1% of reps failed (" +
                        std::to_string(failures) + "/" +
                        std::to_string(reps) + ")");
  if (fixed)
    for (std::size_t rep = 0; rep < static_cast<std::size_t>(reps); ++rep)
      if (!rep_failed[rep] && rep_hash[rep] != rep_hash[0])
        throw numeric_error("run_coverage: fixed design was not constant");

  CoverageTable table;
  table.failures = failures;
  table.design_hash = rep_hash[0];
  for (std::size_t mi = 0; mi < n_methods; ++mi)
    for (std::size_t s = 0; s < n_shifts; ++s) {
      CoverageRow row;
      row.method = methods[mi].label.empty() ? "method" : methods[mi].label;
      row.shift = spec.eval_shifts[s];
      int used = 0;
      double hit_count = 0.0, width_sum = 0.0;
      for (int rep = 0; rep < reps; ++rep) {
        if (rep_failed[static_cast<std::size_t>(rep)]) continue;
        const std::size_t cell =
            static_cast<std::size_t>(rep) * cells + mi * n_shifts + s;
        ++used;
        hit_count += hits[cell];
        width_sum += widths[cell];
      }
      row.reps = used;
      row.cp = used > 0 ? hit_count / used : 0.0;
      row.al = used > 0 ? width_sum / used : 0.0;
      row.mc_se = used > 0 ? std::sqrt(row.cp * (1.0 - row.cp) / used) : 0.0;
      table.rows.push_back(row);
    }
  return table;
}

}  // namespace mc
}  // namespace synthpi
