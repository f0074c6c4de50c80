// synthpi command line: fit weights, build prediction intervals, run
// coverage simulations, and replay single conic solves.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error,
// 3 solver non-convergence, 4 internal numeric error.

#include <cstdint>
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "synthpi/io_json.hpp"
#include "synthpi/synthpi.hpp"

namespace {

using namespace synthpi;

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(text);
  while (std::getline(is, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<double> split_doubles(const std::string& text) {
  std::vector<double> out;
  for (const auto& item : split_list(text)) out.push_back(std::stod(item));
  return out;
}

struct PanelArgs {
  std::string input;
  std::string treated_unit;
  std::string features = "";  // comma list; empty = all panel features
  std::string intercept = "1";
  std::string regime = "iid";
  std::string constraint = "simplex";
  int t0 = -1;
  double treatment_start = 0.0;
  bool has_treatment_start = false;
  bool wide = false;
  std::string fill = "none";
  bool standardize = false;

  void add_options(CLI::App* cmd, bool input_required) {
    auto* in = cmd->add_option("--input", input, "long-format panel CSV");
    if (input_required) in->required();
    cmd->add_option("--treated_unit,--treated-unit", treated_unit,
                    "identifier of the treated unit");
    cmd->add_option("--features", features,
                    "comma-separated features to match (default: all)");
    cmd->add_option("--intercept_per_equation,--intercept", intercept,
                    "per-equation intercept flags, e.g. '1' or '1,0'");
    cmd->add_option("--regime", regime, "iid|weakly_dependent|cointegration");
    cmd->add_option("--constraint", constraint,
                    "simplex | l1 Q=.. | l2 Q=.. | simplex+l2 Q=.. | "
                    "elastic Q=.. alpha=.. | unconstrained");
    cmd->add_option("--t0", t0, "number of pre-treatment periods");
    cmd->add_option("--treatment_start,--treatment-start", treatment_start,
                    "first post-treatment period")
        ->each([this](const std::string&) { has_treatment_start = true; });
    cmd->add_flag("--wide", wide, "input is wide format (one column per feature)");
    cmd->add_option("--fill", fill, "missing cells: none|locf");
    cmd->add_flag("--standardize", standardize,
                  "standardize each feature before stacking");
  }

  PanelDataset load() const {
    PanelSchema schema;
    schema.treated_unit = treated_unit;
    schema.wide = wide;
    if (t0 > 0) schema.t0 = t0;
    if (has_treatment_start) schema.treatment_start = treatment_start;
    if (fill == "locf")
      schema.fill = PanelSchema::Fill::locf;
    else if (fill != "none")
      throw config_error("--fill must be none or locf");
    return load_panel(input, schema);
  }

  SCDesign build(const PanelDataset& panel) const {
    std::vector<std::string> feats = split_list(features);
    if (feats.empty()) feats = panel.feature_labels;
    ControlSpec controls;
    for (const auto& tok : split_list(intercept))
      controls.intercept_per_eq.push_back(tok == "1" || tok == "true");
    if (controls.intercept_per_eq.empty())
      controls.intercept_per_eq.push_back(1);
    DesignOptions options;
    options.standardize_features = standardize;
    return build_design(panel, feats, controls, parse_regime(regime),
                        ConstraintSpec::parse(constraint), options);
  }
};

std::string format_csv_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

int run_fit(const PanelArgs& panel_args, const std::string& design_in,
            const std::string& design_out, const std::string& out) {
  SCDesign design;
  if (!design_in.empty()) {
    design = design_from_json(read_json_file(design_in));
  } else {
    const PanelDataset panel = panel_args.load();
    design = panel_args.build(panel);
  }
  if (!design_out.empty())
    write_text_file(design_out, design_to_json(design).dump(2) + "\n");
  const FittedSC fitted = fit(design);
  write_text_file(out, fit_to_json(fitted).dump(2) + "\n");
  return 0;
}

struct PiArgs {
  double alpha1 = 0.05;
  double alpha2 = 0.05;
  int draws = 1000;
  std::string sigma_method = "plugin_diag";
  int mean_degree = 1;
  std::string rho = "auto";
  std::string approaches = "subg,locscale,qreg";
  std::string sens_factors = "0.25,0.5,1,1.5,2";
  std::string predict_feature;  // defaults to the first matched feature
  std::string out_json = "intervals.json";
  std::string out_csv;
};

int run_pi(const PanelArgs& panel_args, const PiArgs& args, std::uint64_t seed,
           int threads) {
  if (!(args.alpha1 > 0.0 && args.alpha1 < 0.5))
    throw usage_error("--alpha1 must be in (0, 0.5)");
  if (!(args.alpha2 >= 0.0 && args.alpha1 + args.alpha2 < 1.0))
    throw usage_error("alpha1 + alpha2 must stay below 1");

  const PanelDataset panel = panel_args.load();
  const SCDesign design = panel_args.build(panel);
  const FittedSC fitted = fit(design);

  const std::string x_feature = args.predict_feature.empty()
                                    ? design.features.front()
                                    : args.predict_feature;

  // Residual proxy for the out-of-sample error: the matched equation's
  // residuals when the predicted feature was matched, otherwise the
  // manual construction Y_1t - b_t' w_hat on that feature.
  Eigen::VectorXd proxy(design.t0);
  Eigen::MatrixXd donor_pre(design.t0, design.j);
  {
    const int f = panel.find_feature(x_feature);
    for (int t = 0; t < design.t0; ++t)
      for (int jx = 0; jx < design.j; ++jx)
        donor_pre(t, jx) = panel.value(f, jx + 1, t);
    int eq = -1;
    for (int l = 0; l < design.m; ++l)
      if (design.features[l] == x_feature) eq = l;
    if (eq >= 0) {
      proxy = fitted.residuals.segment(eq * design.t0, design.t0) *
              design.feature_scale[eq];
    } else {
      const Eigen::VectorXd w = fitted.w();
      for (int t = 0; t < design.t0; ++t)
        proxy[t] = panel.value(f, 0, t) - donor_pre.row(t).dot(w);
    }
  }

  double rho_value;
  if (args.rho == "auto")
    rho_value = rho_rule(fitted.residuals, design.B, design.regime, design.t0);
  else
    rho_value = std::stod(args.rho);
  const DeltaStarSpec delta_star = make_delta_star(
      design.constraint, fitted.beta, design.j, design.D, rho_value);

  std::vector<int> selected;
  for (int jx = 0; jx < design.j; ++jx)
    if (delta_star.w_dim > 0 && delta_star.beta_star[jx] != 0.0)
      selected.push_back(jx);
  if (selected.empty())
    for (int jx = 0; jx < design.j; ++jx) selected.push_back(jx);
  Eigen::MatrixXd donor_sel(design.t0, selected.size());
  for (std::size_t k = 0; k < selected.size(); ++k)
    donor_sel.col(static_cast<Eigen::Index>(k)) = donor_pre.col(selected[k]);

  // Center the stacked residuals on the selected donors (pooled across
  // equations) for the score variance.
  Eigen::MatrixXd stacked_sel(design.rows(), selected.size());
  for (std::size_t k = 0; k < selected.size(); ++k)
    stacked_sel.col(static_cast<Eigen::Index>(k)) =
        design.B.col(selected[k]);
  const Eigen::VectorXd fitted_mean = conditional_mean_residuals(
      fitted.residuals, stacked_sel, args.mean_degree);
  const SigmaEstimate sigma =
      estimate_sigma(design, fitted, fitted.residuals - fitted_mean,
                     parse_sigma_method(args.sigma_method));

  const ResidualModel model =
      fit_residual_model(proxy, donor_sel, args.mean_degree);

  std::vector<PredictorVector> predictors;
  std::vector<double> post_periods;
  for (int pix = panel.t0; pix < panel.n_periods(); ++pix) {
    PredictorSpec pspec;
    pspec.feature = x_feature;
    predictors.push_back(
        build_predictor(panel, design, panel.periods[pix], pspec));
    post_periods.push_back(panel.periods[pix]);
  }
  if (predictors.empty()) throw data_error("no post-treatment periods");

  const std::vector<InSampleResult> m1 = simulate_bounds_multi(
      fitted, sigma, delta_star, predictors, args.alpha1, args.draws, seed,
      threads);

  const std::vector<std::string> approach_list = split_list(args.approaches);
  const std::vector<double> factors = split_doubles(args.sens_factors);

  json out;
  out["alpha1"] = args.alpha1;
  out["alpha2"] = args.alpha2;
  out["draws"] = args.draws;
  out["seed"] = seed;
  out["sigma_method"] = args.sigma_method;
  out["mean_degree"] = args.mean_degree;
  out["rho"] = rho_value;
  out["dropped"] = m1.front().dropped;
  out["constraint"] = design.constraint.to_string();
  out["regime"] = to_string(design.regime);
  out["fit"] = {{"objective", fitted.objective},
                {"w_hat", vector_to_json(fitted.w())},
                {"iterations", fitted.report.iterations}};
  out["periods"] = json::array();

  std::string csv =
      "period,target,approach,factor,point,lower,upper,alpha1,alpha2\n";
  auto csv_row = [&](double period, const std::string& target,
                     const std::string& approach, double factor, double point,
                     double lower, double upper, double a1, double a2) {
    csv += format_csv_number(period) + "," + target + "," + approach + "," +
           format_csv_number(factor) + "," + format_csv_number(point) + "," +
           format_csv_number(lower) + "," + format_csv_number(upper) + "," +
           format_csv_number(a1) + "," + format_csv_number(a2) + "\n";
  };

  for (std::size_t i = 0; i < predictors.size(); ++i) {
    const PredictorVector& p = predictors[i];
    const double y_hat = predict(fitted, p);
    const UncertaintyBounds m1b{m1[i].M1_L, m1[i].M1_U, args.alpha1,
                                "simulation"};

    json period_out;
    period_out["period"] = post_periods[i];
    period_out["point_counterfactual"] = y_hat;
    period_out["M1_L"] = m1[i].M1_L;
    period_out["M1_U"] = m1[i].M1_U;
    std::optional<double> tau_hat;
    if (p.y1_observed) {
      tau_hat = treatment_effect(fitted, p);
      period_out["tau_hat"] = *tau_hat;
    }

    // Pure in-sample interval (out-of-sample term set to zero).
    {
      const UncertaintyBounds none{0.0, 0.0, 0.0, "none"};
      const PredictionInterval pi = assemble_counterfactual(y_hat, m1b, none);
      period_out["insample_only"] = {{"lower", pi.lower}, {"upper", pi.upper}};
      csv_row(post_periods[i], "counterfactual", "insample", 1.0, y_hat,
              pi.lower, pi.upper, args.alpha1, 0.0);
      if (tau_hat) {
        const PredictionInterval pit = assemble_tau(*tau_hat, m1b, none);
        csv_row(post_periods[i], "tau", "insample", 1.0, *tau_hat, pit.lower,
                pit.upper, args.alpha1, 0.0);
      }
    }

    Eigen::RowVectorXd x_sel(selected.size());
    for (std::size_t k = 0; k < selected.size(); ++k)
      x_sel[static_cast<Eigen::Index>(k)] = p.x[selected[k]];
    const double m_hat = model.mean_at(x_sel);
    const double s_hat = model.sd_at(x_sel);
    period_out["approaches"] = json::array();

    if (args.alpha2 > 0.0) {
      for (const auto& name : approach_list) {
        OutSampleResult m2;
        if (name == "subg") {
          m2 = bound_subgaussian(m_hat, s_hat, args.alpha2);
        } else if (name.rfind("poly", 0) == 0) {
          int k = 4;
          const auto pos = name.find(':');
          if (pos != std::string::npos) k = std::stoi(name.substr(pos + 1));
          const Eigen::MatrixXd basis =
              polynomial_basis(donor_sel, args.mean_degree);
          const Eigen::VectorXd centered = proxy - basis * model.mean_coeffs;
          const double moment = centered.array().abs().pow(k).mean();
          m2 = bound_polynomial(m_hat, moment, k, args.alpha2);
        } else if (name == "locscale") {
          m2 = bound_location_scale(model, proxy, donor_sel, x_sel,
                                    args.alpha2);
        } else if (name == "qreg") {
          m2 = bound_quantile_regression(proxy, donor_sel, x_sel, args.alpha2,
                                         args.mean_degree);
        } else {
          throw config_error("unknown approach '" + name + "'");
        }
        const UncertaintyBounds m2b{m2.M2_L, m2.M2_U, args.alpha2,
                                    to_string(m2.approach)};
        const PredictionInterval pi = assemble_counterfactual(y_hat, m1b, m2b);
        json approach_out = {{"name", name},
                             {"M2_L", m2.M2_L},
                             {"M2_U", m2.M2_U},
                             {"counterfactual", {pi.lower, pi.upper}}};
        csv_row(post_periods[i], "counterfactual", name, 1.0, y_hat, pi.lower,
                pi.upper, args.alpha1, args.alpha2);
        if (tau_hat) {
          const PredictionInterval pit = assemble_tau(*tau_hat, m1b, m2b);
          approach_out["tau"] = {pit.lower, pit.upper};
          csv_row(post_periods[i], "tau", name, 1.0, *tau_hat, pit.lower,
                  pit.upper, args.alpha1, args.alpha2);
        }
        period_out["approaches"].push_back(approach_out);
      }

      period_out["sensitivity"] = json::array();
      for (const auto& [factor, m2] :
           sensitivity_grid(m_hat, s_hat, args.alpha2, factors)) {
        const UncertaintyBounds m2b{m2.M2_L, m2.M2_U, args.alpha2, "subg"};
        const PredictionInterval pi = assemble_counterfactual(y_hat, m1b, m2b);
        period_out["sensitivity"].push_back({{"factor", factor},
                                             {"lower", pi.lower},
                                             {"upper", pi.upper}});
        csv_row(post_periods[i], "counterfactual", "subg_sens", factor, y_hat,
                pi.lower, pi.upper, args.alpha1, args.alpha2);
      }
    }
    out["periods"].push_back(period_out);
  }

  write_text_file(args.out_json, out.dump(2) + "\n");
  if (!args.out_csv.empty()) write_text_file(args.out_csv, csv);
  return 0;
}

struct McArgs {
  double rho = 0.0;
  bool misspec = false;
  int reps = 1000;
  std::string methods = "subg";
  std::string mode = "fixed";
  std::string out = "table.csv";
  int draws = 1000;
  double alpha = 0.10;
  int t0 = 100;
  int t1 = 1;
  int n_donors = 10;
  std::string sigma_method = "plugin_diag";
  std::string shifts = "-1,-0.5,0,0.5,1";
};

int run_mc(const McArgs& args, std::uint64_t seed, int threads) {
  mc::DGPSpec spec;
  spec.rho = args.rho;
  spec.misspecified = args.misspec;
  spec.t0 = args.t0;
  spec.t1 = args.t1;
  spec.n = args.n_donors;
  spec.eval_shifts = split_doubles(args.shifts);
  if (args.mode == "fixed")
    spec.conditioning = mc::DGPSpec::Conditioning::fixed_design;
  else if (args.mode == "redrawn")
    spec.conditioning = mc::DGPSpec::Conditioning::redrawn;
  else
    throw config_error("--mode must be fixed or redrawn");

  std::vector<mc::MethodSpec> methods;
  for (const auto& name : split_list(args.methods))
    methods.push_back(mc::MethodSpec::parse(name));

  mc::CoverageSettings settings;
  settings.alpha_total = args.alpha;
  settings.sim_draws = args.draws;
  settings.sigma_method = parse_sigma_method(args.sigma_method);
  settings.threads = threads;

  const mc::CoverageTable table =
      mc::run_coverage(spec, methods, args.reps, seed, settings);
  write_text_file(args.out, table.to_csv());
  return 0;
}

int run_qclp(const std::string& problem_path, const std::string& out_path,
             double tol) {
  const qclp::ConicProblem problem =
      qclp_problem_from_json(read_json_file(problem_path));
  qclp::SolveOptions options;
  options.tol = tol;
  const qclp::ConicSolution solution = qclp::solve(problem, options);
  const std::string text = qclp_solution_to_json(solution).dump(2) + "\n";
  if (out_path.empty())
    std::cout << text;
  else
    write_text_file(out_path, text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic control prediction intervals"};
  app.set_version_flag("--version", synthpi::version_string);
  app.set_config("--config")->configurable(false);
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  int threads = 0;
  bool config_dump = false;
  app.add_option("--seed", seed, "RNG seed")->configurable(true);
  app.add_option("--threads", threads, "worker threads (0 = hardware)")
      ->configurable(true);
  app.add_flag("--config-dump", config_dump,
               "print the effective configuration and exit");

  PanelArgs fit_panel, pi_panel;
  std::string fit_design_in, fit_design_out, fit_out = "fit.json";
  auto* cmd_fit = app.add_subcommand("fit", "estimate synthetic control weights");
  fit_panel.add_options(cmd_fit, false);
  cmd_fit->add_option("--design", fit_design_in, "design JSON (skips CSV input)");
  cmd_fit->add_option("--design-out", fit_design_out, "dump the design JSON");
  cmd_fit->add_option("--out", fit_out, "output fit JSON");

  PiArgs pi_args;
  auto* cmd_pi =
      app.add_subcommand("pi", "prediction intervals for the post period(s)");
  pi_panel.add_options(cmd_pi, true);
  cmd_pi->add_option("--alpha1", pi_args.alpha1, "in-sample level share");
  cmd_pi->add_option("--alpha2", pi_args.alpha2, "out-of-sample level share");
  cmd_pi->add_option("--draws", pi_args.draws, "simulation draws");
  cmd_pi->add_option("--sigma-method", pi_args.sigma_method,
                     "hc_iid|plugin_diag|long_run|cointegration_plugin");
  cmd_pi->add_option("--mean-degree", pi_args.mean_degree,
                     "residual-model polynomial degree (0, 1 or 2)");
  cmd_pi->add_option("--rho", pi_args.rho, "'auto' or an explicit threshold");
  cmd_pi->add_option("--approach", pi_args.approaches,
                     "comma list: subg|poly:k|locscale|qreg");
  cmd_pi->add_option("--sens-factors", pi_args.sens_factors,
                     "sensitivity scale factors");
  cmd_pi->add_option("--predict-feature", pi_args.predict_feature,
                     "feature used for the out-of-sample prediction");
  cmd_pi->add_option("--out", pi_args.out_json, "output JSON path");
  cmd_pi->add_option("--csv", pi_args.out_csv, "output CSV path");

  McArgs mc_args;
  auto* cmd_mc = app.add_subcommand("mc", "Monte Carlo coverage experiment");
  cmd_mc->add_option("--rho", mc_args.rho, "donor AR(1) coefficient: 0, 0.5, 1");
  cmd_mc->add_flag("--misspec", mc_args.misspec, "misspecified error mean");
  cmd_mc->add_option("--reps", mc_args.reps, "simulation repetitions");
  cmd_mc->add_option("--methods", mc_args.methods,
                     "comma list: insample|subg|subg2x|poly:k|locscale|qreg|"
                     "oracle|trivial (options ':deg=D')");
  cmd_mc->add_option("--mode", mc_args.mode, "fixed|redrawn design");
  cmd_mc->add_option("--out", mc_args.out, "output CSV path");
  cmd_mc->add_option("--draws", mc_args.draws, "simulation draws per rep");
  cmd_mc->add_option("--alpha", mc_args.alpha, "total nominal level");
  cmd_mc->add_option("--t0", mc_args.t0, "pre-treatment periods");
  cmd_mc->add_option("--t1", mc_args.t1, "post-treatment periods");
  cmd_mc->add_option("--n-donors", mc_args.n_donors, "donor count");
  cmd_mc->add_option("--sigma-method", mc_args.sigma_method, "score variance");
  cmd_mc->add_option("--shifts", mc_args.shifts, "evaluation-point shifts");

  std::string qclp_problem, qclp_out;
  double qclp_tol = 1e-8;
  auto* cmd_qclp = app.add_subcommand("qclp-solve", "replay one conic solve");
  cmd_qclp->add_option("--problem", qclp_problem, "problem JSON")->required();
  cmd_qclp->add_option("--out", qclp_out, "solution JSON (default: stdout)");
  cmd_qclp->add_option("--tol", qclp_tol, "certified-gap tolerance");

  CLI11_PARSE(app, argc, argv);

  if (config_dump) {
    std::cout << app.config_to_str(true, true);
    return 0;
  }

  try {
    synthpi::max_threads() =
        threads > 0 ? threads
                    : static_cast<int>(std::thread::hardware_concurrency());
    if (cmd_fit->parsed())
      return run_fit(fit_panel, fit_design_in, fit_design_out, fit_out);
    if (cmd_pi->parsed()) return run_pi(pi_panel, pi_args, seed, threads);
    if (cmd_mc->parsed()) return run_mc(mc_args, seed, threads);
    if (cmd_qclp->parsed()) return run_qclp(qclp_problem, qclp_out, qclp_tol);
  } catch (const usage_error& e) {
    std::cerr << "synthpi: " << e.what() << "\n";
    return 1;
  } catch (const config_error& e) {
    std::cerr << "synthpi: " << e.what() << "\n";
    return 1;
  } catch (const schema_error& e) {
    std::cerr << "synthpi: " << e.what() << "\n";
    return 2;
  } catch (const parse_error& e) {
    std::cerr << "synthpi: " << e.what() << "\n";
    return 2;
  } catch (const data_error& e) {
    std::cerr << "synthpi: " << e.what() << "\n";
    return 2;
  } catch (const range_error& e) {
    std::cerr << "synthpi: " << e.what() << "\n";
    return 2;
  } catch (const convergence_error& e) {
    std::cerr << "synthpi: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "synthpi: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
