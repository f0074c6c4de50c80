// JSON (de)serialization for the file formats the CLI reads and writes.
// Matrices are row-major arrays of base-10 decimals.
#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "synthpi/common.hpp"
#include "synthpi/fit.hpp"
#include "synthpi/panel.hpp"
#include "synthpi/qclp.hpp"

namespace synthpi {

using json = nlohmann::json;

inline json matrix_to_json(const Eigen::MatrixXd& m) {
  json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  j["data"] = data;
  return j;
}

inline Eigen::MatrixXd matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw parse_error("matrix JSON: data length mismatch");
  Eigen::MatrixXd m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[k++];
  return m;
}

inline json vector_to_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline Eigen::VectorXd vector_from_json(const json& j) {
  const auto data = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(data.data(),
                                           static_cast<Eigen::Index>(data.size()));
}

inline json design_to_json(const SCDesign& design) {
  json j;
  j["t0"] = design.t0;
  j["m"] = design.m;
  j["j"] = design.j;
  j["k_per_eq"] = design.k_per_eq;
  j["features"] = design.features;
  j["donor_ids"] = design.donor_ids;
  j["feature_scale"] = design.feature_scale;
  j["regime"] = to_string(design.regime);
  j["constraint"] = design.constraint.to_string();
  j["A"] = vector_to_json(design.A);
  j["B"] = matrix_to_json(design.B);
  j["C"] = matrix_to_json(design.C);
  j["D"] = vector_to_json(design.D);
  return j;
}

inline SCDesign design_from_json(const json& j) {
  SCDesign design;
  design.t0 = j.at("t0").get<int>();
  design.m = j.at("m").get<int>();
  design.j = j.at("j").get<int>();
  design.k_per_eq = j.at("k_per_eq").get<std::vector<int>>();
  design.features = j.at("features").get<std::vector<std::string>>();
  design.donor_ids = j.at("donor_ids").get<std::vector<std::string>>();
  design.feature_scale = j.at("feature_scale").get<std::vector<double>>();
  design.regime = parse_regime(j.at("regime").get<std::string>());
  design.constraint = ConstraintSpec::parse(j.at("constraint").get<std::string>());
  design.A = vector_from_json(j.at("A"));
  design.B = matrix_from_json(j.at("B"));
  design.C = matrix_from_json(j.at("C"));
  design.D = vector_from_json(j.at("D"));
  design.Z.resize(design.B.rows(), design.dim());
  design.Z << design.B, design.C;
  design.validate();
  return design;
}

inline json fit_to_json(const FittedSC& fit) {
  json j;
  j["beta_hat"] = vector_to_json(fit.beta);
  j["w_hat"] = vector_to_json(fit.w());
  j["r_hat"] = vector_to_json(fit.r());
  j["residuals"] = vector_to_json(fit.residuals);
  j["objective"] = fit.objective;
  j["w_dim"] = fit.w_dim;
  j["Q_hat"] = matrix_to_json(fit.Q);
  j["solver_report"] = {{"iterations", fit.report.iterations},
                        {"kkt_residual", fit.report.kkt_residual},
                        {"converged", fit.report.converged},
                        {"warnings", fit.report.warnings}};
  return j;
}

inline FittedSC fit_from_json(const json& j) {
  FittedSC fit;
  fit.beta = vector_from_json(j.at("beta_hat"));
  fit.residuals = vector_from_json(j.at("residuals"));
  fit.objective = j.at("objective").get<double>();
  fit.w_dim = j.at("w_dim").get<int>();
  fit.Q = matrix_from_json(j.at("Q_hat"));
  const auto& rep = j.at("solver_report");
  fit.report.iterations = rep.at("iterations").get<int>();
  fit.report.kkt_residual = rep.at("kkt_residual").get<double>();
  fit.report.converged = rep.at("converged").get<bool>();
  return fit;
}

inline json qclp_problem_to_json(const qclp::ConicProblem& p) {
  json j;
  j["c"] = vector_to_json(p.c);
  j["Q"] = matrix_to_json(p.Q);
  j["xi"] = vector_to_json(p.xi);
  j["sense"] = p.sense == qclp::Sense::sup ? "sup" : "inf";
  j["region"] = {{"beta_star", vector_to_json(p.region.beta_star)},
                 {"d_scale", vector_to_json(p.region.d_scale)},
                 {"w_dim", p.region.w_dim},
                 {"l1_target", p.region.l1_target},
                 {"rho", p.region.rho}};
  return j;
}

inline qclp::ConicProblem qclp_problem_from_json(const json& j) {
  qclp::ConicProblem p;
  p.c = vector_from_json(j.at("c"));
  p.Q = matrix_from_json(j.at("Q"));
  p.xi = vector_from_json(j.at("xi"));
  const std::string sense = j.at("sense").get<std::string>();
  if (sense == "sup")
    p.sense = qclp::Sense::sup;
  else if (sense == "inf")
    p.sense = qclp::Sense::inf;
  else
    throw parse_error("qclp problem: sense must be 'sup' or 'inf'");
  const auto& r = j.at("region");
  p.region.beta_star = vector_from_json(r.at("beta_star"));
  p.region.d_scale = vector_from_json(r.at("d_scale"));
  p.region.w_dim = r.at("w_dim").get<int>();
  p.region.l1_target = r.at("l1_target").get<double>();
  p.region.rho = r.at("rho").get<double>();
  return p;
}

inline json qclp_solution_to_json(const qclp::ConicSolution& s) {
  json j;
  j["value"] = s.value;
  j["argpoint"] = vector_to_json(s.argpoint);
  j["kkt_residual"] = s.kkt_residual;
  switch (s.status) {
    case qclp::Status::optimal:
      j["status"] = "optimal";
      break;
    case qclp::Status::max_iter:
      j["status"] = "max_iter";
      break;
    case qclp::Status::unbounded_flagged:
      j["status"] = "unbounded_flagged";
      break;
  }
  return j;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write '" + path + "'");
  out << text;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw parse_error("bad JSON in '" + path + "': " + e.what());
  }
  return j;
}

}  // namespace synthpi
