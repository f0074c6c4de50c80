// Panel ingestion and design construction.
//
// A long-format CSV (unit,period,feature,value) is validated into a
// balanced PanelDataset, and the stacked design matrices are assembled
// from it: one block row per matched feature, donors sharing the weight
// columns, controls (intercepts) block-diagonal across equations.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "synthpi/common.hpp"
#include "synthpi/constraints.hpp"

namespace synthpi {

enum class Regime { iid, weakly_dependent, cointegration };

inline std::string to_string(Regime r) {
  switch (r) {
    case Regime::iid:
      return "iid";
    case Regime::weakly_dependent:
      return "weakly_dependent";
    case Regime::cointegration:
      return "cointegration";
  }
  return "iid";
}

inline Regime parse_regime(const std::string& s) {
  if (s == "iid") return Regime::iid;
  if (s == "weakly_dependent") return Regime::weakly_dependent;
  if (s == "cointegration") return Regime::cointegration;
  throw config_error("unknown regime '" + s + "'");
}

class PanelDataset {
 public:
  std::vector<std::string> unit_ids;  // first entry is the treated unit
  std::vector<double> periods;        // strictly increasing
  std::vector<std::string> feature_labels;
  int t0 = 0;  // number of pre-treatment periods
  int t1 = 0;  // number of post-treatment periods

  void allocate() {
    const std::size_t n =
        feature_labels.size() * unit_ids.size() * periods.size();
    data_.assign(n, 0.0);
    present_.assign(n, 0);
  }

  int n_units() const { return static_cast<int>(unit_ids.size()); }
  int n_donors() const { return n_units() - 1; }
  int n_periods() const { return static_cast<int>(periods.size()); }
  int n_features() const { return static_cast<int>(feature_labels.size()); }

  double value(int feature, int unit, int period) const {
    return data_[index(feature, unit, period)];
  }
  bool has(int feature, int unit, int period) const {
    return present_[index(feature, unit, period)] != 0;
  }
  void set(int feature, int unit, int period, double v) {
    data_[index(feature, unit, period)] = v;
    present_[index(feature, unit, period)] = 1;
  }

  int find_feature(const std::string& label) const {
    for (int i = 0; i < n_features(); ++i)
      if (feature_labels[i] == label) return i;
    throw config_error("feature '" + label + "' not present in panel");
  }

  int find_period(double period) const {
    for (int i = 0; i < n_periods(); ++i)
      if (periods[i] == period) return i;
    throw range_error("period " + std::to_string(period) +
                      " not present in panel");
  }

  std::size_t missing_count() const {
    std::size_t n = 0;
    for (auto p : present_)
      if (!p) ++n;
    return n;
  }

  void validate() const {
    if (n_units() < 2)
      throw data_error("panel needs a treated unit and at least one donor");
    if (t0 < 1 || t1 < 1)
      throw data_error("panel needs at least one pre- and one post-period");
    if (t0 + t1 != n_periods())
      throw data_error("t0 + t1 does not match the number of periods");
    for (int i = 1; i < n_periods(); ++i)
      if (!(periods[i] > periods[i - 1]))
        throw data_error("periods must be strictly increasing");
  }

 private:
  std::size_t index(int feature, int unit, int period) const {
    return (static_cast<std::size_t>(feature) * unit_ids.size() +
            static_cast<std::size_t>(unit)) *
               periods.size() +
           static_cast<std::size_t>(period);
  }

  std::vector<double> data_;
  std::vector<std::uint8_t> present_;
};

struct PanelSchema {
  std::string unit_col = "unit";
  std::string period_col = "period";
  std::string feature_col = "feature";
  std::string value_col = "value";
  std::string treated_unit;
  bool wide = false;  // wide input: unit,period,<feature columns...>
  // Split between pre and post periods: either an explicit count of
  // pre-treatment periods, or the first treated period.
  std::optional<int> t0;
  std::optional<double> treatment_start;
  enum class Fill { none, locf };
  Fill fill = Fill::none;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

inline double parse_number(const std::string& text, std::size_t row) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(text, &pos);
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos])))
      ++pos;
    if (pos != text.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw parse_error("row " + std::to_string(row) + ": non-numeric value '" +
                      text + "'");
  }
}

}  // namespace detail

inline PanelDataset load_panel(const std::string& csv_path,
                               const PanelSchema& schema) {
  if (schema.treated_unit.empty())
    throw schema_error("schema: treated_unit is required");
  if (!schema.t0 && !schema.treatment_start)
    throw schema_error("schema: set t0 or treatment_start");

  std::ifstream in(csv_path);
  if (!in) throw data_error("cannot open '" + csv_path + "'");

  std::string line;
  if (!std::getline(in, line)) throw data_error("empty CSV file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_csv_line(line);

  auto column = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw schema_error("missing column '" + name + "'");
  };

  const int unit_ix = column(schema.unit_col);
  const int period_ix = column(schema.period_col);
  int feature_ix = -1, value_ix = -1;
  std::vector<int> wide_feature_cols;
  std::vector<std::string> feature_order;
  if (schema.wide) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (static_cast<int>(i) == unit_ix || static_cast<int>(i) == period_ix)
        continue;
      wide_feature_cols.push_back(static_cast<int>(i));
      feature_order.push_back(header[i]);
    }
    if (feature_order.empty())
      throw schema_error("wide CSV has no feature columns");
  } else {
    feature_ix = column(schema.feature_col);
    value_ix = column(schema.value_col);
  }

  struct Cell {
    std::string unit, feature;
    double period, value;
  };
  std::vector<Cell> cells;
  std::vector<std::string> unit_order;
  std::vector<double> period_values;
  auto note_unit = [&](const std::string& u) {
    if (std::find(unit_order.begin(), unit_order.end(), u) == unit_order.end())
      unit_order.push_back(u);
  };
  auto note_feature = [&](const std::string& f) {
    if (std::find(feature_order.begin(), feature_order.end(), f) ==
        feature_order.end())
      feature_order.push_back(f);
  };

  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size())
      throw parse_error("row " + std::to_string(row) +
                        ": wrong number of fields");
    const std::string unit = fields[unit_ix];
    const double period = detail::parse_number(fields[period_ix], row);
    note_unit(unit);
    period_values.push_back(period);
    if (schema.wide) {
      for (std::size_t k = 0; k < wide_feature_cols.size(); ++k) {
        const std::string& text = fields[wide_feature_cols[k]];
        if (text.empty()) continue;  // blank cell stays missing
        cells.push_back(
            {unit, feature_order[k], period, detail::parse_number(text, row)});
      }
    } else {
      const std::string feature = fields[feature_ix];
      note_feature(feature);
      cells.push_back(
          {unit, feature, period, detail::parse_number(fields[value_ix], row)});
    }
  }
  if (cells.empty()) throw data_error("CSV contains no data rows");

  std::sort(period_values.begin(), period_values.end());
  period_values.erase(std::unique(period_values.begin(), period_values.end()),
                      period_values.end());

  // Treated unit goes first.
  auto treated_it =
      std::find(unit_order.begin(), unit_order.end(), schema.treated_unit);
  if (treated_it == unit_order.end())
    throw schema_error("treated unit '" + schema.treated_unit +
                       "' not found in CSV");
  std::rotate(unit_order.begin(), treated_it, treated_it + 1);

  PanelDataset panel;
  panel.unit_ids = unit_order;
  panel.periods = period_values;
  panel.feature_labels = feature_order;

  int t0 = 0;
  if (schema.t0) {
    t0 = *schema.t0;
  } else {
    for (double p : period_values)
      if (p < *schema.treatment_start) ++t0;
  }
  panel.t0 = t0;
  panel.t1 = static_cast<int>(period_values.size()) - t0;
  panel.allocate();

  std::map<std::string, int> unit_of, feature_of;
  for (int i = 0; i < panel.n_units(); ++i) unit_of[panel.unit_ids[i]] = i;
  for (int i = 0; i < panel.n_features(); ++i)
    feature_of[panel.feature_labels[i]] = i;

  for (const auto& c : cells)
    panel.set(feature_of[c.feature], unit_of[c.unit], panel.find_period(c.period),
              c.value);

  if (schema.fill == PanelSchema::Fill::locf) {
    for (int f = 0; f < panel.n_features(); ++f)
      for (int u = 0; u < panel.n_units(); ++u)
        for (int p = 1; p < panel.n_periods(); ++p)
          if (!panel.has(f, u, p) && panel.has(f, u, p - 1))
            panel.set(f, u, p, panel.value(f, u, p - 1));
  }

  for (int f = 0; f < panel.n_features(); ++f)
    for (int u = 0; u < panel.n_units(); ++u)
      for (int p = 0; p < panel.n_periods(); ++p)
        if (!panel.has(f, u, p))
          throw data_error("missing cell (unit=" + panel.unit_ids[u] +
                           ", period=" + std::to_string(panel.periods[p]) +
                           ", feature=" + panel.feature_labels[f] + ")");

  panel.validate();
  return panel;
}

// Per-equation controls.  Intercepts only for now; the hook for
// per-equation scalar weights is below (defaults to 1).
struct ControlSpec {
  std::vector<std::uint8_t> intercept_per_eq;  // broadcast if size 1
  std::vector<double> equation_weight;         // optional, defaults to 1

  bool intercept_for(int eq, int m) const {
    if (intercept_per_eq.empty()) return false;
    if (intercept_per_eq.size() == 1) return intercept_per_eq[0] != 0;
    if (static_cast<int>(intercept_per_eq.size()) != m)
      throw config_error("controls: intercept flags do not match features");
    return intercept_per_eq[eq] != 0;
  }
  double weight_for(int eq) const {
    if (equation_weight.empty()) return 1.0;
    if (equation_weight.size() == 1) return equation_weight[0];
    return equation_weight.at(static_cast<std::size_t>(eq));
  }
};

struct SCDesign {
  Eigen::VectorXd A;  // stacked treated features, feature-major
  Eigen::MatrixXd B;  // stacked donor features
  Eigen::MatrixXd C;  // block-diagonal controls
  Eigen::MatrixXd Z;  // (B, C)
  Eigen::VectorXd D;  // diagonal of the scaling matrix

  ConstraintSpec constraint;
  Regime regime = Regime::iid;

  int t0 = 0;
  int m = 0;  // number of matched features
  int j = 0;  // donors
  std::vector<int> k_per_eq;
  std::vector<std::string> features;
  std::vector<std::string> donor_ids;
  std::vector<double> feature_scale;  // standardization divisor per equation

  int k_total() const {
    int k = 0;
    for (int v : k_per_eq) k += v;
    return k;
  }
  int dim() const { return j + k_total(); }
  int rows() const { return t0 * m; }

  // Offset of equation l's control columns inside C.
  int control_offset(int eq) const {
    int off = 0;
    for (int l = 0; l < eq; ++l) off += k_per_eq[l];
    return off;
  }

  void validate() const {
    if (A.size() != rows() || B.rows() != rows() || C.rows() != rows())
      throw data_error("design: row counts disagree");
    if (Z.cols() != dim()) throw data_error("design: Z column count wrong");
    if (D.size() != dim() || D.minCoeff() <= 0.0)
      throw data_error("design: D diagonal must be strictly positive");
  }
};

struct DesignOptions {
  bool standardize_features = false;  // optional per-feature scaling, off by default
};

inline SCDesign build_design(const PanelDataset& panel,
                             const std::vector<std::string>& features,
                             const ControlSpec& controls, Regime regime,
                             const ConstraintSpec& constraint,
                             const DesignOptions& options = {}) {
  panel.validate();
  if (features.empty()) throw config_error("build_design: no features given");
  constraint.validate();

  SCDesign design;
  design.constraint = constraint;
  design.regime = regime;
  design.t0 = panel.t0;
  design.m = static_cast<int>(features.size());
  design.j = panel.n_donors();
  design.features = features;
  design.donor_ids.assign(panel.unit_ids.begin() + 1, panel.unit_ids.end());
  design.k_per_eq.resize(design.m);
  for (int l = 0; l < design.m; ++l)
    design.k_per_eq[l] = controls.intercept_for(l, design.m) ? 1 : 0;

  const int rows = design.rows();
  const int kt = design.k_total();
  design.A.resize(rows);
  design.B.setZero(rows, design.j);
  design.C.setZero(rows, kt);
  design.feature_scale.assign(features.size(), 1.0);

  for (int l = 0; l < design.m; ++l) {
    const int f = panel.find_feature(features[l]);
    const double upsilon = controls.weight_for(l);
    const double sqrt_upsilon = std::sqrt(upsilon);
    double scale = 1.0;
    if (options.standardize_features) {
      Eigen::VectorXd pooled(panel.n_units() * panel.t0);
      int ix = 0;
      for (int u = 0; u < panel.n_units(); ++u)
        for (int t = 0; t < panel.t0; ++t) pooled[ix++] = panel.value(f, u, t);
      const double m0 = pooled.mean();
      const double sd = std::sqrt((pooled.array() - m0).square().sum() /
                                  std::max(1, static_cast<int>(pooled.size()) - 1));
      if (sd > 0.0) scale = sd;
    }
    design.feature_scale[l] = scale;
    for (int t = 0; t < design.t0; ++t) {
      const int r = l * design.t0 + t;
      design.A[r] = sqrt_upsilon * panel.value(f, 0, t) / scale;
      for (int jx = 0; jx < design.j; ++jx)
        design.B(r, jx) = sqrt_upsilon * panel.value(f, jx + 1, t) / scale;
      if (design.k_per_eq[l] == 1)
        design.C(r, design.control_offset(l)) = sqrt_upsilon;
    }
  }

  design.Z.resize(rows, design.dim());
  design.Z << design.B, design.C;

  design.D.resize(design.dim());
  const double rt = std::sqrt(static_cast<double>(design.t0));
  if (regime == Regime::cointegration) {
    design.D.head(design.j).setConstant(static_cast<double>(design.t0));
    design.D.tail(kt).setConstant(rt);
  } else {
    design.D.setConstant(rt);
  }

  design.validate();
  return design;
}

// Recovers the per-equation blocks of a constructed design (inverse of
// the stacking).
struct EquationBlock {
  Eigen::VectorXd a;
  Eigen::MatrixXd b;
  Eigen::MatrixXd c;
};

inline EquationBlock equation_block(const SCDesign& design, int eq) {
  if (eq < 0 || eq >= design.m) throw usage_error("equation_block: bad index");
  EquationBlock blk;
  blk.a = design.A.segment(eq * design.t0, design.t0);
  blk.b = design.B.middleRows(eq * design.t0, design.t0);
  blk.c = design.C.block(eq * design.t0, design.control_offset(eq), design.t0,
                         design.k_per_eq[eq]);
  return blk;
}

struct PredictorVector {
  Eigen::VectorXd x;  // donor predictors
  Eigen::VectorXd g;  // control predictors
  Eigen::VectorXd p;  // (x', g')'
  double period = 0.0;
  std::optional<double> y1_observed;  // treated outcome at the period
};

struct PredictorSpec {
  std::string feature;  // defaults to the design's first feature
  std::optional<Eigen::VectorXd> x_override;
  std::optional<Eigen::VectorXd> g_override;
  int shift_coord = -1;      // evaluation-point shift on one donor coordinate
  double shift_amount = 0.0;
};

inline PredictorVector build_predictor(const PanelDataset& panel,
                                       const SCDesign& design, double period,
                                       const PredictorSpec& spec = {}) {
  const int p_ix = panel.find_period(period);
  if (p_ix < panel.t0)
    throw range_error("build_predictor: period is not post-treatment");

  const std::string feature =
      spec.feature.empty() ? design.features.front() : spec.feature;
  const int f = panel.find_feature(feature);
  int feature_eq = -1;
  for (int l = 0; l < design.m; ++l)
    if (design.features[l] == feature) feature_eq = l;

  PredictorVector out;
  out.period = period;

  if (spec.x_override) {
    if (spec.x_override->size() != design.j)
      throw usage_error("predictor: x override has wrong length");
    out.x = *spec.x_override;
  } else {
    const double scale =
        feature_eq >= 0 ? design.feature_scale[feature_eq] : 1.0;
    out.x.resize(design.j);
    for (int jx = 0; jx < design.j; ++jx)
      out.x[jx] = panel.value(f, jx + 1, p_ix) / scale;
  }
  if (spec.shift_coord >= 0) {
    if (spec.shift_coord >= out.x.size())
      throw usage_error("predictor: shift coordinate out of range");
    out.x[spec.shift_coord] += spec.shift_amount;
  }

  if (spec.g_override) {
    if (spec.g_override->size() != design.k_total())
      throw usage_error("predictor: g override has wrong length");
    out.g = *spec.g_override;
  } else {
    // The intercept of the predicted feature's equation switches on;
    // the other equations' controls do not enter this prediction.
    out.g = Eigen::VectorXd::Zero(design.k_total());
    if (feature_eq >= 0 && design.k_per_eq[feature_eq] == 1)
      out.g[design.control_offset(feature_eq)] = 1.0;
  }

  out.p.resize(out.x.size() + out.g.size());
  out.p << out.x, out.g;

  if (panel.has(f, 0, p_ix)) out.y1_observed = panel.value(f, 0, p_ix);
  return out;
}

}  // namespace synthpi
