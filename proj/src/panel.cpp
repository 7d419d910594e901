#include "panelclust/panel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>

#include "panelclust/error.hpp"

namespace panelclust {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIo: return "io";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kUnbalancedPanel: return "unbalanced_panel";
    case ErrorCode::kDuplicateCell: return "duplicate_cell";
    case ErrorCode::kDegenerateWithin: return "degenerate_within_transform";
    case ErrorCode::kInvalidSpec: return "invalid_spec";
    case ErrorCode::kEmptyGroup: return "empty_group";
    case ErrorCode::kSingularDesign: return "singular_design";
    case ErrorCode::kDegenerateStart: return "degenerate_start";
    case ErrorCode::kInvalidConfig: return "invalid_config";
    case ErrorCode::kEstimationFailed: return "estimation_failed";
    case ErrorCode::kDimension: return "dimension";
    case ErrorCode::kDomain: return "domain";
    case ErrorCode::kInfeasibleKmax: return "infeasible_kmax";
    case ErrorCode::kInvalidUse: return "invalid_use";
  }
  return "unknown";
}

PanelData::PanelData(std::size_t n_units, std::size_t n_periods, Eigen::VectorXd y,
                     Eigen::MatrixXd x, std::vector<std::string> unit_ids,
                     std::vector<std::string> period_ids, std::string outcome_name,
                     std::vector<std::string> regressor_names)
    : n_units_(n_units),
      n_periods_(n_periods),
      y_(std::move(y)),
      x_(std::move(x)),
      unit_ids_(std::move(unit_ids)),
      period_ids_(std::move(period_ids)),
      outcome_name_(std::move(outcome_name)),
      regressor_names_(std::move(regressor_names)) {
  if (n_units_ == 0 || n_periods_ == 0 || x_.cols() == 0) {
    throw Error(ErrorCode::kInvalidSpec, "panel needs N >= 1, T >= 1 and p >= 1");
  }
  const auto n_obs = static_cast<Eigen::Index>(n_units_ * n_periods_);
  if (y_.size() != n_obs || x_.rows() != n_obs) {
    throw Error(ErrorCode::kInvalidSpec,
                fmt::format("panel shape mismatch: expected {} observations, got y={} x={}",
                            n_obs, y_.size(), x_.rows()));
  }
  if (!y_.allFinite() || !x_.allFinite()) {
    throw Error(ErrorCode::kInvalidSpec, "panel contains non-finite values");
  }
  if (unit_ids_.empty()) {
    const int width = static_cast<int>(std::to_string(n_units_).size());
    for (std::size_t i = 0; i < n_units_; ++i) {
      unit_ids_.push_back(fmt::format("u{:0{}}", i + 1, width));
    }
  }
  if (period_ids_.empty()) {
    for (std::size_t t = 0; t < n_periods_; ++t) period_ids_.push_back(std::to_string(t + 1));
  }
  if (regressor_names_.empty()) {
    for (Eigen::Index j = 0; j < x_.cols(); ++j) regressor_names_.push_back(fmt::format("x{}", j + 1));
  }
  if (unit_ids_.size() != n_units_ || period_ids_.size() != n_periods_ ||
      regressor_names_.size() != static_cast<std::size_t>(x_.cols())) {
    throw Error(ErrorCode::kInvalidSpec, "panel label vectors do not match dimensions");
  }
}

Grouping::Grouping(std::vector<int> labels, int k) : labels_(std::move(labels)), k_(k) {
  if (k_ < 1) throw Error(ErrorCode::kInvalidSpec, "grouping needs K >= 1");
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] < 1 || labels_[i] > k_) {
      throw Error(ErrorCode::kInvalidSpec,
                  fmt::format("label {} of unit {} outside 1..{}", labels_[i], i, k_));
    }
  }
}

std::vector<std::size_t> Grouping::group_sizes() const {
  std::vector<std::size_t> sizes(static_cast<std::size_t>(k_), 0);
  for (int g : labels_) ++sizes[static_cast<std::size_t>(g - 1)];
  return sizes;
}

bool Grouping::all_nonempty() const {
  const auto sizes = group_sizes();
  return std::none_of(sizes.begin(), sizes.end(), [](std::size_t s) { return s == 0; });
}

double default_c_alpha(double alpha) {
  constexpr double kEps = 1e-9;
  if (std::abs(alpha - 1.0) < kEps) return 0.4;
  if (std::abs(alpha - 0.9) < kEps) return 0.6;
  if (std::abs(alpha - 0.8) < kEps) return 0.8;
  return 1.0;
}

std::array<std::size_t, 3> simulated_group_sizes(const GroupSizeSpec& spec) {
  if (spec.k0 != 3) {
    throw Error(ErrorCode::kInvalidSpec, "the size rule is defined for three true groups");
  }
  if (spec.alpha < 0.0 || spec.alpha > 1.0 || spec.c_alpha <= 0.0) {
    throw Error(ErrorCode::kInvalidSpec,
                fmt::format("invalid alpha={} or c_alpha={}", spec.alpha, spec.c_alpha));
  }
  const auto k0 = static_cast<std::size_t>(spec.k0);
  if (spec.n_total == 0 || spec.n_total % k0 != 0) {
    throw Error(ErrorCode::kInvalidSpec,
                fmt::format("N={} is not divisible by K0={}", spec.n_total, spec.k0));
  }
  const std::size_t n1 = spec.n_total / k0;
  const double n3_real =
      std::floor(spec.c_alpha * std::pow(static_cast<double>(spec.n_total), spec.alpha));
  if (n3_real < 1.0 || n3_real + static_cast<double>(n1) >= static_cast<double>(spec.n_total)) {
    throw Error(ErrorCode::kInvalidSpec,
                fmt::format("group sizes degenerate for N={}, alpha={}", spec.n_total, spec.alpha));
  }
  const auto n3 = static_cast<std::size_t>(n3_real);
  return {n1, spec.n_total - n1 - n3, n3};
}

PanelData within_transform(const PanelData& panel) {
  const std::size_t n = panel.n_units();
  const std::size_t t_len = panel.n_periods();
  if (t_len < 2) {
    throw Error(ErrorCode::kDegenerateWithin, "degenerate within-transform: T = 1");
  }
  Eigen::VectorXd y = panel.y();
  Eigen::MatrixXd x = panel.x();
  const auto t_idx = static_cast<Eigen::Index>(t_len);
  for (std::size_t i = 0; i < n; ++i) {
    const auto start = static_cast<Eigen::Index>(i * t_len);
    auto yi = y.segment(start, t_idx);
    yi.array() -= yi.mean();
    auto xi = x.middleRows(start, t_idx);
    const Eigen::RowVectorXd means = xi.colwise().mean();
    xi.rowwise() -= means;
  }
  return PanelData(n, t_len, std::move(y), std::move(x), panel.unit_ids(), panel.period_ids(),
                   panel.outcome_name(), panel.regressor_names());
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t");
  return s.substr(first, last - first + 1);
}

std::optional<double> parse_double(const std::string& text) {
  const std::string s = trim(text);
  if (s.empty()) return std::nullopt;
  double value = 0.0;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  if (*begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return value;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace

PanelData read_panel_csv(std::istream& in, const CsvSchema& schema) {
  if (schema.regressors.empty()) {
    throw Error(ErrorCode::kInvalidSpec, "schema lists no regressor columns");
  }
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kParse, "empty CSV: missing header");
  const auto header = split_csv_line(line);
  auto column = [&](const std::string& name) {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (trim(header[c]) == name) return c;
    }
    throw Error(ErrorCode::kParse, fmt::format("column '{}' not found in header", name));
  };
  const std::size_t unit_col = column(schema.unit);
  const std::size_t period_col = column(schema.period);
  std::vector<std::size_t> value_cols{column(schema.outcome)};
  for (const auto& r : schema.regressors) value_cols.push_back(column(r));

  struct Row {
    std::string unit;
    std::string period;
    std::vector<double> values;
    std::size_t line_no;
  };
  std::vector<Row> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw Error(ErrorCode::kParse, fmt::format("row {}: expected {} fields, found {}", line_no,
                                                 header.size(), fields.size()));
    }
    Row row{trim(fields[unit_col]), trim(fields[period_col]), {}, line_no};
    for (std::size_t c : value_cols) {
      const auto v = parse_double(fields[c]);
      if (!v || !std::isfinite(*v)) {
        throw Error(ErrorCode::kParse,
                    fmt::format("row {}: non-numeric value '{}' in column '{}'", line_no,
                                fields[c], trim(header[c])));
      }
      row.values.push_back(*v);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(ErrorCode::kParse, "CSV has no data rows");

  std::vector<std::string> units;
  std::vector<std::string> periods;
  for (const auto& r : rows) {
    units.push_back(r.unit);
    periods.push_back(r.period);
  }
  std::sort(units.begin(), units.end());
  units.erase(std::unique(units.begin(), units.end()), units.end());
  std::sort(periods.begin(), periods.end());
  periods.erase(std::unique(periods.begin(), periods.end()), periods.end());
  const bool numeric_periods = std::all_of(periods.begin(), periods.end(), [](const auto& p) {
    return parse_double(p).has_value();
  });
  if (numeric_periods) {
    std::stable_sort(periods.begin(), periods.end(), [](const auto& a, const auto& b) {
      return *parse_double(a) < *parse_double(b);
    });
  }

  std::unordered_map<std::string, std::size_t> unit_index;
  std::unordered_map<std::string, std::size_t> period_index;
  for (std::size_t i = 0; i < units.size(); ++i) unit_index[units[i]] = i;
  for (std::size_t t = 0; t < periods.size(); ++t) period_index[periods[t]] = t;

  const std::size_t n = units.size();
  const std::size_t t_len = periods.size();
  const std::size_t p = schema.regressors.size();
  Eigen::VectorXd y(static_cast<Eigen::Index>(n * t_len));
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n * t_len), static_cast<Eigen::Index>(p));
  std::vector<std::size_t> seen_at(n * t_len, 0);
  for (const auto& r : rows) {
    const std::size_t cell = unit_index[r.unit] * t_len + period_index[r.period];
    if (seen_at[cell] != 0) {
      throw Error(ErrorCode::kDuplicateCell,
                  fmt::format("duplicate (unit={}, period={}) at rows {} and {}", r.unit, r.period,
                              seen_at[cell], r.line_no));
    }
    seen_at[cell] = r.line_no;
    const auto row = static_cast<Eigen::Index>(cell);
    y(row) = r.values[0];
    for (std::size_t j = 0; j < p; ++j) x(row, static_cast<Eigen::Index>(j)) = r.values[j + 1];
  }
  for (std::size_t cell = 0; cell < seen_at.size(); ++cell) {
    if (seen_at[cell] == 0) {
      throw Error(ErrorCode::kUnbalancedPanel,
                  fmt::format("unbalanced panel: missing (unit={}, period={})",
                              units[cell / t_len], periods[cell % t_len]));
    }
  }
  return PanelData(n, t_len, std::move(y), std::move(x), std::move(units), std::move(periods),
                   schema.outcome, schema.regressors);
}

PanelData load_panel_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, fmt::format("cannot open '{}'", path.string()));
  return read_panel_csv(in, schema);
}

void write_panel_csv(std::ostream& out, const PanelData& panel) {
  out << "unit,period," << csv_field(panel.outcome_name());
  for (const auto& name : panel.regressor_names()) out << ',' << csv_field(name);
  out << '\n';
  for (std::size_t i = 0; i < panel.n_units(); ++i) {
    for (std::size_t t = 0; t < panel.n_periods(); ++t) {
      out << csv_field(panel.unit_ids()[i]) << ',' << csv_field(panel.period_ids()[t]) << ','
          << fmt::format("{}", panel.y(i, t));
      for (std::size_t j = 0; j < panel.n_regressors(); ++j) {
        out << ',' << fmt::format("{}", panel.x(i, t, j));
      }
      out << '\n';
    }
  }
}

void save_panel_csv(const std::filesystem::path& path, const PanelData& panel) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, fmt::format("cannot write '{}'", path.string()));
  write_panel_csv(out, panel);
}

}  // namespace panelclust
