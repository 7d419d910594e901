#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace panelclust {

// Balanced N x T panel with p regressors.
//
// Observations are stored unit-major: row i*T + t of the design matrix holds
// x_it', and the same index of the outcome vector holds y_it. Units and
// periods are kept in canonical order (unit ids lexicographic, periods
// ascending), and every downstream index refers to that order.
class PanelData {
 public:
  PanelData() = default;

  // Throws Error(kInvalidSpec) on shape mismatch, empty dimensions or
  // non-finite values.
  PanelData(std::size_t n_units, std::size_t n_periods, Eigen::VectorXd y,
            Eigen::MatrixXd x, std::vector<std::string> unit_ids = {},
            std::vector<std::string> period_ids = {},
            std::string outcome_name = "y",
            std::vector<std::string> regressor_names = {});

  std::size_t n_units() const { return n_units_; }
  std::size_t n_periods() const { return n_periods_; }
  std::size_t n_regressors() const { return static_cast<std::size_t>(x_.cols()); }
  std::size_t n_obs() const { return n_units_ * n_periods_; }

  double y(std::size_t i, std::size_t t) const { return y_(row(i, t)); }
  double x(std::size_t i, std::size_t t, std::size_t j) const {
    return x_(row(i, t), static_cast<Eigen::Index>(j));
  }

  const Eigen::VectorXd& y() const { return y_; }
  const Eigen::MatrixXd& x() const { return x_; }

  // T-long outcome segment and T x p design block of unit i.
  auto unit_y(std::size_t i) const {
    return y_.segment(static_cast<Eigen::Index>(i * n_periods_),
                      static_cast<Eigen::Index>(n_periods_));
  }
  auto unit_x(std::size_t i) const {
    return x_.middleRows(static_cast<Eigen::Index>(i * n_periods_),
                         static_cast<Eigen::Index>(n_periods_));
  }

  const std::vector<std::string>& unit_ids() const { return unit_ids_; }
  const std::vector<std::string>& period_ids() const { return period_ids_; }
  const std::string& outcome_name() const { return outcome_name_; }
  const std::vector<std::string>& regressor_names() const { return regressor_names_; }

 private:
  Eigen::Index row(std::size_t i, std::size_t t) const {
    return static_cast<Eigen::Index>(i * n_periods_ + t);
  }

  std::size_t n_units_ = 0;
  std::size_t n_periods_ = 0;
  Eigen::VectorXd y_;
  Eigen::MatrixXd x_;
  std::vector<std::string> unit_ids_;
  std::vector<std::string> period_ids_;
  std::string outcome_name_;
  std::vector<std::string> regressor_names_;
};

// Group memberships with labels in 1..K.
class Grouping {
 public:
  Grouping() = default;
  // Throws Error(kInvalidSpec) when k == 0 or a label falls outside 1..k.
  Grouping(std::vector<int> labels, int k);

  int k() const { return k_; }
  std::size_t size() const { return labels_.size(); }
  int operator[](std::size_t i) const { return labels_[i]; }
  const std::vector<int>& labels() const { return labels_; }

  // Entry g-1 holds the size of group g.
  std::vector<std::size_t> group_sizes() const;
  bool all_nonempty() const;

  friend bool operator==(const Grouping&, const Grouping&) = default;

 private:
  std::vector<int> labels_;
  int k_ = 0;
};

struct GroupSizeSpec {
  std::size_t n_total = 0;
  int k0 = 3;
  double alpha = 1.0;
  double c_alpha = 1.0;
};

// Scaling constant for the small-group size rule: 0.4, 0.6 and 0.8 at
// alpha = 1.0, 0.9 and 0.8, and 1 elsewhere.
double default_c_alpha(double alpha);

// N1 = N/K0, N3 = floor(c_alpha * N^alpha), N2 = N - N1 - N3.
std::array<std::size_t, 3> simulated_group_sizes(const GroupSizeSpec& spec);

// Subtracts each unit's time mean from y and every regressor column.
PanelData within_transform(const PanelData& panel);

struct CsvSchema {
  std::string unit = "unit";
  std::string period = "period";
  std::string outcome = "y";
  std::vector<std::string> regressors;
};

// Long-format CSV, one row per (unit, period). Throws Error with kParse,
// kDuplicateCell, kUnbalancedPanel or kIo.
PanelData load_panel_csv(const std::filesystem::path& path, const CsvSchema& schema);
PanelData read_panel_csv(std::istream& in, const CsvSchema& schema);

// Writes unit,period,outcome,regressors... with round-trip precision.
void write_panel_csv(std::ostream& out, const PanelData& panel);
void save_panel_csv(const std::filesystem::path& path, const PanelData& panel);

}  // namespace panelclust
