#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "panelclust/estimator.hpp"

namespace panelclust::detail {

struct RunOutcome {
  GroupParams params;
  std::vector<int> labels;
  double ssr = 0.0;
  bool converged = false;
  std::size_t iterations = 0;
  std::vector<double> history;
};

// Per-panel precomputation shared by every start and every K. Without GFE
// the alternating steps only need each unit's X'X, X'y and y'y, so an
// iteration costs O(N K p^2) regardless of T.
class Engine {
 public:
  explicit Engine(const PanelData& panel);

  GroupParams solve(const std::vector<int>& labels, int k, bool gfe) const;
  // out(i, g) = time-summed squared residual of unit i under group g.
  void cost(const GroupParams& params, Eigen::MatrixXd& out) const;
  RunOutcome run(const FitConfig& config, std::vector<int> labels) const;

 private:
  const PanelData& panel_;
  std::size_t n_;
  std::size_t t_;
  std::size_t p_;
  // Row i: [vec(X_i'X_i), X_i'y_i, y_i'y_i].
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> stats_;
  // (1 + p) N x T: y_i' then the columns of X_i as rows, per unit.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> by_time_;
};

// Moves into each empty group the worst-fitting unit of the largest group.
void repair_empty_groups(const Eigen::MatrixXd& cost, std::vector<int>& labels, int k);

}  // namespace panelclust::detail
