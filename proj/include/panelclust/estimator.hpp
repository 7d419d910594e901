#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "panelclust/panel.hpp"

namespace panelclust {

// Group-specific parameters. Row k-1 of `thetas` is the slope vector of group
// k; with grouped fixed effects, row k-1 of `mus` is the time path of group k.
struct GroupParams {
  Eigen::MatrixXd thetas;               // K x p
  std::optional<Eigen::MatrixXd> mus;   // K x T, present iff gfe

  bool gfe() const { return mus.has_value(); }
  int k() const { return static_cast<int>(thetas.rows()); }
};

struct FitConfig {
  int k = 1;
  bool gfe = false;
  std::size_t n_starts = 1000;
  std::size_t max_iter = 1000;
  std::uint64_t seed = 0;
  // Relative SSR decrease below which iteration stops.
  double ssr_tol = 1e-12;
  // Worker threads for multi-start; results do not depend on it.
  std::size_t jobs = 1;
};

struct FitResult {
  GroupParams params;
  Grouping grouping;
  double ssr = 0.0;
  double sigma2_hat = 0.0;  // ssr / (N T)
  bool converged = false;
  std::size_t iterations_used = 0;
  std::size_t start_index_of_best = 0;
  // SSR after each parameter update; non-increasing.
  std::vector<double> ssr_history;
  std::size_t degenerate_starts = 0;
};

// Least-squares parameters given memberships. Without GFE this is per-group
// OLS; with GFE the slopes come from OLS on group-period demeaned data and
// mu_kt = ybar_kt - xbar_kt' theta_k.
// Throws kEmptyGroup or kSingularDesign (message names the group).
GroupParams group_ols(const PanelData& panel, const Grouping& grouping, bool gfe);

// Per-unit minimizer of the time-summed squared residual; ties go to the
// smallest label.
Grouping assign(const PanelData& panel, const GroupParams& params);

// N x K matrix of time-summed squared residuals of each unit under each group.
Eigen::MatrixXd unit_group_ssr(const PanelData& panel, const GroupParams& params);

// Sum of squared residuals of the panel under (params, grouping).
double total_ssr(const PanelData& panel, const GroupParams& params, const Grouping& grouping);

// Residuals y_it - x_it' theta_{k_i} - mu_{k_i t}, unit-major like PanelData::y().
Eigen::VectorXd residuals(const PanelData& panel, const GroupParams& params,
                          const Grouping& grouping);

// One run of the alternating procedure from `init`. Throws kDegenerateStart
// when a group design becomes singular.
FitResult kmeans_once(const PanelData& panel, const FitConfig& config, const Grouping& init);

// Uniform initial memberships for start `start_index`, redrawn until every
// label is present.
Grouping initial_grouping(std::size_t n_units, int k, std::uint64_t seed,
                          std::size_t start_index);

// Best of config.n_starts runs by SSR, ties to the smallest start index.
// Throws kInvalidConfig (K > N, K < 1, n_starts = 0) or kEstimationFailed.
FitResult fit(const PanelData& panel, const FitConfig& config);

// Fits every K in [k_min, k_max] sharing per-panel precomputation. Entry
// K - k_min is empty when every start was degenerate.
std::vector<std::optional<FitResult>> fit_k_range(const PanelData& panel, int k_min, int k_max,
                                                  const FitConfig& config);

struct LabelMatch {
  // permutation[g-1] is the truth label matched to estimated label g.
  std::vector<int> permutation;
  std::size_t misclassified = 0;
};

// Relabeling of `estimated` that minimizes disagreements with `truth`.
// Exhaustive over permutations for K <= 8, Hungarian assignment above.
LabelMatch match_labels(const Grouping& estimated, const Grouping& truth);

// `grouping` with labels renamed so that group 1 is the largest (ties keep
// the original label order). Returns the new grouping and old->new map.
std::pair<Grouping, std::vector<int>> order_by_size(const Grouping& grouping);

}  // namespace panelclust
