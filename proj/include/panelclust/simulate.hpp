#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "panelclust/estimator.hpp"
#include "panelclust/panel.hpp"
#include "panelclust/selection.hpp"

namespace panelclust {

enum class Dgp { kStatic, kDynamic, kGfe };

Dgp parse_dgp(std::string_view name);  // "static"|"dgp1", "dynamic"|"dgp2", "gfe"|"dgp3"
std::string dgp_name(Dgp dgp);

struct DgpSpec {
  Dgp dgp = Dgp::kStatic;
  std::size_t n = 60;
  std::size_t t = 10;
  double alpha = 1.0;
  std::size_t burn_in = 100;  // dynamic panel only
  // Within-transformation after generation; on for the static and GFE
  // designs, never for the dynamic one.
  bool within = true;
  // Test hook: draw regressors as usual but set every error to zero.
  bool noiseless = false;

  static DgpSpec standard(Dgp dgp, std::size_t n, std::size_t t, double alpha);
};

// True slopes, 3 x 2 (rows are groups 1..3).
Eigen::MatrixXd dgp_thetas(Dgp dgp);
// True grouped effects, 3 x T: 4t/T, 2t/T and 4. When `within` is set the
// paths are demeaned over t, which is what the transformed data identify.
Eigen::MatrixXd dgp_mus(std::size_t t, bool within);

struct SimulatedPanel {
  PanelData panel;
  Grouping truth;
  Eigen::MatrixXd errors;  // N x T draws of epsilon before any transformation
};

// Units are ordered by true group (group 1 first).
SimulatedPanel generate(const DgpSpec& spec, std::uint64_t rep_seed);

// Root mean squared error of the estimated parameters of every true group-3
// unit, read at the unit's own estimated label. Adds the grouped-effect term
// for the GFE design. Throws kInvalidUse unless the fit has K = 3.
double rmse_group3(const FitResult& fit, const Grouping& truth, const DgpSpec& spec);

struct ReplicationRecord {
  std::size_t rep = 0;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  std::vector<int> k_hat;  // one per penalty
  double rmse = 0.0;
  std::size_t misclassified = 0;
  double sigma2_hat = 0.0;  // at K = 3
  double mean_sq_error = 0.0;
};

struct ScenarioResult {
  std::vector<std::string> penalties;
  std::vector<double> mean_k_hat;  // one per penalty
  double rmse_mean = 0.0;
  double ppc = 0.0;
  std::size_t n_reps = 0;
  std::size_t n_failed = 0;
  std::vector<ReplicationRecord> per_rep;
};

struct ScenarioOptions {
  int k_min = 2;
  int k_max = 5;
  int k_true = 3;
  std::size_t jobs = 1;  // parallel replications
};

// Seed of replication r under base_seed.
std::uint64_t replication_seed(std::uint64_t base_seed, std::size_t rep);

// Replications run independently (and in parallel); aggregates are formed in
// replication order, so results do not depend on scheduling. Failed
// replications are recorded and excluded from the means.
ScenarioResult run_scenario(const DgpSpec& spec, const std::vector<PenaltyKind>& penalties,
                            std::size_t n_reps, const FitConfig& config, std::uint64_t base_seed,
                            const ScenarioOptions& options = {});

}  // namespace panelclust
