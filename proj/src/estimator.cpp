#include "panelclust/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "engine.hpp"
#include "panelclust/error.hpp"
#include "panelclust/parallel.hpp"
#include "panelclust/random.hpp"

namespace panelclust {

namespace detail {

namespace {

// Solves A theta = b after rescaling A to unit diagonal; reports a singular
// design when the scaled matrix is not numerically positive definite.
bool solve_normal_equations(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                            Eigen::Ref<Eigen::VectorXd> theta) {
  const Eigen::VectorXd diag = a.diagonal();
  if ((diag.array() <= 0.0).any() || !diag.allFinite()) return false;
  const Eigen::VectorXd scale = diag.array().rsqrt();
  const Eigen::MatrixXd scaled = scale.asDiagonal() * a * scale.asDiagonal();
  const Eigen::LLT<Eigen::MatrixXd> llt(scaled);
  if (llt.info() != Eigen::Success) return false;
  const Eigen::MatrixXd l = llt.matrixL();
  if (l.diagonal().array().square().minCoeff() <= 1e-12) return false;
  theta = scale.asDiagonal() * llt.solve(scale.asDiagonal() * b);
  return theta.allFinite();
}

}  // namespace

Engine::Engine(const PanelData& panel)
    : panel_(panel),
      n_(panel.n_units()),
      t_(panel.n_periods()),
      p_(panel.n_regressors()),
      stats_(static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(p_ * p_ + p_ + 1)) {
  const auto p = static_cast<Eigen::Index>(p_);
  Eigen::MatrixXd xx(p, p);
  for (std::size_t i = 0; i < n_; ++i) {
    const auto xi = panel.unit_x(i);
    const auto yi = panel.unit_y(i);
    const auto row = static_cast<Eigen::Index>(i);
    xx.noalias() = xi.transpose() * xi;
    stats_.row(row).head(p * p) = xx.reshaped().transpose();
    stats_.row(row).segment(p * p, p).noalias() = (xi.transpose() * yi).transpose();
    stats_(row, p * p + p) = yi.squaredNorm();
  }
  if (t_ > 0) {
    // Rows (1 + p) i + c hold component c of unit i over time: c = 0 is y.
    by_time_.resize(static_cast<Eigen::Index>(n_ * (p_ + 1)), static_cast<Eigen::Index>(t_));
    for (std::size_t i = 0; i < n_; ++i) {
      const auto base = static_cast<Eigen::Index>(i * (p_ + 1));
      by_time_.row(base) = panel.unit_y(i).transpose();
      by_time_.middleRows(base + 1, p) = panel.unit_x(i).transpose();
    }
  }
}

GroupParams Engine::solve(const std::vector<int>& labels, int k, bool gfe) const {
  const auto p = static_cast<Eigen::Index>(p_);
  const auto t_len = static_cast<Eigen::Index>(t_);
  std::vector<std::size_t> sizes(static_cast<std::size_t>(k), 0);
  for (int g : labels) ++sizes[static_cast<std::size_t>(g - 1)];
  for (int g = 1; g <= k; ++g) {
    if (sizes[static_cast<std::size_t>(g - 1)] == 0) {
      throw Error(ErrorCode::kEmptyGroup, fmt::format("group {} is empty", g));
    }
  }

  // Group sums of the per-unit moments.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> sums =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Zero(k, stats_.cols());
  for (std::size_t i = 0; i < n_; ++i) {
    sums.row(labels[i] - 1) += stats_.row(static_cast<Eigen::Index>(i));
  }

  GroupParams params;
  params.thetas.resize(k, p);
  Eigen::MatrixXd a(p, p);
  Eigen::VectorXd b(p);
  Eigen::VectorXd theta(p);

  if (!gfe) {
    for (Eigen::Index g = 0; g < k; ++g) {
      a = sums.row(g).head(p * p).reshaped(p, p);
      b = sums.row(g).segment(p * p, p).transpose();
      if (!solve_normal_equations(a, b, theta)) {
        throw Error(ErrorCode::kSingularDesign, fmt::format("singular design in group {}", g + 1));
      }
      params.thetas.row(g) = theta.transpose();
    }
    return params;
  }

  // Group-period means: row (1 + p) g + c of `means` is component c of
  // group g over time.
  const Eigen::Index q = p + 1;
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> means =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Zero(q * k, t_len);
  for (std::size_t i = 0; i < n_; ++i) {
    means.middleRows((labels[i] - 1) * q, q) += by_time_.middleRows(static_cast<Eigen::Index>(i) * q, q);
  }
  params.mus = Eigen::MatrixXd(k, t_len);
  for (Eigen::Index g = 0; g < k; ++g) {
    const double n_g = static_cast<double>(sizes[static_cast<std::size_t>(g)]);
    auto block = means.middleRows(g * q, q);
    block /= n_g;
    const auto ybar = block.row(0);
    const auto xbar = block.bottomRows(p);  // p x T
    // Demeaned cross-products: sum_i X_i'X_i - N_g sum_t xbar_t xbar_t'.
    a = sums.row(g).head(p * p).reshaped(p, p);
    a.noalias() -= n_g * (xbar * xbar.transpose());
    b = sums.row(g).segment(p * p, p).transpose();
    b.noalias() -= n_g * (xbar * ybar.transpose());
    if (!solve_normal_equations(a, b, theta)) {
      throw Error(ErrorCode::kSingularDesign,
                  fmt::format("singular demeaned design in group {}", g + 1));
    }
    params.thetas.row(g) = theta.transpose();
    params.mus->row(g) = ybar - theta.transpose() * xbar;
  }
  return params;
}

void Engine::cost(const GroupParams& params, Eigen::MatrixXd& out) const {
  const Eigen::Index k = params.k();
  const auto p = static_cast<Eigen::Index>(p_);
  // Column g: [vec(theta theta'), -2 theta, 1], so stats * weights gives
  // y'y - 2 theta'X'y + theta'X'X theta per unit.
  Eigen::MatrixXd weights(stats_.cols(), k);
  for (Eigen::Index g = 0; g < k; ++g) {
    const Eigen::VectorXd theta = params.thetas.row(g).transpose();
    weights.col(g).head(p * p) = (theta * theta.transpose()).reshaped();
    weights.col(g).segment(p * p, p) = -2.0 * theta;
    weights(p * p + p, g) = 1.0;
  }
  out.noalias() = stats_ * weights;
  if (!params.gfe()) return;

  // Cross terms with the grouped effects:
  // -2 sum_t mu_gt (y_it - x_it' theta_g) + sum_t mu_gt^2.
  const Eigen::Index q = p + 1;
  const Eigen::MatrixXd proj = by_time_ * params.mus->transpose();  // (N q) x K
  const Eigen::VectorXd mu_sq = params.mus->rowwise().squaredNorm();
  for (std::size_t i = 0; i < n_; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    for (Eigen::Index g = 0; g < k; ++g) {
      const double y_mu = proj(row * q, g);
      const double x_mu_theta = proj.col(g).segment(row * q + 1, p).dot(params.thetas.row(g));
      out(row, g) += -2.0 * (y_mu - x_mu_theta) + mu_sq(g);
    }
  }
}

RunOutcome Engine::run(const FitConfig& config, std::vector<int> labels) const {
  const int k = config.k;
  RunOutcome out;
  Eigen::MatrixXd c;
  std::vector<int> next(labels.size());
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t iter = 1; iter <= config.max_iter; ++iter) {
    GroupParams params;
    try {
      params = solve(labels, k, config.gfe);
    } catch (const Error& e) {
      throw Error(ErrorCode::kDegenerateStart, e.what());
    }
    cost(params, c);
    double ssr = 0.0;
    for (std::size_t i = 0; i < n_; ++i) ssr += c(static_cast<Eigen::Index>(i), labels[i] - 1);
    out.history.push_back(ssr);
    out.iterations = iter;
    out.params = std::move(params);
    out.ssr = ssr;
    if (iter > 1 && previous - ssr <= config.ssr_tol * previous) {
      out.converged = true;
      break;
    }

    for (std::size_t i = 0; i < n_; ++i) {
      Eigen::Index best = 0;
      c.row(static_cast<Eigen::Index>(i)).minCoeff(&best);
      next[i] = static_cast<int>(best) + 1;
    }
    repair_empty_groups(c, next, k);
    if (next == labels) {
      out.converged = true;
      break;
    }
    // Keep the returned parameters paired with the memberships they fit.
    if (iter == config.max_iter) break;
    labels.swap(next);
    previous = ssr;
  }
  out.labels = std::move(labels);
  return out;
}

void repair_empty_groups(const Eigen::MatrixXd& cost, std::vector<int>& labels, int k) {
  std::vector<std::size_t> sizes(static_cast<std::size_t>(k), 0);
  for (int g : labels) ++sizes[static_cast<std::size_t>(g - 1)];
  for (int empty = 1; empty <= k; ++empty) {
    if (sizes[static_cast<std::size_t>(empty - 1)] != 0) continue;
    const auto donor_it = std::max_element(sizes.begin(), sizes.end());
    const int donor = static_cast<int>(donor_it - sizes.begin()) + 1;
    if (*donor_it < 2) {
      throw Error(ErrorCode::kDegenerateStart, "no unit available to refill an empty group");
    }
    std::size_t pick = labels.size();
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] != donor) continue;
      const double v = cost(static_cast<Eigen::Index>(i), donor - 1);
      if (v > worst) {
        worst = v;
        pick = i;
      }
    }
    labels[pick] = empty;
    --sizes[static_cast<std::size_t>(donor - 1)];
    ++sizes[static_cast<std::size_t>(empty - 1)];
  }
}

}  // namespace detail

GroupParams group_ols(const PanelData& panel, const Grouping& grouping, bool gfe) {
  if (grouping.size() != panel.n_units()) {
    throw Error(ErrorCode::kDimension, "grouping length differs from N");
  }
  return detail::Engine(panel).solve(grouping.labels(), grouping.k(), gfe);
}

Eigen::MatrixXd unit_group_ssr(const PanelData& panel, const GroupParams& params) {
  const auto n = static_cast<Eigen::Index>(panel.n_units());
  const auto t_len = static_cast<Eigen::Index>(panel.n_periods());
  Eigen::MatrixXd out(n, params.k());
  for (Eigen::Index g = 0; g < params.k(); ++g) {
    Eigen::VectorXd r = panel.y() - panel.x() * params.thetas.row(g).transpose();
    for (Eigen::Index i = 0; i < n; ++i) {
      auto ri = r.segment(i * t_len, t_len);
      if (params.gfe()) ri -= params.mus->row(g).transpose();
      out(i, g) = ri.squaredNorm();
    }
  }
  return out;
}

Grouping assign(const PanelData& panel, const GroupParams& params) {
  if (!params.thetas.allFinite() || (params.gfe() && !params.mus->allFinite())) {
    throw Error(ErrorCode::kInvalidSpec, "non-finite group parameters");
  }
  const Eigen::MatrixXd c = unit_group_ssr(panel, params);
  std::vector<int> labels(panel.n_units());
  for (Eigen::Index i = 0; i < c.rows(); ++i) {
    Eigen::Index best = 0;
    c.row(i).minCoeff(&best);
    labels[static_cast<std::size_t>(i)] = static_cast<int>(best) + 1;
  }
  return Grouping(std::move(labels), params.k());
}

Eigen::VectorXd residuals(const PanelData& panel, const GroupParams& params,
                          const Grouping& grouping) {
  const auto t_len = static_cast<Eigen::Index>(panel.n_periods());
  Eigen::VectorXd e(panel.y().size());
  for (std::size_t i = 0; i < panel.n_units(); ++i) {
    const Eigen::Index g = grouping[i] - 1;
    const auto start = static_cast<Eigen::Index>(i) * t_len;
    e.segment(start, t_len).noalias() =
        panel.unit_y(i) - panel.unit_x(i) * params.thetas.row(g).transpose();
    if (params.gfe()) e.segment(start, t_len) -= params.mus->row(g).transpose();
  }
  return e;
}

double total_ssr(const PanelData& panel, const GroupParams& params, const Grouping& grouping) {
  return residuals(panel, params, grouping).squaredNorm();
}

namespace {

void validate(const PanelData& panel, const FitConfig& config) {
  if (config.k < 1) throw Error(ErrorCode::kInvalidConfig, "K must be at least 1");
  if (static_cast<std::size_t>(config.k) > panel.n_units()) {
    throw Error(ErrorCode::kInvalidConfig,
                fmt::format("K={} exceeds N={}", config.k, panel.n_units()));
  }
  if (config.n_starts == 0) throw Error(ErrorCode::kInvalidConfig, "n_starts must be positive");
  if (config.max_iter == 0) throw Error(ErrorCode::kInvalidConfig, "max_iter must be positive");
}

FitResult finish(const PanelData& panel, detail::RunOutcome run, int k) {
  FitResult result;
  result.grouping = Grouping(std::move(run.labels), k);
  result.params = std::move(run.params);
  result.ssr = total_ssr(panel, result.params, result.grouping);
  result.sigma2_hat = result.ssr / static_cast<double>(panel.n_obs());
  result.converged = run.converged;
  result.iterations_used = run.iterations;
  result.ssr_history = std::move(run.history);
  return result;
}

std::optional<FitResult> fit_with(const detail::Engine& engine, const PanelData& panel,
                                  const FitConfig& config) {
  validate(panel, config);
  constexpr double kDegenerate = std::numeric_limits<double>::infinity();
  std::vector<double> start_ssr(config.n_starts, kDegenerate);
  parallel_for(config.n_starts, config.jobs, [&](std::size_t s) {
    const auto init = initial_grouping(panel.n_units(), config.k, config.seed, s);
    try {
      start_ssr[s] = engine.run(config, init.labels()).ssr;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kDegenerateStart) throw;
    }
  });
  std::size_t best = 0;
  for (std::size_t s = 1; s < start_ssr.size(); ++s) {
    if (start_ssr[s] < start_ssr[best]) best = s;
  }
  if (start_ssr[best] == kDegenerate) return std::nullopt;
  // Replaying the winning start is deterministic and cheaper than keeping
  // every start's parameters around.
  const auto init = initial_grouping(panel.n_units(), config.k, config.seed, best);
  FitResult result = finish(panel, engine.run(config, init.labels()), config.k);
  result.start_index_of_best = best;
  result.degenerate_starts = static_cast<std::size_t>(
      std::count(start_ssr.begin(), start_ssr.end(), kDegenerate));
  return result;
}

}  // namespace

FitResult kmeans_once(const PanelData& panel, const FitConfig& config, const Grouping& init) {
  validate(panel, config);
  if (init.size() != panel.n_units() || init.k() != config.k) {
    throw Error(ErrorCode::kDimension, "initial grouping does not match N or K");
  }
  detail::Engine engine(panel);
  return finish(panel, engine.run(config, init.labels()), config.k);
}

Grouping initial_grouping(std::size_t n_units, int k, std::uint64_t seed,
                          std::size_t start_index) {
  if (k < 1 || static_cast<std::size_t>(k) > n_units) {
    throw Error(ErrorCode::kInvalidConfig, fmt::format("cannot draw K={} groups of N={}", k, n_units));
  }
  auto rng = make_stream(seed, start_index);
  std::uniform_int_distribution<int> draw(1, k);
  std::vector<int> labels(n_units);
  std::vector<std::size_t> sizes(static_cast<std::size_t>(k));
  constexpr int kMaxRedraws = 1000;
  for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
    std::fill(sizes.begin(), sizes.end(), 0);
    for (auto& label : labels) {
      label = draw(rng);
      ++sizes[static_cast<std::size_t>(label - 1)];
    }
    if (std::find(sizes.begin(), sizes.end(), 0) == sizes.end()) break;
  }
  // Only reachable when K is close to N: hand each missing label to the
  // lowest-index unit of a group that can spare one.
  for (int g = 1; g <= k; ++g) {
    if (sizes[static_cast<std::size_t>(g - 1)] != 0) continue;
    for (auto& label : labels) {
      if (sizes[static_cast<std::size_t>(label - 1)] > 1) {
        --sizes[static_cast<std::size_t>(label - 1)];
        label = g;
        ++sizes[static_cast<std::size_t>(g - 1)];
        break;
      }
    }
  }
  return Grouping(std::move(labels), k);
}

FitResult fit(const PanelData& panel, const FitConfig& config) {
  validate(panel, config);
  detail::Engine engine(panel);
  auto result = fit_with(engine, panel, config);
  if (!result) {
    throw Error(ErrorCode::kEstimationFailed,
                fmt::format("all {} starts degenerate at K={}", config.n_starts, config.k));
  }
  return std::move(*result);
}

std::vector<std::optional<FitResult>> fit_k_range(const PanelData& panel, int k_min, int k_max,
                                                  const FitConfig& config) {
  if (k_min < 1 || k_min > k_max || static_cast<std::size_t>(k_max) > panel.n_units()) {
    throw Error(ErrorCode::kInvalidConfig,
                fmt::format("invalid K range [{}, {}] for N={}", k_min, k_max, panel.n_units()));
  }
  detail::Engine engine(panel);
  std::vector<std::optional<FitResult>> fits;
  for (int k = k_min; k <= k_max; ++k) {
    FitConfig cfg = config;
    cfg.k = k;
    fits.push_back(fit_with(engine, panel, cfg));
  }
  return fits;
}

namespace {

// Minimum-cost perfect matching on a square matrix (O(K^3) potentials method).
std::vector<int> hungarian(const std::vector<std::vector<long>>& cost) {
  const std::size_t n = cost.size();
  constexpr long kInf = std::numeric_limits<long>::max() / 4;
  std::vector<long> u(n + 1, 0), v(n + 1, 0);
  std::vector<std::size_t> row_of(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    row_of[0] = i;
    std::size_t j0 = 0;
    std::vector<long> minv(n + 1, kInf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = row_of[j0];
      long delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const long cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[row_of[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (row_of[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      row_of[j0] = row_of[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(n);
  for (std::size_t j = 1; j <= n; ++j) assignment[row_of[j] - 1] = static_cast<int>(j);
  return assignment;
}

}  // namespace

LabelMatch match_labels(const Grouping& estimated, const Grouping& truth) {
  if (estimated.k() != truth.k() || estimated.size() != truth.size()) {
    throw Error(ErrorCode::kDimension,
                fmt::format("cannot match groupings (K={}, N={}) and (K={}, N={})", estimated.k(),
                            estimated.size(), truth.k(), truth.size()));
  }
  const auto k = static_cast<std::size_t>(truth.k());
  std::vector<std::vector<long>> overlap(k, std::vector<long>(k, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ++overlap[static_cast<std::size_t>(estimated[i] - 1)][static_cast<std::size_t>(truth[i] - 1)];
  }
  LabelMatch best;
  if (k <= 8) {
    std::vector<int> perm(k);
    std::iota(perm.begin(), perm.end(), 1);
    long best_agree = -1;
    do {
      long agree = 0;
      for (std::size_t g = 0; g < k; ++g) agree += overlap[g][static_cast<std::size_t>(perm[g] - 1)];
      if (agree > best_agree) {
        best_agree = agree;
        best.permutation = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
  } else {
    auto neg = overlap;
    for (auto& row : neg) {
      for (auto& v : row) v = -v;
    }
    best.permutation = hungarian(neg);
  }
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (best.permutation[static_cast<std::size_t>(estimated[i] - 1)] != truth[i]) ++wrong;
  }
  best.misclassified = wrong;
  return best;
}

std::pair<Grouping, std::vector<int>> order_by_size(const Grouping& grouping) {
  const auto sizes = grouping.group_sizes();
  std::vector<int> order(sizes.size());
  std::iota(order.begin(), order.end(), 1);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return sizes[static_cast<std::size_t>(a - 1)] > sizes[static_cast<std::size_t>(b - 1)];
  });
  std::vector<int> old_to_new(sizes.size());
  for (std::size_t r = 0; r < order.size(); ++r) {
    old_to_new[static_cast<std::size_t>(order[r] - 1)] = static_cast<int>(r) + 1;
  }
  std::vector<int> labels(grouping.size());
  for (std::size_t i = 0; i < grouping.size(); ++i) {
    labels[i] = old_to_new[static_cast<std::size_t>(grouping[i] - 1)];
  }
  return {Grouping(std::move(labels), grouping.k()), std::move(old_to_new)};
}

}  // namespace panelclust
