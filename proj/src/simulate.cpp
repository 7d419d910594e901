#include "panelclust/simulate.hpp"

#include <cmath>
#include <random>

#include <fmt/format.h>

#include "panelclust/error.hpp"
#include "panelclust/parallel.hpp"
#include "panelclust/random.hpp"

namespace panelclust {

Dgp parse_dgp(std::string_view name) {
  if (name == "static" || name == "dgp1" || name == "1") return Dgp::kStatic;
  if (name == "dynamic" || name == "dgp2" || name == "2") return Dgp::kDynamic;
  if (name == "gfe" || name == "dgp3" || name == "3") return Dgp::kGfe;
  throw Error(ErrorCode::kInvalidConfig, fmt::format("unknown DGP '{}'", name));
}

std::string dgp_name(Dgp dgp) {
  switch (dgp) {
    case Dgp::kStatic: return "static";
    case Dgp::kDynamic: return "dynamic";
    case Dgp::kGfe: return "gfe";
  }
  return "unknown";
}

DgpSpec DgpSpec::standard(Dgp dgp, std::size_t n, std::size_t t, double alpha) {
  DgpSpec spec;
  spec.dgp = dgp;
  spec.n = n;
  spec.t = t;
  spec.alpha = alpha;
  spec.within = dgp != Dgp::kDynamic;
  return spec;
}

Eigen::MatrixXd dgp_thetas(Dgp dgp) {
  Eigen::MatrixXd thetas(3, 2);
  if (dgp == Dgp::kDynamic) {
    thetas << 3.0, 0.2, 1.0, 0.5, 4.0, 0.8;
  } else {
    thetas << 3.0, -3.0, 1.0, -2.0, 4.0, -1.0;
  }
  return thetas;
}

Eigen::MatrixXd dgp_mus(std::size_t t, bool within) {
  const auto t_len = static_cast<Eigen::Index>(t);
  Eigen::MatrixXd mus(3, t_len);
  for (Eigen::Index s = 0; s < t_len; ++s) {
    const double frac = static_cast<double>(s + 1) / static_cast<double>(t);
    mus(0, s) = 4.0 * frac;
    mus(1, s) = 2.0 * frac;
    mus(2, s) = 4.0;
  }
  if (within) mus.colwise() -= mus.rowwise().mean();
  return mus;
}

SimulatedPanel generate(const DgpSpec& spec, std::uint64_t rep_seed) {
  if (spec.t < 2 && spec.within) {
    throw Error(ErrorCode::kInvalidSpec, "within-transformation needs T >= 2");
  }
  const auto sizes = simulated_group_sizes(
      GroupSizeSpec{spec.n, 3, spec.alpha, default_c_alpha(spec.alpha)});
  const Eigen::MatrixXd thetas = dgp_thetas(spec.dgp);
  const Eigen::MatrixXd mus = dgp_mus(spec.t, false);
  const std::size_t n = spec.n;
  const std::size_t t_len = spec.t;
  const auto nt = static_cast<Eigen::Index>(n * t_len);

  std::vector<int> labels;
  for (int g = 0; g < 3; ++g) labels.insert(labels.end(), sizes[static_cast<std::size_t>(g)], g + 1);

  auto rng = make_stream(rep_seed, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double noise_scale = spec.noiseless ? 0.0 : 1.0;
  auto noise = [&] { return noise_scale * normal(rng); };

  Eigen::VectorXd y(nt);
  Eigen::MatrixXd x(nt, 2);
  Eigen::MatrixXd errors(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(t_len));
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Index g = labels[i] - 1;
    const double th1 = thetas(g, 0);
    const double th2 = thetas(g, 1);
    if (spec.dgp == Dgp::kDynamic) {
      double y_prev = 0.0;
      for (std::size_t s = 0; s < spec.burn_in; ++s) {
        const double x1 = normal(rng);
        y_prev = th1 * x1 + th2 * y_prev + noise();
      }
      for (std::size_t s = 0; s < t_len; ++s) {
        const auto row = static_cast<Eigen::Index>(i * t_len + s);
        const double x1 = normal(rng);
        const double eps = noise();
        x(row, 0) = x1;
        x(row, 1) = y_prev;
        y(row) = th1 * x1 + th2 * y_prev + eps;
        errors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(s)) = eps;
        y_prev = y(row);
      }
    } else {
      for (std::size_t s = 0; s < t_len; ++s) {
        const auto row = static_cast<Eigen::Index>(i * t_len + s);
        const double x1 = normal(rng);
        const double x2 = normal(rng);
        const double eps = noise();
        x(row, 0) = x1;
        x(row, 1) = x2;
        y(row) = th1 * x1 + th2 * x2 + eps;
        if (spec.dgp == Dgp::kGfe) y(row) += mus(g, static_cast<Eigen::Index>(s));
        errors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(s)) = eps;
      }
    }
  }
  std::vector<std::string> names = spec.dgp == Dgp::kDynamic
                                       ? std::vector<std::string>{"x1", "y_lag"}
                                       : std::vector<std::string>{"x1", "x2"};
  PanelData panel(n, t_len, std::move(y), std::move(x), {}, {}, "y", std::move(names));
  if (spec.within) panel = within_transform(panel);
  return {std::move(panel), Grouping(std::move(labels), 3), std::move(errors)};
}

double rmse_group3(const FitResult& fit, const Grouping& truth, const DgpSpec& spec) {
  if (fit.grouping.k() != 3 || truth.k() != 3) {
    throw Error(ErrorCode::kInvalidUse, "RMSE for group 3 needs a K = 3 fit");
  }
  if (fit.grouping.size() != truth.size()) {
    throw Error(ErrorCode::kDimension, "fit and truth differ in N");
  }
  const Eigen::RowVectorXd theta3 = dgp_thetas(spec.dgp).row(2);
  const bool gfe_term = spec.dgp == Dgp::kGfe;
  if (gfe_term && !fit.params.gfe()) {
    throw Error(ErrorCode::kInvalidUse, "GFE design needs a GFE fit");
  }
  const Eigen::RowVectorXd mu3 =
      gfe_term ? Eigen::RowVectorXd(dgp_mus(spec.t, spec.within).row(2)) : Eigen::RowVectorXd();
  double theta_sq = 0.0;
  double mu_sq = 0.0;
  std::size_t n3 = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] != 3) continue;
    ++n3;
    const Eigen::Index g = fit.grouping[i] - 1;
    theta_sq += (fit.params.thetas.row(g) - theta3).squaredNorm();
    if (gfe_term) mu_sq += (fit.params.mus->row(g) - mu3).squaredNorm();
  }
  if (n3 == 0) throw Error(ErrorCode::kInvalidUse, "truth has no group-3 units");
  const double n3d = static_cast<double>(n3);
  double total = theta_sq / n3d;
  if (gfe_term) total += mu_sq / (n3d * static_cast<double>(spec.t));
  return std::sqrt(total);
}

std::uint64_t replication_seed(std::uint64_t base_seed, std::size_t rep) {
  return derive_seed(base_seed ^ 0xa0761d6478bd642fULL, rep);
}

ScenarioResult run_scenario(const DgpSpec& spec, const std::vector<PenaltyKind>& penalties,
                            std::size_t n_reps, const FitConfig& config, std::uint64_t base_seed,
                            const ScenarioOptions& options) {
  if (n_reps == 0) throw Error(ErrorCode::kInvalidConfig, "n_reps must be positive");
  if (options.k_true < options.k_min || options.k_true > options.k_max) {
    throw Error(ErrorCode::kInvalidConfig, "the true K must lie inside the K range");
  }
  ScenarioResult result;
  result.n_reps = n_reps;
  for (const auto& p : penalties) result.penalties.push_back(penalty_name(p));
  result.per_rep.resize(n_reps);

  FitConfig inner = config;
  inner.jobs = 1;
  inner.gfe = spec.dgp == Dgp::kGfe;

  parallel_for(n_reps, options.jobs, [&](std::size_t r) {
    ReplicationRecord& rec = result.per_rep[r];
    rec.rep = r;
    rec.seed = replication_seed(base_seed, r);
    try {
      const auto sim = generate(spec, rec.seed);
      check_kmax_feasible(sim.panel, options.k_max, inner.gfe);
      FitConfig cfg = inner;
      cfg.seed = derive_seed(rec.seed, 1);
      const auto fits = fit_k_range(sim.panel, options.k_min, options.k_max, cfg);
      for (const auto& penalty : penalties) {
        rec.k_hat.push_back(evaluate_ic(fits, options.k_min, sim.panel, penalty, inner.gfe).selected_k);
      }
      const auto& at_true = fits[static_cast<std::size_t>(options.k_true - options.k_min)];
      if (!at_true) throw Error(ErrorCode::kEstimationFailed, "fit at the true K failed");
      rec.rmse = rmse_group3(*at_true, sim.truth, spec);
      rec.misclassified = match_labels(at_true->grouping, sim.truth).misclassified;
      rec.sigma2_hat = at_true->sigma2_hat;
      rec.mean_sq_error = sim.errors.array().square().mean();
    } catch (const Error& e) {
      rec.failed = true;
      rec.error = e.what();
    }
  });

  result.mean_k_hat.assign(penalties.size(), 0.0);
  std::size_t ok = 0;
  std::size_t perfect = 0;
  for (const auto& rec : result.per_rep) {
    if (rec.failed) {
      ++result.n_failed;
      continue;
    }
    ++ok;
    for (std::size_t j = 0; j < penalties.size(); ++j) {
      result.mean_k_hat[j] += static_cast<double>(rec.k_hat[j]);
    }
    result.rmse_mean += rec.rmse;
    if (rec.misclassified == 0) ++perfect;
  }
  if (ok > 0) {
    for (auto& m : result.mean_k_hat) m /= static_cast<double>(ok);
    result.rmse_mean /= static_cast<double>(ok);
    result.ppc = static_cast<double>(perfect) / static_cast<double>(ok);
  }
  return result;
}

}  // namespace panelclust
