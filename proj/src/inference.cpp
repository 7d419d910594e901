#include "panelclust/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include <fmt/format.h>

#include "panelclust/error.hpp"

namespace panelclust {

namespace {

std::vector<std::size_t> members(const FitResult& fit, int k) {
  if (k < 1 || k > fit.grouping.k()) {
    throw Error(ErrorCode::kInvalidUse, fmt::format("group {} outside 1..{}", k, fit.grouping.k()));
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fit.grouping.size(); ++i) {
    if (fit.grouping[i] == k) out.push_back(i);
  }
  if (out.empty()) throw Error(ErrorCode::kEmptyGroup, fmt::format("group {} is empty", k));
  return out;
}

// Cluster-robust sandwich from per-unit design blocks and residuals.
SlopeCovariance sandwich(const std::vector<Eigen::MatrixXd>& designs,
                         const std::vector<Eigen::VectorXd>& resid, int k) {
  const Eigen::Index p = designs.front().cols();
  Eigen::MatrixXd bread = Eigen::MatrixXd::Zero(p, p);
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(p, p);
  for (std::size_t u = 0; u < designs.size(); ++u) {
    bread.noalias() += designs[u].transpose() * designs[u];
    const Eigen::VectorXd score = designs[u].transpose() * resid[u];
    meat.noalias() += score * score.transpose();
  }
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(bread);
  if (!lu.isInvertible()) {
    throw Error(ErrorCode::kSingularDesign, fmt::format("singular design in group {}", k));
  }
  const Eigen::MatrixXd inv = lu.inverse();
  SlopeCovariance out;
  out.cov = inv * meat * inv;
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  out.n_k = designs.size();
  out.small_group = designs.size() == 1;
  return out;
}

}  // namespace

SlopeCovariance slope_covariance(const PanelData& panel, const FitResult& fit, int k) {
  const auto units = members(fit, k);
  const Eigen::VectorXd e = residuals(panel, fit.params, fit.grouping);
  const auto t_len = static_cast<Eigen::Index>(panel.n_periods());
  std::vector<Eigen::MatrixXd> designs;
  std::vector<Eigen::VectorXd> resid;
  for (std::size_t i : units) {
    designs.emplace_back(panel.unit_x(i));
    resid.emplace_back(e.segment(static_cast<Eigen::Index>(i) * t_len, t_len));
  }
  return sandwich(designs, resid, k);
}

GfeCovariance gfe_covariance(const PanelData& panel, const FitResult& fit, int k) {
  if (!fit.params.gfe()) throw Error(ErrorCode::kInvalidUse, "fit has no grouped fixed effects");
  const auto units = members(fit, k);
  const Eigen::VectorXd e = residuals(panel, fit.params, fit.grouping);
  const auto t_len = static_cast<Eigen::Index>(panel.n_periods());
  const auto n_k = static_cast<double>(units.size());

  Eigen::MatrixXd xbar = Eigen::MatrixXd::Zero(t_len, static_cast<Eigen::Index>(panel.n_regressors()));
  for (std::size_t i : units) xbar += panel.unit_x(i);
  xbar /= n_k;

  GfeCovariance out;
  out.omega = Eigen::VectorXd::Zero(t_len);
  std::vector<Eigen::MatrixXd> designs;
  std::vector<Eigen::VectorXd> resid;
  for (std::size_t i : units) {
    designs.emplace_back(panel.unit_x(i) - xbar);
    resid.emplace_back(e.segment(static_cast<Eigen::Index>(i) * t_len, t_len));
    out.omega += resid.back().array().square().matrix();
  }
  out.omega /= n_k;
  out.mu_se = (out.omega.array() / n_k).sqrt().matrix();
  out.slopes = sandwich(designs, resid, k);
  return out;
}

std::string significance_stars(double t_stat) {
  const double a = std::abs(t_stat);
  if (std::isnan(a)) return "";
  if (a > 2.576) return "***";
  if (a > 1.960) return "**";
  if (a > 1.645) return "*";
  return "";
}

CoefTable coef_table(const PanelData& panel, const FitResult& fit) {
  CoefTable table;
  table.regressors = panel.regressor_names();
  table.periods = panel.period_ids();
  const auto [ordered, old_to_new] = order_by_size(fit.grouping);
  const auto sizes = fit.grouping.group_sizes();
  std::vector<int> by_display(old_to_new.size());
  for (std::size_t g = 0; g < old_to_new.size(); ++g) {
    by_display[static_cast<std::size_t>(old_to_new[g] - 1)] = static_cast<int>(g) + 1;
  }
  for (std::size_t d = 0; d < by_display.size(); ++d) {
    const int label = by_display[d];
    CoefGroup group;
    group.label = label;
    group.display = static_cast<int>(d) + 1;
    group.n_k = sizes[static_cast<std::size_t>(label - 1)];
    group.theta = fit.params.thetas.row(label - 1).transpose();
    Eigen::MatrixXd cov;
    if (fit.params.gfe()) {
      const auto gfe = gfe_covariance(panel, fit, label);
      cov = gfe.slopes.cov;
      group.small_group = gfe.slopes.small_group;
      group.mu = fit.params.mus->row(label - 1).transpose();
      group.mu_se = gfe.mu_se;
    } else {
      const auto slope = slope_covariance(panel, fit, label);
      cov = slope.cov;
      group.small_group = slope.small_group;
    }
    group.se = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
    group.t_stat.resize(group.theta.size());
    for (Eigen::Index j = 0; j < group.theta.size(); ++j) {
      const double se = group.se(j);
      const double theta = group.theta(j);
      // se == 0 yields a signed infinite t (or 0 when the estimate is 0 too).
      group.t_stat(j) = se > 0.0 ? theta / se
                        : theta == 0.0 ? 0.0
                                       : std::copysign(std::numeric_limits<double>::infinity(), theta);
      group.stars.push_back(significance_stars(group.t_stat(j)));
    }
    table.groups.push_back(std::move(group));
  }
  return table;
}

void write_coef_csv(std::ostream& out, const CoefTable& table) {
  out << "group,n_k,regressor,estimate,se,t,stars\n";
  for (const auto& g : table.groups) {
    for (std::size_t j = 0; j < table.regressors.size(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      out << fmt::format("{},{},{},{},{},{},{}\n", g.display, g.n_k, table.regressors[j],
                         g.theta(jj), g.se(jj), g.t_stat(jj), g.stars[j]);
    }
  }
}

void write_coef_text(std::ostream& out, const CoefTable& table) {
  constexpr int kWidth = 14;
  out << fmt::format("{:<12}", "");
  for (const auto& name : table.regressors) out << fmt::format("{:>{}}", name, kWidth);
  out << '\n';
  for (const auto& g : table.groups) {
    out << fmt::format("{:<12}", fmt::format("Group {}", g.display));
    for (Eigen::Index j = 0; j < g.theta.size(); ++j) {
      out << fmt::format("{:>{}}", fmt::format("{:.3f}{}", g.theta(j), g.stars[static_cast<std::size_t>(j)]),
                         kWidth);
    }
    out << '\n' << fmt::format("{:<12}", fmt::format("(N={})", g.n_k));
    for (Eigen::Index j = 0; j < g.se.size(); ++j) {
      out << fmt::format("{:>{}}", fmt::format("({:.3f})", g.se(j)), kWidth);
    }
    out << '\n';
  }
  out << "Standard errors in parentheses. *** p<0.01, ** p<0.05, * p<0.1.\n";
}

void write_gfe_csv(std::ostream& out, const CoefTable& table) {
  out << "group,n_k,period,mu,se\n";
  for (const auto& g : table.groups) {
    for (Eigen::Index t = 0; t < g.mu.size(); ++t) {
      out << fmt::format("{},{},{},{},{}\n", g.display, g.n_k,
                         table.periods[static_cast<std::size_t>(t)], g.mu(t), g.mu_se(t));
    }
  }
}

}  // namespace panelclust
