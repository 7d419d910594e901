#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include <doctest.h>

#include "oracles.hpp"
#include "panelclust/error.hpp"
#include "panelclust/inference.hpp"
#include "panelclust/random.hpp"

using namespace panelclust;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

FitResult fit_at(const PanelData& panel, const std::vector<int>& labels, int k, bool gfe) {
  FitResult r;
  r.grouping = Grouping(labels, k);
  r.params = group_ols(panel, r.grouping, gfe);
  r.ssr = total_ssr(panel, r.params, r.grouping);
  r.sigma2_hat = r.ssr / static_cast<double>(panel.n_obs());
  return r;
}

// Sandwich formed from the textbook pieces on the stacked group rows.
MatrixXd oracle_sandwich(const PanelData& panel, const FitResult& fit, int k) {
  const auto p = static_cast<Eigen::Index>(panel.n_regressors());
  const VectorXd e = residuals(panel, fit.params, fit.grouping);
  MatrixXd xx = MatrixXd::Zero(p, p);
  MatrixXd meat = MatrixXd::Zero(p, p);
  for (std::size_t i = 0; i < panel.n_units(); ++i) {
    if (fit.grouping[i] != k) continue;
    VectorXd s = VectorXd::Zero(p);
    for (std::size_t t = 0; t < panel.n_periods(); ++t) {
      const auto row = static_cast<Eigen::Index>(i * panel.n_periods() + t);
      const VectorXd x = panel.x().row(row).transpose();
      xx += x * x.transpose();
      s += x * e(row);
    }
    meat += s * s.transpose();
  }
  const MatrixXd inv = xx.inverse();
  return inv * meat * inv;
}

}  // namespace

TEST_SUITE("inference") {

TEST_CASE("slope covariance matches the textbook sandwich") {
  const PanelData panel = oracle::random_panel(12, 9, 2, 41);
  const std::vector<int> labels{1, 1, 2, 2, 1, 2, 1, 2, 1, 2, 1, 1};
  const FitResult fit = fit_at(panel, labels, 2, false);
  for (int k = 1; k <= 2; ++k) {
    const SlopeCovariance c = slope_covariance(panel, fit, k);
    CHECK((c.cov - oracle_sandwich(panel, fit, k)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((c.cov - c.cov.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(Eigen::SelfAdjointEigenSolver<MatrixXd>(c.cov).eigenvalues().minCoeff() >= -1e-12);
    CHECK_FALSE(c.small_group);
  }
  CHECK(slope_covariance(panel, fit, 1).n_k == 7);
}

TEST_CASE("zero residuals give zero covariance") {
  MatrixXd th(2, 2);
  th << 1, 2, -1, 0.5;
  const std::vector<int> labels{1, 2, 1, 2, 1, 2};
  const PanelData panel = oracle::grouped_panel(th, labels, 8, 0.0, 3);
  const FitResult fit = fit_at(panel, labels, 2, false);
  CHECK(slope_covariance(panel, fit, 1).cov.cwiseAbs().maxCoeff() < 1e-20);
  const FitResult gfit = fit_at(panel, labels, 2, true);
  const GfeCovariance g = gfe_covariance(panel, gfit, 2);
  CHECK(g.slopes.cov.cwiseAbs().maxCoeff() < 1e-20);
  CHECK(g.mu_se.cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("single-unit group is flagged") {
  const PanelData panel = oracle::random_panel(5, 10, 1, 2);
  const FitResult fit = fit_at(panel, {1, 1, 2, 1, 1}, 2, false);
  const SlopeCovariance c = slope_covariance(panel, fit, 2);
  CHECK(c.small_group);
  CHECK(c.n_k == 1);
}

TEST_CASE("gfe covariance uses group-period demeaned regressors") {
  const PanelData panel = oracle::random_panel(10, 6, 2, 43);
  const std::vector<int> labels{1, 2, 1, 2, 1, 2, 1, 2, 2, 2};
  const FitResult fit = fit_at(panel, labels, 2, true);
  for (int k = 1; k <= 2; ++k) {
    // Build demeaned data and the sandwich on it by hand.
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < 10; ++i) if (labels[i] == k) members.push_back(i);
    const double nk = static_cast<double>(members.size());
    MatrixXd xbar = MatrixXd::Zero(6, 2);
    for (std::size_t i : members) xbar += panel.unit_x(i) / nk;
    CHECK(xbar.allFinite());
    const VectorXd e = residuals(panel, fit.params, fit.grouping);
    MatrixXd xx = MatrixXd::Zero(2, 2), meat = MatrixXd::Zero(2, 2);
    VectorXd omega = VectorXd::Zero(6);
    MatrixXd colsum = MatrixXd::Zero(6, 2);
    for (std::size_t i : members) {
      const MatrixXd xd = panel.unit_x(i) - xbar;
      colsum += xd;
      const VectorXd ei = e.segment(static_cast<Eigen::Index>(i * 6), 6);
      xx += xd.transpose() * xd;
      const VectorXd s = xd.transpose() * ei;
      meat += s * s.transpose();
      omega += ei.cwiseAbs2() / nk;
    }
    CHECK(colsum.cwiseAbs().maxCoeff() < 1e-10);
    const MatrixXd inv = xx.inverse();
    const GfeCovariance g = gfe_covariance(panel, fit, k);
    CHECK((g.slopes.cov - inv * meat * inv).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((g.omega - omega).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((g.mu_se - (omega / nk).cwiseSqrt()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("significance stars") {
  CHECK(significance_stars(2.0) == "**");
  CHECK(significance_stars(-1.7) == "*");
  CHECK(significance_stars(1.645) == "");
  CHECK(significance_stars(2.6) == "***");
  CHECK(significance_stars(std::numeric_limits<double>::infinity()) == "***");
}

TEST_CASE("coef table: t statistics, ordering and degenerate se") {
  MatrixXd th(3, 1);
  th << 1.0, 2.0, 3.0;
  std::vector<int> labels(3, 1);
  labels.insert(labels.end(), 320, 2);
  labels.insert(labels.end(), 94, 3);
  const PanelData panel = oracle::grouped_panel(th, labels, 4, 0.5, 9);
  const FitResult fit = fit_at(panel, labels, 3, false);
  const CoefTable table = coef_table(panel, fit);
  REQUIRE(table.groups.size() == 3);
  CHECK(table.groups[0].n_k == 320);
  CHECK(table.groups[1].n_k == 94);
  CHECK(table.groups[2].n_k == 3);
  CHECK(table.groups[0].label == 2);
  CHECK(table.groups[2].display == 3);
  for (const auto& g : table.groups) {
    CHECK(g.t_stat(0) == g.theta(0) / g.se(0));
    CHECK(g.stars[0] == significance_stars(g.t_stat(0)));
  }

  const std::vector<int> exact_labels{1, 1, 2, 2};
  MatrixXd th2(2, 1);
  th2 << 2.0, 0.0;
  const PanelData exact = oracle::grouped_panel(th2, exact_labels, 5, 0.0, 1);
  const FitResult f2 = fit_at(exact, exact_labels, 2, false);
  const CoefTable t2 = coef_table(exact, f2);
  CHECK(std::isinf(t2.groups[0].t_stat(0)));
  CHECK(t2.groups[0].t_stat(0) > 0);
  CHECK(t2.groups[0].stars[0] == "***");
}

TEST_CASE("coef writers") {
  const PanelData panel = oracle::random_panel(6, 5, 2, 4);
  const FitResult fit = fit_at(panel, {1, 1, 1, 1, 2, 2}, 2, true);
  const CoefTable table = coef_table(panel, fit);
  std::ostringstream csv, txt, gfe;
  write_coef_csv(csv, table);
  write_coef_text(txt, table);
  write_gfe_csv(gfe, table);
  const std::string c = csv.str(), g = gfe.str();
  CHECK(c.rfind("group,n_k,regressor,estimate,se,t,stars\n", 0) == 0);
  CHECK(std::count(c.begin(), c.end(), '\n') == 5);
  CHECK(txt.str().find("(N=4)") != std::string::npos);
  CHECK(g.rfind("group,n_k,period,mu,se\n", 0) == 0);
  CHECK(std::count(g.begin(), g.end(), '\n') == 11);
}

TEST_CASE("covariance diagonal tracks the sampling variance of the slopes") {
  // i.i.d. x and e: Var(theta_hat_j) is close to 1/(N_k T).
  const std::size_t n = 40, t = 25, reps = 400;
  MatrixXd th(1, 2);
  th << 1.0, -1.0;
  std::vector<double> est;
  double mean_var = 0.0;
  for (std::size_t r = 0; r < reps; ++r) {
    const std::vector<int> labels(n, 1);
    const PanelData panel = oracle::grouped_panel(th, labels, t, 1.0, derive_seed(55, r));
    const FitResult fit = fit_at(panel, labels, 1, false);
    est.push_back(fit.params.thetas(0, 0));
    mean_var += slope_covariance(panel, fit, 1).cov(0, 0) / reps;
  }
  double m = 0.0, v = 0.0;
  for (double e : est) m += e / reps;
  for (double e : est) v += (e - m) * (e - m) / (reps - 1);
  const double nominal = 1.0 / static_cast<double>(n * t);
  CHECK(mean_var == doctest::Approx(nominal).epsilon(0.1));
  CHECK(v == doctest::Approx(mean_var).epsilon(0.2));
}

TEST_CASE("covariance scales as 1/T") {
  MatrixXd th(1, 1);
  th << 0.5;
  double short_t = 0.0, long_t = 0.0;
  const int reps = 100;
  for (int r = 0; r < reps; ++r) {
    const std::vector<int> labels(30, 1);
    const PanelData a = oracle::grouped_panel(th, labels, 20, 1.0, derive_seed(7, r));
    const PanelData b = oracle::grouped_panel(th, labels, 40, 1.0, derive_seed(8, r));
    short_t += slope_covariance(a, fit_at(a, labels, 1, false), 1).cov(0, 0) / reps;
    long_t += slope_covariance(b, fit_at(b, labels, 1, false), 1).cov(0, 0) / reps;
  }
  CHECK(long_t / short_t == doctest::Approx(0.5).epsilon(0.1));
}

TEST_CASE("mu standard errors track cross-sectional noise") {
  // y = mu_kt + e with a pure-noise regressor: se(mu) ~ 1/sqrt(N_k).
  const std::size_t n = 50, t = 4;
  MatrixXd th(1, 1);
  th << 0.0;
  const std::vector<int> labels(n, 1);
  double se_mean = 0.0;
  std::vector<double> mu1;
  const int reps = 300;
  for (int r = 0; r < reps; ++r) {
    const PanelData panel = oracle::grouped_panel(th, labels, t, 1.0, derive_seed(9, r));
    const FitResult fit = fit_at(panel, labels, 1, true);
    se_mean += gfe_covariance(panel, fit, 1).mu_se(0) / reps;
    mu1.push_back((*fit.params.mus)(0, 0));
  }
  double m = 0.0, v = 0.0;
  for (double x : mu1) m += x / reps;
  for (double x : mu1) v += (x - m) * (x - m) / (reps - 1);
  CHECK(se_mean == doctest::Approx(1.0 / std::sqrt(double(n))).epsilon(0.1));
  CHECK(std::sqrt(v) == doctest::Approx(se_mean).epsilon(0.15));
}

TEST_CASE("invalid group label") {
  const PanelData panel = oracle::random_panel(4, 5, 1, 1);
  const FitResult fit = fit_at(panel, {1, 2, 1, 2}, 2, false);
  CHECK_THROWS_AS(slope_covariance(panel, fit, 3), Error);
}

}
