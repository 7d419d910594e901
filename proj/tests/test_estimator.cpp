#include <algorithm>
#include <cmath>
#include <random>

#include <doctest.h>

#include "oracles.hpp"
#include "panelclust/error.hpp"
#include "panelclust/estimator.hpp"
#include "panelclust/random.hpp"

using namespace panelclust;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd three_thetas() {
  MatrixXd th(3, 2);
  th << 3, -3, 1, -2, 4, -1;
  return th;
}

std::vector<int> blocks(std::initializer_list<int> sizes) {
  std::vector<int> labels;
  int g = 1;
  for (int s : sizes) {
    labels.insert(labels.end(), static_cast<std::size_t>(s), g);
    ++g;
  }
  return labels;
}

}  // namespace

TEST_SUITE("estimator") {

TEST_CASE("group_ols: K = 1 reproduces noiseless slopes and textbook pooled OLS") {
  MatrixXd th(1, 3);
  th << 0.5, -1.25, 2.0;
  const PanelData exact = oracle::grouped_panel(th, std::vector<int>(8, 1), 6, 0.0, 1);
  const GroupParams p0 = group_ols(exact, Grouping(std::vector<int>(8, 1), 1), false);
  CHECK((p0.thetas - th).cwiseAbs().maxCoeff() < 1e-10);

  const PanelData noisy = oracle::random_panel(9, 7, 3, 2);
  const GroupParams p1 = group_ols(noisy, Grouping(std::vector<int>(9, 1), 1), false);
  const VectorXd ref = oracle::ols(noisy.x(), noisy.y());
  CHECK((p1.thetas.row(0).transpose() - ref).cwiseAbs().maxCoeff() < 1e-10);
  CHECK_FALSE(p1.gfe());
}

TEST_CASE("group_ols: each group matches OLS on its stacked rows") {
  const PanelData panel = oracle::random_panel(10, 5, 2, 3);
  const std::vector<int> labels{1, 2, 3, 1, 2, 3, 1, 2, 3, 3};
  const GroupParams p = group_ols(panel, Grouping(labels, 3), false);
  for (int g = 1; g <= 3; ++g) {
    auto [x, y] = oracle::stack_group(panel, labels, g);
    CHECK((p.thetas.row(g - 1).transpose() - oracle::ols(x, y)).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("group_ols: GFE with pure group-time effects gives cross-sectional means") {
  // y = mu_kt + noise; x carries no signal so theta_hat is near zero but the
  // identity mu_hat = ybar_kt - xbar_kt' theta_hat holds exactly.
  const PanelData panel = oracle::random_panel(6, 4, 1, 9);
  const std::vector<int> labels{1, 1, 1, 2, 2, 2};
  const GroupParams p = group_ols(panel, Grouping(labels, 2), true);
  REQUIRE(p.gfe());
  for (int g = 1; g <= 2; ++g) {
    for (std::size_t t = 0; t < 4; ++t) {
      double ybar = 0.0, xbar = 0.0;
      for (std::size_t i = 0; i < 6; ++i) {
        if (labels[i] != g) continue;
        ybar += panel.y(i, t) / 3.0;
        xbar += panel.x(i, t, 0) / 3.0;
      }
      CHECK((*p.mus)(g - 1, static_cast<Eigen::Index>(t)) ==
            doctest::Approx(ybar - xbar * p.thetas(g - 1, 0)).epsilon(1e-12));
    }
  }
  // GFE slopes equal pooled OLS of group-period demeaned data.
  for (int g = 1; g <= 2; ++g) {
    MatrixXd xd(12, 1);
    VectorXd yd(12);
    Eigen::Index r = 0;
    for (std::size_t i = 0; i < 6; ++i) {
      if (labels[i] != g) continue;
      for (std::size_t t = 0; t < 4; ++t, ++r) {
        double ybar = 0.0, xbar = 0.0;
        for (std::size_t j = 0; j < 6; ++j) {
          if (labels[j] != g) continue;
          ybar += panel.y(j, t) / 3.0;
          xbar += panel.x(j, t, 0) / 3.0;
        }
        yd(r) = panel.y(i, t) - ybar;
        xd(r, 0) = panel.x(i, t, 0) - xbar;
      }
    }
    CHECK(p.thetas(g - 1, 0) == doctest::Approx(oracle::ols(xd, yd)(0)).epsilon(1e-10));
  }
}

TEST_CASE("group_ols: errors") {
  const PanelData panel = oracle::random_panel(4, 3, 2, 1);
  try {
    group_ols(panel, Grouping({1, 1, 1, 1}, 2), false);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kEmptyGroup);
  }
  // One unit with T = 3 and p = 2 is fine; a zero column is not.
  Eigen::MatrixXd x = panel.x();
  x.col(1).setZero();
  const PanelData singular(4, 3, panel.y(), x);
  try {
    group_ols(singular, Grouping({1, 2, 1, 2}, 2), false);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kSingularDesign);
    CHECK(std::string(e.what()).find("group 1") != std::string::npos);
  }
}

TEST_CASE("assign: exact unit, tie rule and brute-force agreement") {
  const MatrixXd th = three_thetas();
  const PanelData exact = oracle::grouped_panel(th, {2, 1, 3}, 5, 0.0, 4);
  GroupParams params{th, std::nullopt};
  CHECK(assign(exact, params).labels() == std::vector<int>{2, 1, 3});

  MatrixXd dup(3, 2);
  dup << 3, -3, 1, -2, 1, -2;
  GroupParams dup_params{dup, std::nullopt};
  const PanelData from3 = oracle::grouped_panel(dup, {3, 3, 2}, 5, 0.3, 5);
  CHECK(assign(from3, dup_params).labels() == std::vector<int>{2, 2, 2});

  std::mt19937_64 rng(6);
  std::normal_distribution<double> z;
  for (int rep = 0; rep < 50; ++rep) {
    const PanelData panel = oracle::random_panel(5, 4, 2, 100 + rep);
    MatrixXd t2(2, 2);
    for (int i = 0; i < 4; ++i) t2(i / 2, i % 2) = z(rng);
    CHECK(assign(panel, GroupParams{t2, std::nullopt}).labels() == oracle::brute_assign(panel, t2));
  }
}

TEST_CASE("unit_group_ssr and total_ssr agree with residuals") {
  const PanelData panel = oracle::random_panel(6, 5, 2, 8);
  const Grouping g({1, 2, 1, 2, 2, 1}, 2);
  const GroupParams p = group_ols(panel, g, true);
  const MatrixXd cost = unit_group_ssr(panel, p);
  const VectorXd e = residuals(panel, p, g);
  double total = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    const double own = e.segment(static_cast<Eigen::Index>(i * 5), 5).squaredNorm();
    CHECK(cost(static_cast<Eigen::Index>(i), g[i] - 1) == doctest::Approx(own).epsilon(1e-10));
    total += own;
  }
  CHECK(total_ssr(panel, p, g) == doctest::Approx(total).epsilon(1e-12));
}

TEST_CASE("kmeans_once: fixed point returns after one pass") {
  const PanelData panel = oracle::grouped_panel(three_thetas(), blocks({4, 4, 4}), 10, 0.0, 7);
  const Grouping truth(blocks({4, 4, 4}), 3);
  FitConfig cfg;
  cfg.k = 3;
  const FitResult r = kmeans_once(panel, cfg, truth);
  CHECK(r.grouping == truth);
  CHECK(r.iterations_used == 1);
  CHECK(r.converged);
  CHECK(r.ssr < 1e-18);
}

TEST_CASE("kmeans_once: two swapped units are repaired on noiseless data") {
  auto labels = blocks({5, 5, 5});
  const PanelData panel = oracle::grouped_panel(three_thetas(), labels, 12, 0.0, 8);
  std::swap(labels[0], labels[5]);
  FitConfig cfg;
  cfg.k = 3;
  const FitResult r = kmeans_once(panel, cfg, Grouping(labels, 3));
  CHECK(r.ssr < 1e-16);
  CHECK(r.grouping.labels() == blocks({5, 5, 5}));
}

TEST_CASE("kmeans_once: SSR history is non-increasing") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const PanelData panel = oracle::random_panel(20, 6, 2, seed);
    FitConfig cfg;
    cfg.k = 3;
    cfg.gfe = seed % 2 == 1;
    try {
      const FitResult r = kmeans_once(panel, cfg, initial_grouping(20, 3, seed, 0));
      for (std::size_t s = 1; s < r.ssr_history.size(); ++s) {
        CHECK(r.ssr_history[s] <= r.ssr_history[s - 1] * (1 + 1e-12));
      }
      CHECK(r.ssr <= r.ssr_history.front() * (1 + 1e-12));
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kDegenerateStart);
    }
  }
}

TEST_CASE("kmeans_once: max_iter binding leaves converged false") {
  const PanelData panel = oracle::random_panel(30, 5, 2, 77);
  FitConfig cfg;
  cfg.k = 3;
  cfg.max_iter = 1;
  cfg.ssr_tol = 0.0;
  const Grouping init = initial_grouping(30, 3, 1, 0);
  const FitResult r = kmeans_once(panel, cfg, init);
  CHECK_FALSE(r.converged);
  CHECK(r.iterations_used == 1);
  // Parameters and memberships still belong together.
  CHECK(r.ssr == doctest::Approx(total_ssr(panel, r.params, r.grouping)).epsilon(1e-12));
}

TEST_CASE("kmeans_once: label permutation of the start permutes the answer") {
  const PanelData panel = oracle::random_panel(15, 6, 2, 31);
  FitConfig cfg;
  cfg.k = 3;
  const Grouping init = initial_grouping(15, 3, 4, 0);
  std::vector<int> perm_labels;
  const int perm[3] = {3, 1, 2};
  for (int l : init.labels()) perm_labels.push_back(perm[l - 1]);
  const FitResult a = kmeans_once(panel, cfg, init);
  const FitResult b = kmeans_once(panel, cfg, Grouping(perm_labels, 3));
  CHECK(a.ssr == doctest::Approx(b.ssr).epsilon(1e-12));
  CHECK(a.sigma2_hat == doctest::Approx(b.sigma2_hat).epsilon(1e-12));
  CHECK(oracle::same_partition(a.grouping.labels(), b.grouping.labels()));
  for (std::size_t i = 0; i < 15; ++i) CHECK(b.grouping[i] == perm[a.grouping[i] - 1]);
}

TEST_CASE("fit: residual orthogonality and sigma2 definition") {
  const PanelData panel = oracle::random_panel(24, 8, 2, 12);
  for (bool gfe : {false, true}) {
    FitConfig cfg;
    cfg.k = 3;
    cfg.gfe = gfe;
    cfg.n_starts = 20;
    const FitResult r = fit(panel, cfg);
    CHECK(r.sigma2_hat == r.ssr / static_cast<double>(panel.n_obs()));
    const VectorXd e = residuals(panel, r.params, r.grouping);
    const auto sizes = r.grouping.group_sizes();
    for (int g = 1; g <= 3; ++g) {
      Eigen::Vector2d score = Eigen::Vector2d::Zero();
      VectorXd mean_e = VectorXd::Zero(8);
      for (std::size_t i = 0; i < 24; ++i) {
        if (r.grouping[i] != g) continue;
        for (std::size_t t = 0; t < 8; ++t) {
          const auto row = static_cast<Eigen::Index>(i * 8 + t);
          score += panel.x().row(row).transpose() * e(row);
          mean_e(static_cast<Eigen::Index>(t)) += e(row) / static_cast<double>(sizes[g - 1]);
        }
      }
      // With GFE the raw score equals the demeaned-regressor score because
      // per-(k,t) residual means vanish.
      CHECK(score.norm() <= 1e-8 * (1.0 + panel.x().transpose().cwiseAbs().rowwise().sum().maxCoeff()));
      if (gfe) CHECK(mean_e.cwiseAbs().maxCoeff() < 1e-8);
    }
  }
}

TEST_CASE("fit: single start equals kmeans_once from the derived start") {
  const PanelData panel = oracle::random_panel(12, 6, 2, 14);
  FitConfig cfg;
  cfg.k = 2;
  cfg.n_starts = 1;
  cfg.seed = 99;
  const FitResult a = fit(panel, cfg);
  const FitResult b = kmeans_once(panel, cfg, initial_grouping(12, 2, 99, 0));
  CHECK(a.ssr == b.ssr);
  CHECK(a.grouping == b.grouping);
  CHECK(a.start_index_of_best == 0);
}

TEST_CASE("fit: N = 6, K = 2 reaches the exhaustive minimum") {
  MatrixXd th(2, 1);
  th << 2.0, -2.0;
  const PanelData panel = oracle::grouped_panel(th, {1, 2, 1, 2, 2, 1}, 20, 1.0, 21);
  FitConfig cfg;
  cfg.k = 2;
  cfg.n_starts = 50;
  CHECK(fit(panel, cfg).ssr == doctest::Approx(oracle::exhaustive_min_ssr(panel, 2)).epsilon(1e-10));
}

TEST_CASE("fit: deterministic across runs and thread counts") {
  const PanelData panel = oracle::random_panel(30, 10, 2, 15);
  for (bool gfe : {false, true}) {
    FitConfig cfg;
    cfg.k = 3;
    cfg.gfe = gfe;
    cfg.n_starts = 40;
    cfg.seed = 5;
    const FitResult a = fit(panel, cfg);
    cfg.jobs = 4;
    const FitResult b = fit(panel, cfg);
    CHECK(a.ssr == b.ssr);
    CHECK(a.grouping == b.grouping);
    CHECK(a.params.thetas == b.params.thetas);
    CHECK(a.start_index_of_best == b.start_index_of_best);
    CHECK(a.ssr_history == b.ssr_history);
  }
}

TEST_CASE("fit: configuration errors") {
  const PanelData panel = oracle::random_panel(3, 5, 1, 1);
  FitConfig cfg;
  cfg.k = 4;
  try {
    fit(panel, cfg);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInvalidConfig);
  }
  cfg.k = 2;
  cfg.n_starts = 0;
  CHECK_THROWS_AS(fit(panel, cfg), Error);

  // p = 3 with T = 1: any split of 4 units leaves a group with fewer than 3 rows.
  const PanelData flat = oracle::random_panel(4, 1, 3, 1);
  cfg.n_starts = 5;
  try {
    fit(flat, cfg);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kEstimationFailed);
  }
}

TEST_CASE("fit_k_range matches separate fits") {
  const PanelData panel = oracle::random_panel(15, 6, 2, 16);
  FitConfig cfg;
  cfg.n_starts = 15;
  cfg.seed = 3;
  const auto range = fit_k_range(panel, 2, 4, cfg);
  REQUIRE(range.size() == 3);
  for (int k = 2; k <= 4; ++k) {
    cfg.k = k;
    const FitResult single = fit(panel, cfg);
    REQUIRE(range[static_cast<std::size_t>(k - 2)].has_value());
    CHECK(range[static_cast<std::size_t>(k - 2)]->ssr == single.ssr);
    CHECK(range[static_cast<std::size_t>(k - 2)]->grouping == single.grouping);
  }
}

TEST_CASE("initial_grouping: every label present and reproducible") {
  for (std::size_t s = 0; s < 100; ++s) {
    const Grouping g = initial_grouping(5, 4, 8, s);
    CHECK(g.all_nonempty());
    CHECK(g == initial_grouping(5, 4, 8, s));
  }
  CHECK(initial_grouping(4, 4, 1, 0).all_nonempty());
}

TEST_CASE("match_labels") {
  const Grouping truth({1, 1, 2, 2, 3, 3}, 3);
  const LabelMatch id = match_labels(truth, truth);
  CHECK(id.permutation == std::vector<int>{1, 2, 3});
  CHECK(id.misclassified == 0);

  const LabelMatch swapped = match_labels(Grouping({2, 2, 1, 1, 3, 3}, 3), truth);
  CHECK(swapped.permutation == std::vector<int>{2, 1, 3});
  CHECK(swapped.misclassified == 0);

  std::mt19937_64 rng(17);
  for (int rep = 0; rep < 200; ++rep) {
    const int k = rep % 2 == 0 ? 3 : 9;
    std::uniform_int_distribution<int> u(1, k);
    std::vector<int> a(30), b(30);
    for (auto& v : a) v = u(rng);
    for (auto& v : b) v = u(rng);
    const LabelMatch m = match_labels(Grouping(a, k), Grouping(b, k));
    std::size_t miss = 0;
    for (std::size_t i = 0; i < 30; ++i) miss += m.permutation[a[i] - 1] != b[i];
    CHECK(miss == m.misclassified);
    if (k == 3) CHECK(m.misclassified == oracle::brute_misclassified(a, b, 3));
  }
  CHECK_THROWS_AS(match_labels(Grouping({1, 2}, 2), Grouping({1, 2, 1}, 2)), Error);
}

TEST_CASE("match_labels: Hungarian path agrees with enumeration at K = 9") {
  std::mt19937_64 rng(18);
  std::uniform_int_distribution<int> u(1, 9);
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<int> a(40), b(40);
    for (auto& v : a) v = u(rng);
    for (auto& v : b) v = u(rng);
    CHECK(match_labels(Grouping(a, 9), Grouping(b, 9)).misclassified ==
          oracle::brute_misclassified(a, b, 9));
  }
}

TEST_CASE("order_by_size") {
  const auto [g, map] = order_by_size(Grouping({1, 2, 2, 3, 3, 3, 2, 2}, 3));
  CHECK(g.labels() == std::vector<int>{3, 1, 1, 2, 2, 2, 1, 1});
  CHECK(map == std::vector<int>{3, 1, 2});
}

TEST_CASE("derived seeds differ across indices") {
  CHECK(derive_seed(1, 0) != derive_seed(1, 1));
  CHECK(derive_seed(1, 0) != derive_seed(2, 0));
  CHECK(derive_seed(1, 0) == derive_seed(1, 0));
}

}
