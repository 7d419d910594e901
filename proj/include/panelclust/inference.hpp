#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "panelclust/estimator.hpp"
#include "panelclust/panel.hpp"

namespace panelclust {

struct SlopeCovariance {
  Eigen::MatrixXd cov;  // p x p
  std::size_t n_k = 0;
  bool small_group = false;  // N_k == 1: cluster-robust meat has one term
};

// Sandwich (X'X)^-1 [sum_i s_i s_i'] (X'X)^-1 over units of group k, with
// s_i = sum_t x_it e_it. This equals Sigma^-1 Omega Sigma^-1 / (N_k T) for
// the plug-in Sigma and the unit-clustered Omega.
SlopeCovariance slope_covariance(const PanelData& panel, const FitResult& fit, int k);

struct GfeCovariance {
  SlopeCovariance slopes;      // regressors demeaned by group-period means
  Eigen::VectorXd omega;       // T, omega_kt = mean of squared residuals at (k,t)
  Eigen::VectorXd mu_se;       // T, sqrt(omega_kt / N_k)
};

GfeCovariance gfe_covariance(const PanelData& panel, const FitResult& fit, int k);

// Significance marker for a two-sided normal test at 10/5/1%.
std::string significance_stars(double t_stat);

struct CoefGroup {
  int label = 0;        // label in the fit
  int display = 0;      // 1 = largest group
  std::size_t n_k = 0;
  Eigen::VectorXd theta;
  Eigen::VectorXd se;
  Eigen::VectorXd t_stat;
  std::vector<std::string> stars;
  bool small_group = false;
  // GFE fits only.
  Eigen::VectorXd mu;
  Eigen::VectorXd mu_se;
};

struct CoefTable {
  std::vector<std::string> regressors;
  std::vector<std::string> periods;
  std::vector<CoefGroup> groups;  // descending size
};

CoefTable coef_table(const PanelData& panel, const FitResult& fit);

// group,n_k,regressor,estimate,se,t,stars
void write_coef_csv(std::ostream& out, const CoefTable& table);
// Aligned text: estimates with stars, standard errors in parentheses below.
void write_coef_text(std::ostream& out, const CoefTable& table);
// group,n_k,period,mu,se (GFE fits)
void write_gfe_csv(std::ostream& out, const CoefTable& table);

}  // namespace panelclust
