#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "panelclust/estimator.hpp"
#include "panelclust/panel.hpp"

namespace panelclust {

enum class PenaltyVariant { kBN, kBIC, kMIC1, kMIC2, kCustom };

struct PenaltyKind {
  PenaltyVariant variant = PenaltyVariant::kBN;
  double custom_h = 0.0;  // used only by kCustom, must be > 0

  static PenaltyKind bn() { return {PenaltyVariant::kBN, 0.0}; }
  static PenaltyKind bic() { return {PenaltyVariant::kBIC, 0.0}; }
  static PenaltyKind mic1() { return {PenaltyVariant::kMIC1, 0.0}; }
  static PenaltyKind mic2() { return {PenaltyVariant::kMIC2, 0.0}; }
  static PenaltyKind custom(double h);
};

// "bn", "bic", "mic1", "mic2" or "custom:<h>".
PenaltyKind parse_penalty(std::string_view name);
std::string penalty_name(const PenaltyKind& kind);

// h_BN  = ln(min(N,T)) / min(N,T)
// h_BIC = ln(NT) / (NT)
// h_MIC1 = ln(N)/N if N <= T, else 0.5 ln(NT)/N
// h_MIC2 = 2 ln(N)/(NT) if N <= T, else ln(NT)/(NT)
// Throws kDomain when N < 2 or T < 2.
double penalty_value(const PenaltyKind& kind, std::size_t n, std::size_t t);

// N + pK, or N + (p + T)K with grouped fixed effects.
std::size_t n_params(int k, std::size_t n, std::size_t p, std::size_t t, bool gfe);

// NT sigma2_hat(K_max) / (NT - n(K_max)). Throws kInfeasibleKmax when
// NT <= n(K_max).
double sigma_tilde2(const FitResult& fit_at_kmax, std::size_t n, std::size_t t, std::size_t p,
                    int k_max, bool gfe);

struct ICRow {
  int k = 0;
  double sigma2_hat = 0.0;
  std::size_t n_params = 0;
  double h = 0.0;
  double ic = 0.0;
  bool failed = false;  // every start degenerate; ic = +inf
};

struct ICTable {
  std::vector<ICRow> rows;
  int selected_k = 0;
  int k_min = 0;
  int k_max = 0;
  double sigma_tilde2 = 0.0;
  std::string penalty;
};

struct SelectOptions {
  // Drop the K-invariant N term from n(K) in the criterion. sigma_tilde2
  // always uses the full count.
  bool exclude_unit_term = false;
};

// IC(K) = sigma2_hat(K) + n(K) sigma_tilde2 h over fits for K = k_min.. in
// order, with sigma_tilde2 from the last (K_max) fit. Argmin ties go to the
// smallest K; failed K values are reported but never selected.
ICTable evaluate_ic(const std::vector<std::optional<FitResult>>& fits, int k_min,
                    const PanelData& panel, const PenaltyKind& kind, bool gfe,
                    const SelectOptions& options = {});

ICTable select_k(const PanelData& panel, int k_min, int k_max, const PenaltyKind& kind,
                 const FitConfig& config, const SelectOptions& options = {});

// Throws kInfeasibleKmax before any fitting when NT <= n(K_max).
void check_kmax_feasible(const PanelData& panel, int k_max, bool gfe);

}  // namespace panelclust
