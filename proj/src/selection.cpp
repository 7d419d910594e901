#include "panelclust/selection.hpp"

#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "panelclust/error.hpp"

namespace panelclust {

PenaltyKind PenaltyKind::custom(double h) {
  if (!(h > 0.0) || !std::isfinite(h)) {
    throw Error(ErrorCode::kDomain, fmt::format("custom penalty must be positive, got {}", h));
  }
  return {PenaltyVariant::kCustom, h};
}

PenaltyKind parse_penalty(std::string_view name) {
  if (name == "bn") return PenaltyKind::bn();
  if (name == "bic") return PenaltyKind::bic();
  if (name == "mic1") return PenaltyKind::mic1();
  if (name == "mic2") return PenaltyKind::mic2();
  constexpr std::string_view kCustom = "custom:";
  if (name.substr(0, kCustom.size()) == kCustom) {
    const std::string value(name.substr(kCustom.size()));
    std::size_t used = 0;
    double h = 0.0;
    try {
      h = std::stod(value, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != value.size()) {
      throw Error(ErrorCode::kInvalidConfig, fmt::format("bad custom penalty '{}'", name));
    }
    return PenaltyKind::custom(h);
  }
  throw Error(ErrorCode::kInvalidConfig,
              fmt::format("unknown penalty '{}' (expected bn, bic, mic1, mic2, custom:<h>)", name));
}

std::string penalty_name(const PenaltyKind& kind) {
  switch (kind.variant) {
    case PenaltyVariant::kBN: return "bn";
    case PenaltyVariant::kBIC: return "bic";
    case PenaltyVariant::kMIC1: return "mic1";
    case PenaltyVariant::kMIC2: return "mic2";
    case PenaltyVariant::kCustom: return fmt::format("custom:{}", kind.custom_h);
  }
  return "unknown";
}

double penalty_value(const PenaltyKind& kind, std::size_t n, std::size_t t) {
  if (n < 2 || t < 2) {
    throw Error(ErrorCode::kDomain, fmt::format("penalty needs N >= 2 and T >= 2 (N={}, T={})", n, t));
  }
  const double nd = static_cast<double>(n);
  const double td = static_cast<double>(t);
  const double nt = nd * td;
  switch (kind.variant) {
    case PenaltyVariant::kBN: {
      const double m = std::min(nd, td);
      return std::log(m) / m;
    }
    case PenaltyVariant::kBIC:
      return std::log(nt) / nt;
    case PenaltyVariant::kMIC1:
      return n <= t ? std::log(nd) / nd : 0.5 * std::log(nt) / nd;
    case PenaltyVariant::kMIC2:
      return n <= t ? 2.0 * std::log(nd) / nt : std::log(nt) / nt;
    case PenaltyVariant::kCustom:
      return kind.custom_h;
  }
  throw Error(ErrorCode::kDomain, "unknown penalty variant");
}

std::size_t n_params(int k, std::size_t n, std::size_t p, std::size_t t, bool gfe) {
  if (k < 1 || n < 1 || p < 1 || t < 1) {
    throw Error(ErrorCode::kDomain, "parameter count needs K, N, p, T >= 1");
  }
  const auto kk = static_cast<std::size_t>(k);
  return gfe ? n + (p + t) * kk : n + p * kk;
}

void check_kmax_feasible(const PanelData& panel, int k_max, bool gfe) {
  const std::size_t count =
      n_params(k_max, panel.n_units(), panel.n_regressors(), panel.n_periods(), gfe);
  if (panel.n_obs() <= count) {
    throw Error(ErrorCode::kInfeasibleKmax,
                fmt::format("NT={} does not exceed n(K_max={})={}; use a smaller K_max or a "
                            "longer panel",
                            panel.n_obs(), k_max, count));
  }
}

double sigma_tilde2(const FitResult& fit_at_kmax, std::size_t n, std::size_t t, std::size_t p,
                    int k_max, bool gfe) {
  const std::size_t nt = n * t;
  const std::size_t count = n_params(k_max, n, p, t, gfe);
  if (nt <= count) {
    throw Error(ErrorCode::kInfeasibleKmax,
                fmt::format("NT={} does not exceed n(K_max={})={}", nt, k_max, count));
  }
  const double ntd = static_cast<double>(nt);
  return ntd * fit_at_kmax.sigma2_hat / (ntd - static_cast<double>(count));
}

ICTable evaluate_ic(const std::vector<std::optional<FitResult>>& fits, int k_min,
                    const PanelData& panel, const PenaltyKind& kind, bool gfe,
                    const SelectOptions& options) {
  if (fits.empty()) throw Error(ErrorCode::kInvalidConfig, "no fits to evaluate");
  const int k_max = k_min + static_cast<int>(fits.size()) - 1;
  const std::size_t n = panel.n_units();
  const std::size_t t = panel.n_periods();
  const std::size_t p = panel.n_regressors();
  if (!fits.back()) {
    throw Error(ErrorCode::kEstimationFailed,
                fmt::format("K_max={} fit failed; sigma_tilde2 is undefined", k_max));
  }
  ICTable table;
  table.k_min = k_min;
  table.k_max = k_max;
  table.penalty = penalty_name(kind);
  table.sigma_tilde2 = sigma_tilde2(*fits.back(), n, t, p, k_max, gfe);
  const double h = penalty_value(kind, n, t);
  double best = std::numeric_limits<double>::infinity();
  for (int k = k_min; k <= k_max; ++k) {
    const auto& fit = fits[static_cast<std::size_t>(k - k_min)];
    ICRow row;
    row.k = k;
    row.h = h;
    row.n_params = n_params(k, n, p, t, gfe) - (options.exclude_unit_term ? n : 0);
    if (fit) {
      row.sigma2_hat = fit->sigma2_hat;
      row.ic = row.sigma2_hat + static_cast<double>(row.n_params) * table.sigma_tilde2 * h;
      if (row.ic < best) {
        best = row.ic;
        table.selected_k = k;
      }
    } else {
      row.failed = true;
      row.sigma2_hat = std::numeric_limits<double>::quiet_NaN();
      row.ic = std::numeric_limits<double>::infinity();
    }
    table.rows.push_back(row);
  }
  return table;
}

ICTable select_k(const PanelData& panel, int k_min, int k_max, const PenaltyKind& kind,
                 const FitConfig& config, const SelectOptions& options) {
  check_kmax_feasible(panel, k_max, config.gfe);
  const auto fits = fit_k_range(panel, k_min, k_max, config);
  return evaluate_ic(fits, k_min, panel, kind, config.gfe, options);
}

}  // namespace panelclust
