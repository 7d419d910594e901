#include "cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <openssl/evp.h>

#include "panelclust/error.hpp"
#include "panelclust/estimator.hpp"
#include "panelclust/inference.hpp"
#include "panelclust/panel.hpp"
#include "panelclust/random.hpp"
#include "panelclust/selection.hpp"
#include "panelclust/simulate.hpp"

namespace panelclust::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Shortest round-trip decimal; non-finite values become inf/-inf/nan.
std::string num(double v) { return fmt::format("{}", v); }

json json_num(double v) {
  if (std::isfinite(v)) return v;
  return num(v);
}

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr);
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, fmt::format("cannot open '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, fmt::format("cannot write '{}'", path.string()));
  out << content;
}

class PhaseTimer {
 public:
  void mark(const std::string& phase) {
    const auto now = std::chrono::steady_clock::now();
    timings_[phase] = std::chrono::duration<double>(now - last_).count();
    last_ = now;
  }
  const std::map<std::string, double>& timings() const { return timings_; }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
  std::map<std::string, double> timings_;
};

// Wall-clock timings live only here; every other output is a pure function
// of `inputs` and the input files.
void write_manifest(const fs::path& dir, const std::string& command, const json& inputs,
                    const std::string& input_bytes, std::uint64_t seed, const PhaseTimer& timer) {
  json manifest;
  manifest["artifact_version"] = kVersion;
  manifest["command"] = command;
  manifest["config_hash"] = sha256_hex(inputs.dump() + '\n' + input_bytes);
  manifest["seed"] = seed;
  manifest["inputs"] = inputs;
  manifest["timings"] = timer.timings();
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::uint64_t default_seed() {
  if (const char* env = std::getenv("PANELCLUST_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kInvalidConfig, fmt::format("PANELCLUST_SEED='{}' is not an integer", env));
    }
  }
  return 0;
}

struct Settings {
  std::string config;
  std::string data;
  std::string unit = "unit";
  std::string period = "period";
  std::string outcome = "y";
  std::vector<std::string> regressors;
  std::string out;
  bool within = false;
  bool gfe = false;
  int k = 0;
  int kmin = 2;
  int kmax = 0;
  std::string penalty;
  std::size_t starts = 1000;
  std::size_t max_iter = 1000;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  bool exclude_unit_term = false;
  std::size_t reps = 0;
};

struct Options {
  std::map<std::string, CLI::Option*> by_key;
};

void add_data_options(CLI::App* cmd, Settings& s, Options& o) {
  o.by_key["config"] = cmd->add_option("--config", s.config, "JSON file with defaults for any flag");
  o.by_key["data"] = cmd->add_option("--data", s.data, "long-format panel CSV");
  o.by_key["unit"] = cmd->add_option("--unit", s.unit, "unit id column");
  o.by_key["period"] = cmd->add_option("--period", s.period, "period column");
  o.by_key["outcome"] = cmd->add_option("--outcome", s.outcome, "outcome column");
  o.by_key["regressors"] =
      cmd->add_option("--regressors", s.regressors, "regressor columns")->delimiter(',');
  o.by_key["out"] = cmd->add_option("--out", s.out, "output directory");
  o.by_key["within"] = cmd->add_flag("--within", s.within, "demean each unit over time first");
  o.by_key["jobs"] = cmd->add_option("--jobs", s.jobs, "worker threads");
  o.by_key["seed"] = cmd->add_option("--seed", s.seed, "random seed (env PANELCLUST_SEED)");
}

void add_fit_options(CLI::App* cmd, Settings& s, Options& o) {
  o.by_key["gfe"] = cmd->add_flag("--gfe", s.gfe, "grouped fixed effects");
  o.by_key["starts"] = cmd->add_option("--starts", s.starts, "random initializations");
  o.by_key["max_iter"] = cmd->add_option("--max-iter", s.max_iter, "iterations per start");
}

template <class T>
void take(const json& cfg, const char* key, const Options& o, T& value) {
  const auto it = o.by_key.find(key);
  const bool given = it != o.by_key.end() && it->second->count() > 0;
  if (!given && cfg.contains(key)) value = cfg.at(key).get<T>();
}

// Flags override the config file, which overrides built-in defaults.
void apply_config(Settings& s, const Options& o) {
  if (o.by_key.at("seed")->count() == 0) s.seed = default_seed();
  if (s.config.empty()) return;
  json cfg;
  try {
    cfg = json::parse(read_file(s.config));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, fmt::format("config '{}': {}", s.config, e.what()));
  }
  try {
    take(cfg, "data", o, s.data);
    take(cfg, "unit", o, s.unit);
    take(cfg, "period", o, s.period);
    take(cfg, "outcome", o, s.outcome);
    take(cfg, "regressors", o, s.regressors);
    take(cfg, "out", o, s.out);
    take(cfg, "within", o, s.within);
    take(cfg, "jobs", o, s.jobs);
    take(cfg, "seed", o, s.seed);
    take(cfg, "gfe", o, s.gfe);
    take(cfg, "starts", o, s.starts);
    take(cfg, "max_iter", o, s.max_iter);
    take(cfg, "k", o, s.k);
    take(cfg, "kmin", o, s.kmin);
    take(cfg, "kmax", o, s.kmax);
    take(cfg, "penalty", o, s.penalty);
    take(cfg, "exclude_unit_term", o, s.exclude_unit_term);
    take(cfg, "reps", o, s.reps);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, fmt::format("config '{}': {}", s.config, e.what()));
  }
}

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::kInvalidConfig, what);
}

json data_inputs(const Settings& s) {
  return {{"data", fs::path(s.data).filename().string()},
          {"unit", s.unit},
          {"period", s.period},
          {"outcome", s.outcome},
          {"regressors", s.regressors},
          {"within", s.within}};
}

PanelData load(const Settings& s, std::string& bytes) {
  require(!s.data.empty(), "--data is required");
  require(!s.regressors.empty(), "--regressors is required");
  require(!s.out.empty(), "--out is required");
  bytes = read_file(s.data);
  std::istringstream in(bytes);
  PanelData panel = read_panel_csv(in, CsvSchema{s.unit, s.period, s.outcome, s.regressors});
  if (s.within) panel = within_transform(panel);
  return panel;
}

FitConfig fit_config(const Settings& s, int k) {
  FitConfig cfg;
  cfg.k = k;
  cfg.gfe = s.gfe;
  cfg.n_starts = s.starts;
  cfg.max_iter = s.max_iter;
  cfg.seed = s.seed;
  cfg.jobs = s.jobs;
  return cfg;
}

std::string grouping_csv(const PanelData& panel, const Grouping& grouping) {
  std::ostringstream out;
  out << "unit,group\n";
  for (std::size_t i = 0; i < panel.n_units(); ++i) {
    out << panel.unit_ids()[i] << ',' << grouping[i] << '\n';
  }
  return out.str();
}

json fit_json(const FitResult& fit, const CoefTable& table, const FitConfig& cfg) {
  json j;
  j["k"] = cfg.k;
  j["gfe"] = cfg.gfe;
  j["ssr"] = json_num(fit.ssr);
  j["sigma2_hat"] = json_num(fit.sigma2_hat);
  j["converged"] = fit.converged;
  j["iterations_used"] = fit.iterations_used;
  j["start_index_of_best"] = fit.start_index_of_best;
  j["degenerate_starts"] = fit.degenerate_starts;
  j["n_starts"] = cfg.n_starts;
  json groups = json::array();
  for (const auto& g : table.groups) {
    json row;
    row["group"] = g.display;
    row["n_k"] = g.n_k;
    row["small_group"] = g.small_group;
    row["theta"] = std::vector<double>(g.theta.data(), g.theta.data() + g.theta.size());
    json se = json::array();
    json ts = json::array();
    for (Eigen::Index r = 0; r < g.se.size(); ++r) {
      se.push_back(json_num(g.se(r)));
      ts.push_back(json_num(g.t_stat(r)));
    }
    row["se"] = se;
    row["t_stat"] = ts;
    if (g.mu.size() > 0) {
      row["mu"] = std::vector<double>(g.mu.data(), g.mu.data() + g.mu.size());
      row["mu_se"] = std::vector<double>(g.mu_se.data(), g.mu_se.data() + g.mu_se.size());
    }
    groups.push_back(row);
  }
  j["groups"] = groups;
  return j;
}

int cmd_fit(Settings& s, const Options& o, std::ostream& out) {
  apply_config(s, o);
  require(s.k >= 1, "--k must be at least 1");
  PhaseTimer timer;
  std::string bytes;
  const PanelData panel = load(s, bytes);
  timer.mark("load");
  const FitConfig cfg = fit_config(s, s.k);
  const FitResult fit = panelclust::fit(panel, cfg);
  const CoefTable table = coef_table(panel, fit);
  timer.mark("estimate");

  const fs::path dir(s.out);
  fs::create_directories(dir);
  std::ostringstream coef_csv;
  write_coef_csv(coef_csv, table);
  write_file(dir / "coefficients.csv", coef_csv.str());
  std::ostringstream coef_txt;
  write_coef_text(coef_txt, table);
  write_file(dir / "coefficients.txt", coef_txt.str());
  if (cfg.gfe) {
    std::ostringstream gfe_csv;
    write_gfe_csv(gfe_csv, table);
    write_file(dir / "gfe.csv", gfe_csv.str());
  }
  write_file(dir / "grouping.csv", grouping_csv(panel, order_by_size(fit.grouping).first));
  write_file(dir / "fit.json", fit_json(fit, table, cfg).dump(2) + "\n");
  timer.mark("write");

  json inputs = data_inputs(s);
  inputs.update({{"k", s.k}, {"gfe", s.gfe}, {"starts", s.starts}, {"max_iter", s.max_iter}});
  write_manifest(dir, "fit", inputs, bytes, s.seed, timer);
  out << coef_txt.str();
  return 0;
}

std::string ic_csv(const ICTable& table) {
  std::ostringstream out;
  out << "k,sigma2_hat,n_params,h,ic,failed,selected\n";
  for (const auto& r : table.rows) {
    out << fmt::format("{},{},{},{},{},{},{}\n", r.k, num(r.sigma2_hat), r.n_params, num(r.h),
                       num(r.ic), r.failed ? 1 : 0, r.k == table.selected_k ? 1 : 0);
  }
  return out.str();
}

json ic_json(const ICTable& table, const std::vector<std::size_t>& sizes) {
  json rows = json::array();
  for (const auto& r : table.rows) {
    rows.push_back({{"k", r.k},
                    {"sigma2_hat", json_num(r.sigma2_hat)},
                    {"n_params", r.n_params},
                    {"h", json_num(r.h)},
                    {"ic", json_num(r.ic)},
                    {"failed", r.failed}});
  }
  return {{"penalty", table.penalty},
          {"k_min", table.k_min},
          {"k_max", table.k_max},
          {"sigma_tilde2", json_num(table.sigma_tilde2)},
          {"selected_k", table.selected_k},
          {"group_sizes", sizes},
          {"rows", rows}};
}

int cmd_select(Settings& s, const Options& o, std::ostream& out) {
  apply_config(s, o);
  require(!s.penalty.empty(), "--penalty is required");
  require(s.kmax >= s.kmin && s.kmin >= 1, "need 1 <= --kmin <= --kmax");
  const PenaltyKind penalty = parse_penalty(s.penalty);
  PhaseTimer timer;
  std::string bytes;
  const PanelData panel = load(s, bytes);
  timer.mark("load");
  check_kmax_feasible(panel, s.kmax, s.gfe);
  const auto fits = fit_k_range(panel, s.kmin, s.kmax, fit_config(s, s.kmin));
  SelectOptions options;
  options.exclude_unit_term = s.exclude_unit_term;
  const ICTable table = evaluate_ic(fits, s.kmin, panel, penalty, s.gfe, options);
  if (table.selected_k == 0) throw Error(ErrorCode::kEstimationFailed, "no K could be fitted");
  const FitResult& chosen = *fits[static_cast<std::size_t>(table.selected_k - s.kmin)];
  const Grouping ordered = order_by_size(chosen.grouping).first;
  timer.mark("estimate");

  const fs::path dir(s.out);
  fs::create_directories(dir);
  write_file(dir / "ic_table.csv", ic_csv(table));
  write_file(dir / "ic_table.json", ic_json(table, ordered.group_sizes()).dump(2) + "\n");
  write_file(dir / "grouping.csv", grouping_csv(panel, ordered));
  timer.mark("write");

  json inputs = data_inputs(s);
  inputs.update({{"kmin", s.kmin},
                 {"kmax", s.kmax},
                 {"penalty", penalty_name(penalty)},
                 {"gfe", s.gfe},
                 {"starts", s.starts},
                 {"max_iter", s.max_iter},
                 {"exclude_unit_term", s.exclude_unit_term}});
  write_manifest(dir, "select", inputs, bytes, s.seed, timer);
  out << ic_csv(table) << fmt::format("selected K = {}\n", table.selected_k);
  return 0;
}

int cmd_demean(Settings& s, const Options& o, std::ostream& out) {
  apply_config(s, o);
  PhaseTimer timer;
  std::string bytes;
  Settings raw = s;
  raw.within = false;
  const PanelData panel = within_transform(load(raw, bytes));
  timer.mark("transform");
  const fs::path dir(s.out);
  fs::create_directories(dir);
  std::ostringstream csv;
  write_panel_csv(csv, panel);
  write_file(dir / "panel_within.csv", csv.str());
  timer.mark("write");
  write_manifest(dir, "demean", data_inputs(raw), bytes, s.seed, timer);
  out << fmt::format("wrote {} rows\n", panel.n_obs());
  return 0;
}

struct Cell {
  std::string scenario;
  DgpSpec spec;
  std::vector<PenaltyKind> penalties;
};

std::vector<Cell> expand_scenarios(const json& cfg) {
  if (!cfg.contains("scenarios") || !cfg["scenarios"].is_array()) {
    throw Error(ErrorCode::kInvalidConfig, "scenario file needs a 'scenarios' array");
  }
  std::vector<Cell> cells;
  for (const auto& sc : cfg["scenarios"]) {
    const std::string name = sc.value("name", "scenario");
    const Dgp dgp = parse_dgp(sc.at("dgp").get<std::string>());
    std::vector<PenaltyKind> penalties;
    for (const auto& p : sc.at("penalties")) penalties.push_back(parse_penalty(p.get<std::string>()));
    const auto ns = sc.at("n").get<std::vector<std::size_t>>();
    const auto alphas = sc.at("alpha").get<std::vector<double>>();
    const bool by_ratio = sc.contains("t_over_n");
    const auto ts = by_ratio ? std::vector<std::size_t>{} : sc.at("t").get<std::vector<std::size_t>>();
    const auto ratios = by_ratio ? sc.at("t_over_n").get<std::vector<double>>() : std::vector<double>{};
    for (std::size_t n : ns) {
      std::vector<std::size_t> periods = ts;
      for (double r : ratios) periods.push_back(static_cast<std::size_t>(std::llround(r * static_cast<double>(n))));
      for (std::size_t t : periods) {
        for (double alpha : alphas) {
          DgpSpec spec = DgpSpec::standard(dgp, n, t, alpha);
          spec.within = sc.value("within", spec.within);
          spec.burn_in = sc.value("burn_in", spec.burn_in);
          cells.push_back({name, spec, penalties});
        }
      }
    }
  }
  return cells;
}

int cmd_simulate(Settings& s, const Options& o, std::ostream& out) {
  if (o.by_key.at("seed")->count() == 0) s.seed = default_seed();
  require(!s.config.empty(), "simulate needs --config <scenario.json>");
  require(!s.out.empty(), "--out is required");
  const std::string bytes = read_file(s.config);
  json cfg;
  try {
    cfg = json::parse(bytes);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, fmt::format("scenario file: {}", e.what()));
  }
  try {
    take(cfg, "seed", o, s.seed);
    take(cfg, "starts", o, s.starts);
    take(cfg, "max_iter", o, s.max_iter);
    take(cfg, "reps", o, s.reps);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, fmt::format("scenario file: {}", e.what()));
  }
  if (s.reps == 0) s.reps = 100;
  ScenarioOptions options;
  options.k_min = cfg.value("kmin", 2);
  options.k_max = cfg.value("kmax", 5);
  options.jobs = s.jobs;
  std::vector<Cell> cells;
  try {
    cells = expand_scenarios(cfg);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, fmt::format("scenario file: {}", e.what()));
  }

  PhaseTimer timer;
  std::ostringstream summary;
  std::ostringstream reps;
  summary << "scenario,dgp,n,t,alpha,penalty,mean_k_hat,rmse_mean,ppc,n_reps,n_failed\n";
  reps << "scenario,dgp,n,t,alpha,rep,seed,penalty,k_hat,rmse,misclassified,sigma2_hat,failed\n";
  bool any_fully_failed = false;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const Cell& cell = cells[c];
    FitConfig fit_cfg;
    fit_cfg.n_starts = s.starts;
    fit_cfg.max_iter = s.max_iter;
    const ScenarioResult res =
        run_scenario(cell.spec, cell.penalties, s.reps, fit_cfg, derive_seed(s.seed, c), options);
    const std::string key = fmt::format("{},{},{},{},{}", cell.scenario, dgp_name(cell.spec.dgp),
                                        cell.spec.n, cell.spec.t, num(cell.spec.alpha));
    for (std::size_t j = 0; j < res.penalties.size(); ++j) {
      summary << fmt::format("{},{},{},{},{},{},{}\n", key, res.penalties[j], num(res.mean_k_hat[j]),
                             num(res.rmse_mean), num(res.ppc), res.n_reps, res.n_failed);
      for (const auto& rec : res.per_rep) {
        reps << fmt::format("{},{},{},{},{},{},{},{},{}\n", key, rec.rep, rec.seed, res.penalties[j],
                            rec.failed ? 0 : rec.k_hat[j], num(rec.rmse), rec.misclassified,
                            num(rec.sigma2_hat), rec.failed ? 1 : 0);
      }
    }
    if (res.n_failed == res.n_reps) any_fully_failed = true;
    out << fmt::format("[{}/{}] {} done\n", c + 1, cells.size(), key);
  }
  timer.mark("simulate");

  const fs::path dir(s.out);
  fs::create_directories(dir);
  write_file(dir / "summary.csv", summary.str());
  write_file(dir / "replications.csv", reps.str());
  timer.mark("write");
  const json inputs = {{"scenario_file", fs::path(s.config).filename().string()},
                       {"reps", s.reps},
                       {"starts", s.starts},
                       {"max_iter", s.max_iter},
                       {"kmin", options.k_min},
                       {"kmax", options.k_max}};
  write_manifest(dir, "simulate", inputs, bytes, s.seed, timer);
  if (any_fully_failed) {
    throw Error(ErrorCode::kEstimationFailed, "at least one scenario failed in every replication");
  }
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"K-means estimation of grouped panel-data models"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  Settings fit_s, select_s, demean_s, sim_s;
  Options fit_o, select_o, demean_o, sim_o;

  auto* fit_cmd = app.add_subcommand("fit", "estimate a K-group model");
  add_data_options(fit_cmd, fit_s, fit_o);
  add_fit_options(fit_cmd, fit_s, fit_o);
  fit_o.by_key["k"] = fit_cmd->add_option("--k", fit_s.k, "number of groups");

  auto* select_cmd = app.add_subcommand("select", "choose K by information criterion");
  add_data_options(select_cmd, select_s, select_o);
  add_fit_options(select_cmd, select_s, select_o);
  select_o.by_key["kmin"] = select_cmd->add_option("--kmin", select_s.kmin, "smallest K");
  select_o.by_key["kmax"] = select_cmd->add_option("--kmax", select_s.kmax, "largest K");
  select_o.by_key["penalty"] =
      select_cmd->add_option("--penalty", select_s.penalty, "bn, bic, mic1, mic2 or custom:<h>");
  select_o.by_key["exclude_unit_term"] = select_cmd->add_flag(
      "--exclude-unit-term", select_s.exclude_unit_term, "drop N from the parameter count");

  auto* demean_cmd = app.add_subcommand("demean", "write the within-transformed panel");
  add_data_options(demean_cmd, demean_s, demean_o);

  auto* sim_cmd = app.add_subcommand("simulate", "run Monte Carlo scenarios");
  sim_o.by_key["config"] =
      sim_cmd->add_option("--config", sim_s.config, "scenario JSON file")->required();
  sim_o.by_key["out"] = sim_cmd->add_option("--out", sim_s.out, "output directory");
  sim_o.by_key["reps"] = sim_cmd->add_option("--reps", sim_s.reps, "replications per cell");
  sim_o.by_key["seed"] = sim_cmd->add_option("--seed", sim_s.seed, "base seed");
  sim_o.by_key["jobs"] = sim_cmd->add_option("--jobs", sim_s.jobs, "worker threads");
  sim_o.by_key["starts"] = sim_cmd->add_option("--starts", sim_s.starts, "initializations per fit");
  sim_o.by_key["max_iter"] = sim_cmd->add_option("--max-iter", sim_s.max_iter, "iterations per start");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*fit_cmd) return cmd_fit(fit_s, fit_o, out);
    if (*select_cmd) return cmd_select(select_s, select_o, out);
    if (*demean_cmd) return cmd_demean(demean_s, demean_o, out);
    if (*sim_cmd) return cmd_simulate(sim_s, sim_o, out);
  } catch (const Error& e) {
    json j = {{"error", {{"code", std::string(error_code_name(e.code()))}, {"message", e.what()}}}};
    err << j.dump() << '\n';
    return 1;
  } catch (const std::exception& e) {
    json j = {{"error", {{"code", "internal"}, {"message", e.what()}}}};
    err << j.dump() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace panelclust::cli
