// Command-line front end: identification, scenario runs, the solver comparison
// and the horizon sweep.
#include <cmath>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mgkoop/config.hpp"
#include "mgkoop/harness.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNumerical = 2;

struct Options {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  bool quiet = false;
  std::string scenario;  // positional for `run`
};

mgkoop::ScenarioConfig load(const Options& o, const std::string& path) {
  if (path.empty()) throw mgkoop::ConfigError("no configuration given (use --config)");
  mgkoop::ScenarioConfig cfg = mgkoop::load_scenario(path);
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.identification.excitation.seed = *o.seed;
  }
  return cfg;
}

void say(const Options& o, const std::string& line) {
  if (!o.quiet) std::cout << line << '\n';
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

int identify(const Options& o) {
  const auto cfg = load(o, o.config);
  const auto report = mgkoop::run_identification(cfg, o.out);
  for (std::size_t i = 0; i < report.agents.size(); ++i) {
    const auto& a = report.agents[i];
    say(o, "inverter " + std::to_string(i + 1) + ": rel. residual " +
               fmt(a.fit.relative_residual) + ", rank " + std::to_string(a.fit.regression_rank) +
               ", spectral radius " + fmt(a.fit.spectral_radius) + ", max rollout error " +
               fmt(100.0 * a.error.overall_max()) + " %");
  }
  say(o, "predictors written to " + o.out);
  return kExitOk;
}

int run(const Options& o) {
  const auto cfg = load(o, o.scenario.empty() ? o.config : o.scenario);
  std::vector<mgkoop::LiftedPredictor> predictors;
  if (cfg.controller == mgkoop::ControllerKind::koopman_dmpc) {
    predictors = mgkoop::ensure_predictors(cfg, o.out);
  }
  const auto report = mgkoop::run_scenario(cfg, predictors);
  mgkoop::emit_plot_data(report, o.out);
  say(o, cfg.name + ": " + std::to_string(report.result.rows()) + " rows, max band violation " +
             fmt(report.max_band_violation) + " V");
  for (std::size_t i = 0; i < report.settling_time.size(); ++i) {
    const double s = report.settling_time[i];
    say(o, "  inverter " + std::to_string(i + 1) + ": settling " +
               (std::isnan(s) ? std::string("never") : fmt(s) + " s") + ", final V " +
               fmt(report.result.v.back()(static_cast<Eigen::Index>(i))));
  }
  return kExitOk;
}

int compare(const Options& o) {
  const auto cfg = load(o, o.config);
  const auto predictors = mgkoop::ensure_predictors(cfg, o.out);
  const auto report = mgkoop::run_comparison(cfg, predictors);
  mgkoop::write_text(std::filesystem::path(o.out) / "comparison.csv", report.table_csv());
  mgkoop::emit_plot_data(report.koopman, std::filesystem::path(o.out) / "koopman");
  mgkoop::emit_plot_data(report.nonlinear, std::filesystem::path(o.out) / "nonlinear");
  say(o, "cycles " + std::to_string(report.cycles) + ", mean solve koopman " +
             fmt(1e3 * report.koopman_mean_solve) + " ms, nonlinear " +
             fmt(1e3 * report.nonlinear_mean_solve) + " ms, ratio " + fmt(report.ratio()));
  return kExitOk;
}

int sweep(const Options& o) {
  const auto cfg = load(o, o.config);
  const auto predictors = mgkoop::ensure_predictors(cfg, o.out);
  const auto rows = mgkoop::run_horizon_sweep(cfg, predictors);
  mgkoop::write_text(std::filesystem::path(o.out) / "horizon_sweep.csv", mgkoop::sweep_csv(rows));
  for (const auto& r : rows) say(o, "H_p=" + std::to_string(r.horizon) + ": IAE " + fmt(r.iae) + " V s");
  return kExitOk;
}

int validate(const Options& o) {
  const auto cfg = load(o, o.config);
  say(o, cfg.name + ": ok (" + std::to_string(cfg.model.size()) + " inverters, controller " +
             mgkoop::to_string(cfg.controller) + ")");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed Koopman MPC for microgrid voltage regulation"};
  app.require_subcommand(1);
  Options o;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Scenario YAML file");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--seed", o.seed, "Override the scenario seed");
    sub->add_flag("--quiet", o.quiet, "Suppress progress output");
  };
  auto* id = app.add_subcommand("identify", "Fit the per-inverter Koopman predictors");
  auto* rn = app.add_subcommand("run", "Run a closed-loop scenario");
  rn->add_option("scenario", o.scenario, "Scenario YAML file");
  auto* cmp = app.add_subcommand("compare", "Koopman vs nonlinear MPC timing comparison");
  auto* sw = app.add_subcommand("sweep", "Prediction-horizon sweep");
  auto* val = app.add_subcommand("validate-config", "Check a scenario file and exit");
  for (auto* s : {id, rn, cmp, sw, val}) add_common(s);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (id->parsed()) return identify(o);
    if (rn->parsed()) return run(o);
    if (cmp->parsed()) return compare(o);
    if (sw->parsed()) return sweep(o);
    if (val->parsed()) return validate(o);
  } catch (const mgkoop::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const mgkoop::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumerical;
  }
  return kExitOk;
}
