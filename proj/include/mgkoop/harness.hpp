#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mgkoop/config.hpp"
#include "mgkoop/grid.hpp"
#include "mgkoop/koopman.hpp"

namespace mgkoop {

struct AgentIdentification {
  LiftedPredictor predictor;
  FitReport fit;
  ErrorCurve error;   // over the validation horizon
  EigenSet spectrum;  // of A
};

struct IdentificationReport {
  std::vector<AgentIdentification> agents;

  std::vector<LiftedPredictor> predictors() const;
  double worst_rollout_error() const;
};

/// File name of agent i's predictor inside a predictor directory.
std::string predictor_file_name(int agent);

/// Excites and fits every inverter. Throws NumericalError when a relative EDMD
/// residual exceeds the configured ceiling. Writes predictor_<i>.yaml,
/// fit_report.csv, eigenvalues.csv and error_curve.csv when `out_dir` is non-empty.
IdentificationReport run_identification(const ScenarioConfig& cfg,
                                        const std::filesystem::path& out_dir = {});

/// Loads predictors from the scenario's predictor directory, or identifies
/// them first and caches them there (or in `out_dir`/predictors when the
/// scenario names no directory).
std::vector<LiftedPredictor> ensure_predictors(const ScenarioConfig& cfg,
                                               const std::filesystem::path& out_dir = {});

struct RunReport {
  std::string name;
  ControllerKind controller = ControllerKind::koopman_dmpc;
  ScenarioResult result;
  std::vector<double> v_ref;
  double last_disturbance = 0.0;
  /// Time after the last disturbance until |V - V_ref| stays below 1% of V_ref;
  /// NaN when it never settles.
  std::vector<double> settling_time;
  double max_band_violation = 0.0;  // V outside [0.95, 1.05] V_ref, 0 when inside
  std::vector<double> max_deviation_after;  // max |V - V_ref| after the last disturbance
  std::vector<double> mean_solve_seconds;
  std::vector<double> max_solve_seconds;
  int held_solves = 0;
  double max_kkt = 0.0;

  /// Deterministic summary (no wall-clock values).
  std::string summary_csv() const;
};

/// Closed loop of the configured controller. `predictors` is only read for
/// the Koopman controller.
RunReport run_scenario(const ScenarioConfig& cfg, const std::vector<LiftedPredictor>& predictors);

/// Steady-state summary helpers over the trajectory.
Vector mean_voltage_over(const ScenarioResult& r, double t_from, double t_to);
Vector mean_reactive_over(const ScenarioResult& r, double t_from, double t_to);
double integral_abs_error(const ScenarioResult& r, int agent, double reference);

struct ComparisonReport {
  RunReport koopman;
  RunReport nonlinear;
  int cycles = 0;
  double koopman_mean_solve = 0.0;    // s per cycle, all agents
  double nonlinear_mean_solve = 0.0;
  Vector koopman_steady;    // mean V over the last 10% of the run
  Vector nonlinear_steady;

  double ratio() const { return nonlinear_mean_solve / koopman_mean_solve; }
  std::string table_csv() const;
};

ComparisonReport run_comparison(const ScenarioConfig& cfg,
                                const std::vector<LiftedPredictor>& predictors);

struct SweepRow {
  int horizon = 0;
  double iae = 0.0;  // V s, inverter 1
};

std::vector<SweepRow> run_horizon_sweep(const ScenarioConfig& cfg,
                                        const std::vector<LiftedPredictor>& predictors);
std::string sweep_csv(const std::vector<SweepRow>& rows);

/// voltages.csv, mpc.csv, reactive.csv and report.csv for a run.
void emit_plot_data(const RunReport& report, const std::filesystem::path& dir);
/// eigenvalues.csv (one row per eigenvalue per agent) and error_curve.csv.
void emit_identification_data(const IdentificationReport& report,
                              const std::filesystem::path& dir);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace mgkoop
