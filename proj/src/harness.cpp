#include "mgkoop/harness.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "mgkoop/mpc.hpp"
#include "mgkoop/nonlinear_mpc.hpp"

namespace mgkoop {

std::vector<LiftedPredictor> IdentificationReport::predictors() const {
  std::vector<LiftedPredictor> out;
  for (const auto& a : agents) out.push_back(a.predictor);
  return out;
}

double IdentificationReport::worst_rollout_error() const {
  double worst = 0.0;
  for (const auto& a : agents) worst = std::max(worst, a.error.overall_max());
  return worst;
}

std::string predictor_file_name(int agent) {
  return "predictor_" + std::to_string(agent + 1) + ".yaml";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

IdentificationReport run_identification(const ScenarioConfig& cfg,
                                        const std::filesystem::path& out_dir) {
  const MicrogridModel model = cfg.identification_model();
  model.validate();
  const CommGraph& graph = cfg.identification_graph();
  const auto& id = cfg.identification;
  const int horizon = static_cast<int>(std::lround(id.validation_horizon / id.excitation.sample_dt));

  IdentificationReport report;
  for (int i = 0; i < model.size(); ++i) {
    ExcitationOptions opts = id.excitation;
    // distinct, reproducible stream per inverter
    opts.seed = id.excitation.seed * 1000003ULL + static_cast<std::uint64_t>(i);
    const ExcitationData data = generate_excitation(model, graph, i, opts);
    FitResult fit = fit_edmd(data.fit);
    if (fit.report.relative_residual > id.residual_ceiling) {
      std::ostringstream msg;
      msg << "identification of inverter " << i + 1 << ": relative residual "
          << fit.report.relative_residual << " above ceiling " << id.residual_ceiling;
      throw NumericalError(msg.str());
    }
    if (fit.report.spectral_radius > 1.0 + 1e-2) {
      std::ostringstream msg;
      msg << "identification of inverter " << i + 1 << ": spectral radius "
          << fit.report.spectral_radius << " exceeds 1.01";
      throw NumericalError(msg.str());
    }
    AgentIdentification agent;
    agent.error = prediction_error(fit.predictor, data.validation, horizon,
                                   model.inverters[i].v_ref);
    agent.spectrum = eigenvalues(fit.predictor.a);
    agent.predictor = std::move(fit.predictor);
    agent.fit = fit.report;
    report.agents.push_back(std::move(agent));
  }

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    for (std::size_t i = 0; i < report.agents.size(); ++i) {
      report.agents[i].predictor.save(out_dir / predictor_file_name(static_cast<int>(i)));
    }
    emit_identification_data(report, out_dir);
  }
  return report;
}

std::vector<LiftedPredictor> ensure_predictors(const ScenarioConfig& cfg,
                                               const std::filesystem::path& out_dir) {
  const int n = cfg.model.size();
  if (cfg.predictors_dir) {
    bool all = true;
    for (int i = 0; i < n; ++i) {
      all = all && std::filesystem::exists(*cfg.predictors_dir / predictor_file_name(i));
    }
    if (all) {
      std::vector<LiftedPredictor> out;
      for (int i = 0; i < n; ++i) {
        out.push_back(LiftedPredictor::load(*cfg.predictors_dir / predictor_file_name(i)));
      }
      return out;
    }
  }
  // identify once and cache the result where the scenario expects it
  std::filesystem::path dir = cfg.predictors_dir.value_or(std::filesystem::path{});
  if (dir.empty() && !out_dir.empty()) dir = out_dir / "predictors";
  return run_identification(cfg, dir).predictors();
}

namespace {

GridState initial_state(const ScenarioConfig& cfg) {
  GridState s;
  const int n = cfg.model.size();
  s.v.resize(n);
  for (int i = 0; i < n; ++i) {
    s.v(i) = cfg.initial_voltage.value_or(cfg.model.inverters[i].v_ref);
  }
  s.delta = Vector::Zero(n);
  return s;
}

std::string csv_row(const std::string& key, double value) {
  return key + "," + format_double(value) + "\n";
}

}  // namespace

RunReport run_scenario(const ScenarioConfig& cfg, const std::vector<LiftedPredictor>& predictors) {
  const int n = cfg.model.size();
  SimulationOptions sim{cfg.duration, cfg.dt, cfg.mpc.sample_time};
  RunReport report;
  report.name = cfg.name;
  report.controller = cfg.controller;

  std::vector<AgentController> koopman_agents;
  std::vector<NonlinearAgent> nonlinear_agents;
  ControllerFn controller;
  switch (cfg.controller) {
    case ControllerKind::koopman_dmpc: {
      if (static_cast<int>(predictors.size()) != n) {
        throw std::invalid_argument("run_scenario: one predictor per inverter required");
      }
      const CommGraph& g0 = cfg.graphs.active_graph(0.0);
      for (int i = 0; i < n; ++i) {
        koopman_agents.emplace_back(i, predictors[i], cfg.mpc, g0.laplacian().row(i).transpose(),
                                    cfg.model.inverters[i].v_ref);
      }
      controller = make_koopman_controller(koopman_agents, cfg.graphs);
      break;
    }
    case ControllerKind::nonlinear_mpc:
      for (int i = 0; i < n; ++i) nonlinear_agents.emplace_back(i, cfg.mpc, cfg.nonlinear);
      controller = make_nonlinear_controller(nonlinear_agents, cfg.model);
      break;
    case ControllerKind::droop_only:
      break;
  }
  report.result = simulate(cfg.model, controller, sim, initial_state(cfg));

  const ScenarioResult& r = report.result;
  report.last_disturbance = cfg.last_disturbance();
  report.v_ref.resize(n);
  report.settling_time.assign(n, 0.0);
  report.max_deviation_after.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    const double v_ref = cfg.model.inverters[i].v_ref;
    report.v_ref[i] = v_ref;
    long last_bad = -1;
    for (std::size_t k = 0; k < r.rows(); ++k) {
      const double dev = std::abs(r.v[k](i) - v_ref);
      report.max_band_violation =
          std::max({report.max_band_violation, r.v[k](i) - 1.05 * v_ref, 0.95 * v_ref - r.v[k](i)});
      if (r.t[k] > report.last_disturbance + 1e-9) {
        report.max_deviation_after[i] = std::max(report.max_deviation_after[i], dev);
      }
      if (r.t[k] >= report.last_disturbance - 1e-9 && dev >= 0.01 * v_ref) {
        last_bad = static_cast<long>(k);
      }
    }
    if (last_bad < 0) {
      report.settling_time[i] = 0.0;
    } else if (last_bad + 1 >= static_cast<long>(r.rows())) {
      report.settling_time[i] = std::numeric_limits<double>::quiet_NaN();
    } else {
      report.settling_time[i] = r.t[last_bad + 1] - report.last_disturbance;
    }
  }

  report.mean_solve_seconds.assign(n, 0.0);
  report.max_solve_seconds.assign(n, 0.0);
  for (std::size_t row : r.control_rows) {
    for (int i = 0; i < n; ++i) {
      const double s = r.solve_ms[row](i) * 1e-3;
      report.mean_solve_seconds[i] += s;
      report.max_solve_seconds[i] = std::max(report.max_solve_seconds[i], s);
      report.max_kkt = std::max(report.max_kkt, r.kkt[row](i));
    }
  }
  if (!r.control_rows.empty()) {
    for (double& m : report.mean_solve_seconds) m /= static_cast<double>(r.control_rows.size());
  }
  return report;
}

std::string RunReport::summary_csv() const {
  std::string out = "key,value\n";
  out += "name," + name + "\n";
  out += "controller," + to_string(controller) + "\n";
  out += csv_row("rows", static_cast<double>(result.rows()));
  out += csv_row("control_cycles", static_cast<double>(result.control_rows.size()));
  out += csv_row("last_disturbance_s", last_disturbance);
  out += csv_row("max_band_violation_v", max_band_violation);
  out += csv_row("max_kkt", max_kkt);
  for (std::size_t i = 0; i < settling_time.size(); ++i) {
    const std::string idx = std::to_string(i + 1);
    out += std::isnan(settling_time[i]) ? "settling_s_" + idx + ",never\n"
                                        : csv_row("settling_s_" + idx, settling_time[i]);
    out += csv_row("max_dev_after_v_" + idx, max_deviation_after[i]);
    out += csv_row("final_v_" + idx, result.v.back()(static_cast<Eigen::Index>(i)));
  }
  return out;
}

Vector mean_voltage_over(const ScenarioResult& r, double t_from, double t_to) {
  Vector acc = Vector::Zero(r.n);
  int count = 0;
  for (std::size_t k = 0; k < r.rows(); ++k) {
    if (r.t[k] >= t_from - 1e-9 && r.t[k] <= t_to + 1e-9) {
      acc += r.v[k];
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("mean_voltage_over: empty window");
  return acc / count;
}

Vector mean_reactive_over(const ScenarioResult& r, double t_from, double t_to) {
  Vector acc = Vector::Zero(r.n);
  int count = 0;
  for (std::size_t k = 0; k < r.rows(); ++k) {
    if (r.t[k] >= t_from - 1e-9 && r.t[k] <= t_to + 1e-9) {
      acc += r.q[k];
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("mean_reactive_over: empty window");
  return acc / count;
}

double integral_abs_error(const ScenarioResult& r, int agent, double reference) {
  double iae = 0.0;
  for (std::size_t k = 0; k + 1 < r.rows(); ++k) {
    iae += std::abs(r.v[k](agent) - reference) * (r.t[k + 1] - r.t[k]);
  }
  return iae;
}

ComparisonReport run_comparison(const ScenarioConfig& cfg,
                                const std::vector<LiftedPredictor>& predictors) {
  ComparisonReport out;
  ScenarioConfig k = cfg;
  k.controller = ControllerKind::koopman_dmpc;
  out.koopman = run_scenario(k, predictors);
  ScenarioConfig nl = cfg;
  nl.controller = ControllerKind::nonlinear_mpc;
  out.nonlinear = run_scenario(nl, predictors);

  out.cycles = static_cast<int>(out.koopman.result.control_rows.size());
  auto mean_of = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  out.koopman_mean_solve = mean_of(out.koopman.mean_solve_seconds);
  out.nonlinear_mean_solve = mean_of(out.nonlinear.mean_solve_seconds);
  const double tail = 0.9 * cfg.duration;
  out.koopman_steady = mean_voltage_over(out.koopman.result, tail, cfg.duration);
  out.nonlinear_steady = mean_voltage_over(out.nonlinear.result, tail, cfg.duration);
  return out;
}

std::string ComparisonReport::table_csv() const {
  std::string out = "quantity,koopman,nonlinear\n";
  out += "cycles," + std::to_string(cycles) + "," +
         std::to_string(nonlinear.result.control_rows.size()) + "\n";
  out += "mean_solve_s," + format_double(koopman_mean_solve) + "," +
         format_double(nonlinear_mean_solve) + "\n";
  out += "ratio_nonlinear_over_koopman,," + format_double(ratio()) + "\n";
  for (Eigen::Index i = 0; i < koopman_steady.size(); ++i) {
    out += "steady_v_" + std::to_string(i + 1) + "," + format_double(koopman_steady(i)) + "," +
           format_double(nonlinear_steady(i)) + "\n";
  }
  return out;
}

std::vector<SweepRow> run_horizon_sweep(const ScenarioConfig& cfg,
                                        const std::vector<LiftedPredictor>& predictors) {
  std::vector<SweepRow> rows;
  for (int h : cfg.sweep_horizons) {
    ScenarioConfig c = cfg;
    c.controller = ControllerKind::koopman_dmpc;
    c.mpc.horizon = h;
    const RunReport r = run_scenario(c, predictors);
    const double reference = c.mpc.target.value_or(c.model.inverters[0].v_ref);
    rows.push_back({h, integral_abs_error(r.result, 0, reference)});
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "horizon,iae_inverter_1\n";
  for (const auto& r : rows) out += std::to_string(r.horizon) + "," + format_double(r.iae) + "\n";
  return out;
}

void emit_plot_data(const RunReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const ScenarioResult& r = report.result;
  auto header = [&](std::string& out, const char* prefix) {
    for (int i = 1; i <= r.n; ++i) out += "," + std::string(prefix) + std::to_string(i);
  };
  auto row = [&](std::string& out, const Vector& x) {
    for (Eigen::Index i = 0; i < x.size(); ++i) out += "," + format_double(x(i));
  };

  std::string volt = "t";
  header(volt, "v_");
  volt += "\n";
  std::string mpc = "t";
  header(mpc, "u_");
  mpc += "\n";
  std::string react = "t";
  header(react, "q_");
  react += "\n";
  for (std::size_t k = 0; k < r.rows(); ++k) {
    const std::string t = format_double(r.t[k]);
    volt += t;
    row(volt, r.v[k]);
    volt += "\n";
    mpc += t;
    row(mpc, r.u[k]);
    mpc += "\n";
    react += t;
    row(react, r.q[k]);
    react += "\n";
  }
  write_text(dir / "voltages.csv", volt);
  write_text(dir / "mpc.csv", mpc);
  write_text(dir / "reactive.csv", react);
  write_text(dir / "scenario.csv", r.to_csv(true));
  write_text(dir / "report.csv", report.summary_csv());
}

void emit_identification_data(const IdentificationReport& report,
                              const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::string eig = "agent,index,real,imag,modulus\n";
  std::string fit =
      "agent,rows,regression_rank,rank_deficient,residual_fro,relative_residual,"
      "projection_residual,spectral_radius,max_rollout_error\n";
  for (std::size_t a = 0; a < report.agents.size(); ++a) {
    const auto& ag = report.agents[a];
    for (std::size_t k = 0; k < ag.spectrum.values.size(); ++k) {
      const auto z = ag.spectrum.values[k];
      eig += std::to_string(a + 1) + "," + std::to_string(k + 1) + "," + format_double(z.real()) +
             "," + format_double(z.imag()) + "," + format_double(std::abs(z)) + "\n";
    }
    fit += std::to_string(a + 1) + "," + std::to_string(ag.fit.rows) + "," +
           std::to_string(ag.fit.regression_rank) + "," + (ag.fit.rank_deficient ? "1" : "0") +
           "," + format_double(ag.fit.residual_fro) + "," + format_double(ag.fit.relative_residual) +
           "," + format_double(ag.fit.projection_residual) + "," +
           format_double(ag.fit.spectral_radius) + "," + format_double(ag.error.overall_max()) +
           "\n";
  }
  std::string curve = "step";
  for (std::size_t a = 0; a < report.agents.size(); ++a) {
    curve += ",mean_" + std::to_string(a + 1) + ",max_" + std::to_string(a + 1);
  }
  curve += "\n";
  const std::size_t h = report.agents.empty() ? 0 : report.agents.front().error.mean.size();
  for (std::size_t k = 0; k < h; ++k) {
    curve += std::to_string(k + 1);
    for (const auto& ag : report.agents) {
      curve += "," + format_double(ag.error.mean[k]) + "," + format_double(ag.error.max[k]);
    }
    curve += "\n";
  }
  write_text(dir / "eigenvalues.csv", eig);
  write_text(dir / "fit_report.csv", fit);
  write_text(dir / "error_curve.csv", curve);
}

}  // namespace mgkoop
