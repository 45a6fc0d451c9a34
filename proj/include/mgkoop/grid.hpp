#pragma once

#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "mgkoop/numerics.hpp"

namespace mgkoop {

inline constexpr double kNominalOmega = 2.0 * std::numbers::pi * 60.0;

/// Droop and filter parameters of one grid-forming inverter. Voltages are
/// peak per-phase volts.
struct InverterParams {
  std::string name;
  int node = 0;          // hosting network node, 0-based
  double v_ref = 169.7;  // V
  double q_ref = 0.0;    // var
  double p_ref = 0.0;    // W
  double nq = 1e-4;      // V/var
  double mp = 1e-4;      // rad/s/W, stored only; frequency control is not modelled
  double tau = 0.1;      // s, reactive-power low-pass filter

  void validate() const;
};

struct Line {
  std::string id;
  int from = 0;  // 0-based node indices
  int to = 0;
  double inductance = 0.0;  // H
  bool closed = true;
};

/// Inverter-level view of the network: effective susceptances between
/// inverters and the share of each node's load carried by each inverter.
struct NetworkTopology {
  Matrix susceptance;  // n x n, |B_ij| in siemens, zero diagonal
  Matrix load_share;   // node_count x n, rows sum to one
  std::map<std::string, double> line_inductances;

  int size() const { return static_cast<int>(susceptance.rows()); }
  int node_count() const { return static_cast<int>(load_share.rows()); }

  /// Topology given directly between inverters; loads are indexed by inverter.
  static NetworkTopology direct(Matrix susceptance);

  void validate() const;
};

enum class LoadMapping {
  kron,     // passive-node loads split by Kron distribution factors
  nearest,  // whole load to the inverter with the largest factor
};

/// Full passive network: nodes, inductive lines, and which nodes host inverters.
class Network {
 public:
  Network(int node_count, std::vector<int> inverter_nodes, std::vector<Line> lines,
          LoadMapping mapping = LoadMapping::kron, double omega = kNominalOmega);

  /// Kron-eliminates the passive nodes. `line_states` overrides the closed flag
  /// of the named lines.
  NetworkTopology reduce(const std::map<std::string, bool>& line_states = {}) const;

  int node_count() const { return node_count_; }
  const std::vector<int>& inverter_nodes() const { return inverter_nodes_; }
  const std::vector<Line>& lines() const { return lines_; }
  LoadMapping mapping() const { return mapping_; }
  double omega() const { return omega_; }

 private:
  int node_count_;
  std::vector<int> inverter_nodes_;
  std::vector<Line> lines_;
  LoadMapping mapping_;
  double omega_;
};

/// Sets the load at `node` to (p, q) from `time` on.
struct LoadEvent {
  double time = 0.0;
  int node = 0;
  double p = 0.0;  // W
  double q = 0.0;  // var
};

class LoadSchedule {
 public:
  LoadSchedule() = default;
  explicit LoadSchedule(std::vector<LoadEvent> events);

  const std::vector<LoadEvent>& events() const { return events_; }
  /// Per-node reactive load in effect at time t.
  Vector reactive_at(double t, int node_count) const;
  Vector active_at(double t, int node_count) const;

 private:
  std::vector<LoadEvent> events_;
};

struct LineEvent {
  double time = 0.0;
  std::string line;
  bool closed = true;
};

struct MicrogridModel {
  std::vector<InverterParams> inverters;
  std::optional<Network> network;  // absent when the topology is given directly
  NetworkTopology topology;        // topology with the initial line states
  LoadSchedule loads;
  std::vector<LineEvent> line_events;

  int size() const { return static_cast<int>(inverters.size()); }

  /// Builds the model from a full network, reducing it with the initial line states.
  static MicrogridModel from_network(std::vector<InverterParams> inverters, Network network,
                                     LoadSchedule loads = {},
                                     std::vector<LineEvent> line_events = {});
  static MicrogridModel from_topology(std::vector<InverterParams> inverters,
                                      NetworkTopology topology, LoadSchedule loads = {});

  NetworkTopology topology_at(double t) const;
  /// Reactive load seen by each inverter at time t.
  Vector inverter_reactive_load(double t, const NetworkTopology& topo) const;
  /// Times at which the load or line configuration changes.
  std::vector<double> event_times() const;

  void validate() const;
};

struct GridState {
  double t = 0.0;
  Vector v;       // V, peak
  Vector q_mean;  // var, filtered reactive output
  Vector delta;   // rad, frozen at zero in the voltage plant
};

/// Q_i = sum_j |B_ij| V_i (V_i - V_j), the decoupled reactive injection.
double reactive_power_simplified(const Vector& v, const NetworkTopology& topo, int i);
Vector reactive_power_all(const Vector& v, const NetworkTopology& topo);

struct PowerFlow {
  double p = 0.0;
  double q = 0.0;
};

/// Full power flow at node i with |Y_ij| and angle theta_ij.
PowerFlow power_flow_full(const Vector& v, const Vector& delta, const Matrix& y_magnitude,
                          const Matrix& y_angle, int i);

/// dV/dt for every inverter with secondary input u and per-inverter reactive loads.
Vector voltage_derivative(const GridState& state, const Vector& u, const MicrogridModel& model,
                          const NetworkTopology& topo, const Vector& q_load);

/// One forward-Euler step. Throws NumericalError if the result is not finite.
GridState step(const GridState& state, const Vector& u, double dt, const MicrogridModel& model,
               const NetworkTopology& topo, const Vector& q_load);

/// Output of one controller invocation.
struct ControlOutput {
  Vector u;
  Vector solve_seconds;     // per agent, wall clock
  std::vector<int> iterations;
  Vector kkt_residual;
};

using ControllerFn = std::function<ControlOutput(double t, const GridState& state)>;

struct SimulationOptions {
  double t_end = 10.0;
  double dt = 1e-3;
  double control_period = 0.1;  // must be an integer multiple of dt
};

/// Trajectory logged at every dt. Solver telemetry is non-zero only on rows
/// where the controller ran; inputs are held between those rows.
struct ScenarioResult {
  int n = 0;
  double dt = 0.0;
  std::vector<double> t;
  std::vector<Vector> v;
  std::vector<Vector> u;
  std::vector<Vector> q;
  std::vector<Vector> solve_ms;
  std::vector<std::vector<int>> iterations;
  std::vector<Vector> kkt;
  std::vector<std::size_t> control_rows;

  std::size_t rows() const { return t.size(); }
  /// CSV with a one-line header; `with_timing` includes the wall-clock columns.
  std::string to_csv(bool with_timing = true) const;
};

/// Closed-loop simulation with zero-order hold between controller samples.
/// An empty controller means droop only (u = 0).
ScenarioResult simulate(const MicrogridModel& model, const ControllerFn& controller,
                        const SimulationOptions& options, GridState initial);

/// State with every inverter at `v0` and the filter at its instantaneous value.
GridState uniform_state(const MicrogridModel& model, double v0);

}  // namespace mgkoop
