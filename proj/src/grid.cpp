#include "mgkoop/grid.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace mgkoop {

void InverterParams::validate() const {
  if (!(tau > 0.0)) throw std::invalid_argument("inverter " + name + ": tau must be > 0");
  if (!(nq > 0.0)) throw std::invalid_argument("inverter " + name + ": nq must be > 0");
  if (!(v_ref > 0.0)) throw std::invalid_argument("inverter " + name + ": v_ref must be > 0");
  for (double x : {q_ref, p_ref, mp}) {
    if (!std::isfinite(x)) throw std::invalid_argument("inverter " + name + ": non-finite parameter");
  }
}

NetworkTopology NetworkTopology::direct(Matrix susceptance) {
  NetworkTopology topo;
  const auto n = susceptance.rows();
  topo.susceptance = std::move(susceptance);
  topo.load_share = Matrix::Identity(n, n);
  topo.validate();
  return topo;
}

void NetworkTopology::validate() const {
  const auto n = susceptance.rows();
  if (susceptance.cols() != n) throw std::invalid_argument("topology: susceptance not square");
  require_finite(susceptance, "topology susceptance");
  if ((susceptance - susceptance.transpose()).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + susceptance.cwiseAbs().maxCoeff())) {
    throw std::invalid_argument("topology: susceptance not symmetric");
  }
  if (susceptance.minCoeff() < 0.0) throw std::invalid_argument("topology: negative susceptance");
  if (susceptance.diagonal().cwiseAbs().maxCoeff() != 0.0) {
    throw std::invalid_argument("topology: non-zero susceptance diagonal");
  }
  if (load_share.cols() != n) throw std::invalid_argument("topology: load share width");
}

Network::Network(int node_count, std::vector<int> inverter_nodes, std::vector<Line> lines,
                 LoadMapping mapping, double omega)
    : node_count_(node_count),
      inverter_nodes_(std::move(inverter_nodes)),
      lines_(std::move(lines)),
      mapping_(mapping),
      omega_(omega) {
  if (node_count_ <= 0) throw std::invalid_argument("network: no nodes");
  std::set<int> seen;
  for (int node : inverter_nodes_) {
    if (node < 0 || node >= node_count_) throw std::invalid_argument("network: inverter node out of range");
    if (!seen.insert(node).second) throw std::invalid_argument("network: two inverters on one node");
  }
  std::set<std::string> ids;
  for (const Line& line : lines_) {
    if (line.from < 0 || line.to < 0 || line.from >= node_count_ || line.to >= node_count_ ||
        line.from == line.to) {
      throw std::invalid_argument("network: bad endpoints on line " + line.id);
    }
    if (!(line.inductance > 0.0)) throw std::invalid_argument("network: line " + line.id + " needs inductance > 0");
    if (!ids.insert(line.id).second) throw std::invalid_argument("network: duplicate line id " + line.id);
  }
  if (!(omega_ > 0.0)) throw std::invalid_argument("network: omega must be > 0");
}

NetworkTopology Network::reduce(const std::map<std::string, bool>& line_states) const {
  for (const auto& [id, closed] : line_states) {
    (void)closed;
    if (std::none_of(lines_.begin(), lines_.end(), [&](const Line& l) { return l.id == id; })) {
      throw std::invalid_argument("network: unknown line " + id);
    }
  }

  NetworkTopology topo;
  Matrix lap = Matrix::Zero(node_count_, node_count_);
  for (const Line& line : lines_) {
    topo.line_inductances[line.id] = line.inductance;
    const auto it = line_states.find(line.id);
    const bool closed = it == line_states.end() ? line.closed : it->second;
    if (!closed) continue;
    const double b = 1.0 / (omega_ * line.inductance);
    lap(line.from, line.from) += b;
    lap(line.to, line.to) += b;
    lap(line.from, line.to) -= b;
    lap(line.to, line.from) -= b;
  }

  const int n = static_cast<int>(inverter_nodes_.size());
  std::vector<int> passive;
  for (int node = 0; node < node_count_; ++node) {
    if (std::find(inverter_nodes_.begin(), inverter_nodes_.end(), node) == inverter_nodes_.end()) {
      passive.push_back(node);
    }
  }
  const int np = static_cast<int>(passive.size());

  Matrix l_ii(n, n), l_ip(n, np), l_pp(np, np);
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) l_ii(a, b) = lap(inverter_nodes_[a], inverter_nodes_[b]);
    for (int b = 0; b < np; ++b) l_ip(a, b) = lap(inverter_nodes_[a], passive[b]);
  }
  for (int a = 0; a < np; ++a) {
    for (int b = 0; b < np; ++b) l_pp(a, b) = lap(passive[a], passive[b]);
  }

  Matrix reduced = l_ii;
  Matrix factors(np, n);
  if (np > 0) {
    Eigen::FullPivLU<Matrix> lu(l_pp);
    if (!lu.isInvertible()) {
      throw std::invalid_argument("network: a passive node has no path to any inverter");
    }
    factors = -lu.solve(l_ip.transpose());
    reduced = l_ii + l_ip * factors;
  }

  topo.susceptance = (-reduced).cwiseMax(0.0);
  topo.susceptance.diagonal().setZero();
  topo.susceptance = 0.5 * (topo.susceptance + topo.susceptance.transpose());

  topo.load_share = Matrix::Zero(node_count_, n);
  for (int a = 0; a < n; ++a) topo.load_share(inverter_nodes_[a], a) = 1.0;
  for (int a = 0; a < np; ++a) {
    if (mapping_ == LoadMapping::kron) {
      topo.load_share.row(passive[a]) = factors.row(a);
    } else {
      Eigen::Index best = 0;
      factors.row(a).maxCoeff(&best);
      topo.load_share(passive[a], best) = 1.0;
    }
  }
  topo.validate();
  return topo;
}

LoadSchedule::LoadSchedule(std::vector<LoadEvent> events) : events_(std::move(events)) {
  std::stable_sort(events_.begin(), events_.end(),
                   [](const LoadEvent& a, const LoadEvent& b) { return a.time < b.time; });
  for (const auto& e : events_) {
    if (!std::isfinite(e.time) || !std::isfinite(e.p) || !std::isfinite(e.q)) {
      throw std::invalid_argument("load schedule: non-finite event");
    }
    if (e.q < 0.0) throw std::invalid_argument("load schedule: negative reactive load");
  }
}

Vector LoadSchedule::reactive_at(double t, int node_count) const {
  Vector q = Vector::Zero(node_count);
  for (const auto& e : events_) {
    if (e.time > t) break;
    if (e.node < 0 || e.node >= node_count) throw std::out_of_range("load schedule: node index");
    q(e.node) = e.q;
  }
  return q;
}

Vector LoadSchedule::active_at(double t, int node_count) const {
  Vector p = Vector::Zero(node_count);
  for (const auto& e : events_) {
    if (e.time > t) break;
    if (e.node < 0 || e.node >= node_count) throw std::out_of_range("load schedule: node index");
    p(e.node) = e.p;
  }
  return p;
}

MicrogridModel MicrogridModel::from_network(std::vector<InverterParams> inverters, Network network,
                                            LoadSchedule loads, std::vector<LineEvent> line_events) {
  MicrogridModel model;
  if (inverters.size() != network.inverter_nodes().size()) {
    throw std::invalid_argument("model: inverter count does not match network");
  }
  for (std::size_t i = 0; i < inverters.size(); ++i) {
    if (inverters[i].node != network.inverter_nodes()[i]) {
      throw std::invalid_argument("model: inverter node order does not match network");
    }
  }
  model.inverters = std::move(inverters);
  model.topology = network.reduce();
  model.network = std::move(network);
  model.loads = std::move(loads);
  model.line_events = std::move(line_events);
  std::stable_sort(model.line_events.begin(), model.line_events.end(),
                   [](const LineEvent& a, const LineEvent& b) { return a.time < b.time; });
  model.validate();
  return model;
}

MicrogridModel MicrogridModel::from_topology(std::vector<InverterParams> inverters,
                                             NetworkTopology topology, LoadSchedule loads) {
  MicrogridModel model;
  model.inverters = std::move(inverters);
  model.topology = std::move(topology);
  model.loads = std::move(loads);
  model.validate();
  return model;
}

void MicrogridModel::validate() const {
  if (inverters.empty()) throw std::invalid_argument("model: no inverters");
  for (const auto& inv : inverters) inv.validate();
  topology.validate();
  if (topology.size() != size()) throw std::invalid_argument("model: topology size mismatch");
  if (!line_events.empty() && !network) {
    throw std::invalid_argument("model: line events need a full network");
  }
  for (const auto& e : loads.events()) {
    if (e.node < 0 || e.node >= topology.node_count()) {
      throw std::invalid_argument("model: load on unknown node");
    }
  }
}

NetworkTopology MicrogridModel::topology_at(double t) const {
  if (!network) return topology;
  std::map<std::string, bool> states;
  for (const auto& e : line_events) {
    if (e.time > t) break;
    states[e.line] = e.closed;
  }
  if (states.empty()) return topology;
  return network->reduce(states);
}

Vector MicrogridModel::inverter_reactive_load(double t, const NetworkTopology& topo) const {
  return topo.load_share.transpose() * loads.reactive_at(t, topo.node_count());
}

std::vector<double> MicrogridModel::event_times() const {
  std::vector<double> times;
  for (const auto& e : loads.events()) times.push_back(e.time);
  for (const auto& e : line_events) times.push_back(e.time);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  return times;
}

double reactive_power_simplified(const Vector& v, const NetworkTopology& topo, int i) {
  if (v.size() != topo.size()) throw std::invalid_argument("reactive_power: dimension mismatch");
  if (i < 0 || i >= topo.size()) throw std::out_of_range("reactive_power: inverter index");
  double q = 0.0;
  for (int j = 0; j < topo.size(); ++j) {
    const double b = topo.susceptance(i, j);
    q += v(i) * v(i) * b - v(i) * v(j) * b;
  }
  return q;
}

Vector reactive_power_all(const Vector& v, const NetworkTopology& topo) {
  if (v.size() != topo.size()) throw std::invalid_argument("reactive_power: dimension mismatch");
  const Vector degree = topo.susceptance.rowwise().sum();
  return v.cwiseProduct(degree.cwiseProduct(v) - topo.susceptance * v);
}

PowerFlow power_flow_full(const Vector& v, const Vector& delta, const Matrix& y_magnitude,
                          const Matrix& y_angle, int i) {
  const auto n = v.size();
  if (delta.size() != n || y_magnitude.rows() != n || y_magnitude.cols() != n ||
      y_angle.rows() != n || y_angle.cols() != n) {
    throw std::invalid_argument("power_flow_full: dimension mismatch");
  }
  if (i < 0 || i >= n) throw std::out_of_range("power_flow_full: node index");
  // Line admittances y_ij = |Y_ij| at angle theta_ij; the self terms carry the
  // shunt part of the bus admittance so that theta = pi/2 gives the lossless form.
  double cross_p = 0.0;
  double cross_q = 0.0;
  double self_p = 0.0;
  double self_q = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (j == i || y_magnitude(i, j) == 0.0) continue;
    const double phase = y_angle(i, j) + delta(j) - delta(i);
    const double s = v(i) * v(j) * y_magnitude(i, j);
    cross_p += s * std::cos(phase);
    cross_q += s * std::sin(phase);
    self_p += y_magnitude(i, j) * std::cos(y_angle(i, j));
    self_q += y_magnitude(i, j) * std::sin(y_angle(i, j));
  }
  PowerFlow out;
  out.p = v(i) * v(i) * self_p - cross_p;
  out.q = v(i) * v(i) * self_q - cross_q;
  return out;
}

Vector voltage_derivative(const GridState& state, const Vector& u, const MicrogridModel& model,
                          const NetworkTopology& topo, const Vector& q_load) {
  const int n = model.size();
  if (state.v.size() != n || u.size() != n || q_load.size() != n || topo.size() != n) {
    throw std::invalid_argument("voltage_derivative: dimension mismatch");
  }
  const Vector flow = reactive_power_all(state.v, topo);
  Vector dv(n);
  for (int i = 0; i < n; ++i) {
    const auto& p = model.inverters[i];
    dv(i) = (-state.v(i) + p.v_ref + u(i) - p.nq * (q_load(i) + flow(i) - p.q_ref)) / p.tau;
  }
  return dv;
}

GridState step(const GridState& state, const Vector& u, double dt, const MicrogridModel& model,
               const NetworkTopology& topo, const Vector& q_load) {
  if (!(dt > 0.0)) throw std::invalid_argument("step: dt must be > 0");
  GridState next = state;
  next.t = state.t + dt;
  next.v = state.v + dt * voltage_derivative(state, u, model, topo, q_load);
  const Vector q_inst = q_load + reactive_power_all(state.v, topo);
  for (int i = 0; i < model.size(); ++i) {
    next.q_mean(i) += dt * (q_inst(i) - state.q_mean(i)) / model.inverters[i].tau;
  }
  if (!next.v.allFinite() || !next.q_mean.allFinite()) {
    std::ostringstream msg;
    msg << "plant blow-up at t=" << next.t;
    throw NumericalError(msg.str());
  }
  return next;
}

GridState uniform_state(const MicrogridModel& model, double v0) {
  GridState s;
  s.v = Vector::Constant(model.size(), v0);
  const NetworkTopology topo = model.topology_at(0.0);
  s.q_mean = model.inverter_reactive_load(0.0, topo) + reactive_power_all(s.v, topo);
  s.delta = Vector::Zero(model.size());
  return s;
}

std::string ScenarioResult::to_csv(bool with_timing) const {
  std::string out = "t";
  auto header = [&](const char* prefix) {
    for (int i = 1; i <= n; ++i) out += "," + std::string(prefix) + std::to_string(i);
  };
  header("v_");
  header("u_");
  header("q_");
  if (with_timing) header("solve_ms_");
  header("iters_");
  header("kkt_");
  out += '\n';
  for (std::size_t r = 0; r < t.size(); ++r) {
    out += format_double(t[r]);
    auto row = [&](const Vector& x) {
      for (Eigen::Index i = 0; i < x.size(); ++i) out += "," + format_double(x(i));
    };
    row(v[r]);
    row(u[r]);
    row(q[r]);
    if (with_timing) row(solve_ms[r]);
    for (int it : iterations[r]) out += "," + std::to_string(it);
    row(kkt[r]);
    out += '\n';
  }
  return out;
}

ScenarioResult simulate(const MicrogridModel& model, const ControllerFn& controller,
                        const SimulationOptions& options, GridState initial) {
  const int n = model.size();
  if (!(options.dt > 0.0) || !(options.t_end > 0.0)) {
    throw std::invalid_argument("simulate: dt and t_end must be > 0");
  }
  const double ratio_real = options.control_period / options.dt;
  const long ratio = std::lround(ratio_real);
  if (ratio < 1 || std::abs(ratio_real - static_cast<double>(ratio)) > 1e-6) {
    throw std::invalid_argument("simulate: dt must divide the control period");
  }
  if (initial.v.size() != n) throw std::invalid_argument("simulate: initial state size");
  if (initial.delta.size() != n) initial.delta = Vector::Zero(n);

  const long steps = std::lround(options.t_end / options.dt);
  const std::vector<double> events = model.event_times();
  std::size_t next_event = 0;

  NetworkTopology topo = model.topology_at(initial.t);
  Vector q_load = model.inverter_reactive_load(initial.t, topo);
  while (next_event < events.size() && events[next_event] <= initial.t + 1e-9) ++next_event;
  if (initial.q_mean.size() != n) initial.q_mean = q_load + reactive_power_all(initial.v, topo);

  ScenarioResult result;
  result.n = n;
  result.dt = options.dt;
  result.t.reserve(steps + 1);

  GridState state = std::move(initial);
  const double t0 = state.t;
  Vector u = Vector::Zero(n);
  for (long k = 0; k <= steps; ++k) {
    state.t = t0 + static_cast<double>(k) * options.dt;
    bool changed = false;
    while (next_event < events.size() && events[next_event] <= state.t + 1e-9) {
      ++next_event;
      changed = true;
    }
    if (changed) {
      topo = model.topology_at(state.t + 1e-9);
      q_load = model.inverter_reactive_load(state.t + 1e-9, topo);
    }

    Vector solve_ms = Vector::Zero(n);
    std::vector<int> iters(n, 0);
    Vector kkt = Vector::Zero(n);
    if (k % ratio == 0 && k < steps) {
      if (controller) {
        ControlOutput out = controller(state.t, state);
        if (out.u.size() != n) throw std::invalid_argument("simulate: controller output size");
        u = out.u;
        if (out.solve_seconds.size() == n) solve_ms = 1e3 * out.solve_seconds;
        if (static_cast<int>(out.iterations.size()) == n) iters = out.iterations;
        if (out.kkt_residual.size() == n) kkt = out.kkt_residual;
      }
      result.control_rows.push_back(result.t.size());
    }

    result.t.push_back(state.t);
    result.v.push_back(state.v);
    result.u.push_back(u);
    result.q.push_back(state.q_mean);
    result.solve_ms.push_back(std::move(solve_ms));
    result.iterations.push_back(std::move(iters));
    result.kkt.push_back(std::move(kkt));

    if (k == steps) break;
    const double t_keep = state.t;
    state = step(state, u, options.dt, model, topo, q_load);
    state.t = t_keep;
  }
  return result;
}

}  // namespace mgkoop
