#include "mgkoop/nonlinear_mpc.hpp"

#include <chrono>
#include <cmath>
#include <limits>

namespace mgkoop {

LocalPlant LocalPlant::from_state(int i, const GridState& state, const MicrogridModel& model,
                                  const NetworkTopology& topo, const Vector& q_load,
                                  double sample_time, double plant_dt) {
  if (i < 0 || i >= model.size()) throw std::out_of_range("LocalPlant: inverter index");
  const auto& inv = model.inverters[i];
  LocalPlant p;
  p.v_ref = inv.v_ref;
  p.nq = inv.nq;
  p.tau = inv.tau;
  p.q_ref = inv.q_ref;
  p.q_load = q_load(i);
  for (int j = 0; j < model.size(); ++j) {
    if (j == i) continue;
    p.b_sum += topo.susceptance(i, j);
    p.b_weighted += topo.susceptance(i, j) * state.v(j);
  }
  p.sample_time = sample_time;
  const double ratio = sample_time / plant_dt;
  p.substeps = static_cast<int>(std::lround(ratio));
  if (p.substeps < 1 || std::abs(ratio - p.substeps) > 1e-6) {
    throw std::invalid_argument("LocalPlant: plant_dt must divide the sample time");
  }
  return p;
}

LocalPlant::Transition LocalPlant::advance(double v, double u) const {
  const double h = sample_time / substeps;
  const double k = h / tau;
  Transition t{v, 1.0, 0.0};
  for (int s = 0; s < substeps; ++s) {
    const double x = t.v_next;
    const double q = q_load + x * (b_sum * x - b_weighted) - q_ref;
    const double dfdx = 1.0 + k * (-1.0 - nq * (2.0 * x * b_sum - b_weighted));
    t.v_next = x + k * (-x + v_ref + u - nq * q);
    t.dv = dfdx * t.dv;
    t.du = dfdx * t.du + k;
  }
  return t;
}

RolloutCost evaluate_sequence(const LocalPlant& plant, double v0, const Vector& u,
                              const MpcWeights& w, double target) {
  RolloutCost out;
  out.v.resize(u.size());
  double v = v0;
  for (Eigen::Index k = 0; k < u.size(); ++k) {
    v = plant.advance(v, u(k)).v_next;
    out.v(k) = v;
    out.cost += w.q * (v - target) * (v - target) + w.r * u(k) * u(k);
    out.violation = std::max({out.violation, v - w.v_max, w.v_min - v});
  }
  return out;
}

NonlinearStep solve_nonlinear_mpc(const LocalPlant& plant, double v0, const MpcWeights& w,
                                  double target, double u_init,
                                  const NonlinearMpcOptions& options) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  const int h = w.horizon;
  const bool soften = v0 < w.v_min || v0 > w.v_max;

  auto merit = [&](const RolloutCost& rc) { return rc.cost + w.slack_penalty * rc.violation; };

  NonlinearStep out;
  Vector u = Vector::Constant(h, u_init);
  RolloutCost current = evaluate_sequence(plant, v0, u, w, target);
  out.sequence = u;
  out.predicted = current.v;
  out.cost = merit(current);

  std::vector<double> dv(h), du(h);
  for (int it = 1; it <= options.max_iterations; ++it) {
    out.iterations = it;
    // rollout with sensitivities of each sample step
    double v = v0;
    Vector v_bar(h);
    for (int k = 0; k < h; ++k) {
      const auto tr = plant.advance(v, u(k));
      v_bar(k) = tr.v_next;
      dv[k] = tr.dv;
      du[k] = tr.du;
      v = tr.v_next;
    }
    // J(k, j) = dV_{k+1} / du_j
    Matrix jac = Matrix::Zero(h, h);
    for (int j = 0; j < h; ++j) {
      double g = du[j];
      jac(j, j) = g;
      for (int k = j + 1; k < h; ++k) {
        g *= dv[k];
        jac(k, j) = g;
      }
    }
    // step QP in delta u; the input penalty is written around the current u
    CondensedPrediction lin{v_bar, jac};
    QpProblem qp = tracking_qp(lin, w, target, soften);
    qp.gradient.head(h) += 2.0 * w.r * u;
    const QpSolution sol = solve_qp(qp);
    out.kkt = sol.kkt.max();
    if (!sol.ok()) break;
    const Vector step = sol.x.head(h);
    u += step;
    current = evaluate_sequence(plant, v0, u, w, target);
    if (merit(current) < out.cost) {
      out.cost = merit(current);
      out.sequence = u;
      out.predicted = current.v;
    }
    if (step.cwiseAbs().maxCoeff() < options.tolerance) {
      out.converged = true;
      out.sequence = u;
      out.predicted = current.v;
      out.cost = merit(current);
      break;
    }
  }
  out.u = out.sequence(0);
  out.solve_seconds = std::chrono::duration<double>(clock::now() - start).count();
  return out;
}

NonlinearAgent::NonlinearAgent(int index, MpcWeights weights, NonlinearMpcOptions options)
    : index_(index), weights_(weights), options_(options) {
  weights_.validate();
  if (!(options_.tolerance > 0.0) || options_.max_iterations < 1 || !(options_.plant_dt > 0.0)) {
    throw std::invalid_argument("NonlinearAgent: bad options");
  }
}

NonlinearStep NonlinearAgent::step(const GridState& state, const MicrogridModel& model,
                                   const NetworkTopology& topo, const Vector& q_load) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  const LocalPlant plant = LocalPlant::from_state(index_, state, model, topo, q_load,
                                                  weights_.sample_time, options_.plant_dt);
  const double target = weights_.target.value_or(model.inverters[index_].v_ref);
  NonlinearStep out =
      solve_nonlinear_mpc(plant, state.v(index_), weights_, target, last_input_, options_);
  last_input_ = out.u;
  out.solve_seconds = std::chrono::duration<double>(clock::now() - start).count();
  return out;
}

ControllerFn make_nonlinear_controller(std::vector<NonlinearAgent>& agents,
                                       const MicrogridModel& model) {
  return [&agents, &model](double t, const GridState& state) {
    const int n = static_cast<int>(agents.size());
    const NetworkTopology topo = model.topology_at(t);
    const Vector q_load = model.inverter_reactive_load(t, topo);
    ControlOutput out;
    out.u = Vector::Zero(n);
    out.solve_seconds = Vector::Zero(n);
    out.kkt_residual = Vector::Zero(n);
    out.iterations.assign(n, 0);
    for (int i = 0; i < n; ++i) {
      const NonlinearStep s = agents[i].step(state, model, topo, q_load);
      out.u(i) = s.u;
      out.solve_seconds(i) = s.solve_seconds;
      out.iterations[i] = s.iterations;
      out.kkt_residual(i) = s.kkt;
    }
    return out;
  };
}

}  // namespace mgkoop
