#include "mgkoop/mpc.hpp"

#include <chrono>
#include <cmath>
#include <limits>

namespace mgkoop {

void MpcWeights::validate() const {
  if (!(q >= 0.0)) throw std::invalid_argument("mpc: q must be >= 0");
  if (!(r > 0.0)) throw std::invalid_argument("mpc: r must be > 0");
  if (!(s >= 0.0)) throw std::invalid_argument("mpc: s must be >= 0");
  if (horizon < 1) throw std::invalid_argument("mpc: horizon must be >= 1");
  if (!(sample_time > 0.0)) throw std::invalid_argument("mpc: sample_time must be > 0");
  if (!(v_min < v_max)) throw std::invalid_argument("mpc: v_min must be below v_max");
  if (!(slack_penalty > 0.0)) throw std::invalid_argument("mpc: slack_penalty must be > 0");
  if (target && !std::isfinite(*target)) throw std::invalid_argument("mpc: target not finite");
}

Lifted consensus_direction() {
  Lifted e;
  e << 1.0, 0.0, 1.0, 0.0;
  return e;
}

CondensedPrediction condense(const LiftedPredictor& p, const Vector& psi0, const Vector& e,
                             double offset, int horizon) {
  if (horizon < 1) throw std::invalid_argument("condense: horizon must be >= 1");
  const auto nx = p.a.rows();
  if (psi0.size() != nx || e.size() != nx) throw std::invalid_argument("condense: lift size");
  CondensedPrediction out;
  out.free.resize(horizon);
  out.forced = Matrix::Zero(horizon, horizon);

  // markov[k] = C A^k B
  std::vector<double> markov(horizon);
  Vector ak_b = p.b.col(0);
  for (int k = 0; k < horizon; ++k) {
    markov[k] = (p.c * ak_b)(0);
    ak_b = p.a * ak_b;
  }
  Vector psi = psi0;
  for (int k = 0; k < horizon; ++k) {
    psi = p.a * psi + e * offset;
    out.free(k) = (p.c * psi)(0);
    for (int j = 0; j <= k; ++j) out.forced(k, j) = markov[k - j];
  }
  return out;
}

QpProblem tracking_qp(const CondensedPrediction& pred, const MpcWeights& w, double target,
                      bool soften) {
  const auto h = pred.free.size();
  const auto nv = soften ? h + 1 : h;
  const Matrix& g = pred.forced;
  const Vector err = pred.free - Vector::Constant(h, target);

  QpProblem qp;
  qp.hessian = Matrix::Zero(nv, nv);
  qp.gradient = Vector::Zero(nv);
  qp.hessian.topLeftCorner(h, h) = 2.0 * (w.q * g.transpose() * g + w.r * Matrix::Identity(h, h));
  qp.gradient.head(h) = 2.0 * w.q * g.transpose() * err;

  const auto m = soften ? 2 * h + 1 : 2 * h;
  qp.ineq_matrix = Matrix::Zero(m, nv);
  qp.ineq_bound = Vector::Zero(m);
  qp.ineq_matrix.topLeftCorner(h, h) = g;
  qp.ineq_bound.head(h) = Vector::Constant(h, w.v_max) - pred.free;
  qp.ineq_matrix.block(h, 0, h, h) = -g;
  qp.ineq_bound.segment(h, h) = pred.free - Vector::Constant(h, w.v_min);
  if (soften) {
    // exact penalty on one shared slack; the quadratic term keeps H positive definite
    qp.hessian(h, h) = 2.0 * w.r;
    qp.gradient(h) = w.slack_penalty;
    qp.ineq_matrix.block(0, h, 2 * h, 1).setConstant(-1.0);
    qp.ineq_matrix(2 * h, h) = -1.0;
  }
  return qp;
}

AgentController::AgentController(int index, const LiftedPredictor& predictor, MpcWeights weights,
                                 Vector laplacian_row, double v_ref)
    : index_(index), weights_(weights), v_ref_(v_ref) {
  weights_.validate();
  predictor.validate();
  const double ratio = weights_.sample_time / predictor.sample_dt;
  const long steps = std::lround(ratio);
  if (steps < 1 || std::abs(ratio - static_cast<double>(steps)) > 1e-6) {
    throw std::invalid_argument("AgentController: predictor period must divide the sample time");
  }
  predictor_ = steps == 1 ? predictor : predictor.resampled(static_cast<int>(steps));
  set_laplacian_row(std::move(laplacian_row));
  last_known_ = Vector::Constant(laplacian_row_.size(), v_ref_);
}

void AgentController::set_laplacian_row(Vector row) {
  if (index_ < 0 || index_ >= row.size()) throw std::invalid_argument("laplacian row: index");
  if (std::abs(row.sum()) > 1e-9 * std::max(1.0, row.cwiseAbs().maxCoeff())) {
    throw std::invalid_argument("laplacian row must sum to zero");
  }
  bool has_neighbor = false;
  for (Eigen::Index j = 0; j < row.size(); ++j) {
    if (j != index_ && row(j) != 0.0) has_neighbor = true;
  }
  if (!has_neighbor) throw std::invalid_argument("laplacian row: agent has no neighbour");
  if (last_known_.size() != 0 && last_known_.size() != row.size()) {
    throw std::invalid_argument("laplacian row: size changed");
  }
  laplacian_row_ = std::move(row);
}

Vector AgentController::fill_stale(const Vector& neighbor_v, bool& stale) const {
  if (neighbor_v.size() != laplacian_row_.size()) {
    throw std::invalid_argument("AgentController: measurement size");
  }
  Vector v = neighbor_v;
  stale = false;
  for (Eigen::Index j = 0; j < v.size(); ++j) {
    if (j != index_ && laplacian_row_(j) == 0.0) continue;
    if (!std::isfinite(v(j))) {
      if (j == index_) throw std::invalid_argument("AgentController: own voltage missing");
      v(j) = last_known_(j);
      stale = true;
    }
  }
  return v;
}

double AgentController::consensus_offset(const Vector& neighbor_v) const {
  double acc = 0.0;
  for (Eigen::Index j = 0; j < neighbor_v.size(); ++j) {
    if (laplacian_row_(j) != 0.0) acc += laplacian_row_(j) * neighbor_v(j);
  }
  return weights_.s * acc;
}

Lifted AgentController::relift(const Vector& neighbor_v) const {
  double sum = 0.0;
  int count = 0;
  for (Eigen::Index j = 0; j < neighbor_v.size(); ++j) {
    if (j != index_ && laplacian_row_(j) != 0.0) {
      sum += neighbor_v(j);
      ++count;
    }
  }
  return lift(neighbor_v(index_), sum / count);
}

QpProblem AgentController::build_qp(const Lifted& psi0, const Vector& neighbor_v) const {
  const double d = consensus_offset(neighbor_v);
  const CondensedPrediction pred =
      condense(predictor_, psi0, consensus_direction(), d, weights_.horizon);
  const double v_now = psi0(0);
  const bool soften = v_now < weights_.v_min || v_now > weights_.v_max;
  return tracking_qp(pred, weights_, target(), soften);
}

AgentStep AgentController::step(const Vector& neighbor_v) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  AgentStep out;
  const Vector v = fill_stale(neighbor_v, out.stale);
  const Lifted psi0 = relift(v);
  const QpProblem qp = build_qp(psi0, v);
  out.softened = qp.variables() > weights_.horizon;
  out.solution = solve_qp(qp, last_active_);
  out.solve_seconds = std::chrono::duration<double>(clock::now() - start).count();

  for (Eigen::Index j = 0; j < v.size(); ++j) {
    if (j == index_ || laplacian_row_(j) != 0.0) last_known_(j) = v(j);
  }
  if (out.solution.ok()) {
    out.u = out.solution.x(0);
    last_input_ = out.u;
    last_active_ = out.solution.active_set;
    const CondensedPrediction pred = condense(predictor_, psi0, consensus_direction(),
                                              consensus_offset(v), weights_.horizon);
    out.predicted = pred.free + pred.forced * out.solution.x.head(weights_.horizon);
  } else {
    out.u = last_input_;
    out.held = true;
    last_active_.clear();
  }
  return out;
}

ControlOutput control_step(std::vector<AgentController>& agents, const GridState& state,
                           const CommGraph& graph) {
  const auto n = static_cast<int>(agents.size());
  if (graph.size() != n || state.v.size() != n) {
    throw std::invalid_argument("control_step: size mismatch");
  }
  ControlOutput out;
  out.u = Vector::Zero(n);
  out.solve_seconds = Vector::Zero(n);
  out.kkt_residual = Vector::Zero(n);
  out.iterations.assign(n, 0);
  for (int i = 0; i < n; ++i) {
    AgentController& agent = agents[i];
    const Vector row = graph.laplacian().row(i).transpose();
    if (row != agent.laplacian_row()) agent.set_laplacian_row(row);
    // each agent only receives its own and its neighbours' voltages
    Vector received = Vector::Zero(n);
    received(i) = state.v(i);
    for (int j : graph.neighbors(i)) received(j) = state.v(j);
    const AgentStep s = agent.step(received);
    out.u(i) = s.u;
    out.solve_seconds(i) = s.solve_seconds;
    out.iterations[i] = s.solution.iterations;
    out.kkt_residual(i) = s.solution.kkt.max();
  }
  return out;
}

ControllerFn make_koopman_controller(std::vector<AgentController>& agents,
                                     const SwitchSchedule& schedule) {
  return [&agents, &schedule](double t, const GridState& state) {
    return control_step(agents, state, schedule.active_graph(t));
  };
}

SteadyStateInput steady_state_input(const Matrix& a, const Matrix& b, const Vector& x_star) {
  if (a.rows() != a.cols() || b.rows() != a.rows() || x_star.size() != a.rows()) {
    throw std::invalid_argument("steady_state_input: dimension mismatch");
  }
  SteadyStateInput out;
  const EigenSet spec = eigenvalues(a);
  out.min_gap = std::numeric_limits<double>::infinity();
  for (const auto& lam : spec.values) out.min_gap = std::min(out.min_gap, std::abs(1.0 - lam));
  out.near_singular = out.min_gap < 1e-3;
  // (I - A) x* = B u, so no inverse of (I - A) is needed
  const Vector rhs = x_star - a * x_star;
  out.u = least_squares(b, rhs);
  return out;
}

}  // namespace mgkoop
