#pragma once

#include <optional>
#include <vector>

#include "mgkoop/graph.hpp"
#include "mgkoop/grid.hpp"
#include "mgkoop/koopman.hpp"
#include "mgkoop/qp.hpp"

namespace mgkoop {

struct MpcWeights {
  double q = 1.0;    // voltage tracking weight
  double r = 5.0;    // input weight
  double s = 0.2;    // consensus gain
  int horizon = 3;
  double sample_time = 0.1;  // s
  double v_min = 165.0;      // V
  double v_max = 175.0;      // V
  double slack_penalty = 1e4;
  std::optional<double> target;  // tracking target; v_ref of the agent when unset

  void validate() const;
};

/// Lifted injection direction of the consensus offset: it shifts v_i and
/// v_i - v_j by the same amount.
Lifted consensus_direction();

/// Condensed prediction V = F + G u over k = 1..horizon for
/// psi_{k+1} = A psi_k + B u_k + e * offset, V_k = C psi_k.
struct CondensedPrediction {
  Vector free;    // F
  Matrix forced;  // G, horizon x horizon, lower triangular
};

CondensedPrediction condense(const LiftedPredictor& p, const Vector& psi0, const Vector& e,
                             double offset, int horizon);

/// Builds the tracking QP. The box is softened with one slack variable (last
/// decision variable) when `soften` is true.
QpProblem tracking_qp(const CondensedPrediction& pred, const MpcWeights& w, double target,
                      bool soften);

struct AgentStep {
  double u = 0.0;
  QpSolution solution;
  double solve_seconds = 0.0;
  bool stale = false;  // a neighbour value was missing and the last known one was used
  bool held = false;   // the solve failed and the previous input was re-applied
  bool softened = false;
  Vector predicted;    // V_1..V_H at the returned input sequence
};

/// One agent of the distributed Koopman MPC. It only sees its own voltage,
/// the voltages of its communication neighbours and its Laplacian row.
class AgentController {
 public:
  /// `predictor` is resampled to the controller period when its own period is
  /// a divisor of it.
  AgentController(int index, const LiftedPredictor& predictor, MpcWeights weights,
                  Vector laplacian_row, double v_ref);

  int index() const { return index_; }
  const LiftedPredictor& predictor() const { return predictor_; }
  const MpcWeights& weights() const { return weights_; }
  const Vector& laplacian_row() const { return laplacian_row_; }
  double v_ref() const { return v_ref_; }
  double target() const { return weights_.target.value_or(v_ref_); }

  void set_laplacian_row(Vector row);

  /// S * L(i,:) * V with V the received voltages.
  double consensus_offset(const Vector& neighbor_v) const;
  /// Lift of the local voltage and the mean of the neighbour voltages.
  Lifted relift(const Vector& neighbor_v) const;

  QpProblem build_qp(const Lifted& psi0, const Vector& neighbor_v) const;

  /// Solves one receding-horizon problem. NaN entries of `neighbor_v` are
  /// replaced by the last received values.
  AgentStep step(const Vector& neighbor_v);

  double last_input() const { return last_input_; }

 private:
  Vector fill_stale(const Vector& neighbor_v, bool& stale) const;

  int index_;
  LiftedPredictor predictor_;
  MpcWeights weights_;
  Vector laplacian_row_;
  double v_ref_;
  Vector last_known_;
  double last_input_ = 0.0;
  std::vector<int> last_active_;
};

/// A barrier-synchronised round: every agent reads the same snapshot and the
/// first inputs are applied together. Failed agents hold their last input.
ControlOutput control_step(std::vector<AgentController>& agents, const GridState& state,
                           const CommGraph& graph);

/// Controller callback for `simulate`. The Laplacian rows follow the schedule.
ControllerFn make_koopman_controller(std::vector<AgentController>& agents,
                                     const SwitchSchedule& schedule);

/// Solution of x* = (I - A)^{-1} B u in the least-squares sense.
struct SteadyStateInput {
  Vector u;
  double min_gap = 0.0;       // min |1 - lambda| over the spectrum of A
  bool near_singular = false; // min_gap < 1e-3
};

SteadyStateInput steady_state_input(const Matrix& a, const Matrix& b, const Vector& x_star);

}  // namespace mgkoop
