#pragma once

#include <vector>

#include "mgkoop/grid.hpp"
#include "mgkoop/mpc.hpp"

namespace mgkoop {

struct NonlinearMpcOptions {
  double tolerance = 1e-6;  // on the infinity norm of the SQP step
  int max_iterations = 50;
  double plant_dt = 1e-3;   // Euler sub-step used inside each sample period
};

/// Frozen-neighbour voltage model of one inverter over one sample period.
struct LocalPlant {
  double v_ref = 169.7;
  double nq = 1e-4;
  double tau = 0.1;
  double q_ref = 0.0;
  double q_load = 0.0;
  double b_sum = 0.0;       // sum_j |B_ij|
  double b_weighted = 0.0;  // sum_j |B_ij| V_j
  double sample_time = 0.1;
  int substeps = 100;

  static LocalPlant from_state(int i, const GridState& state, const MicrogridModel& model,
                               const NetworkTopology& topo, const Vector& q_load,
                               double sample_time, double plant_dt);

  struct Transition {
    double v_next = 0.0;
    double dv = 0.0;  // d v_next / d v
    double du = 0.0;  // d v_next / d u
  };
  Transition advance(double v, double u) const;
};

struct NonlinearStep {
  double u = 0.0;
  double solve_seconds = 0.0;
  int iterations = 0;
  bool converged = false;
  double kkt = 0.0;     // of the last QP subproblem
  Vector sequence;      // best input sequence found
  Vector predicted;     // V_1..V_H along it
  double cost = 0.0;
};

/// Horizon cost sum q (V_k - target)^2 + r u_k^2 and the box violation of a rollout.
struct RolloutCost {
  Vector v;
  double cost = 0.0;
  double violation = 0.0;
};

RolloutCost evaluate_sequence(const LocalPlant& plant, double v0, const Vector& u,
                              const MpcWeights& w, double target);

/// Sequential quadratic programming on the exact Euler model: each iteration
/// linearises the rollout about the current inputs and solves the resulting
/// box-constrained QP for the step. Returns the best iterate when the budget runs out.
NonlinearStep solve_nonlinear_mpc(const LocalPlant& plant, double v0, const MpcWeights& w,
                                  double target, double u_init,
                                  const NonlinearMpcOptions& options = {});

class NonlinearAgent {
 public:
  NonlinearAgent(int index, MpcWeights weights, NonlinearMpcOptions options = {});

  int index() const { return index_; }
  const MpcWeights& weights() const { return weights_; }

  NonlinearStep step(const GridState& state, const MicrogridModel& model,
                     const NetworkTopology& topo, const Vector& q_load);

 private:
  int index_;
  MpcWeights weights_;
  NonlinearMpcOptions options_;
  double last_input_ = 0.0;
};

/// Controller callback running every nonlinear agent on the same snapshot.
ControllerFn make_nonlinear_controller(std::vector<NonlinearAgent>& agents,
                                       const MicrogridModel& model);

}  // namespace mgkoop
