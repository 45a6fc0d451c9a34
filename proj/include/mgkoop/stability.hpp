#pragma once

#include <cstdint>
#include <vector>

#include "mgkoop/graph.hpp"
#include "mgkoop/koopman.hpp"
#include "mgkoop/numerics.hpp"

namespace mgkoop {

/// Quadratic Lyapunov certificate of the LQ closed loop x' = (A + L - BK) x.
struct StabilityCertificate {
  Matrix p;
  Matrix k_gain;  // u = -K x with K = R^-1 B' P
  double riccati_residual = 0.0;
  double min_eig_p = 0.0;
  double lyapunov_decrease_margin = 0.0;  // min eig of Q + P B R^-1 B' P

  bool valid() const;
};

/// Solves A'P + PA + Q - PBR^-1B'P + LP + PL = 0 and reports the margins.
StabilityCertificate stability_certificate(const Matrix& a, const Matrix& b, const Matrix& q,
                                           const Matrix& r, const Matrix& l);

struct ContinuousModel {
  Matrix a;
  Matrix b;
};

/// Inverts the zero-order-hold discretisation: Ac = log(Ad) / dt and
/// Bc = (integral_0^dt exp(Ac s) ds)^-1 Bd. Throws NumericalError when the
/// logarithm does not exist.
ContinuousModel continuous_from_discrete(const Matrix& ad, const Matrix& bd, double dt);

/// Restriction of a model to the orthogonal complement of `null_direction`.
struct DeflatedModel {
  Matrix a;      // U' A U
  Matrix b;      // U' B
  Matrix c;      // C U
  Matrix basis;  // U, orthonormal columns
};

DeflatedModel deflate(const LiftedPredictor& p, const Vector& null_direction);

/// Direction the lift never visits: v_i - v_j - (v_i - v_j) = 0.
Vector lift_null_direction();

/// Block-diagonal network model of all agents in their deflated continuous
/// coordinates with consensus coupling L = (s / T) * (Laplacian kron c c'),
/// where c is the mean normalised output direction.
struct NetworkModel {
  Matrix a;
  Matrix b;
  Matrix l;
  std::vector<ContinuousModel> agents;
};

NetworkModel assemble_network(const std::vector<LiftedPredictor>& predictors,
                              const CommGraph& graph, double consensus_gain,
                              double sample_time);

/// Samples the closed loop from random unit initial conditions and checks that
/// x'Px strictly decreases between consecutive samples.
struct RolloutCheck {
  int rollouts = 0;
  int failures = 0;
  double worst_ratio = 0.0;  // max over samples of V(x_{k+1}) / V(x_k)
};

RolloutCheck check_lyapunov_rollouts(const StabilityCertificate& cert, const Matrix& a,
                                     const Matrix& b, const Matrix& l, int count,
                                     std::uint64_t seed, double step = 0.01, int samples = 200);

}  // namespace mgkoop
