#pragma once

#include <string>
#include <vector>

#include "mgkoop/numerics.hpp"

namespace mgkoop {

/// min 0.5 x'Hx + g'x  subject to  A x <= b.
struct QpProblem {
  Matrix hessian;
  Vector gradient;
  Matrix ineq_matrix;  // m x n, m may be zero
  Vector ineq_bound;

  int variables() const { return static_cast<int>(gradient.size()); }
  int constraints() const { return static_cast<int>(ineq_bound.size()); }
  void validate() const;
  double objective(const Vector& x) const;
};

enum class QpStatus { optimal, infeasible, numerical_failure, iteration_limit };

std::string to_string(QpStatus s);

/// Infinity-norm KKT violations for A x <= b with multipliers lambda.
struct KktReport {
  double stationarity = 0.0;         // ||Hx + g + A' lambda||
  double primal_infeasibility = 0.0; // max(0, A x - b)
  double complementarity = 0.0;      // max |lambda_i (b - A x)_i|
  double dual_infeasibility = 0.0;   // max(0, -lambda_i)

  double max() const;
};

KktReport kkt_report(const QpProblem& qp, const Vector& x, const Vector& lambda);

struct QpSolution {
  QpStatus status = QpStatus::numerical_failure;
  Vector x;
  Vector multipliers;           // one per inequality, zero when inactive
  std::vector<int> active_set;  // in the order constraints were added
  int iterations = 0;
  double objective = 0.0;
  KktReport kkt;

  bool ok() const { return status == QpStatus::optimal; }
};

struct QpOptions {
  int max_iterations = 500;
  double feasibility_tolerance = 1e-10;  // relative to the row and bound scale
};

/// Dual active-set method (Goldfarb-Idnani). Starts from the unconstrained
/// minimiser, so no feasible starting point is needed and an empty feasible
/// set is detected rather than cycled on. `warm_active` lists constraints that
/// were active at the previous solve; violated ones among them are added first.
QpSolution solve_qp(const QpProblem& qp, const std::vector<int>& warm_active = {},
                    const QpOptions& options = {});

}  // namespace mgkoop
