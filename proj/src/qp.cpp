#include "mgkoop/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mgkoop {

void QpProblem::validate() const {
  const auto n = gradient.size();
  if (n == 0) throw std::invalid_argument("qp: no variables");
  if (hessian.rows() != n || hessian.cols() != n) throw std::invalid_argument("qp: hessian shape");
  if (ineq_matrix.rows() != ineq_bound.size() ||
      (ineq_matrix.rows() > 0 && ineq_matrix.cols() != n)) {
    throw std::invalid_argument("qp: constraint shape");
  }
  require_finite(hessian, "qp hessian");
  require_finite(gradient, "qp gradient");
  require_finite(ineq_matrix, "qp constraint matrix");
  require_finite(ineq_bound, "qp constraint bound");
  const double asym = (hessian - hessian.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-9 * std::max(1.0, hessian.cwiseAbs().maxCoeff())) {
    throw std::invalid_argument("qp: hessian not symmetric");
  }
}

double QpProblem::objective(const Vector& x) const {
  return 0.5 * x.dot(hessian * x) + gradient.dot(x);
}

std::string to_string(QpStatus s) {
  switch (s) {
    case QpStatus::optimal: return "optimal";
    case QpStatus::infeasible: return "infeasible";
    case QpStatus::numerical_failure: return "numerical_failure";
    case QpStatus::iteration_limit: return "iteration_limit";
  }
  return "unknown";
}

double KktReport::max() const {
  return std::max({stationarity, primal_infeasibility, complementarity, dual_infeasibility});
}

KktReport kkt_report(const QpProblem& qp, const Vector& x, const Vector& lambda) {
  KktReport r;
  Vector grad = qp.hessian * x + qp.gradient;
  if (qp.constraints() > 0) {
    grad += qp.ineq_matrix.transpose() * lambda;
    const Vector slack = qp.ineq_bound - qp.ineq_matrix * x;
    r.primal_infeasibility = std::max(0.0, -slack.minCoeff());
    r.complementarity = lambda.cwiseProduct(slack).cwiseAbs().maxCoeff();
    r.dual_infeasibility = std::max(0.0, -lambda.minCoeff());
  }
  r.stationarity = grad.cwiseAbs().maxCoeff();
  return r;
}

namespace {

// Re-solves the equality-constrained problem on the final working set; this
// removes the drift accumulated by the incremental steps.
bool polish(const QpProblem& qp, const std::vector<int>& active, Vector& x, Vector& lam_active) {
  const auto n = qp.variables();
  const auto q = static_cast<Eigen::Index>(active.size());
  Matrix kkt = Matrix::Zero(n + q, n + q);
  Vector rhs(n + q);
  kkt.topLeftCorner(n, n) = qp.hessian;
  rhs.head(n) = -qp.gradient;
  for (Eigen::Index k = 0; k < q; ++k) {
    kkt.block(0, n + k, n, 1) = qp.ineq_matrix.row(active[k]).transpose();
    kkt.block(n + k, 0, 1, n) = qp.ineq_matrix.row(active[k]);
    rhs(n + k) = qp.ineq_bound(active[k]);
  }
  Eigen::FullPivLU<Matrix> lu(kkt);
  if (!lu.isInvertible()) return false;
  const Vector sol = lu.solve(rhs);
  if (!sol.allFinite()) return false;
  x = sol.head(n);
  lam_active = sol.tail(q);
  return true;
}

}  // namespace

QpSolution solve_qp(const QpProblem& qp, const std::vector<int>& warm_active,
                    const QpOptions& options) {
  qp.validate();
  const auto n = qp.variables();
  const int m = qp.constraints();
  QpSolution out;
  out.multipliers = Vector::Zero(m);

  Eigen::LLT<Matrix> llt(qp.hessian);
  if (llt.info() != Eigen::Success) {
    out.x = Vector::Zero(n);
    return out;  // numerical_failure: hessian not positive definite
  }
  const Matrix g_inv = llt.solve(Matrix::Identity(n, n));

  Vector x = -(g_inv * qp.gradient);
  std::vector<int> active;
  Vector u(0);  // multipliers of the active constraints
  std::vector<char> is_active(m, 0);

  std::vector<double> scale(m);
  for (int j = 0; j < m; ++j) {
    scale[j] = std::max(1.0, qp.ineq_matrix.row(j).cwiseAbs().maxCoeff());
  }
  auto violation = [&](int j) {  // positive when violated, normalised by the row scale
    return (qp.ineq_matrix.row(j).dot(x) - qp.ineq_bound(j)) / scale[j];
  };
  auto tolerance = [&](int j) {
    const double mag = std::abs(qp.ineq_bound(j)) / scale[j] + x.cwiseAbs().maxCoeff();
    return options.feasibility_tolerance * std::max(1.0, mag);
  };

  int iterations = 0;
  auto finish = [&](QpStatus status) {
    out.status = status;
    out.iterations = iterations;
    if (status == QpStatus::optimal) {
      Vector xp = x;
      Vector lp;
      Vector full_raw = Vector::Zero(m);
      for (std::size_t k = 0; k < active.size(); ++k) full_raw(active[k]) = u(k);
      const KktReport raw = kkt_report(qp, x, full_raw);
      if (polish(qp, active, xp, lp)) {
        Vector full_pol = Vector::Zero(m);
        for (std::size_t k = 0; k < active.size(); ++k) full_pol(active[k]) = lp(k);
        const KktReport pol = kkt_report(qp, xp, full_pol);
        if (pol.max() <= raw.max()) {
          x = xp;
          full_raw = full_pol;
        }
      }
      out.multipliers = full_raw;
    }
    out.x = x;
    out.active_set = active;
    out.objective = qp.objective(x);
    out.kkt = kkt_report(qp, x, out.multipliers);
    return out;
  };

  while (true) {
    // pick the constraint to add: warm-start order first, then the most violated
    int p = -1;
    for (int j : warm_active) {
      if (j >= 0 && j < m && !is_active[j] && violation(j) > tolerance(j)) {
        p = j;
        break;
      }
    }
    if (p < 0) {
      double worst = 0.0;
      for (int j = 0; j < m; ++j) {
        if (is_active[j]) continue;
        const double v = violation(j);
        if (v > tolerance(j) && v > worst) {
          worst = v;
          p = j;
        }
      }
    }
    if (p < 0) return finish(QpStatus::optimal);

    // constraint in >= form: c'x >= d with c = -a_p, d = -b_p
    const Vector c = -qp.ineq_matrix.row(p).transpose();
    const double d = -qp.ineq_bound(p);
    Vector u_plus(active.size() + 1);
    u_plus.head(active.size()) = u;
    u_plus(active.size()) = 0.0;
    const double c_norm = c.dot(g_inv * c);

    while (true) {
      if (++iterations > options.max_iterations) return finish(QpStatus::iteration_limit);
      const auto q = static_cast<Eigen::Index>(active.size());
      Vector z;
      Vector r(q);
      if (q == 0) {
        z = g_inv * c;
      } else {
        Matrix nmat(n, q);
        for (Eigen::Index k = 0; k < q; ++k) nmat.col(k) = -qp.ineq_matrix.row(active[k]).transpose();
        const Matrix gn = g_inv * nmat;
        Eigen::LDLT<Matrix> ldlt(nmat.transpose() * gn);
        if (ldlt.info() != Eigen::Success) return finish(QpStatus::numerical_failure);
        const Matrix n_star = ldlt.solve(gn.transpose());  // q x n
        r = n_star * c;
        z = g_inv * c - gn * r;
      }
      if (!z.allFinite() || !r.allFinite()) return finish(QpStatus::numerical_failure);

      // largest dual step keeping the active multipliers non-negative
      double t1 = std::numeric_limits<double>::infinity();
      Eigen::Index drop = -1;
      for (Eigen::Index k = 0; k < q; ++k) {
        if (r(k) > 0.0) {
          const double ratio = u_plus(k) / r(k);
          if (ratio < t1) {
            t1 = ratio;
            drop = k;
          }
        }
      }

      const double zc = z.dot(c);
      const bool no_primal_step = !(zc > 1e-13 * c_norm);
      double t2 = std::numeric_limits<double>::infinity();
      if (!no_primal_step) t2 = -(c.dot(x) - d) / zc;

      if (no_primal_step && drop < 0) return finish(QpStatus::infeasible);
      const double t = std::min(t1, t2);

      if (!no_primal_step) x += t * z;
      u_plus.head(q) -= t * r;
      u_plus(q) += t;

      if (!no_primal_step && t2 <= t1) {
        active.push_back(p);
        is_active[p] = 1;
        u = u_plus;
        break;
      }
      // drop the blocking constraint and retry the same p
      is_active[active[drop]] = 0;
      active.erase(active.begin() + drop);
      Vector shrunk(u_plus.size() - 1);
      for (Eigen::Index k = 0, w = 0; k < u_plus.size(); ++k) {
        if (k != drop) shrunk(w++) = u_plus(k);
      }
      u_plus = shrunk;
      u = u_plus.head(active.size());
    }
  }
}

}  // namespace mgkoop
