#include "mgkoop/stability.hpp"

#include <random>

namespace mgkoop {

bool StabilityCertificate::valid() const {
  return min_eig_p > 0.0 && riccati_residual < 1e-6 && lyapunov_decrease_margin > 0.0;
}

StabilityCertificate stability_certificate(const Matrix& a, const Matrix& b, const Matrix& q,
                                           const Matrix& r, const Matrix& l) {
  StabilityCertificate cert;
  cert.p = solve_care(a, b, q, r, l);
  cert.p = 0.5 * (cert.p + cert.p.transpose());
  cert.k_gain = r.llt().solve(b.transpose() * cert.p);
  cert.riccati_residual = care_residual(a, b, q, r, l, cert.p);
  Eigen::SelfAdjointEigenSolver<Matrix> p_eig(cert.p, Eigen::EigenvaluesOnly);
  cert.min_eig_p = p_eig.eigenvalues().minCoeff();
  const Matrix decrease = q + cert.p * b * cert.k_gain;
  Eigen::SelfAdjointEigenSolver<Matrix> d_eig(0.5 * (decrease + decrease.transpose()),
                                              Eigen::EigenvaluesOnly);
  cert.lyapunov_decrease_margin = d_eig.eigenvalues().minCoeff();
  return cert;
}

ContinuousModel continuous_from_discrete(const Matrix& ad, const Matrix& bd, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("continuous_from_discrete: dt must be > 0");
  if (bd.rows() != ad.rows()) throw std::invalid_argument("continuous_from_discrete: shapes");
  ContinuousModel out;
  out.a = matrix_log(ad) / dt;
  const auto n = ad.rows();
  Matrix aug = Matrix::Zero(2 * n, 2 * n);
  aug.topLeftCorner(n, n) = out.a * dt;
  aug.topRightCorner(n, n) = Matrix::Identity(n, n) * dt;
  const Matrix w = matrix_exp(aug).topRightCorner(n, n);  // integral of exp(Ac s) over [0, dt]
  Eigen::FullPivLU<Matrix> lu(w);
  if (!lu.isInvertible()) throw NumericalError("continuous_from_discrete: singular hold integral");
  out.b = lu.solve(bd);
  return out;
}

Vector lift_null_direction() {
  Vector n(kLiftDim);
  n << 1.0, -1.0, -1.0, 0.0;
  return n.normalized();
}

DeflatedModel deflate(const LiftedPredictor& p, const Vector& null_direction) {
  p.validate();
  const auto dim = p.a.rows();
  if (null_direction.size() != dim || !(null_direction.norm() > 0.0)) {
    throw std::invalid_argument("deflate: bad null direction");
  }
  Eigen::HouseholderQR<Matrix> qr(null_direction.normalized());
  const Matrix q = qr.householderQ() * Matrix::Identity(dim, dim);
  DeflatedModel out;
  out.basis = q.rightCols(dim - 1);
  out.a = out.basis.transpose() * p.a * out.basis;
  out.b = out.basis.transpose() * p.b;
  out.c = p.c * out.basis;
  return out;
}

NetworkModel assemble_network(const std::vector<LiftedPredictor>& predictors,
                              const CommGraph& graph, double consensus_gain,
                              double sample_time) {
  const int n = static_cast<int>(predictors.size());
  if (n != graph.size()) throw std::invalid_argument("assemble_network: size mismatch");
  if (!(sample_time > 0.0)) throw std::invalid_argument("assemble_network: sample_time");
  const Vector null_dir = lift_null_direction();
  const int d = kLiftDim - 1;

  NetworkModel out;
  out.a = Matrix::Zero(n * d, n * d);
  out.b = Matrix::Zero(n * d, n);
  Vector c_mean = Vector::Zero(d);
  for (int i = 0; i < n; ++i) {
    const DeflatedModel red = deflate(predictors[i], null_dir);
    ContinuousModel cont = continuous_from_discrete(red.a, red.b, predictors[i].sample_dt);
    out.a.block(i * d, i * d, d, d) = cont.a;
    out.b.block(i * d, i, d, 1) = cont.b;
    c_mean += red.c.transpose().normalized();
    out.agents.push_back(std::move(cont));
  }
  c_mean.normalize();
  const Matrix cc = c_mean * c_mean.transpose();
  out.l = Matrix::Zero(n * d, n * d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double lij = graph.laplacian()(i, j);
      if (lij != 0.0) out.l.block(i * d, j * d, d, d) = (consensus_gain / sample_time) * lij * cc;
    }
  }
  return out;
}

RolloutCheck check_lyapunov_rollouts(const StabilityCertificate& cert, const Matrix& a,
                                     const Matrix& b, const Matrix& l, int count,
                                     std::uint64_t seed, double step, int samples) {
  const Matrix closed = a + l - b * cert.k_gain;
  const Matrix phi = matrix_exp(closed * step);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  RolloutCheck out;
  for (int r = 0; r < count; ++r) {
    Vector x(a.rows());
    for (Eigen::Index k = 0; k < x.size(); ++k) x(k) = normal(rng);
    x.normalize();
    double v = x.dot(cert.p * x);
    bool ok = v > 0.0;
    for (int s = 0; s < samples && ok; ++s) {
      x = phi * x;
      const double next = x.dot(cert.p * x);
      out.worst_ratio = std::max(out.worst_ratio, next / v);
      if (!(next < v)) ok = false;
      v = next;
    }
    ++out.rollouts;
    if (!ok) ++out.failures;
  }
  return out;
}

}  // namespace mgkoop
