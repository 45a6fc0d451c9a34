#include "mgkoop/numerics.hpp"

#include <algorithm>
#include <complex>
#include <cmath>
#include <numeric>
#include <sstream>

#include <unsupported/Eigen/MatrixFunctions>

namespace mgkoop {

namespace {

void require_nonempty(const Matrix& m, std::string_view what) {
  if (m.size() == 0) {
    throw std::invalid_argument(std::string(what) + ": zero-size matrix");
  }
}

void require_square(const Matrix& m, std::string_view what) {
  if (m.rows() != m.cols()) {
    std::ostringstream msg;
    msg << what << ": expected a square matrix, got " << m.rows() << "x" << m.cols();
    throw std::invalid_argument(msg.str());
  }
}

bool is_symmetric(const Matrix& m, double tol) {
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

Eigen::JacobiSVD<Matrix> thin_svd(const Matrix& m) {
  return Eigen::JacobiSVD<Matrix>(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
}

}  // namespace

void require_finite(const Matrix& m, std::string_view what) {
  if (!m.allFinite()) {
    throw std::invalid_argument(std::string(what) + ": non-finite entry");
  }
}

Matrix pseudo_inverse(const Matrix& m, double tolerance) {
  require_nonempty(m, "pseudo_inverse");
  require_finite(m, "pseudo_inverse");
  if (tolerance < 0.0) throw std::invalid_argument("pseudo_inverse: negative tolerance");

  const auto svd = thin_svd(m);
  const Vector& sigma = svd.singularValues();
  const double cutoff = tolerance * sigma(0);
  Vector inv_sigma = Vector::Zero(sigma.size());
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    if (sigma(i) > cutoff && sigma(i) > 0.0) inv_sigma(i) = 1.0 / sigma(i);
  }
  return svd.matrixV() * inv_sigma.asDiagonal() * svd.matrixU().transpose();
}

int numerical_rank(const Matrix& m, double tolerance) {
  require_nonempty(m, "numerical_rank");
  require_finite(m, "numerical_rank");
  const Vector sigma = thin_svd(m).singularValues();
  const double cutoff = tolerance * sigma(0);
  return static_cast<int>((sigma.array() > cutoff && sigma.array() > 0.0).count());
}

Matrix least_squares(const Matrix& a, const Matrix& b, double tolerance) {
  if (a.rows() != b.rows()) {
    std::ostringstream msg;
    msg << "least_squares: row mismatch (" << a.rows() << " vs " << b.rows() << ")";
    throw std::invalid_argument(msg.str());
  }
  require_finite(b, "least_squares");
  return pseudo_inverse(a, tolerance) * b;
}

EigenSet eigenvalues(const Matrix& m, bool with_vectors) {
  require_nonempty(m, "eigenvalues");
  require_square(m, "eigenvalues");
  require_finite(m, "eigenvalues");
  if (m.rows() > 16) throw std::invalid_argument("eigenvalues: dimension above 16");

  Eigen::EigenSolver<Matrix> solver(m, with_vectors);
  if (solver.info() != Eigen::Success) {
    throw NumericalError("eigenvalues: QR iteration did not converge");
  }
  const Eigen::VectorXcd& vals = solver.eigenvalues();
  std::vector<int> order(vals.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) {
    const double mi = std::abs(vals(i));
    const double mj = std::abs(vals(j));
    if (mi != mj) return mi > mj;
    if (vals(i).real() != vals(j).real()) return vals(i).real() > vals(j).real();
    return vals(i).imag() > vals(j).imag();
  });

  EigenSet out;
  out.values.reserve(order.size());
  for (int i : order) out.values.push_back(vals(i));
  if (with_vectors) {
    std::vector<Eigen::VectorXcd> vecs;
    vecs.reserve(order.size());
    for (int i : order) vecs.emplace_back(solver.eigenvectors().col(i));
    out.vectors = std::move(vecs);
  }
  return out;
}

double spectral_radius(const Matrix& m) {
  const auto set = eigenvalues(m);
  return std::abs(set.values.front());
}

bool is_hurwitz(const Matrix& m) {
  const auto set = eigenvalues(m);
  return std::all_of(set.values.begin(), set.values.end(),
                     [](const std::complex<double>& z) { return z.real() < 0.0; });
}

Matrix solve_lyapunov(const Matrix& a, const Matrix& q) {
  require_square(a, "solve_lyapunov");
  require_square(q, "solve_lyapunov");
  if (a.rows() != q.rows()) throw std::invalid_argument("solve_lyapunov: dimension mismatch");
  const Eigen::Index n = a.rows();
  if (n > 16) throw std::invalid_argument("solve_lyapunov: dimension above 16");

  // Bartels-Stewart on the complex Schur form A = U T U^H: with Y = U^H X U and
  // C = U^H Q U the equation becomes T^H Y + Y T = -C, solved column by column.
  using Complex = std::complex<double>;
  Eigen::ComplexSchur<Matrix> schur(a);
  if (schur.info() != Eigen::Success) throw NumericalError("solve_lyapunov: Schur form failed");
  const Eigen::MatrixXcd& t = schur.matrixT();
  const Eigen::MatrixXcd& u = schur.matrixU();
  const Eigen::MatrixXcd c = u.adjoint() * q.cast<Complex>() * u;
  const Eigen::MatrixXcd th = t.adjoint();
  const double scale = std::max(1.0, t.cwiseAbs().maxCoeff());

  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    Eigen::VectorXcd rhs = -c.col(j);
    for (Eigen::Index k = 0; k < j; ++k) rhs -= y.col(k) * t(k, j);
    // forward substitution with the lower-triangular T^H + t_jj I
    for (Eigen::Index i = 0; i < n; ++i) {
      Complex acc = rhs(i);
      for (Eigen::Index k = 0; k < i; ++k) acc -= th(i, k) * y(k, j);
      const Complex pivot = th(i, i) + t(j, j);
      if (std::abs(pivot) <= 1e-14 * scale) {
        throw NumericalError("solve_lyapunov: A and -A share an eigenvalue");
      }
      y(i, j) = acc / pivot;
    }
  }
  Matrix out = (u * y * u.adjoint()).real();
  if (!out.allFinite()) throw NumericalError("solve_lyapunov: non-finite result");
  if (is_symmetric(q, 1e-12)) out = 0.5 * (out + out.transpose());
  return out;
}

double care_residual(const Matrix& a, const Matrix& b, const Matrix& q,
                     const Matrix& r, const Matrix& l, const Matrix& p) {
  const Matrix rinv_bt = r.llt().solve(b.transpose());
  const Matrix res = a.transpose() * p + p * a + q - p * b * rinv_bt * p + l * p + p * l;
  return res.norm();
}

Matrix solve_care(const Matrix& a, const Matrix& b, const Matrix& q,
                  const Matrix& r, const Matrix& l, const CareOptions& options) {
  require_square(a, "solve_care(a)");
  const Eigen::Index n = a.rows();
  const Eigen::Index m = b.cols();
  if (b.rows() != n || q.rows() != n || q.cols() != n || l.rows() != n ||
      l.cols() != n || r.rows() != m || r.cols() != m) {
    throw std::invalid_argument("solve_care: inconsistent dimensions");
  }
  for (const Matrix* x : {&a, &b, &q, &r, &l}) require_finite(*x, "solve_care");
  if (!is_symmetric(q, 1e-10)) throw std::invalid_argument("solve_care: q not symmetric");
  if (!is_symmetric(r, 1e-10)) throw std::invalid_argument("solve_care: r not symmetric");
  if (!is_symmetric(l, 1e-10)) throw std::invalid_argument("solve_care: l not symmetric");
  Eigen::LLT<Matrix> r_llt(r);
  if (r_llt.info() != Eigen::Success) {
    throw std::invalid_argument("solve_care: r not positive definite");
  }

  const Matrix drift = a + l;
  const Matrix identity = Matrix::Identity(n, n);

  Matrix gain = Matrix::Zero(m, n);
  if (!is_hurwitz(drift)) {
    // Bass: with -(F + beta I) Hurwitz, Z from (F+bI)Z + Z(F+bI)^T = 2BB^T is
    // positive definite for a controllable pair and K = B^T Z^-1 stabilises F.
    const double beta = drift.cwiseAbs().rowwise().sum().maxCoeff() + 1.0;
    const Matrix shifted = -(drift + beta * identity).transpose();
    const Matrix z = solve_lyapunov(shifted, 2.0 * b * b.transpose());
    Eigen::LLT<Matrix> z_llt(0.5 * (z + z.transpose()));
    if (z_llt.info() != Eigen::Success) {
      throw NumericalError("solve_care: no stabilising initial gain (pair not controllable)");
    }
    gain = z_llt.solve(b).transpose();
    if (!is_hurwitz(drift - b * gain)) {
      throw NumericalError("solve_care: initial gain does not stabilise the drift");
    }
  }

  Matrix p = Matrix::Zero(n, n);
  for (int it = 0; it < options.max_iterations; ++it) {
    const Matrix closed = drift - b * gain;
    if (!is_hurwitz(closed)) {
      throw NumericalError("solve_care: Newton iterate lost stability");
    }
    const Matrix next = solve_lyapunov(closed, q + gain.transpose() * r * gain);
    gain = r_llt.solve(b.transpose() * next);
    const double change = (next - p).norm();
    p = next;
    if (change <= options.tolerance * std::max(1.0, p.norm())) {
      return p;
    }
  }
  // Rounding can stall the step-size test right at convergence.
  if (care_residual(a, b, q, r, l, p) <= 1e-9 * std::max(1.0, q.norm())) return p;
  throw NumericalError("solve_care: Newton–Kleinman did not converge");
}

Matrix matrix_log(const Matrix& m) {
  require_nonempty(m, "matrix_log");
  require_square(m, "matrix_log");
  require_finite(m, "matrix_log");
  const auto spectrum = eigenvalues(m);
  const double scale = std::max(1.0, std::abs(spectrum.values.front()));
  for (const auto& z : spectrum.values) {
    if (std::abs(z.imag()) <= 1e-12 * scale && z.real() <= 1e-14 * scale) {
      throw NumericalError("matrix_log: eigenvalue on the closed negative real axis");
    }
  }
  Matrix out = m.log();
  if (!out.allFinite()) throw NumericalError("matrix_log: non-finite result");
  return out;
}

Matrix matrix_exp(const Matrix& m) {
  require_square(m, "matrix_exp");
  require_finite(m, "matrix_exp");
  return m.exp();
}

}  // namespace mgkoop
