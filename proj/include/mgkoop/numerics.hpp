#pragma once

#include <complex>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace mgkoop {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Raised when an operation cannot produce a finite, converged result.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Throws std::invalid_argument naming `what` if any entry is NaN or Inf.
void require_finite(const Matrix& m, std::string_view what);

inline constexpr double kDefaultPinvTolerance = 1e-10;

/// Moore–Penrose pseudo-inverse. Singular values below
/// `tolerance * sigma_max` are treated as zero.
Matrix pseudo_inverse(const Matrix& m, double tolerance = kDefaultPinvTolerance);

/// Number of singular values above `tolerance * sigma_max`.
int numerical_rank(const Matrix& m, double tolerance = kDefaultPinvTolerance);

/// argmin_X ||a X - b||_F; the minimum-norm minimiser when `a` is rank deficient.
Matrix least_squares(const Matrix& a, const Matrix& b,
                     double tolerance = kDefaultPinvTolerance);

struct EigenSet {
  std::vector<std::complex<double>> values;
  std::optional<std::vector<Eigen::VectorXcd>> vectors;
};

/// Eigenvalues of a small square matrix (dimension <= 16), sorted by
/// descending magnitude, then descending real part, then descending imaginary part.
EigenSet eigenvalues(const Matrix& m, bool with_vectors = false);

/// Largest eigenvalue magnitude.
double spectral_radius(const Matrix& m);

/// Solves A^T X + X A + Q = 0 for X (dimension <= 16).
Matrix solve_lyapunov(const Matrix& a, const Matrix& q);

struct CareOptions {
  int max_iterations = 100;
  double tolerance = 1e-12;  // relative change in P between Newton steps
};

/// Solves A^T P + P A + Q - P B R^-1 B^T P + L P + P L = 0 by Newton–Kleinman
/// on the effective drift A + L. The initial stabilising gain comes from a
/// shifted Lyapunov solve (Bass), or zero when A + L is already Hurwitz.
Matrix solve_care(const Matrix& a, const Matrix& b, const Matrix& q,
                  const Matrix& r, const Matrix& l, const CareOptions& options = {});

/// Frobenius norm of the left-hand side above.
double care_residual(const Matrix& a, const Matrix& b, const Matrix& q,
                     const Matrix& r, const Matrix& l, const Matrix& p);

/// Principal matrix logarithm. Throws NumericalError when an eigenvalue lies
/// on the closed negative real axis.
Matrix matrix_log(const Matrix& m);

Matrix matrix_exp(const Matrix& m);

bool is_hurwitz(const Matrix& m);

// CSV, one row per line, comma separated, '.' decimal point. Values are written
// in shortest round-trip form so a read/write cycle is bit exact.
Matrix parse_csv_matrix(std::string_view text);
std::string format_csv_matrix(const Matrix& m);
Matrix read_csv_matrix(const std::filesystem::path& path);
void write_csv_matrix(const std::filesystem::path& path, const Matrix& m);

/// Shortest decimal string that parses back to exactly `x`.
std::string format_double(double x);

}  // namespace mgkoop
