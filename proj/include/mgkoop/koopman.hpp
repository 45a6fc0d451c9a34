#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mgkoop/graph.hpp"
#include "mgkoop/grid.hpp"
#include "mgkoop/numerics.hpp"

namespace mgkoop {

inline constexpr int kLiftDim = 4;
inline constexpr const char* kBasisTag = "vi_vj_diff_diffsq";

using Lifted = Eigen::Matrix<double, kLiftDim, 1>;

/// Observables [v_i, v_j, v_i - v_j, (v_i - v_j)^2].
Lifted lift(double v_i, double v_j);

/// How the scalar "neighbour voltage" of the dictionary is formed.
enum class NeighborStrategy {
  mean,                 // arithmetic mean of communication neighbours
  susceptance_weighted, // mean weighted by electrical susceptance to each neighbour
  strongest,            // the neighbour with the largest susceptance
};

NeighborStrategy parse_neighbor_strategy(const std::string& name);
std::string to_string(NeighborStrategy s);

/// Neighbour voltage used as v_j for agent i. Throws std::invalid_argument
/// when agent i has no neighbour in the graph. `susceptance` is only read by
/// the weighted strategies.
double neighbor_aggregate(const Vector& v, int i, const CommGraph& graph,
                          NeighborStrategy strategy = NeighborStrategy::mean,
                          const Matrix* susceptance = nullptr);

/// Aligned snapshot rows. `segments` holds the first row of every contiguous
/// trajectory piece, so rollouts never straddle two trajectories.
struct SnapshotSet {
  Matrix x;      // M x 4, lift of raw_x
  Matrix y;      // M x 4, lift of raw_y
  Matrix u;      // M x 1
  Matrix raw_x;  // M x 2, (v_i, v_j)
  Matrix raw_y;  // M x 2, successors
  double sample_dt = 1e-3;
  std::vector<int> segments;

  int rows() const { return static_cast<int>(x.rows()); }
  void validate() const;

  /// Rows built from physical pairs; rows lift themselves.
  static SnapshotSet from_raw(const Matrix& raw_x, const Matrix& raw_y, const Matrix& u,
                              double sample_dt, std::vector<int> segments = {0});
  static SnapshotSet concat(const std::vector<SnapshotSet>& parts);

  /// CSV columns v_i, v_j, u, v_i_next, v_j_next.
  std::string to_csv() const;
  static SnapshotSet from_csv(std::string_view text, double sample_dt);
};

struct ExcitationOptions {
  double window = 10.0;     // s per trajectory
  double dwell = 1.7;       // s between input changes
  double amplitude = 1.0;   // V, input drawn uniformly in [-amplitude, amplitude]
  double sample_dt = 1e-3;  // s
  int trajectories = 10;
  double fit_fraction = 0.8;
  std::uint64_t seed = 1;
  /// Initial voltage of the excited inverter is drawn from [0, v_ref]; when
  /// false it starts at v_ref like the others.
  bool random_initial = true;
  NeighborStrategy neighbor = NeighborStrategy::mean;
};

struct ExcitationData {
  SnapshotSet fit;
  SnapshotSet validation;
};

/// Simulates the plant with a piecewise-constant random input on `agent` and
/// splits each trajectory chronologically into fit and validation rows.
ExcitationData generate_excitation(const MicrogridModel& model, const CommGraph& graph, int agent,
                                   const ExcitationOptions& options);

/// psi_{k+1} = A psi_k + B u_k, v = C psi.
struct LiftedPredictor {
  Matrix a = Matrix::Zero(kLiftDim, kLiftDim);
  Matrix b = Matrix::Zero(kLiftDim, 1);
  Matrix c = Matrix::Zero(1, kLiftDim);
  std::string basis = kBasisTag;
  double sample_dt = 1e-3;

  void validate() const;
  /// Equivalent predictor at `steps` times the sample period with the input
  /// held constant: A^m and sum_k A^k B.
  LiftedPredictor resampled(int steps) const;

  std::string serialize() const;
  static LiftedPredictor deserialize(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static LiftedPredictor load(const std::filesystem::path& path);
};

struct FitReport {
  int rows = 0;
  int regression_rank = 0;
  bool rank_deficient = false;
  double residual_fro = 0.0;      // ||Psi(Y) - A Psi(X) - B U||_F
  double relative_residual = 0.0; // residual_fro / ||Psi(Y)||_F
  double projection_residual = 0.0;  // max |v_i - C psi| over the rows
  double spectral_radius = 0.0;
};

struct FitResult {
  LiftedPredictor predictor;
  FitReport report;
};

/// EDMD with inputs: one least-squares solve for [A B] on the stacked
/// [Psi(X); U], then C = X Psi(X)^+ for the projection back to v_i.
FitResult fit_edmd(const SnapshotSet& data, double tolerance = kDefaultPinvTolerance);

/// Outputs C psi_k for k = 0..u_seq.size().
std::vector<double> predict(const LiftedPredictor& p, const Lifted& psi0,
                            const std::vector<double>& u_seq);

struct ErrorCurve {
  std::vector<double> mean;  // index k-1 holds step k = 1..horizon
  std::vector<double> max;
  int windows = 0;

  double overall_max() const;
};

/// Relative open-loop error |v_hat_k - v_k| / v_ref of rollouts restarted every
/// `horizon` rows inside each validation segment.
ErrorCurve prediction_error(const LiftedPredictor& p, const SnapshotSet& validation, int horizon,
                            double v_ref);

}  // namespace mgkoop
