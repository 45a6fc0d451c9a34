#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mgkoop/koopman.hpp"
#include "support.hpp"

using namespace mgkoop;
using mgkoop::testing::random_matrix;

namespace {

CommGraph first_topology() {
  const std::vector<Edge> e{{0, 1}, {1, 2}, {2, 3}, {2, 4}, {0, 3}};
  return CommGraph::from_edges(5, e);
}

// Rows of a known linear lifted system psi+ = A0 psi + B0 u driven by random inputs.
SnapshotSet synthetic(const Matrix& a0, const Matrix& b0, int rows, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  SnapshotSet s;
  s.x.resize(rows, kLiftDim);
  s.y.resize(rows, kLiftDim);
  s.u.resize(rows, 1);
  s.raw_x.resize(rows, 2);
  s.raw_y.resize(rows, 2);
  Vector psi(kLiftDim);
  for (int k = 0; k < kLiftDim; ++k) psi(k) = d(rng);
  for (int r = 0; r < rows; ++r) {
    if (r % 50 == 0) {
      for (int k = 0; k < kLiftDim; ++k) psi(k) = d(rng);
    }
    const double u = d(rng);
    const Vector next = a0 * psi + b0 * u;
    s.x.row(r) = psi.transpose();
    s.y.row(r) = next.transpose();
    s.u(r, 0) = u;
    s.raw_x.row(r) << psi(0), psi(1);
    s.raw_y.row(r) << next(0), next(1);
    psi = next;
  }
  s.segments = {0};
  return s;
}

Matrix stable_a(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Matrix a = random_matrix(rng, kLiftDim, kLiftDim);
  return 0.9 * a / spectral_radius(a);
}

double regression_residual(const SnapshotSet& s, const Matrix& a, const Matrix& b) {
  return (s.y - s.x * a.transpose() - s.u * b.transpose()).norm();
}

MicrogridModel ieee14(std::vector<LoadEvent> loads, double q_ref) {
  ModelConfig mc = load_model(mgkoop::testing::scenario("ieee14_microgrid.yaml"));
  for (auto& inv : mc.inverters) inv.q_ref = q_ref;
  return MicrogridModel::from_network(mc.inverters, *mc.network, LoadSchedule(std::move(loads)));
}

}  // namespace

TEST(Lift, Examples) {
  EXPECT_EQ(lift(170, 170), (Lifted() << 170, 170, 0, 0).finished());
  EXPECT_EQ(lift(171, 169), (Lifted() << 171, 169, 2, 4).finished());
  EXPECT_EQ(lift(0, 1), (Lifted() << 0, 1, -1, 1).finished());
}

TEST(Lift, DictionaryConsistencyOnRandomPairs) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> v(0.0, 200.0);
  for (int k = 0; k < 1000; ++k) {
    const Lifted p = lift(v(rng), v(rng));
    EXPECT_EQ(p(2), p(0) - p(1));
    EXPECT_EQ(p(3), p(2) * p(2));
  }
}

TEST(NeighborAggregate, Examples) {
  const CommGraph g = first_topology();
  Vector v = Vector::Constant(5, 170.0);
  v(1) = 170.0;
  v(3) = 168.0;
  EXPECT_DOUBLE_EQ(neighbor_aggregate(v, 0, g), 169.0);
  v(2) = 165.5;
  EXPECT_DOUBLE_EQ(neighbor_aggregate(v, 4, g), 165.5);  // single neighbour
  EXPECT_DOUBLE_EQ(neighbor_aggregate(Vector::Constant(5, 170.0), 2, g), 170.0);
}

TEST(NeighborAggregate, WeightedStrategies) {
  const CommGraph g = first_topology();
  Matrix b = Matrix::Zero(5, 5);
  b(0, 1) = b(1, 0) = 3.0;
  b(0, 3) = b(3, 0) = 1.0;
  Vector v = Vector::Constant(5, 170.0);
  v(1) = 172.0;
  v(3) = 168.0;
  EXPECT_DOUBLE_EQ(neighbor_aggregate(v, 0, g, NeighborStrategy::susceptance_weighted, &b), 171.0);
  EXPECT_DOUBLE_EQ(neighbor_aggregate(v, 0, g, NeighborStrategy::strongest, &b), 172.0);
  EXPECT_THROW(neighbor_aggregate(v, 0, g, NeighborStrategy::strongest, nullptr),
               std::invalid_argument);
}

TEST(NeighborAggregate, IsolatedAgentRejected) {
  const std::vector<Edge> e{{0, 1}};
  EXPECT_THROW(neighbor_aggregate(Vector::Ones(3), 2, CommGraph::from_edges(3, e)),
               std::invalid_argument);
}

TEST(SnapshotSet, CsvRoundTrip) {
  Matrix rx(3, 2), ry(3, 2), u(3, 1);
  rx << 170, 169, 171.25, 168.5, 0.1, 0.3;
  ry << 170.5, 169, 171, 168.75, 0.2, 0.3;
  u << 0.5, -0.25, 1;
  const SnapshotSet s = SnapshotSet::from_raw(rx, ry, u, 1e-3);
  const std::string csv = s.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "v_i,v_j,u,v_i_next,v_j_next");
  const SnapshotSet back = SnapshotSet::from_csv(csv, 1e-3);
  EXPECT_EQ(back.x, s.x);
  EXPECT_EQ(back.y, s.y);
  EXPECT_EQ(back.u, s.u);
}

TEST(Excitation, RowCountsAndDictionaryConsistency) {
  const auto cfg = load_scenario(mgkoop::testing::scenario("identification.yaml"));
  ExcitationOptions opts = cfg.identification.excitation;
  opts.trajectories = 2;
  const ExcitationData d = generate_excitation(cfg.identification_model(), first_topology(), 0, opts);
  // 10 s at 1 ms: 10000 samples, 9999 pairs, split 7999 / 2000
  EXPECT_EQ(d.fit.rows() + d.validation.rows(), 2 * 9999);
  EXPECT_EQ(d.fit.rows(), 2 * 7999);
  EXPECT_EQ(d.fit.segments, (std::vector<int>{0, 7999}));
  for (const SnapshotSet* s : {&d.fit, &d.validation}) {
    for (int r = 0; r < s->rows(); ++r) {
      EXPECT_EQ(s->x(r, 2), s->x(r, 0) - s->x(r, 1));
      EXPECT_EQ(s->x(r, 3), s->x(r, 2) * s->x(r, 2));
      EXPECT_EQ(s->x(r, 0), s->raw_x(r, 0));
    }
  }
  // the input only changes on dwell boundaries
  int changes = 0;
  for (int r = 1; r < 7999; ++r) changes += d.fit.u(r, 0) != d.fit.u(r - 1, 0);
  EXPECT_EQ(changes, 4);  // 1.7, 3.4, 5.1, 6.8 s
  EXPECT_LE(d.fit.u.cwiseAbs().maxCoeff(), 1.0);
}

TEST(Excitation, FixedSeedIsByteIdentical) {
  const auto cfg = load_scenario(mgkoop::testing::scenario("identification.yaml"));
  ExcitationOptions opts = cfg.identification.excitation;
  opts.trajectories = 2;
  const auto model = cfg.identification_model();
  const auto a = generate_excitation(model, first_topology(), 3, opts);
  const auto b = generate_excitation(model, first_topology(), 3, opts);
  EXPECT_EQ(a.fit.to_csv(), b.fit.to_csv());
  EXPECT_EQ(a.validation.to_csv(), b.validation.to_csv());
  opts.seed += 1;
  EXPECT_NE(generate_excitation(model, first_topology(), 3, opts).fit.to_csv(), a.fit.to_csv());
}

TEST(Excitation, ZeroAmplitudeAtEquilibriumIsRankDeficient) {
  ExcitationOptions opts;
  opts.amplitude = 0.0;
  opts.random_initial = false;
  opts.trajectories = 1;
  const ExcitationData d = generate_excitation(ieee14({}, 0.0), first_topology(), 1, opts);
  for (int r = 1; r < d.fit.rows(); ++r) EXPECT_EQ(d.fit.x.row(r), d.fit.x.row(0));
  const FitResult fit = fit_edmd(d.fit);
  EXPECT_TRUE(fit.report.rank_deficient);
  EXPECT_EQ(fit.report.regression_rank, 1);
  // the constant lift is a fixed point of A
  const Vector psi = d.fit.x.row(0).transpose();
  EXPECT_LT((fit.predictor.a * psi - psi).norm(), 1e-6 * psi.norm());
  bool unit = false;
  for (const auto& z : eigenvalues(fit.predictor.a).values) unit = unit || std::abs(z - 1.0) < 1e-6;
  EXPECT_TRUE(unit);
}

TEST(FitEdmd, RecoversKnownLinearSystem) {
  std::mt19937_64 rng(5);
  const Matrix a0 = stable_a(7);
  const Matrix b0 = random_matrix(rng, kLiftDim, 1);
  const FitResult fit = fit_edmd(synthetic(a0, b0, 400, 9));
  EXPECT_LT((fit.predictor.a - a0).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((fit.predictor.b - b0).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_FALSE(fit.report.rank_deficient);
  EXPECT_LT(fit.report.relative_residual, 1e-12);
}

TEST(FitEdmd, PerfectSystemHasZeroPredictionError) {
  std::mt19937_64 rng(15);
  const Matrix a0 = stable_a(17);
  const Matrix b0 = random_matrix(rng, kLiftDim, 1);
  SnapshotSet s = synthetic(a0, b0, 1000, 19);
  s.segments = {0, 50, 100};
  FitResult fit = fit_edmd(s);
  // C picks psi_1 exactly on synthetic data
  const ErrorCurve e = prediction_error(fit.predictor, s, 25, 1.0);
  EXPECT_LT(e.overall_max(), 1e-9);
}

TEST(FitEdmd, MatchesGramFormOnSmallSample) {
  // Same regression through G = Z'Z / M and the cross matrix Z'Y / M.
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> volt(160.0, 180.0), in(-1.0, 1.0);
  const int m = 60;
  Matrix rx(m, 2), ry(m, 2), u(m, 1);
  for (int r = 0; r < m; ++r) {
    rx.row(r) << volt(rng), volt(rng);
    ry.row(r) << volt(rng), volt(rng);
    u(r, 0) = in(rng);
  }
  const SnapshotSet s = SnapshotSet::from_raw(rx, ry, u, 1e-3);
  const FitResult fit = fit_edmd(s);

  Matrix z(m, kLiftDim + 1);
  z << s.x, s.u;
  const Matrix g = z.transpose() * z / m;
  const Matrix cross = z.transpose() * s.y / m;
  const Matrix theta = g.completeOrthogonalDecomposition().pseudoInverse() * cross;
  Matrix ours(kLiftDim + 1, kLiftDim);
  ours << fit.predictor.a.transpose(), fit.predictor.b.transpose();
  // the lift is rank deficient (psi_3 = psi_1 - psi_2), so compare fitted values
  const Matrix diff = z * theta - z * ours;
  EXPECT_LT(diff.cwiseAbs().maxCoeff(), 1e-6 * s.y.cwiseAbs().maxCoeff());
}

TEST(FitEdmd, ResidualIsLocallyOptimal) {
  const auto& cfg = load_scenario(mgkoop::testing::scenario("identification.yaml"));
  ExcitationOptions opts = cfg.identification.excitation;
  opts.trajectories = 2;
  const auto d = generate_excitation(cfg.identification_model(), first_topology(), 2, opts);
  const FitResult fit = fit_edmd(d.fit);
  const double best = regression_residual(d.fit, fit.predictor.a, fit.predictor.b);
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix da = random_matrix(rng, kLiftDim, kLiftDim, 1e-6);
    const Matrix db = random_matrix(rng, kLiftDim, 1, 1e-6);
    EXPECT_GE(regression_residual(d.fit, fit.predictor.a + da, fit.predictor.b + db), best);
  }
}

TEST(FitEdmd, RejectsTooFewRows) {
  Matrix rx = Matrix::Ones(4, 2), u = Matrix::Zero(4, 1);
  EXPECT_THROW(fit_edmd(SnapshotSet::from_raw(rx, rx, u, 1e-3)), std::invalid_argument);
}

TEST(PredictionError, HorizonOneEqualsRegressionResidualThroughC) {
  const auto cfg = load_scenario(mgkoop::testing::scenario("identification.yaml"));
  ExcitationOptions opts = cfg.identification.excitation;
  opts.trajectories = 1;
  const auto d = generate_excitation(cfg.identification_model(), first_topology(), 0, opts);
  const FitResult fit = fit_edmd(d.fit);
  const auto& p = fit.predictor;
  const double v_ref = 169.7;

  // |C (psi(y) - r) - v_next| with r the regression residual row
  const Matrix r = d.fit.y - d.fit.x * p.a.transpose() - d.fit.u * p.b.transpose();
  double mean = 0.0, worst = 0.0;
  for (int k = 0; k < d.fit.rows(); ++k) {
    const Vector yk = d.fit.y.row(k).transpose();
    const Vector rk = r.row(k).transpose();
    const double err = std::abs((p.c * (yk - rk))(0) - d.fit.raw_y(k, 0)) / v_ref;
    mean += err;
    worst = std::max(worst, err);
  }
  mean /= d.fit.rows();
  const ErrorCurve e = prediction_error(p, d.fit, 1, v_ref);
  EXPECT_NEAR(e.mean[0], mean, 1e-12);
  EXPECT_NEAR(e.max[0], worst, 1e-12);
  EXPECT_EQ(e.windows, d.fit.rows());
}

TEST(PredictionError, RejectsBadHorizon) {
  Matrix rx = Matrix::Ones(6, 2), u = Matrix::Zero(6, 1);
  const auto s = SnapshotSet::from_raw(rx, rx, u, 1e-3);
  EXPECT_THROW(prediction_error(LiftedPredictor{}, s, 0, 1.0), std::invalid_argument);
  EXPECT_THROW(prediction_error(LiftedPredictor{}, s, 7, 1.0), std::invalid_argument);
}

TEST(Predict, UnitEigenvectorGivesConstantOutput) {
  LiftedPredictor p;
  p.a = Matrix::Identity(4, 4) * 0.5;
  p.a(0, 0) = 1.0;
  p.b.setOnes();
  p.c << 1, 1, 0, 0;
  Lifted psi0 = Lifted::Zero();
  psi0(0) = 3.0;
  for (double v : predict(p, psi0, std::vector<double>(20, 0.0))) EXPECT_EQ(v, 3.0);
}

TEST(Predict, AppendixFixtureHoldsNearReference) {
  LiftedPredictor p;
  p.a = read_csv_matrix(mgkoop::testing::fixture("A1.csv"));
  p.b = read_csv_matrix(mgkoop::testing::fixture("B1.csv")).reshaped(4, 1);
  p.c = read_csv_matrix(mgkoop::testing::fixture("C1.csv"));
  const auto v = predict(p, lift(170, 170), std::vector<double>(50, 0.0));
  EXPECT_NEAR(v[0], 0.6667 * 170 + 0.3333 * 170, 1e-9);
  for (double x : v) EXPECT_NEAR(x, 170.0, 0.5);
}

TEST(LiftedPredictor, ResampledMatchesRepeatedSteps) {
  std::mt19937_64 rng(25);
  LiftedPredictor p;
  p.a = stable_a(27);
  p.b = random_matrix(rng, 4, 1);
  p.c = random_matrix(rng, 1, 4);
  const LiftedPredictor q = p.resampled(7);
  EXPECT_DOUBLE_EQ(q.sample_dt, 7e-3);
  Vector psi = random_matrix(rng, 4, 1);
  Vector stepped = psi;
  for (int k = 0; k < 7; ++k) stepped = p.a * stepped + p.b * 0.3;
  EXPECT_LT((q.a * psi + q.b * 0.3 - stepped).norm(), 1e-12);
}

TEST(LiftedPredictor, SerializationRoundTripIsExact) {
  std::mt19937_64 rng(29);
  LiftedPredictor p;
  p.a = random_matrix(rng, 4, 4);
  p.b = random_matrix(rng, 4, 1);
  p.c = random_matrix(rng, 1, 4);
  p.sample_dt = 1e-3;
  const LiftedPredictor q = LiftedPredictor::deserialize(p.serialize());
  EXPECT_EQ(q.a, p.a);
  EXPECT_EQ(q.b, p.b);
  EXPECT_EQ(q.c, p.c);
  EXPECT_EQ(q.sample_dt, p.sample_dt);
  EXPECT_EQ(q.serialize(), p.serialize());
  EXPECT_THROW(LiftedPredictor::deserialize("basis: rbf\n"), std::exception);
}

TEST(PlantIdentification, SpectrumBandsAndRolloutFidelity) {
  const auto cfg = load_scenario(mgkoop::testing::scenario("identification.yaml"));
  const IdentificationReport report = run_identification(cfg);
  ASSERT_EQ(report.agents.size(), 5u);
  for (const auto& a : report.agents) {
    const auto& ev = a.spectrum.values;
    EXPECT_GE(std::abs(ev.front()), 0.99);
    EXPECT_LE(std::abs(ev.front()), 1.001);
    EXPECT_LT(std::abs(ev.back()), 0.05);
    EXPECT_LT(a.error.overall_max(), 0.01);
    EXPECT_EQ(a.error.mean.size(), 500u);
    // projection fidelity on the fit partition
    EXPECT_LT(a.fit.projection_residual, 1e-6);
  }
}
