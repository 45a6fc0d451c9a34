#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "mgkoop/mpc.hpp"
#include "mgkoop/nonlinear_mpc.hpp"
#include "support.hpp"

using namespace mgkoop;

namespace {

LocalPlant coupled_plant() {
  LocalPlant p;
  p.q_ref = 5000.0;
  p.q_load = 2500.0;
  p.b_sum = 1.3;
  p.b_weighted = 1.3 * 168.0;
  p.sample_time = 0.1;
  p.substeps = 100;
  return p;
}

// Forward Euler of tau dV/dt = -V + V_ref + u - nq (Q_L + b_sum V^2 - V sum B_j V_j - Q_ref).
double euler_rollout(const LocalPlant& p, double v, double u) {
  const double h = p.sample_time / p.substeps;
  for (int s = 0; s < p.substeps; ++s) {
    const double q = p.q_load + p.b_sum * v * v - v * p.b_weighted - p.q_ref;
    v += h / p.tau * (-v + p.v_ref + u - p.nq * q);
  }
  return v;
}

}  // namespace

TEST(LocalPlant, SensitivitiesMatchFiniteDifferences) {
  const LocalPlant p = coupled_plant();
  const double v = 171.0, u = 0.4, eps = 1e-5;
  const auto t = p.advance(v, u);
  EXPECT_NEAR(t.v_next, euler_rollout(p, v, u), 1e-10);
  EXPECT_NEAR(t.dv, (euler_rollout(p, v + eps, u) - euler_rollout(p, v - eps, u)) / (2 * eps), 1e-7);
  EXPECT_NEAR(t.du, (euler_rollout(p, v, u + eps) - euler_rollout(p, v, u - eps)) / (2 * eps), 1e-7);
}

TEST(LocalPlant, FromStateFreezesNeighbours) {
  Matrix b(3, 3);
  b << 0, 1, 2, 1, 0, 0, 2, 0, 0;
  InverterParams inv;
  const auto model = MicrogridModel::from_topology({inv, inv, inv}, NetworkTopology::direct(b));
  GridState s;
  s.v = (Vector(3) << 170.0, 168.0, 172.0).finished();
  const LocalPlant p = LocalPlant::from_state(0, s, model, model.topology, Vector::Constant(3, 700.0),
                                              0.1, 1e-3);
  EXPECT_DOUBLE_EQ(p.b_sum, 3.0);
  EXPECT_DOUBLE_EQ(p.b_weighted, 168.0 + 2 * 172.0);
  EXPECT_DOUBLE_EQ(p.q_load, 700.0);
  EXPECT_EQ(p.substeps, 100);
  EXPECT_THROW(LocalPlant::from_state(0, s, model, model.topology, Vector::Zero(3), 0.1, 3e-3),
               std::invalid_argument);
}

TEST(NonlinearMpc, OneStepMatchesGridSearch) {
  const LocalPlant p = coupled_plant();
  MpcWeights w;
  w.horizon = 1;
  w.q = 1.0;
  w.r = 1.0;
  for (double v0 : {166.0, 169.7, 173.5}) {
    for (double target : {168.0, 169.7, 171.0}) {
      double best = std::numeric_limits<double>::infinity(), best_u = 0.0;
      for (int k = 0; k <= 100000; ++k) {
        const double u = -5.0 + 1e-4 * k;
        const double v = euler_rollout(p, v0, u);
        if (v < w.v_min || v > w.v_max) continue;
        const double cost = w.q * (v - target) * (v - target) + w.r * u * u;
        if (cost < best) {
          best = cost;
          best_u = u;
        }
      }
      const NonlinearStep s = solve_nonlinear_mpc(p, v0, w, target, 0.0);
      EXPECT_TRUE(s.converged);
      EXPECT_NEAR(s.u, best_u, 1e-4) << "v0 " << v0 << " target " << target;
      EXPECT_LE(s.cost, best + 1e-9);
    }
  }
}

TEST(NonlinearMpc, HonoursTheVoltageBox) {
  const LocalPlant p = coupled_plant();
  MpcWeights w;
  w.horizon = 5;
  w.r = 0.01;
  w.v_min = 168.0;
  w.v_max = 170.0;
  const NonlinearStep s = solve_nonlinear_mpc(p, 169.0, w, 175.0, 0.0);
  EXPECT_TRUE(s.converged);
  EXPECT_LE(s.predicted.maxCoeff(), 170.0 + 1e-6);
  EXPECT_GE(s.predicted.minCoeff(), 168.0 - 1e-6);
  EXPECT_NEAR(s.predicted.maxCoeff(), 170.0, 1e-6);
}

TEST(NonlinearMpc, DecoupledPlantEqualsLinearMpc) {
  // without coupling the Euler map is affine: v+ = alpha v + beta u + gamma
  LocalPlant p = coupled_plant();
  p.b_sum = 0.0;
  p.b_weighted = 0.0;
  const double alpha = p.advance(0.0, 0.0).dv;
  const double beta = p.advance(0.0, 0.0).du;
  const double gamma = p.advance(0.0, 0.0).v_next;

  MpcWeights w;
  w.horizon = 10;
  w.r = 1.0;
  const double v0 = 167.0, target = 170.5;
  CondensedPrediction pred;
  pred.free.resize(w.horizon);
  pred.forced = Matrix::Zero(w.horizon, w.horizon);
  double v = v0;
  for (int k = 0; k < w.horizon; ++k) {
    v = alpha * v + gamma;
    pred.free(k) = v;
    for (int j = 0; j <= k; ++j) pred.forced(k, j) = std::pow(alpha, k - j) * beta;
  }
  const QpSolution lin = solve_qp(tracking_qp(pred, w, target, false));
  ASSERT_TRUE(lin.ok());
  const NonlinearStep s = solve_nonlinear_mpc(p, v0, w, target, 0.0);
  EXPECT_TRUE(s.converged);
  EXPECT_LT((s.sequence - lin.x).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(NonlinearMpc, ReturnsBestIterateWhenBudgetRunsOut) {
  const LocalPlant p = coupled_plant();
  MpcWeights w;
  w.horizon = 10;
  NonlinearMpcOptions o;
  o.max_iterations = 1;
  const auto initial = evaluate_sequence(p, 172.0, Vector::Zero(10), w, 169.7);
  const NonlinearStep s = solve_nonlinear_mpc(p, 172.0, w, 169.7, 0.0, o);
  EXPECT_EQ(s.iterations, 1);
  EXPECT_LE(s.cost, initial.cost);
  EXPECT_TRUE(std::isfinite(s.u));
}

TEST(NonlinearMpc, SoftStartFromDeadBus) {
  LocalPlant p = coupled_plant();
  MpcWeights w;
  const NonlinearStep s = solve_nonlinear_mpc(p, 0.0, w, 169.7, 0.0);
  EXPECT_TRUE(std::isfinite(s.u));
  EXPECT_LT(s.kkt, 1e-8);
}

TEST(NonlinearMpc, AgreesWithKoopmanMpcWhenCouplingVanishes) {
  // Two uncoupled inverters with Q_ref = Q_L: each obeys tau dV/dt = -V + V_ref + u,
  // and the neighbour rests at V_ref, so the lifted model is exact.
  InverterParams inv;
  inv.q_ref = 1000.0;
  const auto model = MicrogridModel::from_topology(
      {inv, inv}, NetworkTopology::direct(Matrix::Zero(2, 2)),
      LoadSchedule({{0.0, 0, 0.0, 1000.0}, {0.0, 1, 0.0, 1000.0}}));
  const std::vector<Edge> e{{0, 1}};
  const CommGraph g = CommGraph::from_edges(2, e);
  ExcitationOptions x;
  x.seed = 5;
  const FitResult fit = fit_edmd(generate_excitation(model, g, 0, x).fit);

  MpcWeights w;  // timing-comparison tuning
  w.q = 1.0;
  w.r = 1.0;
  w.s = 0.0;
  w.horizon = 10;
  w.sample_time = 0.01;
  w.v_min = 160.0;
  w.v_max = 180.0;
  AgentController koopman(0, fit.predictor, w, g.laplacian().row(0).transpose(), inv.v_ref);
  NonlinearAgent nonlinear(0, w);
  for (double v0 : {165.0, 169.7, 172.0}) {
    GridState s;
    s.v = (Vector(2) << v0, inv.v_ref).finished();
    const double uk = koopman.step(s.v).u;
    const double un =
        nonlinear.step(s, model, model.topology, model.inverter_reactive_load(0.0, model.topology)).u;
    EXPECT_NEAR(uk, un, 1e-3) << "v0 " << v0;
  }
}
