#include "mgkoop/koopman.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace mgkoop {

Lifted lift(double v_i, double v_j) {
  const double d = v_i - v_j;
  Lifted psi;
  psi << v_i, v_j, d, d * d;
  return psi;
}

NeighborStrategy parse_neighbor_strategy(const std::string& name) {
  if (name == "mean") return NeighborStrategy::mean;
  if (name == "susceptance_weighted") return NeighborStrategy::susceptance_weighted;
  if (name == "strongest") return NeighborStrategy::strongest;
  throw std::invalid_argument("unknown neighbour strategy '" + name + "'");
}

std::string to_string(NeighborStrategy s) {
  switch (s) {
    case NeighborStrategy::mean: return "mean";
    case NeighborStrategy::susceptance_weighted: return "susceptance_weighted";
    case NeighborStrategy::strongest: return "strongest";
  }
  return "mean";
}

double neighbor_aggregate(const Vector& v, int i, const CommGraph& graph,
                          NeighborStrategy strategy, const Matrix* susceptance) {
  if (v.size() != graph.size()) throw std::invalid_argument("neighbor_aggregate: size mismatch");
  const std::vector<int> nbrs = graph.neighbors(i);
  if (nbrs.empty()) {
    throw std::invalid_argument("neighbor_aggregate: agent " + std::to_string(i) + " is isolated");
  }
  if (strategy == NeighborStrategy::mean) {
    double sum = 0.0;
    for (int j : nbrs) sum += v(j);
    return sum / static_cast<double>(nbrs.size());
  }
  if (susceptance == nullptr || susceptance->rows() != v.size()) {
    throw std::invalid_argument("neighbor_aggregate: weighted strategy needs the susceptance matrix");
  }
  if (strategy == NeighborStrategy::strongest) {
    int best = nbrs.front();
    for (int j : nbrs) {
      if ((*susceptance)(i, j) > (*susceptance)(i, best)) best = j;
    }
    return v(best);
  }
  double num = 0.0;
  double den = 0.0;
  for (int j : nbrs) {
    num += (*susceptance)(i, j) * v(j);
    den += (*susceptance)(i, j);
  }
  if (!(den > 0.0)) {
    // no electrical coupling to any neighbour
    double sum = 0.0;
    for (int j : nbrs) sum += v(j);
    return sum / static_cast<double>(nbrs.size());
  }
  return num / den;
}

void SnapshotSet::validate() const {
  const auto m = x.rows();
  if (x.cols() != kLiftDim || y.cols() != kLiftDim || u.cols() != 1 || raw_x.cols() != 2 ||
      raw_y.cols() != 2) {
    throw std::invalid_argument("snapshot set: wrong column counts");
  }
  if (y.rows() != m || u.rows() != m || raw_x.rows() != m || raw_y.rows() != m) {
    throw std::invalid_argument("snapshot set: row counts differ");
  }
  if (segments.empty() || segments.front() != 0 ||
      !std::is_sorted(segments.begin(), segments.end())) {
    throw std::invalid_argument("snapshot set: bad segment table");
  }
  if (!(sample_dt > 0.0)) throw std::invalid_argument("snapshot set: sample_dt must be > 0");
}

SnapshotSet SnapshotSet::from_raw(const Matrix& raw_x, const Matrix& raw_y, const Matrix& u,
                                  double sample_dt, std::vector<int> segments) {
  SnapshotSet s;
  s.raw_x = raw_x;
  s.raw_y = raw_y;
  s.u = u;
  s.sample_dt = sample_dt;
  s.segments = std::move(segments);
  const auto m = raw_x.rows();
  s.x.resize(m, kLiftDim);
  s.y.resize(m, kLiftDim);
  for (Eigen::Index r = 0; r < m; ++r) {
    s.x.row(r) = lift(raw_x(r, 0), raw_x(r, 1)).transpose();
    s.y.row(r) = lift(raw_y(r, 0), raw_y(r, 1)).transpose();
  }
  s.validate();
  return s;
}

SnapshotSet SnapshotSet::concat(const std::vector<SnapshotSet>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: nothing to join");
  Eigen::Index total = 0;
  for (const auto& p : parts) total += p.rows();
  SnapshotSet out;
  out.sample_dt = parts.front().sample_dt;
  out.x.resize(total, kLiftDim);
  out.y.resize(total, kLiftDim);
  out.u.resize(total, 1);
  out.raw_x.resize(total, 2);
  out.raw_y.resize(total, 2);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    if (p.sample_dt != out.sample_dt) throw std::invalid_argument("concat: sample_dt differs");
    const auto m = p.rows();
    out.x.middleRows(at, m) = p.x;
    out.y.middleRows(at, m) = p.y;
    out.u.middleRows(at, m) = p.u;
    out.raw_x.middleRows(at, m) = p.raw_x;
    out.raw_y.middleRows(at, m) = p.raw_y;
    for (int s : p.segments) out.segments.push_back(static_cast<int>(at) + s);
    at += m;
  }
  out.validate();
  return out;
}

std::string SnapshotSet::to_csv() const {
  std::string out = "v_i,v_j,u,v_i_next,v_j_next\n";
  for (int r = 0; r < rows(); ++r) {
    out += format_double(raw_x(r, 0)) + "," + format_double(raw_x(r, 1)) + "," +
           format_double(u(r, 0)) + "," + format_double(raw_y(r, 0)) + "," +
           format_double(raw_y(r, 1)) + "\n";
  }
  return out;
}

SnapshotSet SnapshotSet::from_csv(std::string_view text, double sample_dt) {
  const auto nl = text.find('\n');
  if (nl == std::string_view::npos) throw std::invalid_argument("snapshot csv: missing header");
  const Matrix m = parse_csv_matrix(text.substr(nl + 1));
  if (m.cols() != 5) throw std::invalid_argument("snapshot csv: expected 5 columns");
  Matrix raw_x(m.rows(), 2), raw_y(m.rows(), 2);
  raw_x << m.col(0), m.col(1);
  raw_y << m.col(3), m.col(4);
  return from_raw(raw_x, raw_y, m.col(2), sample_dt);
}

ExcitationData generate_excitation(const MicrogridModel& model, const CommGraph& graph, int agent,
                                   const ExcitationOptions& options) {
  const int n = model.size();
  if (agent < 0 || agent >= n) throw std::out_of_range("generate_excitation: agent index");
  if (graph.size() != n) throw std::invalid_argument("generate_excitation: graph size");
  if (!(options.window > 0.0) || !(options.sample_dt > 0.0) || !(options.dwell > 0.0) ||
      options.trajectories < 1 || !(options.fit_fraction > 0.0 && options.fit_fraction < 1.0) ||
      options.amplitude < 0.0) {
    throw std::invalid_argument("generate_excitation: bad options");
  }

  const long samples = std::lround(options.window / options.sample_dt);
  const long pairs = samples - 1;
  const long dwell_steps = std::max(1L, std::lround(options.dwell / options.sample_dt));
  const long fit_rows = static_cast<long>(std::floor(options.fit_fraction * static_cast<double>(pairs)));
  if (fit_rows < 1 || fit_rows >= pairs) throw std::invalid_argument("generate_excitation: window too short");

  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> input_dist(-options.amplitude, options.amplitude);
  const double v_ref = model.inverters[agent].v_ref;
  std::uniform_real_distribution<double> init_dist(0.0, v_ref);

  std::vector<SnapshotSet> fit_parts;
  std::vector<SnapshotSet> val_parts;
  for (int traj = 0; traj < options.trajectories; ++traj) {
    GridState state;
    state.v.resize(n);
    for (int i = 0; i < n; ++i) state.v(i) = model.inverters[i].v_ref;
    if (options.random_initial) state.v(agent) = init_dist(rng);
    NetworkTopology topo = model.topology_at(0.0);
    Vector q_load = model.inverter_reactive_load(0.0, topo);
    state.q_mean = q_load + reactive_power_all(state.v, topo);
    state.delta = Vector::Zero(n);

    const Matrix* weights = &topo.susceptance;
    Matrix raw(samples, 2);
    Matrix inputs(samples, 1);
    Vector u = Vector::Zero(n);
    const std::vector<double> events = model.event_times();
    for (long k = 0; k < samples; ++k) {
      const double t = static_cast<double>(k) * options.sample_dt;
      if (k > 0 && std::any_of(events.begin(), events.end(), [&](double e) {
            return e > t - options.sample_dt + 1e-9 && e <= t + 1e-9;
          })) {
        topo = model.topology_at(t + 1e-9);
        q_load = model.inverter_reactive_load(t + 1e-9, topo);
      }
      if (k % dwell_steps == 0) u(agent) = input_dist(rng);
      raw(k, 0) = state.v(agent);
      raw(k, 1) = neighbor_aggregate(state.v, agent, graph, options.neighbor, weights);
      inputs(k, 0) = u(agent);
      if (k + 1 < samples) state = step(state, u, options.sample_dt, model, topo, q_load);
    }

    const Matrix rx = raw.topRows(pairs);
    const Matrix ry = raw.bottomRows(pairs);
    const Matrix ru = inputs.topRows(pairs);
    fit_parts.push_back(SnapshotSet::from_raw(rx.topRows(fit_rows), ry.topRows(fit_rows),
                                              ru.topRows(fit_rows), options.sample_dt));
    val_parts.push_back(SnapshotSet::from_raw(rx.bottomRows(pairs - fit_rows),
                                              ry.bottomRows(pairs - fit_rows),
                                              ru.bottomRows(pairs - fit_rows), options.sample_dt));
  }
  return {SnapshotSet::concat(fit_parts), SnapshotSet::concat(val_parts)};
}

void LiftedPredictor::validate() const {
  if (a.rows() != kLiftDim || a.cols() != kLiftDim || b.rows() != kLiftDim || b.cols() != 1 ||
      c.rows() != 1 || c.cols() != kLiftDim) {
    throw std::invalid_argument("predictor: wrong matrix shapes");
  }
  require_finite(a, "predictor A");
  require_finite(b, "predictor B");
  require_finite(c, "predictor C");
  if (!(sample_dt > 0.0)) throw std::invalid_argument("predictor: sample_dt must be > 0");
  if (basis != kBasisTag) throw std::invalid_argument("predictor: unknown basis '" + basis + "'");
}

LiftedPredictor LiftedPredictor::resampled(int steps) const {
  if (steps < 1) throw std::invalid_argument("resampled: steps must be >= 1");
  LiftedPredictor out = *this;
  Matrix power = Matrix::Identity(kLiftDim, kLiftDim);
  Matrix b_sum = Matrix::Zero(kLiftDim, 1);
  for (int k = 0; k < steps; ++k) {
    b_sum += power * b;
    power = a * power;
  }
  out.a = power;
  out.b = b_sum;
  out.sample_dt = sample_dt * steps;
  return out;
}

namespace {

void emit_rows(std::ostringstream& out, const Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out << "  - [";
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? ", " : "") << format_double(m(i, j));
    out << "]\n";
  }
}

Matrix read_rows(const YAML::Node& node, int rows, int cols, const char* what) {
  if (!node || !node.IsSequence() || static_cast<int>(node.size()) != rows) {
    throw std::invalid_argument(std::string("predictor file: bad '") + what + "'");
  }
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    if (!node[i].IsSequence() || static_cast<int>(node[i].size()) != cols) {
      throw std::invalid_argument(std::string("predictor file: bad row in '") + what + "'");
    }
    for (int j = 0; j < cols; ++j) m(i, j) = node[i][j].as<double>();
  }
  return m;
}

}  // namespace

std::string LiftedPredictor::serialize() const {
  std::ostringstream out;
  out << "basis: " << basis << "\n";
  out << "sample_dt: " << format_double(sample_dt) << "\n";
  out << "a:\n";
  emit_rows(out, a);
  out << "b:\n";
  emit_rows(out, b);
  out << "c:\n";
  emit_rows(out, c);
  return out.str();
}

LiftedPredictor LiftedPredictor::deserialize(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw std::invalid_argument(std::string("predictor file: ") + e.what());
  }
  LiftedPredictor p;
  try {
    p.basis = root["basis"].as<std::string>();
    p.sample_dt = root["sample_dt"].as<double>();
    p.a = read_rows(root["a"], kLiftDim, kLiftDim, "a");
    p.b = read_rows(root["b"], kLiftDim, 1, "b");
    p.c = read_rows(root["c"], 1, kLiftDim, "c");
  } catch (const YAML::Exception& e) {
    throw std::invalid_argument(std::string("predictor file: ") + e.what());
  }
  p.validate();
  return p;
}

void LiftedPredictor::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << serialize();
}

LiftedPredictor LiftedPredictor::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

FitResult fit_edmd(const SnapshotSet& data, double tolerance) {
  data.validate();
  const int m = data.rows();
  if (m < kLiftDim + 1) throw std::invalid_argument("fit_edmd: need at least 5 snapshot rows");
  require_finite(data.x, "fit_edmd X");
  require_finite(data.y, "fit_edmd Y");
  require_finite(data.u, "fit_edmd U");

  Matrix z(m, kLiftDim + 1);
  z << data.x, data.u;
  const Matrix theta = least_squares(z, data.y, tolerance);  // (4+1) x 4
  FitResult out;
  out.predictor.a = theta.topRows(kLiftDim).transpose();
  out.predictor.b = theta.bottomRows(1).transpose();
  out.predictor.c = least_squares(data.x, data.raw_x.col(0), tolerance).transpose();
  out.predictor.sample_dt = data.sample_dt;

  const Matrix residual = data.y - z * theta;
  out.report.rows = m;
  out.report.regression_rank = numerical_rank(z, tolerance);
  out.report.rank_deficient = out.report.regression_rank < kLiftDim + 1;
  out.report.residual_fro = residual.norm();
  const double y_norm = data.y.norm();
  out.report.relative_residual = y_norm > 0.0 ? out.report.residual_fro / y_norm : 0.0;
  out.report.projection_residual =
      (data.raw_x.col(0) - data.x * out.predictor.c.transpose()).cwiseAbs().maxCoeff();
  out.report.spectral_radius = spectral_radius(out.predictor.a);
  return out;
}

std::vector<double> predict(const LiftedPredictor& p, const Lifted& psi0,
                            const std::vector<double>& u_seq) {
  if (!psi0.allFinite()) throw std::invalid_argument("predict: non-finite initial lift");
  std::vector<double> out;
  out.reserve(u_seq.size() + 1);
  Vector psi = psi0;
  out.push_back((p.c * psi)(0));
  for (double u : u_seq) {
    psi = p.a * psi + p.b * u;
    out.push_back((p.c * psi)(0));
  }
  return out;
}

double ErrorCurve::overall_max() const {
  return max.empty() ? 0.0 : *std::max_element(max.begin(), max.end());
}

ErrorCurve prediction_error(const LiftedPredictor& p, const SnapshotSet& validation, int horizon,
                            double v_ref) {
  validation.validate();
  if (horizon < 1 || horizon > validation.rows()) {
    throw std::invalid_argument("prediction_error: horizon must be in [1, validation rows]");
  }
  if (!(v_ref > 0.0)) throw std::invalid_argument("prediction_error: v_ref must be > 0");
  ErrorCurve curve;
  curve.mean.assign(horizon, 0.0);
  curve.max.assign(horizon, 0.0);

  std::vector<int> bounds = validation.segments;
  bounds.push_back(validation.rows());
  for (std::size_t s = 0; s + 1 < bounds.size(); ++s) {
    for (int start = bounds[s]; start + horizon <= bounds[s + 1]; start += horizon) {
      Vector psi = validation.x.row(start).transpose();
      for (int k = 1; k <= horizon; ++k) {
        const int row = start + k - 1;
        psi = p.a * psi + p.b * validation.u(row, 0);
        const double err = std::abs((p.c * psi)(0) - validation.raw_y(row, 0)) / v_ref;
        curve.mean[k - 1] += err;
        curve.max[k - 1] = std::max(curve.max[k - 1], err);
      }
      ++curve.windows;
    }
  }
  if (curve.windows == 0) throw std::invalid_argument("prediction_error: no complete window");
  for (double& m : curve.mean) m /= curve.windows;
  return curve;
}

}  // namespace mgkoop
