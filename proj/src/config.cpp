#include "mgkoop/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace mgkoop {

ControllerKind parse_controller_kind(const std::string& name) {
  if (name == "koopman-dmpc") return ControllerKind::koopman_dmpc;
  if (name == "nonlinear-mpc") return ControllerKind::nonlinear_mpc;
  if (name == "droop-only") return ControllerKind::droop_only;
  throw ConfigError("unknown controller '" + name + "'");
}

std::string to_string(ControllerKind k) {
  switch (k) {
    case ControllerKind::koopman_dmpc: return "koopman-dmpc";
    case ControllerKind::nonlinear_mpc: return "nonlinear-mpc";
    case ControllerKind::droop_only: return "droop-only";
  }
  return "unknown";
}

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

YAML::Node parse_yaml(const std::string& text, const std::string& what) {
  try {
    YAML::Node root = YAML::Load(text);
    if (!root.IsMap()) throw ConfigError(what + ": top level must be a mapping");
    return root;
  } catch (const YAML::Exception& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

void allow_keys(const YAML::Node& node, std::initializer_list<const char*> keys,
                const std::string& where) {
  if (!node.IsMap()) throw ConfigError(where + ": expected a mapping");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
T get(const YAML::Node& node, const char* key, const std::string& where) {
  const YAML::Node v = node[key];
  if (!v) throw ConfigError(where + ": missing '" + key + "'");
  try {
    return v.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError(where + ": bad value for '" + key + "'");
  }
}

template <typename T>
T get_or(const YAML::Node& node, const char* key, T fallback, const std::string& where) {
  if (!node[key]) return fallback;
  return get<T>(node, key, where);
}

double finite(double x, const std::string& what) {
  if (!std::isfinite(x)) throw ConfigError(what + " must be finite");
  return x;
}

InverterParams parse_inverter(const YAML::Node& node, const InverterParams& defaults,
                              const std::string& where) {
  allow_keys(node, {"name", "node", "v_ref", "q_ref", "p_ref", "nq", "mp", "tau"}, where);
  InverterParams p = defaults;
  p.name = get_or<std::string>(node, "name", p.name, where);
  p.node = get<int>(node, "node", where) - 1;
  p.v_ref = get_or(node, "v_ref", p.v_ref, where);
  p.q_ref = get_or(node, "q_ref", p.q_ref, where);
  p.p_ref = get_or(node, "p_ref", p.p_ref, where);
  p.nq = get_or(node, "nq", p.nq, where);
  p.mp = get_or(node, "mp", p.mp, where);
  p.tau = get_or(node, "tau", p.tau, where);
  return p;
}

std::vector<LoadEvent> parse_loads(const YAML::Node& node, const std::string& where) {
  std::vector<LoadEvent> out;
  if (!node) return out;
  if (!node.IsSequence()) throw ConfigError(where + ": expected a list");
  for (std::size_t k = 0; k < node.size(); ++k) {
    const std::string w = where + "[" + std::to_string(k) + "]";
    allow_keys(node[k], {"time", "node", "p", "q"}, w);
    LoadEvent e;
    e.time = finite(get_or(node[k], "time", 0.0, w), w + ".time");
    e.node = get<int>(node[k], "node", w) - 1;
    e.p = finite(get_or(node[k], "p", 0.0, w), w + ".p");
    e.q = finite(get_or(node[k], "q", 0.0, w), w + ".q");
    if (e.node < 0) throw ConfigError(w + ": node numbers start at 1");
    out.push_back(e);
  }
  return out;
}

std::vector<Edge> parse_edges(const YAML::Node& node, const std::string& where) {
  if (!node || !node.IsSequence()) throw ConfigError(where + ": expected a list of [a, b] pairs");
  std::vector<Edge> edges;
  for (std::size_t k = 0; k < node.size(); ++k) {
    if (!node[k].IsSequence() || node[k].size() != 2) {
      throw ConfigError(where + ": each edge is a pair of 1-based agent numbers");
    }
    edges.push_back({node[k][0].as<int>() - 1, node[k][1].as<int>() - 1});
  }
  return edges;
}

void parse_identification(const YAML::Node& node, IdentificationConfig& id,
                          const std::string& where) {
  allow_keys(node, {"window", "dwell", "amplitude", "sample_dt", "trajectories", "fit_fraction",
                    "random_initial", "neighbor", "validation_horizon", "residual_ceiling",
                    "loads"},
             where);
  auto& ex = id.excitation;
  ex.window = get_or(node, "window", ex.window, where);
  ex.dwell = get_or(node, "dwell", ex.dwell, where);
  ex.amplitude = get_or(node, "amplitude", ex.amplitude, where);
  ex.sample_dt = get_or(node, "sample_dt", ex.sample_dt, where);
  ex.trajectories = get_or(node, "trajectories", ex.trajectories, where);
  ex.fit_fraction = get_or(node, "fit_fraction", ex.fit_fraction, where);
  ex.random_initial = get_or(node, "random_initial", ex.random_initial, where);
  if (node["neighbor"]) {
    try {
      ex.neighbor = parse_neighbor_strategy(get<std::string>(node, "neighbor", where));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  id.validation_horizon = get_or(node, "validation_horizon", id.validation_horizon, where);
  id.residual_ceiling = get_or(node, "residual_ceiling", id.residual_ceiling, where);
  if (node["loads"]) id.loads = parse_loads(node["loads"], where + ".loads");
  if (!(ex.window > 0.0) || !(ex.dwell > 0.0) || !(ex.sample_dt > 0.0) || ex.amplitude < 0.0 ||
      ex.trajectories < 1 || !(ex.fit_fraction > 0.0 && ex.fit_fraction < 1.0) ||
      !(id.validation_horizon > 0.0) || !(id.residual_ceiling > 0.0)) {
    throw ConfigError(where + ": values out of range");
  }
}

}  // namespace

ModelConfig parse_model(const std::string& yaml_text) {
  const YAML::Node root = parse_yaml(yaml_text, "model");
  const std::string w = "model";
  allow_keys(root, {"nodes", "omega", "load_mapping", "inverter_defaults", "inverters", "lines",
                    "susceptance"},
             w);
  ModelConfig out;
  InverterParams defaults;
  if (root["inverter_defaults"]) {
    const YAML::Node d = root["inverter_defaults"];
    allow_keys(d, {"v_ref", "q_ref", "p_ref", "nq", "mp", "tau"}, w + ".inverter_defaults");
    defaults.v_ref = get_or(d, "v_ref", defaults.v_ref, w);
    defaults.q_ref = get_or(d, "q_ref", defaults.q_ref, w);
    defaults.p_ref = get_or(d, "p_ref", defaults.p_ref, w);
    defaults.nq = get_or(d, "nq", defaults.nq, w);
    defaults.mp = get_or(d, "mp", defaults.mp, w);
    defaults.tau = get_or(d, "tau", defaults.tau, w);
  }
  const YAML::Node invs = root["inverters"];
  if (!invs || !invs.IsSequence() || invs.size() == 0) {
    throw ConfigError("model: 'inverters' must be a non-empty list");
  }
  for (std::size_t k = 0; k < invs.size(); ++k) {
    const std::string where = "model.inverters[" + std::to_string(k) + "]";
    InverterParams p = parse_inverter(invs[k], defaults, where);
    if (p.name.empty()) p.name = "DG" + std::to_string(k + 1);
    try {
      p.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where + ": " + e.what());
    }
    out.inverters.push_back(p);
  }

  try {
    if (root["susceptance"]) {
      if (root["lines"]) throw ConfigError("model: give either 'lines' or 'susceptance'");
      const YAML::Node s = root["susceptance"];
      const auto n = static_cast<int>(out.inverters.size());
      if (!s.IsSequence() || static_cast<int>(s.size()) != n) {
        throw ConfigError("model: susceptance must be an n x n list");
      }
      Matrix b(n, n);
      for (int i = 0; i < n; ++i) {
        if (!s[i].IsSequence() || static_cast<int>(s[i].size()) != n) {
          throw ConfigError("model: susceptance must be an n x n list");
        }
        for (int j = 0; j < n; ++j) b(i, j) = s[i][j].as<double>();
      }
      out.direct_topology = NetworkTopology::direct(b);
      out.direct_topology->validate();
      for (int i = 0; i < n; ++i) out.inverters[i].node = i;
    } else {
      const int nodes = get<int>(root, "nodes", w);
      const double omega = get_or(root, "omega", kNominalOmega, w);
      const std::string mapping = get_or<std::string>(root, "load_mapping", "kron", w);
      LoadMapping lm;
      if (mapping == "kron") {
        lm = LoadMapping::kron;
      } else if (mapping == "nearest") {
        lm = LoadMapping::nearest;
      } else {
        throw ConfigError("model: load_mapping must be 'kron' or 'nearest'");
      }
      const YAML::Node lines = root["lines"];
      if (!lines || !lines.IsSequence()) throw ConfigError("model: 'lines' must be a list");
      std::vector<Line> parsed;
      for (std::size_t k = 0; k < lines.size(); ++k) {
        const std::string where = "model.lines[" + std::to_string(k) + "]";
        allow_keys(lines[k], {"id", "from", "to", "inductance_mh", "closed"}, where);
        Line l;
        l.id = get<std::string>(lines[k], "id", where);
        l.from = get<int>(lines[k], "from", where) - 1;
        l.to = get<int>(lines[k], "to", where) - 1;
        l.inductance = get<double>(lines[k], "inductance_mh", where) * 1e-3;
        l.closed = get_or(lines[k], "closed", true, where);
        parsed.push_back(l);
      }
      std::vector<int> inv_nodes;
      for (const auto& p : out.inverters) inv_nodes.push_back(p.node);
      out.network.emplace(nodes, inv_nodes, parsed, lm, omega);
      out.network->reduce();  // surfaces disconnected networks at load time
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  } catch (const std::exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  return out;
}

ModelConfig load_model(const std::filesystem::path& path) { return parse_model(read_file(path)); }

MicrogridModel ScenarioConfig::identification_model() const {
  LoadSchedule loads(identification.loads);
  if (model_config.network) {
    return MicrogridModel::from_network(model_config.inverters, *model_config.network, loads);
  }
  return MicrogridModel::from_topology(model_config.inverters, *model_config.direct_topology,
                                       loads);
}

double ScenarioConfig::last_disturbance() const {
  double last = 0.0;
  for (double t : model.event_times()) last = std::max(last, t);
  for (const auto& ev : graphs.events()) last = std::max(last, ev.first);
  return last;
}

ScenarioConfig parse_scenario(const std::string& yaml_text, const std::filesystem::path& base_dir) {
  const YAML::Node root = parse_yaml(yaml_text, "scenario");
  const std::string w = "scenario";
  allow_keys(root, {"name", "model", "controller", "duration", "dt", "seed", "initial_voltage",
                    "mpc", "nonlinear", "communication", "loads", "line_events", "identification",
                    "predictors", "sweep_horizons"},
             w);
  ScenarioConfig cfg;
  try {
    cfg.name = get<std::string>(root, "name", w);
    const YAML::Node model_node = root["model"];
    if (!model_node) throw ConfigError("scenario: missing 'model'");
    if (model_node.IsScalar()) {
      std::filesystem::path p = model_node.as<std::string>();
      if (p.is_relative()) p = base_dir / p;
      cfg.model_config = load_model(p);
    } else {
      YAML::Emitter em;
      em << model_node;
      cfg.model_config = parse_model(em.c_str());
    }
    cfg.controller = parse_controller_kind(get_or<std::string>(root, "controller", "koopman-dmpc", w));
    cfg.duration = finite(get_or(root, "duration", cfg.duration, w), "duration");
    cfg.dt = finite(get_or(root, "dt", cfg.dt, w), "dt");
    if (!(cfg.duration > 0.0) || !(cfg.dt > 0.0)) throw ConfigError("scenario: duration and dt must be > 0");
    cfg.seed = get_or<std::uint64_t>(root, "seed", cfg.seed, w);
    if (root["initial_voltage"]) {
      const YAML::Node iv = root["initial_voltage"];
      if (!(iv.IsScalar() && iv.as<std::string>() == "ref")) {
        cfg.initial_voltage = finite(get<double>(root, "initial_voltage", w), "initial_voltage");
      }
    }

    if (const YAML::Node m = root["mpc"]) {
      allow_keys(m, {"q", "r", "s", "horizon", "sample_time", "v_min", "v_max", "slack_penalty",
                     "target"},
                 w + ".mpc");
      auto& mp = cfg.mpc;
      mp.q = get_or(m, "q", mp.q, w);
      mp.r = get_or(m, "r", mp.r, w);
      mp.s = get_or(m, "s", mp.s, w);
      mp.horizon = get_or(m, "horizon", mp.horizon, w);
      mp.sample_time = get_or(m, "sample_time", mp.sample_time, w);
      mp.v_min = get_or(m, "v_min", mp.v_min, w);
      mp.v_max = get_or(m, "v_max", mp.v_max, w);
      mp.slack_penalty = get_or(m, "slack_penalty", mp.slack_penalty, w);
      if (m["target"]) mp.target = get<double>(m, "target", w);
    }
    cfg.mpc.validate();
    if (const YAML::Node nl = root["nonlinear"]) {
      allow_keys(nl, {"tolerance", "max_iterations"}, w + ".nonlinear");
      cfg.nonlinear.tolerance = get_or(nl, "tolerance", cfg.nonlinear.tolerance, w);
      cfg.nonlinear.max_iterations = get_or(nl, "max_iterations", cfg.nonlinear.max_iterations, w);
      if (!(cfg.nonlinear.tolerance > 0.0) || cfg.nonlinear.max_iterations < 1) {
        throw ConfigError("scenario.nonlinear: values out of range");
      }
    }
    cfg.nonlinear.plant_dt = cfg.dt;

    const int n = static_cast<int>(cfg.model_config.inverters.size());
    const YAML::Node comm = root["communication"];
    if (!comm || !comm.IsSequence() || comm.size() == 0) {
      throw ConfigError("scenario: 'communication' must list at least one graph");
    }
    for (std::size_t k = 0; k < comm.size(); ++k) {
      const std::string where = "scenario.communication[" + std::to_string(k) + "]";
      allow_keys(comm[k], {"time", "edges"}, where);
      const double t = get_or(comm[k], "time", 0.0, where);
      if (k == 0 && t != 0.0) throw ConfigError(where + ": the first graph must start at time 0");
      const auto edges = parse_edges(comm[k]["edges"], where + ".edges");
      CommGraph g = CommGraph::from_edges(n, edges);
      if (k == 0) {
        cfg.graphs = SwitchSchedule(std::move(g));
      } else {
        cfg.graphs.add(t, std::move(g));
      }
    }

    const std::vector<LoadEvent> loads = parse_loads(root["loads"], "scenario.loads");
    std::vector<LineEvent> line_events;
    if (const YAML::Node le = root["line_events"]) {
      if (!le.IsSequence()) throw ConfigError("scenario.line_events: expected a list");
      for (std::size_t k = 0; k < le.size(); ++k) {
        const std::string where = "scenario.line_events[" + std::to_string(k) + "]";
        allow_keys(le[k], {"time", "line", "closed"}, where);
        line_events.push_back({get<double>(le[k], "time", where),
                               get<std::string>(le[k], "line", where),
                               get<bool>(le[k], "closed", where)});
      }
      std::stable_sort(line_events.begin(), line_events.end(),
                       [](const LineEvent& a, const LineEvent& b) { return a.time < b.time; });
    }
    if (cfg.model_config.network) {
      for (const auto& e : line_events) {
        const auto& lines = cfg.model_config.network->lines();
        if (std::none_of(lines.begin(), lines.end(), [&](const Line& l) { return l.id == e.line; })) {
          throw ConfigError("scenario.line_events: unknown line '" + e.line + "'");
        }
      }
      cfg.model = MicrogridModel::from_network(cfg.model_config.inverters,
                                               *cfg.model_config.network, LoadSchedule(loads),
                                               line_events);
    } else {
      if (!line_events.empty()) throw ConfigError("scenario: line events need a 'lines' model");
      cfg.model = MicrogridModel::from_topology(cfg.model_config.inverters,
                                                *cfg.model_config.direct_topology,
                                                LoadSchedule(loads));
    }
    cfg.model.validate();

    if (const YAML::Node id = root["identification"]) {
      if (id.IsScalar()) {
        // shared identification settings from another scenario file
        std::filesystem::path p = id.as<std::string>();
        if (p.is_relative()) p = base_dir / p;
        const ScenarioConfig other = load_scenario(p);
        cfg.identification = other.identification;
      } else {
        parse_identification(id, cfg.identification, "scenario.identification");
      }
    } else {
      cfg.identification.loads = loads;
    }
    cfg.identification.excitation.seed = cfg.seed;
    cfg.identification.excitation.sample_dt = cfg.dt;

    if (root["predictors"]) {
      std::filesystem::path p = get<std::string>(root, "predictors", w);
      if (p.is_relative()) p = base_dir / p;
      cfg.predictors_dir = p;
    }
    if (const YAML::Node sh = root["sweep_horizons"]) {
      cfg.sweep_horizons = sh.as<std::vector<int>>();
      if (cfg.sweep_horizons.empty() ||
          std::any_of(cfg.sweep_horizons.begin(), cfg.sweep_horizons.end(),
                      [](int h) { return h < 1; })) {
        throw ConfigError("scenario.sweep_horizons: horizons must be >= 1");
      }
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("scenario: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("scenario: ") + e.what());
  } catch (const std::out_of_range& e) {
    throw ConfigError(std::string("scenario: ") + e.what());
  }
  return cfg;
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
  ScenarioConfig cfg = parse_scenario(read_file(path), path.parent_path());
  cfg.source = path;
  return cfg;
}

}  // namespace mgkoop
