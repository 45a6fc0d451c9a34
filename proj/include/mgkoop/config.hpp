#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mgkoop/graph.hpp"
#include "mgkoop/grid.hpp"
#include "mgkoop/koopman.hpp"
#include "mgkoop/mpc.hpp"
#include "mgkoop/nonlinear_mpc.hpp"

namespace mgkoop {

/// Anything wrong with a configuration file: syntax, missing keys, bad values.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ControllerKind { koopman_dmpc, nonlinear_mpc, droop_only };

ControllerKind parse_controller_kind(const std::string& name);
std::string to_string(ControllerKind k);

/// Network and inverter description, without any time schedule.
struct ModelConfig {
  std::vector<InverterParams> inverters;
  std::optional<Network> network;
  std::optional<NetworkTopology> direct_topology;
};

struct IdentificationConfig {
  ExcitationOptions excitation;
  double validation_horizon = 0.5;  // s, open-loop rollout length on held-out data
  double residual_ceiling = 0.05;   // relative EDMD residual above which the fit fails
  std::vector<LoadEvent> loads;     // load configuration during the experiments
};

struct ScenarioConfig {
  std::string name;
  std::filesystem::path source;  // file the scenario was read from, if any
  ModelConfig model_config;
  MicrogridModel model;          // model with this scenario's loads and line events
  ControllerKind controller = ControllerKind::koopman_dmpc;
  MpcWeights mpc;
  NonlinearMpcOptions nonlinear;
  SwitchSchedule graphs;
  IdentificationConfig identification;
  double duration = 10.0;
  double dt = 1e-3;
  std::optional<double> initial_voltage;  // every inverter at its v_ref when unset
  std::uint64_t seed = 1;
  std::optional<std::filesystem::path> predictors_dir;
  std::vector<int> sweep_horizons{2, 5, 10, 15, 20};

  /// Communication graph used while identifying (the first scheduled graph).
  const CommGraph& identification_graph() const { return graphs.events().front().second; }
  /// Model with the identification loads and no line events.
  MicrogridModel identification_model() const;
  /// Last time a load, line or graph event happens (0 when none after start).
  double last_disturbance() const;
};

/// Parses the network/inverter file. Node numbers in the file are 1-based.
ModelConfig parse_model(const std::string& yaml_text);
ModelConfig load_model(const std::filesystem::path& path);

/// Parses a scenario. Relative paths inside it resolve against `base_dir`.
ScenarioConfig parse_scenario(const std::string& yaml_text, const std::filesystem::path& base_dir);
ScenarioConfig load_scenario(const std::filesystem::path& path);

}  // namespace mgkoop
