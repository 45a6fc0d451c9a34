#pragma once

#include <filesystem>
#include <random>
#include <vector>

#include "mgkoop/config.hpp"
#include "mgkoop/harness.hpp"
#include "mgkoop/numerics.hpp"

namespace mgkoop::testing {

inline std::filesystem::path source_dir() { return MGKOOP_SOURCE_DIR; }
inline std::filesystem::path fixture(const char* name) { return source_dir() / "fixtures" / name; }
inline std::filesystem::path scenario(const char* name) { return source_dir() / "scenarios" / name; }

inline Matrix random_matrix(std::mt19937_64& rng, int rows, int cols, double scale = 1.0) {
  std::uniform_real_distribution<double> d(-scale, scale);
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = d(rng);
  }
  return m;
}

inline Matrix random_spd(std::mt19937_64& rng, int n, double floor = 0.5) {
  const Matrix m = random_matrix(rng, n, n);
  return m * m.transpose() + floor * Matrix::Identity(n, n);
}

/// Scenario with its predictor cache redirected into a per-test scratch directory.
inline ScenarioConfig scratch_scenario(const char* file) {
  ScenarioConfig cfg = load_scenario(scenario(file));
  cfg.predictors_dir = std::filesystem::temp_directory_path() / "mgkoop_test_predictors";
  return cfg;
}

/// Plant predictors identified once per test binary.
inline const std::vector<LiftedPredictor>& plant_predictors() {
  static const std::vector<LiftedPredictor> p =
      run_identification(load_scenario(scenario("identification.yaml"))).predictors();
  return p;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mgkoop_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace mgkoop::testing
