#pragma once

// JSON run configurations, the run manifest, and helpers shared by the CLI
// commands. Schemas are documented in docs/file_formats.md.

#include <optional>
#include <string>

#include "odebundle/bench.hpp"
#include "odebundle/bundle.hpp"
#include "odebundle/training.hpp"
#include "odebundle/uq.hpp"

namespace odebundle {

inline constexpr const char* kToolVersion = "0.1.0";

nlohmann::json load_json_file(const std::string& path);
void write_json_file(const nlohmann::json& j, const std::string& path);

// If `j` is a run manifest, returns its embedded config (with the recorded
// seed applied); otherwise returns `j` unchanged.
nlohmann::json unwrap_manifest(const nlohmann::json& j);

nlohmann::json make_manifest(const std::string& command, const nlohmann::json& resolved_config,
                             std::uint64_t seed, int threads);

// ---------------------------------------------------------------------------
// Train

struct RunConfig {
  std::string system;
  NetworkSpec network;
  BundleConfig bundle;
  TrainingConfig training;
  std::string output_dir;
};

// Parses the human-facing schema (free/fixed parameters by name) and
// validates against the system. Accepts a manifest wrapper.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& config);

Bundle bundle_from_checkpoint(const Checkpoint& ckpt);

// ---------------------------------------------------------------------------
// Other commands

struct EvalConfig {
  std::string checkpoint;
  std::string queries_file;  // CSV: t, states..., free thetas...
  // or an inline grid over t at fixed (x0, theta):
  std::optional<std::array<double, 3>> t_grid;  // lo, hi, count
  std::vector<double> x0;
  std::vector<double> theta;
  std::string output;  // CSV path
};
EvalConfig eval_config_from_json(const nlohmann::json& j);

struct PropagateConfig {
  std::string checkpoint;
  std::vector<int> divisions;  // per x0 axis
  nlohmann::json p0;           // {"kind": "gaussian"|"two_measurement", ...}
  std::vector<double> times;
  HistogramSpec histogram;
  std::vector<double> theta;  // free parameter values
  bool normalize = true;
  std::string output_dir;
};
PropagateConfig propagate_config_from_json(const nlohmann::json& j);

struct InferConfig {
  std::string checkpoint;
  std::string data_file;  // CSV: t, component, value, sigma
  std::vector<GridAxis> axes;
  std::vector<double> x0_base;
  std::vector<double> theta_base;
  bool map_enabled = false;
  std::vector<double> map_x0_init;
  std::vector<double> map_theta_init;
  MapOptions map_options;
  std::string output_dir;
};
InferConfig infer_config_from_json(const nlohmann::json& j);

struct BenchNetwork {
  std::string name;
  std::string checkpoint;
};

struct BenchConfig {
  std::vector<BenchNetwork> networks;
  std::vector<double> budgets;  // FLOP budgets for the stepper contenders
  std::vector<int> table_divisions;
  int samples = 10000;
  std::uint64_t seed = 0;
  double oracle_h = 1e-3;
  FlopModel flop_model;
  std::string output_dir;
};
BenchConfig bench_config_from_json(const nlohmann::json& j);

// Measurements from a long-format CSV: t,component,value,sigma. Rows sharing
// a time merge into one measurement; file order defines measurement order.
std::vector<GaussianMeasurement> load_measurements_csv(const std::string& path,
                                                       const OdeSystem& system);
void write_measurements_csv(std::span<const GaussianMeasurement> data, const std::string& path);

GridAxis grid_axis_from_json(const nlohmann::json& j, const OdeSystem& system,
                             const BundleConfig& bundle);

}  // namespace odebundle
