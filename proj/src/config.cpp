#include "odebundle/config.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace odebundle {

nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("failed to parse JSON from " + path + ": " + e.what());
  }
}

void write_json_file(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open file for writing: " + path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("failed writing file: " + path);
}

nlohmann::json unwrap_manifest(const nlohmann::json& j) {
  if (j.is_object() && j.value("format", "") == "odebundle-manifest") {
    nlohmann::json config = j.at("config");
    if (j.contains("seed") && config.contains("training"))
      config["training"]["seed"] = j.at("seed");
    return config;
  }
  return j;
}

nlohmann::json make_manifest(const std::string& command, const nlohmann::json& resolved_config,
                             std::uint64_t seed, int threads) {
  return {{"format", "odebundle-manifest"}, {"version", 1},        {"command", command},
          {"tool_version", kToolVersion},   {"seed", seed},        {"threads", threads},
          {"config", resolved_config}};
}

// ---------------------------------------------------------------------------
// Train config

namespace {

BundleConfig parse_bundle(const nlohmann::json& j, const OdeSystem& system) {
  BundleConfig config;
  config.t0 = j.at("t0").get<double>();
  config.tf = j.at("tf").get<double>();
  const std::string a = j.value("a_kind", "exp");
  if (a == "exp")
    config.a_kind = AKind::exp;
  else if (a == "linear")
    config.a_kind = AKind::linear;
  else
    throw ConfigError("bundle.a_kind must be 'exp' or 'linear'");
  config.train_time_margin = j.value("train_time_margin", 0.0);
  config.x0_box = j.at("x0_box").get<std::vector<std::array<double, 2>>>();

  config.theta_fixed = system.default_params;
  if (j.contains("theta")) {
    const auto& theta = j.at("theta");
    for (const auto& [name, value] : theta.value("fixed", nlohmann::json::object()).items())
      config.theta_fixed[static_cast<std::size_t>(system.param_index(name))] =
          value.get<double>();
    // Free parameters ordered by system parameter index so the network input
    // layout does not depend on JSON key order.
    std::map<int, std::array<double, 2>> free_by_index;
    for (const auto& [name, box] : theta.value("free", nlohmann::json::object()).items())
      free_by_index[system.param_index(name)] = box.get<std::array<double, 2>>();
    for (const auto& [index, box] : free_by_index) {
      config.theta_free.push_back(index);
      config.theta_box.push_back(box);
    }
  }
  config.validate(system);
  return config;
}

nlohmann::json bundle_to_human_json(const BundleConfig& config, const OdeSystem& system) {
  nlohmann::json fixed = nlohmann::json::object();
  for (int i = 0; i < system.p; ++i) {
    bool is_free = false;
    for (int f : config.theta_free) is_free |= f == i;
    if (!is_free) fixed[system.param_labels[static_cast<std::size_t>(i)]] =
        config.theta_fixed[static_cast<std::size_t>(i)];
  }
  nlohmann::json free = nlohmann::json::object();
  for (std::size_t i = 0; i < config.theta_free.size(); ++i)
    free[system.param_labels[static_cast<std::size_t>(config.theta_free[i])]] =
        config.theta_box[i];
  return {{"t0", config.t0},
          {"tf", config.tf},
          {"a_kind", config.a_kind == AKind::exp ? "exp" : "linear"},
          {"train_time_margin", config.train_time_margin},
          {"x0_box", config.x0_box},
          {"theta", {{"free", free}, {"fixed", fixed}}}};
}

TrainingConfig parse_training(const nlohmann::json& j) {
  TrainingConfig tc;
  tc.total_batches = j.at("batches").get<std::int64_t>();
  tc.batch_size = j.at("batch_size").get<std::int64_t>();
  tc.seed = j.value("seed", 0ull);

  if (j.contains("optimizer")) {
    const auto& opt = j.at("optimizer");
    tc.optimizer.lr = opt.value("lr", 1e-3);
    tc.optimizer.beta1 = opt.value("beta1", 0.9);
    tc.optimizer.beta2 = opt.value("beta2", 0.999);
    tc.optimizer.eps = opt.value("eps", 1e-8);
  }

  if (j.contains("plateau")) {
    const auto& p = j.at("plateau");
    tc.plateau.enabled = p.value("enabled", true);
    tc.plateau.factor = p.value("factor", 0.5);
    tc.plateau.patience = p.value("patience", std::int64_t{0});
    tc.plateau.threshold = p.value("threshold", 0.5);
    tc.plateau.cooldown = p.value("cooldown", std::int64_t{0});
    tc.plateau.min_lr = p.value("min_lr", 0.0);
    if (!(tc.plateau.factor > 0.0 && tc.plateau.factor < 1.0))
      throw ConfigError("training.plateau.factor must be in (0, 1)");
  }

  if (j.contains("weighting")) {
    const auto& w = j.at("weighting");
    const std::string kind = w.at("kind").get<std::string>();
    if (kind == "constant") {
      tc.weighting.kind = WeightingFn::Kind::constant;
    } else if (kind == "exp_decay") {
      tc.weighting.kind = WeightingFn::Kind::exp_decay;
      tc.weighting.lambda = w.value("lambda", 0.0);
      if (tc.weighting.lambda < 0.0) throw ConfigError("training.weighting.lambda must be >= 0");
      const std::string schedule = w.value("schedule", "fixed");
      if (schedule == "fixed")
        tc.lambda_schedule = LambdaSchedule::fixed;
      else if (schedule == "curriculum")
        tc.lambda_schedule = LambdaSchedule::curriculum;
      else if (schedule == "anneal")
        tc.lambda_schedule = LambdaSchedule::anneal;
      else
        throw ConfigError("training.weighting.schedule must be fixed|curriculum|anneal");
    } else {
      throw ConfigError("training.weighting.kind must be constant|exp_decay");
    }
  }

  tc.curriculum = j.value("curriculum", nlohmann::json::object()).value("enabled", false);
  if (j.contains("lr_overrides"))
    for (const auto& pair : j.at("lr_overrides"))
      tc.lr_overrides.emplace_back(pair.at(0).get<std::int64_t>(), pair.at(1).get<double>());
  tc.checkpoint_every = j.value("checkpoint_every", std::int64_t{0});
  tc.log_every = j.value("log_every", std::int64_t{1});
  tc.smoothing_window = j.value("smoothing_window", std::int64_t{10000});
  if (tc.smoothing_window < 1) throw ConfigError("training.smoothing_window must be >= 1");
  return tc;
}

nlohmann::json training_to_json(const TrainingConfig& tc) {
  nlohmann::json w;
  if (tc.weighting.kind == WeightingFn::Kind::constant) {
    w = {{"kind", "constant"}};
  } else {
    const char* schedule = tc.lambda_schedule == LambdaSchedule::fixed ? "fixed"
                           : tc.lambda_schedule == LambdaSchedule::curriculum ? "curriculum"
                                                                              : "anneal";
    w = {{"kind", "exp_decay"}, {"lambda", tc.weighting.lambda}, {"schedule", schedule}};
  }
  nlohmann::json overrides = nlohmann::json::array();
  for (const auto& [batch, lr] : tc.lr_overrides) overrides.push_back({batch, lr});
  return {{"batches", tc.total_batches},
          {"batch_size", tc.batch_size},
          {"seed", tc.seed},
          {"optimizer",
           {{"lr", tc.optimizer.lr},
            {"beta1", tc.optimizer.beta1},
            {"beta2", tc.optimizer.beta2},
            {"eps", tc.optimizer.eps}}},
          {"plateau",
           {{"enabled", tc.plateau.enabled},
            {"factor", tc.plateau.factor},
            {"patience", tc.plateau.patience},
            {"threshold", tc.plateau.threshold},
            {"cooldown", tc.plateau.cooldown},
            {"min_lr", tc.plateau.min_lr}}},
          {"weighting", w},
          {"curriculum", {{"enabled", tc.curriculum}}},
          {"lr_overrides", overrides},
          {"checkpoint_every", tc.checkpoint_every},
          {"log_every", tc.log_every},
          {"smoothing_window", tc.smoothing_window}};
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& raw) {
  const nlohmann::json j = unwrap_manifest(raw);
  RunConfig config;
  try {
    config.system = j.at("system").get<std::string>();
    const OdeSystem& system = system_registry(config.system);
    config.bundle = parse_bundle(j.at("bundle"), system);

    const auto& net = j.at("network");
    config.network.hidden = net.at("hidden").get<std::vector<int>>();
    config.network.skip_connections = net.value("skip_connections", false);
    config.network.input_dim = 1 + system.n + config.bundle.free_count();
    config.network.output_dim = system.n;
    config.network.validate();

    config.training = parse_training(j.at("training"));
    config.output_dir = j.value("output_dir", "");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid run config: ") + e.what());
  }
  return config;
}

nlohmann::json run_config_to_json(const RunConfig& config) {
  const OdeSystem& system = system_registry(config.system);
  return {{"system", config.system},
          {"network",
           {{"hidden", config.network.hidden},
            {"skip_connections", config.network.skip_connections}}},
          {"bundle", bundle_to_human_json(config.bundle, system)},
          {"training", training_to_json(config.training)},
          {"output_dir", config.output_dir}};
}

Bundle bundle_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.extra.contains("system") || !ckpt.extra.contains("bundle"))
    throw ConfigError("checkpoint does not describe a bundle (missing system/bundle record)");
  const OdeSystem& system = system_registry(ckpt.extra.at("system").get<std::string>());
  BundleConfig config = bundle_config_from_json(ckpt.extra.at("bundle"));
  return Bundle(system, std::move(config), ckpt.params);
}

// ---------------------------------------------------------------------------
// Command configs

EvalConfig eval_config_from_json(const nlohmann::json& raw) {
  const nlohmann::json j = unwrap_manifest(raw);
  EvalConfig config;
  try {
    config.checkpoint = j.at("checkpoint").get<std::string>();
    const auto& q = j.at("queries");
    if (q.contains("file")) {
      config.queries_file = q.at("file").get<std::string>();
    } else {
      const auto& grid = q.at("grid");
      config.t_grid = {{grid.at("t_lo").get<double>(), grid.at("t_hi").get<double>(),
                        grid.at("count").get<double>()}};
      config.x0 = grid.at("x0").get<std::vector<double>>();
      config.theta = grid.value("theta", std::vector<double>{});
    }
    config.output = j.value("output", "eval.csv");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid eval config: ") + e.what());
  }
  return config;
}

PropagateConfig propagate_config_from_json(const nlohmann::json& raw) {
  const nlohmann::json j = unwrap_manifest(raw);
  PropagateConfig config;
  try {
    config.checkpoint = j.at("checkpoint").get<std::string>();
    config.divisions = j.at("divisions").get<std::vector<int>>();
    config.p0 = j.at("p0");
    config.times = j.at("times").get<std::vector<double>>();
    const auto& h = j.at("histogram");
    config.histogram.components = h.at("components").get<std::vector<int>>();
    config.histogram.lo = h.at("lo").get<std::vector<double>>();
    config.histogram.hi = h.at("hi").get<std::vector<double>>();
    config.histogram.bins = h.at("bins").get<std::vector<int>>();
    config.theta = j.value("theta", std::vector<double>{});
    config.normalize = j.value("normalize", true);
    config.output_dir = j.at("output_dir").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid propagate config: ") + e.what());
  }
  return config;
}

GridAxis grid_axis_from_json(const nlohmann::json& j, const OdeSystem& system,
                             const BundleConfig& bundle) {
  GridAxis axis;
  const std::string kind = j.at("kind").get<std::string>();
  const std::string name = j.at("name").get<std::string>();
  if (kind == "x0") {
    axis.kind = GridAxis::Kind::x0;
    axis.index = -1;
    for (int i = 0; i < system.n; ++i)
      if (system.state_labels[static_cast<std::size_t>(i)] == name) axis.index = i;
    if (axis.index < 0) throw ConfigError("grid axis: unknown state '" + name + "'");
  } else if (kind == "theta") {
    axis.kind = GridAxis::Kind::theta;
    const int sys_index = system.param_index(name);
    axis.index = -1;
    for (std::size_t i = 0; i < bundle.theta_free.size(); ++i)
      if (bundle.theta_free[i] == sys_index) axis.index = static_cast<int>(i);
    if (axis.index < 0)
      throw ConfigError("grid axis: parameter '" + name + "' is not free in this bundle");
  } else {
    throw ConfigError("grid axis kind must be x0|theta");
  }
  axis.label = name;
  axis.lo = j.at("lo").get<double>();
  axis.hi = j.at("hi").get<double>();
  axis.cells = j.at("cells").get<int>();
  return axis;
}

InferConfig infer_config_from_json(const nlohmann::json& raw) {
  const nlohmann::json j = unwrap_manifest(raw);
  InferConfig config;
  try {
    config.checkpoint = j.at("checkpoint").get<std::string>();
    config.data_file = j.at("data").get<std::string>();

    const Checkpoint ckpt = load_checkpoint(config.checkpoint);
    const OdeSystem& system = system_registry(ckpt.extra.at("system").get<std::string>());
    const BundleConfig bundle = bundle_config_from_json(ckpt.extra.at("bundle"));

    const auto& grid = j.at("grid");
    for (const auto& axis : grid.at("axes"))
      config.axes.push_back(grid_axis_from_json(axis, system, bundle));
    config.x0_base = grid.at("x0_base").get<std::vector<double>>();
    config.theta_base = grid.value("theta_base", std::vector<double>{});

    if (j.contains("map")) {
      const auto& m = j.at("map");
      config.map_enabled = m.value("enabled", true);
      config.map_x0_init = m.value("x0_init", config.x0_base);
      config.map_theta_init = m.value("theta_init", config.theta_base);
      config.map_options.tol = m.value("tol", 1e-6);
      config.map_options.max_iters = m.value("max_iters", 1000);
    }
    config.output_dir = j.at("output_dir").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid infer config: ") + e.what());
  }
  return config;
}

BenchConfig bench_config_from_json(const nlohmann::json& raw) {
  const nlohmann::json j = unwrap_manifest(raw);
  BenchConfig config;
  try {
    for (const auto& net : j.value("networks", nlohmann::json::array()))
      config.networks.push_back(
          {net.at("name").get<std::string>(), net.at("checkpoint").get<std::string>()});
    config.budgets = j.at("budgets").get<std::vector<double>>();
    config.table_divisions = j.value("table_divisions", std::vector<int>{4, 8, 16, 32});
    config.samples = j.value("samples", 10000);
    config.seed = j.value("seed", 0ull);
    config.oracle_h = j.value("oracle_h", 1e-3);
    if (j.contains("flop_model")) {
      const auto& fm = j.at("flop_model");
      config.flop_model.add = fm.value("add", 1);
      config.flop_model.mul = fm.value("mul", 1);
      config.flop_model.div = fm.value("div", 1);
      config.flop_model.transcendental = fm.value("transcendental", 4);
    }
    config.output_dir = j.at("output_dir").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid bench config: ") + e.what());
  }
  return config;
}

// ---------------------------------------------------------------------------
// Measurement CSV

std::vector<GaussianMeasurement> load_measurements_csv(const std::string& path,
                                                       const OdeSystem& system) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open data file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("data file is empty: " + path);

  std::vector<GaussianMeasurement> data;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string t_s, comp_s, value_s, sigma_s;
    if (!std::getline(row, t_s, ',') || !std::getline(row, comp_s, ',') ||
        !std::getline(row, value_s, ',') || !std::getline(row, sigma_s, ','))
      throw ConfigError("data file " + path + ": malformed row at line " +
                        std::to_string(line_no));
    const double t = std::stod(t_s);
    int comp = -1;
    for (int i = 0; i < system.n; ++i)
      if (system.state_labels[static_cast<std::size_t>(i)] == comp_s) comp = i;
    if (comp < 0) comp = std::stoi(comp_s);
    if (comp < 0 || comp >= system.n)
      throw ConfigError("data file " + path + ": unknown component at line " +
                        std::to_string(line_no));

    if (data.empty() || data.back().t != t) {
      data.push_back({t, {}, {}, {}});
    }
    data.back().components.push_back(comp);
    data.back().mean.push_back(std::stod(value_s));
    data.back().sigma.push_back(std::stod(sigma_s));
  }
  return data;
}

void write_measurements_csv(std::span<const GaussianMeasurement> data, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open data file for writing: " + path);
  out << "t,component,value,sigma\n";
  char buf[120];
  for (const auto& meas : data)
    for (std::size_t c = 0; c < meas.components.size(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g,%d,%.17g,%.17g\n", meas.t, meas.components[c],
                    meas.mean[c], meas.sigma[c]);
      out << buf;
    }
  if (!out) throw IoError("failed writing data file: " + path);
}

}  // namespace odebundle
