#include "odebundle/bundle.hpp"

#include <cmath>

namespace odebundle {

void BundleConfig::validate(const OdeSystem& system) const {
  if (!(t0 < tf)) throw ConfigError("bundle: t0 must be < tf");
  if (train_time_margin < 0.0) throw ConfigError("bundle: train_time_margin must be >= 0");
  if (static_cast<int>(x0_box.size()) != system.n)
    throw ConfigError("bundle: x0_box must have one interval per state dimension of " +
                      system.name);
  for (const auto& iv : x0_box)
    if (!(iv[0] < iv[1])) throw ConfigError("bundle: degenerate x0_box interval");
  if (theta_free.size() != theta_box.size())
    throw ConfigError("bundle: theta_free and theta_box must align");
  for (const auto& iv : theta_box)
    if (!(iv[0] < iv[1])) throw ConfigError("bundle: degenerate theta_box interval");
  for (std::size_t i = 0; i < theta_free.size(); ++i) {
    const int idx = theta_free[i];
    if (idx < 0 || idx >= system.p) throw ConfigError("bundle: free parameter index out of range");
    for (std::size_t j = i + 1; j < theta_free.size(); ++j)
      if (theta_free[j] == idx) throw ConfigError("bundle: duplicate free parameter");
  }
  if (static_cast<int>(theta_fixed.size()) != system.p)
    throw ConfigError("bundle: theta_fixed must cover every system parameter");
}

double a_value(AKind kind, double t, double t0) {
  return kind == AKind::linear ? t - t0 : 1.0 - std::exp(-(t - t0));
}

nlohmann::json bundle_config_to_json(const BundleConfig& config) {
  return {{"t0", config.t0},
          {"tf", config.tf},
          {"a_kind", config.a_kind == AKind::exp ? "exp" : "linear"},
          {"train_time_margin", config.train_time_margin},
          {"x0_box", config.x0_box},
          {"theta_free", config.theta_free},
          {"theta_box", config.theta_box},
          {"theta_fixed", config.theta_fixed}};
}

BundleConfig bundle_config_from_json(const nlohmann::json& j) {
  BundleConfig config;
  config.t0 = j.at("t0").get<double>();
  config.tf = j.at("tf").get<double>();
  const std::string a = j.at("a_kind").get<std::string>();
  if (a == "exp")
    config.a_kind = AKind::exp;
  else if (a == "linear")
    config.a_kind = AKind::linear;
  else
    throw ConfigError("bundle: a_kind must be 'exp' or 'linear', got '" + a + "'");
  config.train_time_margin = j.at("train_time_margin").get<double>();
  config.x0_box = j.at("x0_box").get<std::vector<std::array<double, 2>>>();
  config.theta_free = j.at("theta_free").get<std::vector<int>>();
  config.theta_box = j.at("theta_box").get<std::vector<std::array<double, 2>>>();
  config.theta_fixed = j.at("theta_fixed").get<std::vector<double>>();
  return config;
}

double a_derivative(AKind kind, double t, double t0) {
  return kind == AKind::linear ? 1.0 : std::exp(-(t - t0));
}

Bundle::Bundle(const OdeSystem& system, BundleConfig config, NetworkParams params)
    : system_(&system), config_(std::move(config)), params_(std::move(params)) {
  config_.validate(system);
  const int expected_in = 1 + system.n + config_.free_count();
  if (params_.spec.input_dim != expected_in || params_.spec.output_dim != system.n)
    throw ConfigError("bundle: network dimensions do not match system '" + system.name +
                      "' (expected " + std::to_string(expected_in) + " -> " +
                      std::to_string(system.n) + ")");
  if (params_.values.size() != static_cast<std::size_t>(params_.spec.parameter_count()))
    throw ConfigError("bundle: parameter vector length does not match network spec");
}

bool Bundle::in_domain(double t, std::span<const double> x0,
                       std::span<const double> theta_free) const {
  if (t < config_.t0 - config_.train_time_margin || t > config_.tf) return false;
  for (std::size_t i = 0; i < x0.size(); ++i)
    if (x0[i] < config_.x0_box[i][0] || x0[i] > config_.x0_box[i][1]) return false;
  for (std::size_t i = 0; i < theta_free.size(); ++i)
    if (theta_free[i] < config_.theta_box[i][0] || theta_free[i] > config_.theta_box[i][1])
      return false;
  return true;
}

bool Bundle::evaluate(double t, std::span<const double> x0, std::span<const double> theta_free,
                      std::span<double> xhat) const {
  ForwardScratch<double> scratch;
  eval_trial(params_.spec, std::span<const double>(params_.values), config_.a_kind, config_.t0,
             t, x0, theta_free, xhat, scratch);
  return !in_domain(t, x0, theta_free);
}

bool Bundle::evaluate_with_time_derivative(double t, std::span<const double> x0,
                                           std::span<const double> theta_free,
                                           std::span<double> xhat, std::span<double> xdot) const {
  const int n = system_->n;
  ForwardScratch<ad::Dual> scratch;
  std::vector<ad::Dual> x0d(x0.begin(), x0.end());
  std::vector<ad::Dual> thd(theta_free.begin(), theta_free.end());
  std::vector<ad::Dual> out(n);
  eval_trial(params_.spec, std::span<const double>(params_.values), config_.a_kind, config_.t0,
             ad::Dual(t, 1.0), std::span<const ad::Dual>(x0d), std::span<const ad::Dual>(thd),
             std::span<ad::Dual>(out), scratch);
  for (int i = 0; i < n; ++i) {
    xhat[i] = out[i].v;
    xdot[i] = out[i].d;
  }
  return !in_domain(t, x0, theta_free);
}

void Bundle::input_jacobian(double t, std::span<const double> x0,
                            std::span<const double> theta_free,
                            std::span<double> jacobian) const {
  const int n = system_->n;
  ForwardScratch<ad::Dual> scratch;
  std::vector<ad::Dual> x0d(x0.begin(), x0.end());
  std::vector<ad::Dual> thd(theta_free.begin(), theta_free.end());
  std::vector<ad::Dual> out(n);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) x0d[i].d = i == j ? 1.0 : 0.0;
    eval_trial(params_.spec, std::span<const double>(params_.values), config_.a_kind, config_.t0,
               ad::Dual(t), std::span<const ad::Dual>(x0d), std::span<const ad::Dual>(thd),
               std::span<ad::Dual>(out), scratch);
    for (int i = 0; i < n; ++i) jacobian[static_cast<std::size_t>(i) * n + j] = out[i].d;
  }
}

std::vector<double> Bundle::full_theta(std::span<const double> theta_free) const {
  std::vector<double> theta = config_.theta_fixed;
  for (std::size_t i = 0; i < config_.theta_free.size(); ++i)
    theta[static_cast<std::size_t>(config_.theta_free[i])] = theta_free[i];
  return theta;
}

}  // namespace odebundle
