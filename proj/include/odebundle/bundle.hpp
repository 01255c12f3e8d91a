#pragma once

// Constrained trial solution
//
//   xhat(t; x0, theta) = x0 + a(t) * N(t, x0, theta; w),     a(t0) = 0,
//
// which satisfies the initial condition by construction. a is either
// t - t0 or 1 - exp(-(t - t0)).

#include <array>
#include <span>
#include <vector>

#include "odebundle/network.hpp"
#include "odebundle/odezoo.hpp"

namespace odebundle {

enum class AKind { linear, exp };

struct BundleConfig {
  double t0 = 0.0;
  double tf = 1.0;
  AKind a_kind = AKind::exp;
  double train_time_margin = 0.0;  // delta: training samples from [t0 - delta, tf]

  std::vector<std::array<double, 2>> x0_box;     // one interval per state dim
  std::vector<int> theta_free;                   // system parameter indices the bundle learns
  std::vector<std::array<double, 2>> theta_box;  // one interval per free parameter
  std::vector<double> theta_fixed;               // full-length parameter vector for the rest

  int free_count() const { return static_cast<int>(theta_free.size()); }
  void validate(const OdeSystem& system) const;
};

double a_value(AKind kind, double t, double t0);
double a_derivative(AKind kind, double t, double t0);

nlohmann::json bundle_config_to_json(const BundleConfig& config);
BundleConfig bundle_config_from_json(const nlohmann::json& j);

namespace detail {

template <class S>
S a_value_generic(AKind kind, const S& t, double t0) {
  using std::exp;
  if (kind == AKind::linear) return t - t0;
  return 1.0 - exp(-(t - t0));
}

}  // namespace detail

// Generic trial evaluation; the scalar pair (W, S) follows network_forward.
template <class W, class S>
void eval_trial(const NetworkSpec& spec, std::span<const W> params, AKind a_kind, double t0,
                const S& t, std::span<const S> x0, std::span<const S> theta_free,
                std::span<S> xhat, ForwardScratch<S>& scratch) {
  const int n = static_cast<int>(x0.size());
  std::vector<S> input;
  input.reserve(1 + x0.size() + theta_free.size());
  input.push_back(t);
  for (const S& v : x0) input.push_back(v);
  for (const S& v : theta_free) input.push_back(v);

  std::vector<S> net_out(n, S{});
  network_forward(spec, params, std::span<const S>(input), std::span<S>(net_out), scratch);

  const S a = detail::a_value_generic(a_kind, t, t0);
  for (int i = 0; i < n; ++i) xhat[i] = x0[i] + a * net_out[i];
}

class Bundle {
 public:
  Bundle(const OdeSystem& system, BundleConfig config, NetworkParams params);

  const OdeSystem& system() const { return *system_; }
  const BundleConfig& config() const { return config_; }
  const NetworkParams& params() const { return params_; }
  NetworkParams& params() { return params_; }

  // All evaluation entry points return an extrapolation flag: true when
  // (t, x0, theta) lies outside the trained domains. Values are still
  // computed; callers decide how much to trust them.
  bool evaluate(double t, std::span<const double> x0, std::span<const double> theta_free,
                std::span<double> xhat) const;
  bool evaluate_with_time_derivative(double t, std::span<const double> x0,
                                     std::span<const double> theta_free, std::span<double> xhat,
                                     std::span<double> xdot) const;

  // d xhat / d x0 as an n x n row-major matrix, one forward-mode pass per
  // initial-condition component.
  void input_jacobian(double t, std::span<const double> x0, std::span<const double> theta_free,
                      std::span<double> jacobian) const;

  // Full system parameter vector with the free entries substituted.
  std::vector<double> full_theta(std::span<const double> theta_free) const;

  bool in_domain(double t, std::span<const double> x0, std::span<const double> theta_free) const;

 private:
  const OdeSystem* system_;
  BundleConfig config_;
  NetworkParams params_;
};

}  // namespace odebundle
