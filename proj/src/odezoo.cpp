#include "odebundle/odezoo.hpp"

#include <cmath>

namespace odebundle {

namespace {

constexpr double kSingularityRadius = 1e-9;

// Planar circular restricted three-body problem, rotating frame.
// State (x, y, u, v); parameter mu = moon mass fraction.
template <class T>
void crtbp_rhs(T t, const T* q, const T* theta, T* out) {
  using std::pow;
  using std::sqrt;
  (void)t;
  const T x = q[0], y = q[1], u = q[2], v = q[3];
  const T mu = theta[0];

  const T s_moon = (x - 1.0) * (x - 1.0) + y * y;
  const T s_earth = x * x + y * y;
  if constexpr (std::is_same_v<T, double>) {
    if (s_earth < kSingularityRadius * kSingularityRadius ||
        s_moon < kSingularityRadius * kSingularityRadius)
      throw NumericError("crtbp: state within singularity radius of a primary");
  }
  const T moon_term = pow(s_moon, 1.5);
  const T earth_term = pow(s_earth, 1.5);

  out[0] = u;
  out[1] = v;
  out[2] = x - mu + 2.0 * v - (mu * (x - 1.0) / moon_term + (1.0 - mu) * x / earth_term);
  out[3] = y - 2.0 * u - (mu * y / moon_term + (1.0 - mu) * y / earth_term);
}

// Pendulum with a damped spring stop at the bottom of the swing.
// State (theta, omega); parameters (k, c); g = l = m = 1.
template <class T>
void pendulum_rhs(T t, const T* x, const T* theta, T* out) {
  using std::sin;
  (void)t;
  const T ang = x[0], omega = x[1];
  const T k = theta[0], c = theta[1];
  out[0] = omega;
  out[1] = -sin(ang) + heaviside(-ang) * relu(-(k * ang) - c * omega);
}

// FitzHugh-Nagumo relaxation oscillator. State (v, w); parameters (a, b, tau, I).
template <class T>
void fhn_rhs(T t, const T* x, const T* theta, T* out) {
  (void)t;
  const T v = x[0], w = x[1];
  const T a = theta[0], b = theta[1], tau = theta[2], current = theta[3];
  if constexpr (std::is_same_v<T, double>) {
    if (tau <= 0.0) throw ConfigError("fitzhugh_nagumo: tau must be positive");
  }
  out[0] = v - v * v * v / 3.0 - w + current;
  out[1] = (v + a - b * w) / tau;
}

// Simple harmonic oscillator. State (x, v); parameter k; m = 1.
template <class T>
void sho_rhs(T t, const T* x, const T* theta, T* out) {
  (void)t;
  if constexpr (std::is_same_v<T, double>) {
    if (theta[0] <= 0.0) throw ConfigError("sho: k must be positive");
  }
  out[0] = x[1];
  out[1] = -(theta[0] * x[0]);
}

template <void (*F)(double, const double*, const double*, double*),
          void (*FD)(ad::Dual, const ad::Dual*, const ad::Dual*, ad::Dual*),
          void (*FV)(ad::Var, const ad::Var*, const ad::Var*, ad::Var*)>
OdeSystem make_system(std::string name, std::vector<std::string> states,
                      std::vector<std::string> params, std::vector<double> defaults,
                      OpTally ops) {
  OdeSystem sys;
  sys.name = std::move(name);
  sys.n = static_cast<int>(states.size());
  sys.p = static_cast<int>(params.size());
  sys.state_labels = std::move(states);
  sys.param_labels = std::move(params);
  sys.default_params = std::move(defaults);
  sys.rhs_ops = ops;
  sys.rhs = [](double t, std::span<const double> x, std::span<const double> th,
               std::span<double> out) { F(t, x.data(), th.data(), out.data()); };
  sys.rhs_dual = [](ad::Dual t, std::span<const ad::Dual> x, std::span<const ad::Dual> th,
                    std::span<ad::Dual> out) { FD(t, x.data(), th.data(), out.data()); };
  sys.rhs_recorded = [](ad::Var t, std::span<const ad::Var> x, std::span<const ad::Var> th,
                        std::span<ad::Var> out) { FV(t, x.data(), th.data(), out.data()); };
  return sys;
}

std::vector<OdeSystem> build_registry() {
  std::vector<OdeSystem> reg;
  reg.push_back(make_system<crtbp_rhs<double>, crtbp_rhs<ad::Dual>, crtbp_rhs<ad::Var>>(
      "crtbp", {"x", "y", "u", "v"}, {"mu"}, {0.01}, OpTally{13, 10, 4, 2}));
  reg.push_back(make_system<pendulum_rhs<double>, pendulum_rhs<ad::Dual>, pendulum_rhs<ad::Var>>(
      "rebound_pendulum", {"theta", "omega"}, {"k", "c"}, {3.0, 1.0}, OpTally{4, 6, 0, 1}));
  reg.push_back(make_system<fhn_rhs<double>, fhn_rhs<ad::Dual>, fhn_rhs<ad::Var>>(
      "fitzhugh_nagumo", {"v", "w"}, {"a", "b", "tau", "I"}, {0.7, 0.8, 12.5, 0.8},
      OpTally{5, 3, 2, 0}));
  reg.push_back(make_system<sho_rhs<double>, sho_rhs<ad::Dual>, sho_rhs<ad::Var>>(
      "sho", {"x", "v"}, {"k"}, {1.0}, OpTally{0, 2, 0, 0}));
  return reg;
}

const std::vector<OdeSystem>& registry() {
  static const std::vector<OdeSystem> reg = build_registry();
  return reg;
}

}  // namespace

int OdeSystem::param_index(const std::string& label) const {
  for (int i = 0; i < p; ++i)
    if (param_labels[i] == label) return i;
  throw ConfigError("system " + name + " has no parameter named '" + label + "'");
}

const OdeSystem& system_registry(const std::string& name) {
  for (const auto& sys : registry())
    if (sys.name == name) return sys;
  throw ConfigError("unknown ODE system: " + name);
}

std::vector<std::string> system_names() {
  std::vector<std::string> names;
  for (const auto& sys : registry()) names.push_back(sys.name);
  return names;
}

void residual(const OdeSystem& system, std::span<const double> x,
              std::span<const double> xdot_candidate, double t, std::span<const double> theta,
              std::span<double> out) {
  system.rhs(t, x, theta, out);
  for (int i = 0; i < system.n; ++i) out[i] = xdot_candidate[i] - out[i];
}

}  // namespace odebundle
