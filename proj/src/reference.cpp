#include "odebundle/reference.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "odebundle/rng.hpp"

namespace odebundle {

namespace {

struct StepScratch {
  std::vector<double> k1, k2, k3, k4, mid;
  void resize(int n) {
    k1.resize(n);
    k2.resize(n);
    k3.resize(n);
    k4.resize(n);
    mid.resize(n);
  }
};

void rk4_step_ws(const OdeSystem& sys, double t, std::span<const double> x,
                 std::span<const double> theta, double h, std::span<double> out,
                 StepScratch& ws) {
  const int n = sys.n;
  ws.resize(n);
  sys.rhs(t, x, theta, ws.k1);
  for (int i = 0; i < n; ++i) ws.mid[i] = x[i] + 0.5 * h * ws.k1[i];
  sys.rhs(t + 0.5 * h, ws.mid, theta, ws.k2);
  for (int i = 0; i < n; ++i) ws.mid[i] = x[i] + 0.5 * h * ws.k2[i];
  sys.rhs(t + 0.5 * h, ws.mid, theta, ws.k3);
  for (int i = 0; i < n; ++i) ws.mid[i] = x[i] + h * ws.k3[i];
  sys.rhs(t + h, ws.mid, theta, ws.k4);
  for (int i = 0; i < n; ++i)
    out[i] = x[i] + (h / 6.0) * (ws.k1[i] + 2.0 * (ws.k2[i] + ws.k3[i]) + ws.k4[i]);
}

void euler_step_ws(const OdeSystem& sys, double t, std::span<const double> x,
                   std::span<const double> theta, double h, std::span<double> out,
                   StepScratch& ws) {
  const int n = sys.n;
  ws.resize(n);
  sys.rhs(t, x, theta, ws.k1);
  for (int i = 0; i < n; ++i) out[i] = x[i] + h * ws.k1[i];
}

Trajectory solve(const OdeSystem& sys, std::span<const double> x0, std::span<const double> theta,
                 double t0, double t_end, double h, StepMethod method) {
  if (!(h > 0.0)) throw ConfigError("integrator: step size must be positive");
  if (t_end < t0) throw ConfigError("integrator: t_end must be >= t0");
  const int n = sys.n;
  const auto steps = static_cast<std::size_t>(std::ceil((t_end - t0) / h - 1e-12));

  Trajectory traj;
  traj.n = n;
  traj.h = h;
  traj.method = method == StepMethod::rk4 ? "rk4" : "euler";
  traj.times.reserve(steps + 1);
  traj.states.reserve((steps + 1) * n);

  std::vector<double> x(x0.begin(), x0.end());
  std::vector<double> next(n);
  StepScratch ws;
  traj.times.push_back(t0);
  traj.states.insert(traj.states.end(), x.begin(), x.end());
  double t = t0;
  for (std::size_t s = 0; s < steps; ++s) {
    const double step = std::min(h, t_end - t);
    if (method == StepMethod::rk4)
      rk4_step_ws(sys, t, x, theta, step, next, ws);
    else
      euler_step_ws(sys, t, x, theta, step, next, ws);
    t = s + 1 == steps ? t_end : t0 + h * static_cast<double>(s + 1);
    x = next;
    traj.times.push_back(t);
    traj.states.insert(traj.states.end(), x.begin(), x.end());
  }
  return traj;
}

}  // namespace

void rk4_step(const OdeSystem& system, double t, std::span<const double> x,
              std::span<const double> theta, double h, std::span<double> out) {
  StepScratch ws;
  rk4_step_ws(system, t, x, theta, h, out, ws);
}

void euler_step(const OdeSystem& system, double t, std::span<const double> x,
                std::span<const double> theta, double h, std::span<double> out) {
  StepScratch ws;
  euler_step_ws(system, t, x, theta, h, out, ws);
}

Trajectory rk4_solve(const OdeSystem& system, std::span<const double> x0,
                     std::span<const double> theta, double t0, double t_end, double h) {
  return solve(system, x0, theta, t0, t_end, h, StepMethod::rk4);
}

Trajectory euler_solve(const OdeSystem& system, std::span<const double> x0,
                       std::span<const double> theta, double t0, double t_end, double h) {
  return solve(system, x0, theta, t0, t_end, h, StepMethod::euler);
}

std::vector<double> dense_eval(const OdeSystem& system, std::span<const double> x0,
                               std::span<const double> theta, double t0, double t, double h,
                               StepMethod method) {
  const int n = system.n;
  std::vector<double> x(x0.begin(), x0.end());
  std::vector<double> next(n);
  StepScratch ws;
  const auto full = static_cast<std::size_t>(std::floor((t - t0) / h + 1e-12));
  double cur = t0;
  for (std::size_t s = 0; s < full; ++s) {
    if (method == StepMethod::rk4)
      rk4_step_ws(system, cur, x, theta, h, next, ws);
    else
      euler_step_ws(system, cur, x, theta, h, next, ws);
    x = next;
    cur = t0 + h * static_cast<double>(s + 1);
  }
  if (t > cur) {
    if (method == StepMethod::rk4)
      rk4_step_ws(system, cur, x, theta, t - cur, next, ws);
    else
      euler_step_ws(system, cur, x, theta, t - cur, next, ws);
    x = next;
  }
  return x;
}

std::vector<double> dense_eval(const Trajectory& traj, const OdeSystem& system,
                               std::span<const double> theta, double t, StepMethod method) {
  if (traj.times.empty()) throw ConfigError("dense_eval: empty trajectory");
  if (t < traj.times.front() - 1e-12 || t > traj.times.back() + 1e-12)
    throw ConfigError("dense_eval: time outside cached trajectory");
  std::size_t idx =
      static_cast<std::size_t>(std::floor((t - traj.times.front()) / traj.h + 1e-12));
  if (idx >= traj.times.size()) idx = traj.times.size() - 1;
  const auto base = traj.state(idx);
  std::vector<double> x(base.begin(), base.end());
  const double dt = t - traj.times[idx];
  if (dt > 0.0) {
    std::vector<double> next(traj.n);
    StepScratch ws;
    if (method == StepMethod::rk4)
      rk4_step_ws(system, traj.times[idx], x, theta, dt, next, ws);
    else
      euler_step_ws(system, traj.times[idx], x, theta, dt, next, ws);
    x = next;
  }
  return x;
}

double absolute_error(std::span<const double> approx, std::span<const double> exact) {
  if (approx.size() != exact.size()) throw ConfigError("absolute_error: size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < approx.size(); ++i) total += std::fabs(approx[i] - exact[i]);
  return total / static_cast<double>(approx.size());
}

double global_error_bound(double eps_max, double lipschitz, double t, double t0) {
  if (!(lipschitz > 0.0)) throw ConfigError("global_error_bound: Lipschitz constant must be > 0");
  if (eps_max < 0.0) throw ConfigError("global_error_bound: eps_max must be >= 0");
  return eps_max / lipschitz * std::expm1(lipschitz * (t - t0));
}

std::vector<double> residual_scan(const Bundle& bundle, std::span<const double> x0,
                                  std::span<const double> theta_free,
                                  std::span<const double> t_grid) {
  const OdeSystem& sys = bundle.system();
  const int n = sys.n;
  const std::vector<double> theta = bundle.full_theta(theta_free);
  std::vector<double> xhat(n), xdot(n), res(n);
  std::vector<double> norms;
  norms.reserve(t_grid.size());
  for (double t : t_grid) {
    bundle.evaluate_with_time_derivative(t, x0, theta_free, xhat, xdot);
    residual(sys, xhat, xdot, t, theta, res);
    double sq = 0.0;
    for (int i = 0; i < n; ++i) sq += res[i] * res[i];
    norms.push_back(std::sqrt(sq));
  }
  return norms;
}

double lipschitz_estimate(const OdeSystem& system, const BundleConfig& config, int samples,
                          std::uint64_t seed) {
  const int n = system.n;
  Rng rng(mix_seed(seed, 0x11b5));
  std::vector<ad::Dual> x(n), out(n);
  std::vector<ad::Dual> theta(system.p);
  std::vector<double> jac(static_cast<std::size_t>(n) * n);
  std::vector<double> vec(n), tmp(n);

  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    const double t = rng.uniform(config.t0, config.tf);
    for (int i = 0; i < n; ++i) x[i] = rng.uniform(config.x0_box[i][0], config.x0_box[i][1]);
    std::vector<double> th = config.theta_fixed;
    for (std::size_t i = 0; i < config.theta_free.size(); ++i)
      th[static_cast<std::size_t>(config.theta_free[i])] =
          rng.uniform(config.theta_box[i][0], config.theta_box[i][1]);
    for (int i = 0; i < system.p; ++i) theta[i] = th[i];

    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) x[i].d = i == j ? 1.0 : 0.0;
      system.rhs_dual(ad::Dual(t), x, theta, out);
      for (int i = 0; i < n; ++i) jac[static_cast<std::size_t>(i) * n + j] = out[i].d;
    }

    // Spectral norm by power iteration on J^T J.
    for (int i = 0; i < n; ++i) vec[i] = 1.0 / std::sqrt(static_cast<double>(n));
    double norm = 0.0;
    for (int it = 0; it < 30; ++it) {
      for (int i = 0; i < n; ++i) {
        tmp[i] = 0.0;
        for (int j = 0; j < n; ++j) tmp[i] += jac[static_cast<std::size_t>(i) * n + j] * vec[j];
      }
      for (int j = 0; j < n; ++j) {
        vec[j] = 0.0;
        for (int i = 0; i < n; ++i) vec[j] += jac[static_cast<std::size_t>(i) * n + j] * tmp[i];
      }
      double len = 0.0;
      for (int j = 0; j < n; ++j) len += vec[j] * vec[j];
      len = std::sqrt(len);
      if (len == 0.0) break;
      for (int j = 0; j < n; ++j) vec[j] /= len;
      norm = std::sqrt(len);
    }
    worst = std::max(worst, norm);
  }
  return worst * 1.1;
}

void export_trajectory_csv(const Trajectory& traj, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open trajectory CSV for writing: " + path);
  out << "t";
  for (int i = 0; i < traj.n; ++i) out << ",x" << i + 1;
  out << "\n";
  char buf[32];
  for (std::size_t s = 0; s < traj.times.size(); ++s) {
    std::snprintf(buf, sizeof buf, "%.17g", traj.times[s]);
    out << buf;
    const auto state = traj.state(s);
    for (int i = 0; i < traj.n; ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", state[i]);
      out << "," << buf;
    }
    out << "\n";
  }
  if (!out) throw IoError("failed writing trajectory CSV: " + path);
}

}  // namespace odebundle
