#pragma once

// Classical integrators used as ground truth, plus the error metrics and the
// exponential global-error bound they feed.

#include <span>
#include <string>
#include <vector>

#include "odebundle/bundle.hpp"
#include "odebundle/odezoo.hpp"

namespace odebundle {

struct Trajectory {
  int n = 0;
  double h = 0.0;
  std::string method;
  std::vector<double> times;
  std::vector<double> states;  // row-major, n per time

  std::span<const double> state(std::size_t i) const {
    return {states.data() + i * static_cast<std::size_t>(n), static_cast<std::size_t>(n)};
  }
};

enum class StepMethod { rk4, euler };

void rk4_step(const OdeSystem& system, double t, std::span<const double> x,
              std::span<const double> theta, double h, std::span<double> out);
void euler_step(const OdeSystem& system, double t, std::span<const double> x,
                std::span<const double> theta, double h, std::span<double> out);

Trajectory rk4_solve(const OdeSystem& system, std::span<const double> x0,
                     std::span<const double> theta, double t0, double t_end, double h);
Trajectory euler_solve(const OdeSystem& system, std::span<const double> x0,
                       std::span<const double> theta, double t0, double t_end, double h);

// Dense evaluation at an arbitrary time: full steps of size h to the
// bracketing grid point, then one partial step. Restarts from t0 on every
// query, keeping the oracle stateless.
std::vector<double> dense_eval(const OdeSystem& system, std::span<const double> x0,
                               std::span<const double> theta, double t0, double t, double h,
                               StepMethod method = StepMethod::rk4);

// Cached variant for sweeps: resumes from the stored state just below t.
std::vector<double> dense_eval(const Trajectory& traj, const OdeSystem& system,
                               std::span<const double> theta, double t,
                               StepMethod method = StepMethod::rk4);

// Mean of the componentwise absolute errors; for n = 2 this is
// (|dx| + |dv|) / 2.
double absolute_error(std::span<const double> approx, std::span<const double> exact);

// (eps_max / L_f) * (exp(L_f (t - t0)) - 1)
double global_error_bound(double eps_max, double lipschitz, double t, double t0);

// Euclidean norm of the trial-solution residual at each grid time.
std::vector<double> residual_scan(const Bundle& bundle, std::span<const double> x0,
                                  std::span<const double> theta_free,
                                  std::span<const double> t_grid);

// Spectral norm of the rhs state-Jacobian, sampled over the bundle domains
// and inflated by a 10% safety factor. Used where no analytic Lipschitz
// constant is available.
double lipschitz_estimate(const OdeSystem& system, const BundleConfig& config,
                          int samples = 2048, std::uint64_t seed = 0);

void export_trajectory_csv(const Trajectory& traj, const std::string& path);

}  // namespace odebundle
