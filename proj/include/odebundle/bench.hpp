#pragma once

// Accuracy-versus-cost study for the harmonic oscillator: trained networks
// against RK4/Euler under a FLOP model, and against uniform lookup tables
// under a memory model. Ground truth is the closed-form solution, so oracle
// error never enters the comparison.

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "odebundle/bundle.hpp"
#include "odebundle/odezoo.hpp"

namespace odebundle {

struct FlopModel {
  int add = 1;
  int mul = 1;
  int div = 1;
  int transcendental = 4;
  int version = 1;
};

std::int64_t flop_count_network(const NetworkSpec& spec, const FlopModel& model = {});
double rhs_flops(const OdeSystem& system, const FlopModel& model = {});
double rk4_step_flops(const OdeSystem& system, const FlopModel& model = {});
double euler_step_flops(const OdeSystem& system, const FlopModel& model = {});

// The evaluation box of the study: (x0, v0, k, t).
struct ShoDomain {
  std::array<double, 2> x0{-1.0, 1.0};
  std::array<double, 2> v0{-1.0, 1.0};
  std::array<double, 2> k{0.5, 2.0};
  std::array<double, 2> t{0.0, 6.283185307179586476925287};
};

// x(t) = x0 cos(w t) + (v0/w) sin(w t), v = x'(t), w = sqrt(k).
std::array<double, 2> sho_exact(double x0, double v0, double k, double t);

// Uniform nearest-neighbor lookup table over (x0, v0, k, t) with the same
// number of divisions per axis; cells hold the RK4 state at the cell center.
struct LookupTable {
  int divisions = 0;
  ShoDomain domain;
  std::vector<double> values;  // ((ix0*d + iv0)*d + ik)*d + it, 2 per cell

  std::int64_t bytes() const {
    const auto d = static_cast<std::int64_t>(divisions);
    return d * d * d * d * 2 * 8;
  }
};

LookupTable build_sho_table(int divisions, double oracle_h = 1e-3, const ShoDomain& domain = {});
std::array<double, 2> table_query(const LookupTable& table, double x0, double v0, double k,
                                  double t);

// ---------------------------------------------------------------------------
// Sweep

struct Contender {
  std::string name;
  double flops = 0.0;
  std::int64_t bytes = 0;
  std::function<std::array<double, 2>(double x0, double v0, double k, double t)> eval;
};

Contender make_network_contender(std::shared_ptr<const Bundle> bundle, std::string name,
                                 const FlopModel& model = {});
Contender make_rk4_contender(int steps, const FlopModel& model = {});
Contender make_euler_contender(int steps, const FlopModel& model = {});
Contender make_table_contender(std::shared_ptr<const LookupTable> table,
                               const FlopModel& model = {});
Contender make_exact_contender();

struct SweepRow {
  std::string name;
  double flops = 0.0;
  std::int64_t bytes = 0;
  double mean_abs_err = 0.0;
  double p5 = 0.0;
  double p95 = 0.0;
};

// Same uniformly sampled point set for every contender; errors are the
// absolute-error metric against the exact solution. The 5th/95th percentile
// band covers 90% of the per-point errors.
std::vector<SweepRow> accuracy_sweep(const std::vector<Contender>& contenders, int samples,
                                     std::uint64_t seed, const ShoDomain& domain = {});

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path);

}  // namespace odebundle
