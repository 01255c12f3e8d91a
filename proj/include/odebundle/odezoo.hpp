#pragma once

// Registry of the ODE systems the bundle trainer and the reference
// integrators operate on. Each system provides its right-hand side f in
// three scalar instantiations (plain value, forward-mode dual, taped), all
// generated from one generic definition, plus the canonical residual
// G(x, xdot, t; theta) = xdot - f(t, x; theta).

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "odebundle/diffcore.hpp"
#include "odebundle/errors.hpp"

namespace odebundle {

inline double heaviside(double x) { return x > 0.0 ? 1.0 : 0.0; }
inline double relu(double x) { return x > 0.0 ? x : 0.0; }

// Elementary-operation counts of one rhs evaluation, priced by bench's
// FlopModel. Negations count as multiplications.
struct OpTally {
  int add = 0;
  int mul = 0;
  int div = 0;
  int transcendental = 0;
};

struct OdeSystem {
  std::string name;
  int n = 0;  // state dimension
  int p = 0;  // parameter dimension
  std::vector<std::string> state_labels;
  std::vector<std::string> param_labels;
  std::vector<double> default_params;
  OpTally rhs_ops;

  std::function<void(double t, std::span<const double> x, std::span<const double> theta,
                     std::span<double> out)>
      rhs;
  std::function<void(ad::Dual t, std::span<const ad::Dual> x, std::span<const ad::Dual> theta,
                     std::span<ad::Dual> out)>
      rhs_dual;
  std::function<void(ad::Var t, std::span<const ad::Var> x, std::span<const ad::Var> theta,
                     std::span<ad::Var> out)>
      rhs_recorded;

  int param_index(const std::string& label) const;
};

const OdeSystem& system_registry(const std::string& name);
std::vector<std::string> system_names();

// xdot_candidate - f(t, x; theta), componentwise.
void residual(const OdeSystem& system, std::span<const double> x,
              std::span<const double> xdot_candidate, double t, std::span<const double> theta,
              std::span<double> out);

}  // namespace odebundle
