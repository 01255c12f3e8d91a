#pragma once

// Shared helpers for the test suites: finite-difference oracles and a random
// recorded-expression generator.

#include <cmath>
#include <functional>
#include <vector>

#include "odebundle/diffcore.hpp"
#include "odebundle/rng.hpp"

namespace odebundle::test {

// Central finite difference of a scalar function of one coordinate.
inline double central_diff(const std::function<double(double)>& f, double x, double h = 1e-6) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double rel_err(double got, double want, double floor = 1e-12) {
  return std::fabs(got - want) / std::max(std::fabs(want), floor);
}

// Random expression over `leaves`, depth-bounded, built from the smooth part
// of the op set (keeps finite-difference comparisons well conditioned).
inline ad::Var random_expression(ad::Tape& tape, const std::vector<ad::Var>& leaves, Rng& rng,
                                 int depth) {
  if (depth == 0 || rng.uniform01() < 0.2) {
    const auto pick = static_cast<std::size_t>(rng.uniform01() * leaves.size());
    return leaves[std::min(pick, leaves.size() - 1)];
  }
  const int op = static_cast<int>(rng.uniform(0.0, 8.0));
  const ad::Var a = random_expression(tape, leaves, rng, depth - 1);
  switch (op) {
    case 0:
      return a + random_expression(tape, leaves, rng, depth - 1);
    case 1:
      return a - random_expression(tape, leaves, rng, depth - 1);
    case 2:
      return a * random_expression(tape, leaves, rng, depth - 1);
    case 3: {
      // Keep the divisor away from zero.
      ad::Var b = random_expression(tape, leaves, rng, depth - 1);
      return a / (ad::tanh(b) + 2.5);
    }
    case 4:
      return ad::exp(a * 0.3);
    case 5:
      return ad::tanh(a);
    case 6:
      return ad::sin(a);
    default:
      return ad::cos(a);
  }
}

}  // namespace odebundle::test
