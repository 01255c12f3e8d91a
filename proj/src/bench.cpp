#include "odebundle/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "odebundle/reference.hpp"
#include "odebundle/rng.hpp"

namespace odebundle {

std::int64_t flop_count_network(const NetworkSpec& spec, const FlopModel& model) {
  spec.validate();
  std::int64_t total = 0;
  for (int l = 0; l < spec.layer_count(); ++l) {
    const std::int64_t in = spec.layer_in(l);
    const std::int64_t out = spec.layer_out(l);
    total += in * out * (model.mul + model.add) + out * model.add;  // MACs plus bias adds
    if (l + 1 < spec.layer_count()) total += out * model.transcendental;
  }
  return total;
}

double rhs_flops(const OdeSystem& system, const FlopModel& model) {
  const OpTally& ops = system.rhs_ops;
  return static_cast<double>(ops.add) * model.add + static_cast<double>(ops.mul) * model.mul +
         static_cast<double>(ops.div) * model.div +
         static_cast<double>(ops.transcendental) * model.transcendental;
}

double rk4_step_flops(const OdeSystem& system, const FlopModel& model) {
  return 4.0 * rhs_flops(system, model) + 34.0 * system.n;
}

double euler_step_flops(const OdeSystem& system, const FlopModel& model) {
  return rhs_flops(system, model) + 2.0 * system.n;
}

std::array<double, 2> sho_exact(double x0, double v0, double k, double t) {
  const double w = std::sqrt(k);
  const double c = std::cos(w * t), s = std::sin(w * t);
  return {x0 * c + v0 / w * s, -x0 * w * s + v0 * c};
}

namespace {

double axis_center(const std::array<double, 2>& range, int divisions, int i) {
  return range[0] + (static_cast<double>(i) + 0.5) * (range[1] - range[0]) / divisions;
}

// Nearest cell center; equidistant queries take the lower index.
int snap_index(const std::array<double, 2>& range, int divisions, double x) {
  if (x < range[0] || x > range[1])
    throw ConfigError("lookup table: query outside axis range");
  const double width = (range[1] - range[0]) / divisions;
  const double y = (x - range[0]) / width - 0.5;
  const double base = std::floor(y);
  int idx = static_cast<int>(base) + (y - base > 0.5 ? 1 : 0);
  return std::clamp(idx, 0, divisions - 1);
}

}  // namespace

LookupTable build_sho_table(int divisions, double oracle_h, const ShoDomain& domain) {
  if (divisions < 2) throw ConfigError("lookup table: divisions must be >= 2");
  const OdeSystem& sho = system_registry("sho");
  LookupTable table;
  table.divisions = divisions;
  table.domain = domain;
  const auto d = static_cast<std::size_t>(divisions);
  table.values.resize(d * d * d * d * 2);

  // One integration pass per (x0, v0, k) cell, visiting the time centers in
  // order.
  std::vector<double> state(2), next(2);
  for (int ix = 0; ix < divisions; ++ix)
    for (int iv = 0; iv < divisions; ++iv)
      for (int ik = 0; ik < divisions; ++ik) {
        const double x0 = axis_center(domain.x0, divisions, ix);
        const double v0 = axis_center(domain.v0, divisions, iv);
        const double k = axis_center(domain.k, divisions, ik);
        const std::array<double, 1> theta{k};
        state[0] = x0;
        state[1] = v0;
        double t = domain.t[0];
        for (int it = 0; it < divisions; ++it) {
          const double target = axis_center(domain.t, divisions, it);
          const double span_t = target - t;
          const int steps = std::max(1, static_cast<int>(std::ceil(span_t / oracle_h)));
          const double h = span_t / steps;
          for (int s = 0; s < steps; ++s) {
            rk4_step(sho, t, state, theta, h, next);
            state = next;
            t += h;
          }
          t = target;
          const std::size_t flat =
              (((static_cast<std::size_t>(ix) * d + iv) * d + ik) * d + it) * 2;
          table.values[flat] = state[0];
          table.values[flat + 1] = state[1];
        }
      }
  return table;
}

std::array<double, 2> table_query(const LookupTable& table, double x0, double v0, double k,
                                  double t) {
  const auto d = static_cast<std::size_t>(table.divisions);
  const std::size_t ix = static_cast<std::size_t>(snap_index(table.domain.x0, table.divisions, x0));
  const std::size_t iv = static_cast<std::size_t>(snap_index(table.domain.v0, table.divisions, v0));
  const std::size_t ik = static_cast<std::size_t>(snap_index(table.domain.k, table.divisions, k));
  const std::size_t it = static_cast<std::size_t>(snap_index(table.domain.t, table.divisions, t));
  const std::size_t flat = (((ix * d + iv) * d + ik) * d + it) * 2;
  return {table.values[flat], table.values[flat + 1]};
}

// ---------------------------------------------------------------------------
// Contenders

Contender make_network_contender(std::shared_ptr<const Bundle> bundle, std::string name,
                                 const FlopModel& model) {
  Contender c;
  c.name = std::move(name);
  c.flops = static_cast<double>(flop_count_network(bundle->params().spec, model));
  c.bytes = static_cast<std::int64_t>(bundle->params().values.size()) * 8;
  c.eval = [bundle = std::move(bundle)](double x0, double v0, double k, double t) {
    const std::array<double, 2> ic{x0, v0};
    const std::array<double, 1> theta{k};
    std::array<double, 2> out{};
    bundle->evaluate(t, ic, theta, out);
    return out;
  };
  return c;
}

namespace {

Contender make_stepper_contender(int steps, StepMethod method, const FlopModel& model) {
  if (steps < 1) throw ConfigError("bench: steps must be >= 1");
  const OdeSystem& sho = system_registry("sho");
  Contender c;
  c.name = (method == StepMethod::rk4 ? "rk4_n" : "euler_n") + std::to_string(steps);
  c.flops = static_cast<double>(steps) *
            (method == StepMethod::rk4 ? rk4_step_flops(sho, model) : euler_step_flops(sho, model));
  c.bytes = 2 * 8;  // the running state
  c.eval = [steps, method, &sho](double x0, double v0, double k, double t) {
    std::array<double, 2> state{x0, v0};
    if (t <= 0.0) return state;
    const std::array<double, 1> theta{k};
    const double h = t / steps;
    std::array<double, 2> next{};
    double cur = 0.0;
    for (int s = 0; s < steps; ++s) {
      if (method == StepMethod::rk4)
        rk4_step(sho, cur, state, theta, h, next);
      else
        euler_step(sho, cur, state, theta, h, next);
      state = next;
      cur += h;
    }
    return state;
  };
  return c;
}

}  // namespace

Contender make_rk4_contender(int steps, const FlopModel& model) {
  return make_stepper_contender(steps, StepMethod::rk4, model);
}

Contender make_euler_contender(int steps, const FlopModel& model) {
  return make_stepper_contender(steps, StepMethod::euler, model);
}

Contender make_table_contender(std::shared_ptr<const LookupTable> table, const FlopModel& model) {
  Contender c;
  c.name = "table_d" + std::to_string(table->divisions);
  // Four index snaps: a handful of arithmetic per axis.
  c.flops = 4.0 * (2 * model.add + 2 * model.mul + model.div);
  c.bytes = table->bytes();
  c.eval = [table = std::move(table)](double x0, double v0, double k, double t) {
    return table_query(*table, x0, v0, k, t);
  };
  return c;
}

Contender make_exact_contender() {
  Contender c;
  c.name = "exact";
  c.flops = 0.0;
  c.bytes = 0;
  c.eval = [](double x0, double v0, double k, double t) { return sho_exact(x0, v0, k, t); };
  return c;
}

// ---------------------------------------------------------------------------
// Sweep

std::vector<SweepRow> accuracy_sweep(const std::vector<Contender>& contenders, int samples,
                                     std::uint64_t seed, const ShoDomain& domain) {
  if (samples < 1) throw ConfigError("bench: samples must be >= 1");
  Rng rng(mix_seed(seed, 0xbe7c));
  std::vector<std::array<double, 4>> points(static_cast<std::size_t>(samples));
  for (auto& p : points) {
    p[0] = rng.uniform(domain.x0[0], domain.x0[1]);
    p[1] = rng.uniform(domain.v0[0], domain.v0[1]);
    p[2] = rng.uniform(domain.k[0], domain.k[1]);
    p[3] = rng.uniform(domain.t[0], domain.t[1]);
  }

  std::vector<SweepRow> rows;
  rows.reserve(contenders.size());
  std::vector<double> errors(points.size());
  for (const auto& contender : contenders) {
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto& p = points[i];
      const auto approx = contender.eval(p[0], p[1], p[2], p[3]);
      const auto exact = sho_exact(p[0], p[1], p[2], p[3]);
      errors[i] = 0.5 * (std::fabs(approx[0] - exact[0]) + std::fabs(approx[1] - exact[1]));
    }
    SweepRow row;
    row.name = contender.name;
    row.flops = contender.flops;
    row.bytes = contender.bytes;
    double total = 0.0;
    for (double e : errors) total += e;
    row.mean_abs_err = total / static_cast<double>(errors.size());
    std::vector<double> sorted = errors;
    std::sort(sorted.begin(), sorted.end());
    const auto rank = [&](double q) {
      const auto c = static_cast<std::size_t>(
          std::ceil(q * static_cast<double>(sorted.size())));
      return sorted[std::clamp<std::size_t>(c, 1, sorted.size()) - 1];
    };
    row.p5 = rank(0.05);
    row.p95 = rank(0.95);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open sweep CSV for writing: " + path);
  out << "contender,flops,bytes,mean_abs_err,p5,p95\n";
  char buf[160];
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%lld,%.17g,%.17g,%.17g", row.flops,
                  static_cast<long long>(row.bytes), row.mean_abs_err, row.p5, row.p95);
    out << row.name << "," << buf << "\n";
  }
  if (!out) throw IoError("failed writing sweep CSV: " + path);
}

}  // namespace odebundle
