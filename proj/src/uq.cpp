#include "odebundle/uq.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "odebundle/reference.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace odebundle {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// Row-major multi-index iteration over a small grid.
bool next_multi_index(std::vector<int>& idx, std::span<const int> shape) {
  for (int d = static_cast<int>(shape.size()) - 1; d >= 0; --d) {
    if (++idx[static_cast<std::size_t>(d)] < shape[static_cast<std::size_t>(d)]) return true;
    idx[static_cast<std::size_t>(d)] = 0;
  }
  return false;
}

double determinant(std::vector<double> a, int n) {
  double det = 1.0;
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    for (int r = col + 1; r < n; ++r)
      if (std::fabs(a[static_cast<std::size_t>(r) * n + col]) >
          std::fabs(a[static_cast<std::size_t>(pivot) * n + col]))
        pivot = r;
    if (a[static_cast<std::size_t>(pivot) * n + col] == 0.0) return 0.0;
    if (pivot != col) {
      for (int c = 0; c < n; ++c)
        std::swap(a[static_cast<std::size_t>(pivot) * n + c],
                  a[static_cast<std::size_t>(col) * n + c]);
      det = -det;
    }
    const double d = a[static_cast<std::size_t>(col) * n + col];
    det *= d;
    for (int r = col + 1; r < n; ++r) {
      const double f = a[static_cast<std::size_t>(r) * n + col] / d;
      for (int c = col; c < n; ++c)
        a[static_cast<std::size_t>(r) * n + c] -= f * a[static_cast<std::size_t>(col) * n + c];
    }
  }
  return det;
}

}  // namespace

void GaussianMeasurement::validate(int n) const {
  if (components.empty() || components.size() != mean.size() ||
      components.size() != sigma.size())
    throw ConfigError("measurement: components, mean and sigma must align");
  for (int c : components)
    if (c < 0 || c >= n) throw ConfigError("measurement: component index out of range");
  for (double s : sigma)
    if (!(s > 0.0)) throw ConfigError("measurement: sigma must be positive");
}

double gaussian_logpdf(double x, double mean, double sigma) {
  const double z = (x - mean) / sigma;
  return -0.5 * z * z - std::log(sigma) - 0.5 * kLog2Pi;
}

// ---------------------------------------------------------------------------
// Propagation

void WeightedHistogram::normalize() {
  double total = 0.0;
  for (double w : weights) total += w;
  if (total > 0.0)
    for (double& w : weights) w /= total;
  normalized = true;
}

std::vector<double> WeightedHistogram::bin_center(std::size_t flat_index) const {
  const std::size_t dims = spec.bins.size();
  std::vector<double> center(dims);
  for (std::size_t d = dims; d-- > 0;) {
    const auto bins = static_cast<std::size_t>(spec.bins[d]);
    const std::size_t i = flat_index % bins;
    flat_index /= bins;
    center[d] = spec.lo[d] + (static_cast<double>(i) + 0.5) * (spec.hi[d] - spec.lo[d]) /
                                 static_cast<double>(bins);
  }
  return center;
}

StateMap bundle_state_map(const Bundle& bundle, std::vector<double> theta_free) {
  return [&bundle, theta_free = std::move(theta_free)](double t, std::span<const double> x0,
                                                       std::span<double> out) {
    bundle.evaluate(t, x0, theta_free, out);
  };
}

WeightedHistogram propagate(const StateMap& map, const WeightFn& p0,
                            const std::vector<std::array<double, 2>>& x0_box,
                            const std::vector<int>& divisions, double t,
                            const HistogramSpec& histogram) {
  const int n = static_cast<int>(x0_box.size());
  if (static_cast<int>(divisions.size()) != n)
    throw ConfigError("propagate: one division count per initial-state dimension");
  if (histogram.components.size() != histogram.lo.size() ||
      histogram.components.size() != histogram.hi.size() ||
      histogram.components.size() != histogram.bins.size() || histogram.components.empty())
    throw ConfigError("propagate: malformed histogram spec");

  WeightedHistogram out;
  out.spec = histogram;
  std::size_t total_bins = 1;
  for (int b : histogram.bins) {
    if (b < 1) throw ConfigError("propagate: bins must be >= 1");
    total_bins *= static_cast<std::size_t>(b);
  }
  out.weights.assign(total_bins, 0.0);

  double cell_volume = 1.0;
  for (int d = 0; d < n; ++d) {
    if (divisions[d] < 1) throw ConfigError("propagate: divisions must be >= 1");
    cell_volume *= (x0_box[d][1] - x0_box[d][0]) / divisions[d];
  }

  std::vector<int> idx(n, 0);
  std::vector<double> x0(n), state(n);
  do {
    for (int d = 0; d < n; ++d)
      x0[d] = x0_box[d][0] +
              (static_cast<double>(idx[d]) + 0.5) * (x0_box[d][1] - x0_box[d][0]) / divisions[d];
    const double weight = p0(x0) * cell_volume;
    out.input_mass += weight;
    if (weight == 0.0) continue;
    map(t, x0, state);

    std::size_t flat = 0;
    bool inside = true;
    for (std::size_t a = 0; a < histogram.components.size(); ++a) {
      const double v = state[static_cast<std::size_t>(histogram.components[a])];
      if (v < histogram.lo[a] || v > histogram.hi[a]) {
        inside = false;
        break;
      }
      auto bin = static_cast<std::int64_t>((v - histogram.lo[a]) /
                                           (histogram.hi[a] - histogram.lo[a]) *
                                           histogram.bins[a]);
      bin = std::clamp<std::int64_t>(bin, 0, histogram.bins[a] - 1);
      flat = flat * static_cast<std::size_t>(histogram.bins[a]) + static_cast<std::size_t>(bin);
    }
    if (inside) {
      out.weights[flat] += weight;
      out.binned_mass += weight;
    }
  } while (next_multi_index(idx, divisions));

  out.mass_outside_range = out.binned_mass < out.input_mass * (1.0 - 1e-12);
  return out;
}

double det_jacobian(const Bundle& bundle, double t, std::span<const double> x0,
                    std::span<const double> theta_free) {
  const int n = bundle.system().n;
  std::vector<double> jac(static_cast<std::size_t>(n) * n);
  bundle.input_jacobian(t, x0, theta_free, jac);
  return determinant(std::move(jac), n);
}

double density_pullback(const Bundle& bundle, const WeightFn& p_t, std::span<const double> x0,
                        std::span<const double> theta_free, double t) {
  const int n = bundle.system().n;
  std::vector<double> state(n);
  bundle.evaluate(t, x0, theta_free, state);
  return p_t(state) * std::fabs(det_jacobian(bundle, t, x0, theta_free));
}

WeightFn two_measurement_weight(const Bundle& bundle, GaussianMeasurement at_t0,
                                GaussianMeasurement at_t1, std::vector<double> theta_free) {
  const int n = bundle.system().n;
  at_t0.validate(n);
  at_t1.validate(n);
  return [&bundle, at_t0 = std::move(at_t0), at_t1 = std::move(at_t1),
          theta_free = std::move(theta_free)](std::span<const double> x0) {
    double log_w = 0.0;
    for (std::size_t c = 0; c < at_t0.components.size(); ++c)
      log_w += gaussian_logpdf(x0[static_cast<std::size_t>(at_t0.components[c])], at_t0.mean[c],
                               at_t0.sigma[c]);
    std::vector<double> state(x0.size());
    bundle.evaluate(at_t1.t, x0, theta_free, state);
    for (std::size_t c = 0; c < at_t1.components.size(); ++c)
      log_w += gaussian_logpdf(state[static_cast<std::size_t>(at_t1.components[c])],
                               at_t1.mean[c], at_t1.sigma[c]);
    return std::exp(log_w);
  };
}

// ---------------------------------------------------------------------------
// Posterior grids

std::size_t PosteriorGrid::cell_count() const {
  std::size_t total = axes.empty() ? 0 : 1;
  for (const auto& axis : axes) total *= static_cast<std::size_t>(axis.cells);
  return total;
}

std::vector<int> PosteriorGrid::argmax() const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < log_density.size(); ++i)
    if (log_density[i] > log_density[best]) best = i;
  std::vector<int> idx(axes.size());
  for (std::size_t d = axes.size(); d-- > 0;) {
    idx[d] = static_cast<int>(best % static_cast<std::size_t>(axes[d].cells));
    best /= static_cast<std::size_t>(axes[d].cells);
  }
  return idx;
}

PosteriorGrid bayes_posterior(const LogDensityFn& log_posterior,
                              const std::vector<GridAxis>& axes, int threads) {
  if (axes.empty()) throw ConfigError("posterior: empty grid");
  for (const auto& axis : axes) {
    if (axis.cells < 1) throw ConfigError("posterior: axis cells must be >= 1");
    if (!(axis.lo < axis.hi)) throw ConfigError("posterior: degenerate axis range");
  }

  PosteriorGrid grid;
  grid.axes = axes;
  const std::size_t cells = grid.cell_count();
  grid.log_density.assign(cells, 0.0);

#ifdef _OPENMP
  const int max_threads = threads > 0 ? threads : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic, 64) num_threads(max_threads)
#else
  (void)threads;
#endif
  for (std::int64_t flat = 0; flat < static_cast<std::int64_t>(cells); ++flat) {
    std::vector<double> point(axes.size());
    std::size_t rem = static_cast<std::size_t>(flat);
    for (std::size_t d = axes.size(); d-- > 0;) {
      const auto c = static_cast<int>(rem % static_cast<std::size_t>(axes[d].cells));
      rem /= static_cast<std::size_t>(axes[d].cells);
      point[d] = axes[d].center(c);
    }
    grid.log_density[static_cast<std::size_t>(flat)] = log_posterior(point);
  }
  return grid;
}

namespace {

// Shared shape of the two likelihood routes: override base coordinates with
// the grid point, produce states, accumulate Gaussian log densities.
template <class Eval>
double data_log_likelihood(const std::vector<GaussianMeasurement>& data,
                           std::span<const double> x0, std::span<const double> theta,
                           Eval&& state_at) {
  double loglik = 0.0;
  std::vector<double> state;
  for (const auto& meas : data) {
    state = state_at(meas.t, x0, theta);
    for (std::size_t c = 0; c < meas.components.size(); ++c)
      loglik += gaussian_logpdf(state[static_cast<std::size_t>(meas.components[c])],
                                meas.mean[c], meas.sigma[c]);
  }
  return loglik;
}

void apply_axes(const std::vector<GridAxis>& axes, std::span<const double> point,
                std::vector<double>& x0, std::vector<double>& theta) {
  for (std::size_t d = 0; d < axes.size(); ++d) {
    auto& target = axes[d].kind == GridAxis::Kind::x0 ? x0 : theta;
    target[static_cast<std::size_t>(axes[d].index)] = point[d];
  }
}

void validate_data_times(const std::vector<GaussianMeasurement>& data, const BundleConfig& cfg,
                         int n) {
  for (const auto& meas : data) {
    meas.validate(n);
    if (meas.t < cfg.t0 || meas.t > cfg.tf)
      throw ConfigError("inference: data time outside the trained window");
  }
}

}  // namespace

LogDensityFn bundle_log_likelihood(const Bundle& bundle, std::vector<GaussianMeasurement> data,
                                   std::vector<double> x0_base, std::vector<double> theta_base,
                                   std::vector<GridAxis> axes) {
  validate_data_times(data, bundle.config(), bundle.system().n);
  return [&bundle, data = std::move(data), x0_base = std::move(x0_base),
          theta_base = std::move(theta_base), axes = std::move(axes)](
             std::span<const double> point) {
    std::vector<double> x0 = x0_base;
    std::vector<double> theta = theta_base;
    apply_axes(axes, point, x0, theta);
    return data_log_likelihood(data, x0, theta,
                               [&](double t, std::span<const double> x, std::span<const double> th) {
                                 std::vector<double> state(x.size());
                                 bundle.evaluate(t, x, th, state);
                                 return state;
                               });
  };
}

LogDensityFn oracle_log_likelihood(const OdeSystem& system, const BundleConfig& config,
                                   std::vector<GaussianMeasurement> data,
                                   std::vector<double> x0_base, std::vector<double> theta_base,
                                   std::vector<GridAxis> axes, double h) {
  validate_data_times(data, config, system.n);
  return [&system, config, data = std::move(data), x0_base = std::move(x0_base),
          theta_base = std::move(theta_base), axes = std::move(axes),
          h](std::span<const double> point) {
    std::vector<double> x0 = x0_base;
    std::vector<double> theta_free = theta_base;
    apply_axes(axes, point, x0, theta_free);
    std::vector<double> theta = config.theta_fixed;
    for (std::size_t i = 0; i < config.theta_free.size(); ++i)
      theta[static_cast<std::size_t>(config.theta_free[i])] = theta_free[i];
    return data_log_likelihood(
        data, x0, theta_free, [&](double t, std::span<const double> x, std::span<const double>) {
          return dense_eval(system, x, theta, config.t0, t, h);
        });
  };
}

std::vector<std::vector<double>> grid_marginals(const PosteriorGrid& grid) {
  double max_log = -std::numeric_limits<double>::infinity();
  for (double v : grid.log_density) max_log = std::max(max_log, v);

  std::vector<std::vector<double>> marginals;
  marginals.reserve(grid.axes.size());
  for (const auto& axis : grid.axes)
    marginals.emplace_back(static_cast<std::size_t>(axis.cells), 0.0);

  std::vector<int> shape;
  for (const auto& axis : grid.axes) shape.push_back(axis.cells);
  std::vector<int> idx(grid.axes.size(), 0);
  std::size_t flat = 0;
  do {
    const double mass = std::exp(grid.log_density[flat] - max_log);
    for (std::size_t d = 0; d < grid.axes.size(); ++d)
      marginals[d][static_cast<std::size_t>(idx[d])] += mass;
    ++flat;
  } while (next_multi_index(idx, shape));

  for (auto& m : marginals) {
    double total = 0.0;
    for (double v : m) total += v;
    if (total > 0.0)
      for (double& v : m) v /= total;
  }
  return marginals;
}

// ---------------------------------------------------------------------------
// MAP

namespace {

struct MapSpacing {
  std::vector<double> lo, hi;  // concatenated x0 then theta boxes
};

double map_log_posterior(const Bundle& bundle, std::span<const GaussianMeasurement> data,
                         std::span<const double> z, int n) {
  std::span<const double> x0 = z.subspan(0, static_cast<std::size_t>(n));
  std::span<const double> theta = z.subspan(static_cast<std::size_t>(n));
  double loglik = 0.0;
  std::vector<double> state(static_cast<std::size_t>(n));
  for (const auto& meas : data) {
    bundle.evaluate(meas.t, x0, theta, state);
    for (std::size_t c = 0; c < meas.components.size(); ++c)
      loglik += gaussian_logpdf(state[static_cast<std::size_t>(meas.components[c])],
                                meas.mean[c], meas.sigma[c]);
  }
  return loglik;
}

void map_gradient(const Bundle& bundle, std::span<const GaussianMeasurement> data,
                  std::span<const double> z, int n, std::span<double> grad) {
  const std::size_t dims = z.size();
  ForwardScratch<ad::Dual> scratch;
  std::vector<ad::Dual> x0(static_cast<std::size_t>(n));
  std::vector<ad::Dual> theta(dims - static_cast<std::size_t>(n));
  std::vector<ad::Dual> state(static_cast<std::size_t>(n));
  const auto& params = bundle.params();
  const auto& cfg = bundle.config();

  for (std::size_t k = 0; k < dims; ++k) {
    for (std::size_t i = 0; i < x0.size(); ++i) x0[i] = {z[i], i == k ? 1.0 : 0.0};
    for (std::size_t i = 0; i < theta.size(); ++i)
      theta[i] = {z[x0.size() + i], x0.size() + i == k ? 1.0 : 0.0};
    double g = 0.0;
    for (const auto& meas : data) {
      eval_trial(params.spec, std::span<const double>(params.values), cfg.a_kind, cfg.t0,
                 ad::Dual(meas.t), std::span<const ad::Dual>(x0),
                 std::span<const ad::Dual>(theta), std::span<ad::Dual>(state), scratch);
      for (std::size_t c = 0; c < meas.components.size(); ++c) {
        const auto& s = state[static_cast<std::size_t>(meas.components[c])];
        g += -(s.v - meas.mean[c]) / (meas.sigma[c] * meas.sigma[c]) * s.d;
      }
    }
    grad[k] = g;
  }
}

}  // namespace

MapResult map_estimate(const Bundle& bundle, std::span<const GaussianMeasurement> data,
                       std::vector<double> x0_init, std::vector<double> theta_init,
                       const MapOptions& options) {
  const int n = bundle.system().n;
  const auto& cfg = bundle.config();
  if (static_cast<int>(x0_init.size()) != n ||
      static_cast<int>(theta_init.size()) != cfg.free_count())
    throw ConfigError("map_estimate: init dimensions do not match the bundle");
  for (const auto& meas : data) {
    meas.validate(n);
    if (meas.t < cfg.t0 || meas.t > cfg.tf)
      throw ConfigError("map_estimate: data time outside the trained window");
  }

  MapSpacing box;
  for (int d = 0; d < n; ++d) {
    box.lo.push_back(cfg.x0_box[d][0]);
    box.hi.push_back(cfg.x0_box[d][1]);
  }
  for (int d = 0; d < cfg.free_count(); ++d) {
    box.lo.push_back(cfg.theta_box[d][0]);
    box.hi.push_back(cfg.theta_box[d][1]);
  }

  std::vector<double> z = x0_init;
  z.insert(z.end(), theta_init.begin(), theta_init.end());
  const std::size_t dims = z.size();
  for (std::size_t k = 0; k < dims; ++k)
    if (z[k] < box.lo[k] || z[k] > box.hi[k])
      throw ConfigError("map_estimate: init point outside the domain box");

  const auto project = [&](std::vector<double>& v) {
    for (std::size_t k = 0; k < dims; ++k) v[k] = std::clamp(v[k], box.lo[k], box.hi[k]);
  };

  double f = map_log_posterior(bundle, data, z, n);
  std::vector<double> grad(dims), trial(dims);
  MapResult result;
  for (int iter = 0; iter < options.max_iters; ++iter) {
    map_gradient(bundle, data, z, n, grad);

    // Projected-gradient residual; zero at a box-constrained maximum.
    double pg_norm = 0.0;
    for (std::size_t k = 0; k < dims; ++k) {
      const double moved = std::clamp(z[k] + grad[k], box.lo[k], box.hi[k]) - z[k];
      pg_norm = std::max(pg_norm, std::fabs(moved));
    }
    result.iters = iter;
    result.grad_norm = pg_norm;
    if (pg_norm < options.tol) {
      result.converged = true;
      break;
    }

    double alpha = 1.0;
    bool stepped = false;
    while (alpha > 1e-14) {
      for (std::size_t k = 0; k < dims; ++k) trial[k] = z[k] + alpha * grad[k];
      project(trial);
      double agreement = 0.0;
      for (std::size_t k = 0; k < dims; ++k) agreement += grad[k] * (trial[k] - z[k]);
      const double f_trial = map_log_posterior(bundle, data, trial, n);
      if (f_trial >= f + options.armijo * agreement && agreement > 0.0) {
        z = trial;
        f = f_trial;
        stepped = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!stepped) break;  // no ascent direction left at this scale
  }

  result.x0.assign(z.begin(), z.begin() + n);
  result.theta_free.assign(z.begin() + n, z.end());
  result.log_posterior = f;
  return result;
}

// ---------------------------------------------------------------------------
// Exports

void write_histogram_csv(const WeightedHistogram& histogram, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open histogram CSV for writing: " + path);
  for (std::size_t a = 0; a < histogram.spec.components.size(); ++a)
    out << "bin_center_" << a + 1 << ",";
  out << "weight\n";
  char buf[32];
  for (std::size_t flat = 0; flat < histogram.weights.size(); ++flat) {
    const auto center = histogram.bin_center(flat);
    for (double c : center) {
      std::snprintf(buf, sizeof buf, "%.17g", c);
      out << buf << ",";
    }
    std::snprintf(buf, sizeof buf, "%.17g", histogram.weights[flat]);
    out << buf << "\n";
  }
  if (!out) throw IoError("failed writing histogram CSV: " + path);
}

void write_marginal_csv(const GridAxis& axis, std::span<const double> mass,
                        const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open marginal CSV for writing: " + path);
  out << axis.label << ",mass\n";
  char buf[32];
  for (int c = 0; c < axis.cells; ++c) {
    std::snprintf(buf, sizeof buf, "%.17g", axis.center(c));
    out << buf << ",";
    std::snprintf(buf, sizeof buf, "%.17g", mass[static_cast<std::size_t>(c)]);
    out << buf << "\n";
  }
  if (!out) throw IoError("failed writing marginal CSV: " + path);
}

void write_map_report(const MapResult& result, const std::string& path) {
  nlohmann::json j;
  j["converged"] = result.converged;
  j["iterations"] = result.iters;
  j["log_posterior"] = result.log_posterior;
  j["projected_gradient_norm"] = result.grad_norm;
  j["x0"] = result.x0;
  j["theta"] = result.theta_free;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open MAP report for writing: " + path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("failed writing MAP report: " + path);
}

}  // namespace odebundle
