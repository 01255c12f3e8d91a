#pragma once

// Distribution propagation through a trained bundle (weighted histograms,
// density pullback via the input Jacobian) and Bayesian inference over
// initial conditions and parameters (posterior grids, marginals, MAP).

#include <array>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "odebundle/bundle.hpp"

namespace odebundle {

// Gaussian observation of a subset of state components at one time.
struct GaussianMeasurement {
  double t = 0.0;
  std::vector<int> components;  // observed state indices
  std::vector<double> mean;     // one per observed component
  std::vector<double> sigma;    // > 0, one per observed component

  void validate(int n) const;
};

double gaussian_logpdf(double x, double mean, double sigma);

// ---------------------------------------------------------------------------
// Distribution propagation

struct HistogramSpec {
  std::vector<int> components;  // binned state indices
  std::vector<double> lo, hi;
  std::vector<int> bins;
};

struct WeightedHistogram {
  HistogramSpec spec;
  std::vector<double> weights;  // flat, row-major over the axes
  bool normalized = false;
  double input_mass = 0.0;   // sum of p0(x0) * cell_volume over the grid
  double binned_mass = 0.0;  // part of input_mass that landed inside the range
  bool mass_outside_range = false;

  void normalize();
  std::vector<double> bin_center(std::size_t flat_index) const;
};

using StateMap = std::function<void(double t, std::span<const double> x0, std::span<double> out)>;
using WeightFn = std::function<double(std::span<const double> x0)>;

StateMap bundle_state_map(const Bundle& bundle, std::vector<double> theta_free);

// Iterates the uniform grid over the x0 box (divisions per axis), evaluates
// the map at time t, and accumulates p0(x0) * cell_volume into the histogram
// of the selected output components. Unobserved components are marginalized
// simply by not being binned.
WeightedHistogram propagate(const StateMap& map, const WeightFn& p0,
                            const std::vector<std::array<double, 2>>& x0_box,
                            const std::vector<int>& divisions, double t,
                            const HistogramSpec& histogram);

// p0(x0) = p_t(xhat(t; x0)) * |det d xhat / d x0|
double density_pullback(const Bundle& bundle, const WeightFn& p_t, std::span<const double> x0,
                        std::span<const double> theta_free, double t);

double det_jacobian(const Bundle& bundle, double t, std::span<const double> x0,
                    std::span<const double> theta_free);

// Product of the two position-measurement Gaussians: the first measurement
// constrains the initial state directly, the second the bundle state at its
// time. Used as the p0 weight of `propagate`.
WeightFn two_measurement_weight(const Bundle& bundle, GaussianMeasurement at_t0,
                                GaussianMeasurement at_t1, std::vector<double> theta_free);

// ---------------------------------------------------------------------------
// Posterior grids

struct GridAxis {
  enum class Kind { x0, theta };
  Kind kind = Kind::theta;
  int index = 0;  // state index or free-parameter index
  std::string label;
  double lo = 0.0, hi = 1.0;
  int cells = 1;

  double center(int cell) const {
    return lo + (static_cast<double>(cell) + 0.5) * (hi - lo) / cells;
  }
};

struct PosteriorGrid {
  std::vector<GridAxis> axes;
  std::vector<double> log_density;  // flat, row-major; unnormalized

  std::size_t cell_count() const;
  std::vector<int> argmax() const;
};

// point -> unnormalized log posterior; `point` holds one value per axis.
using LogDensityFn = std::function<double(std::span<const double> point)>;

PosteriorGrid bayes_posterior(const LogDensityFn& log_posterior,
                              const std::vector<GridAxis>& axes, int threads = 0);

// Log likelihood of Gaussian data under states produced by `map`; the prior
// is uniform over the grid box. Base values supply the coordinates that are
// not on the grid.
LogDensityFn bundle_log_likelihood(const Bundle& bundle,
                                   std::vector<GaussianMeasurement> data,
                                   std::vector<double> x0_base, std::vector<double> theta_base,
                                   std::vector<GridAxis> axes);

// Same likelihood evaluated with a reference integrator instead of the
// bundle; the cross-check route for inference tests.
LogDensityFn oracle_log_likelihood(const OdeSystem& system, const BundleConfig& config,
                                   std::vector<GaussianMeasurement> data,
                                   std::vector<double> x0_base, std::vector<double> theta_base,
                                   std::vector<GridAxis> axes, double h);

// Normalized marginal mass per cell for every axis (max-subtracted
// exponentiation, summed over the remaining axes).
std::vector<std::vector<double>> grid_marginals(const PosteriorGrid& grid);

// ---------------------------------------------------------------------------
// MAP estimation

struct MapOptions {
  double tol = 1e-6;       // infinity-norm of the projected gradient
  int max_iters = 1000;
  double armijo = 1e-4;
};

struct MapResult {
  std::vector<double> x0;
  std::vector<double> theta_free;
  double log_posterior = 0.0;
  double grad_norm = 0.0;
  int iters = 0;
  bool converged = false;
};

// Projected gradient ascent with a backtracking (Armijo) line search over
// all initial-condition and free-parameter coordinates, clipped to the
// bundle's domain boxes. The prior is uniform over those boxes.
MapResult map_estimate(const Bundle& bundle, std::span<const GaussianMeasurement> data,
                       std::vector<double> x0_init, std::vector<double> theta_init,
                       const MapOptions& options = {});

// ---------------------------------------------------------------------------
// Exports

void write_histogram_csv(const WeightedHistogram& histogram, const std::string& path);
void write_marginal_csv(const GridAxis& axis, std::span<const double> mass,
                        const std::string& path);
void write_map_report(const MapResult& result, const std::string& path);

}  // namespace odebundle
