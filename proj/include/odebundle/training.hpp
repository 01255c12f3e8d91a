#pragma once

// Batch sampling, the weighted residual loss and its gradient, Adam with
// reduce-on-plateau, curriculum schedules, and the training loop.

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "odebundle/bundle.hpp"
#include "odebundle/diffcore.hpp"
#include "odebundle/network.hpp"
#include "odebundle/odezoo.hpp"

namespace odebundle {

// ---------------------------------------------------------------------------
// Schedules

struct WeightingFn {
  enum class Kind { constant, exp_decay };
  Kind kind = Kind::constant;
  double lambda = 0.0;  // decay rate, 1/time units
};

// How the decay rate evolves with the batch number m (of M total):
//   fixed       b(t) = exp(-lambda (t - t0)) with the configured lambda
//   curriculum  lambda_m = 4 / (horizon_m + 5)
//   anneal      lambda_m = exp(-ln(100) m / M)
enum class LambdaSchedule { fixed, curriculum, anneal };

// Horizon of the time samples at batch m; grows from t0 to tf.
double curriculum_horizon(double t0, double tf, std::int64_t m, std::int64_t total);
double curriculum_lambda(double horizon_length);
double annealed_lambda(std::int64_t m, std::int64_t total);
double effective_lambda(const WeightingFn& weighting, LambdaSchedule schedule, std::int64_t m,
                        std::int64_t total, double horizon_length);

struct PlateauConfig {
  bool enabled = false;
  double factor = 0.5;
  std::int64_t patience = 0;
  double threshold = 0.5;  // relative improvement required
  std::int64_t cooldown = 0;
  double min_lr = 0.0;
};

struct PlateauState {
  double best = std::numeric_limits<double>::infinity();
  std::int64_t since_improvement = 0;
  std::int64_t cooldown_left = 0;
};

// One scheduler step on the (smoothed) loss; returns the possibly reduced
// learning rate. Improvement means metric < best * (1 - threshold).
double plateau_step(const PlateauConfig& config, PlateauState& state, double metric, double lr);

// ---------------------------------------------------------------------------
// Batches

struct Batch {
  std::int64_t count = 0;
  int n = 0;
  int pfree = 0;
  std::vector<double> t;      // count
  std::vector<double> x0;     // count * n, row-major
  std::vector<double> theta;  // count * pfree, row-major
};

struct BatchSample {
  double t;
  std::span<const double> x0;
  std::span<const double> theta;
};

BatchSample batch_sample(const Batch& batch, std::int64_t i);

// Fresh uniform sample over [t0 - margin, t_horizon] x X0 x Theta. The stream
// is derived from (seed, batch_index), so batch m is reproducible in
// isolation; there is no epoch structure.
void sample_batch(const BundleConfig& config, double t_horizon, std::uint64_t seed,
                  std::int64_t batch_index, std::int64_t count, Batch& out);

// ---------------------------------------------------------------------------
// Loss and gradient

// Records the per-point weighted residual loss
//   b(t) |G(xhat, d xhat/dt, t; theta)|^2,   b(t) = exp(-lambda (t - t0))
// once as a tape, then replays it per batch point. The reverse sweep runs
// over both value channels, giving d(loss)/d(weights) even though the loss
// consumes the forward time-tangent. Accumulation uses a fixed slot
// interleave, so results are bit-identical for any thread count.
class LossEvaluator {
 public:
  LossEvaluator(const OdeSystem& system, const NetworkSpec& spec, const BundleConfig& config);

  // Mean weighted loss over the batch; grad (length = parameter count)
  // receives the gradient of that mean.
  double loss_and_gradient(std::span<const double> params, const Batch& batch, double lambda,
                           std::span<double> grad, int threads = 0);

  // Loss only (replay without reverse sweep).
  double loss_value(std::span<const double> params, const Batch& batch, double lambda,
                    int threads = 0);

  std::size_t tape_size() const { return tape_.size(); }
  std::size_t parameter_count() const { return nparams_; }

 private:
  static constexpr int kSlots = 64;

  double run(std::span<const double> params, const Batch& batch, double lambda,
             std::span<double> grad, bool with_gradient, int threads);

  ad::Tape tape_;
  std::uint32_t out_index_ = 0;
  std::size_t nparams_ = 0;
  int n_ = 0, pfree_ = 0;
  // Leaf ordinals: [0, nparams) parameters, then t, x0 dims, theta dims, lambda.
  std::size_t t_leaf_ = 0, x0_leaf_ = 0, theta_leaf_ = 0, lambda_leaf_ = 0;

  struct Slot {
    ad::ReplayBuffer buf;
    std::vector<double> grad;
    std::vector<double> leaf_grad;
    double loss = 0.0;
  };
  std::vector<Slot> slots_;
};

// ---------------------------------------------------------------------------
// Optimizer

struct OptimizerConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m, v;
  std::int64_t step = 0;
};

void adam_step(AdamState& state, const OptimizerConfig& config, double lr,
               std::span<const double> grad, std::span<double> params);

// ---------------------------------------------------------------------------
// Training loop

struct TrainingConfig {
  std::int64_t total_batches = 0;
  std::int64_t batch_size = 0;
  std::uint64_t seed = 0;
  OptimizerConfig optimizer;
  PlateauConfig plateau;
  WeightingFn weighting;
  LambdaSchedule lambda_schedule = LambdaSchedule::fixed;
  bool curriculum = false;
  std::vector<std::pair<std::int64_t, double>> lr_overrides;  // (batch, lr)
  std::int64_t checkpoint_every = 0;  // 0 = final checkpoint only
  std::int64_t log_every = 1;
  std::int64_t smoothing_window = 10000;
  int threads = 0;  // 0 = library default
};

struct TrainSetup {
  std::string system;
  NetworkSpec network;
  BundleConfig bundle;
  TrainingConfig training;
  std::string output_dir;  // empty = in-memory only (no checkpoint/log files)
};

struct TrainResult {
  NetworkParams params;
  std::int64_t batches_done = 0;
  double raw_loss = 0.0;
  double smoothed_loss = 0.0;
  std::string checkpoint_path;
};

TrainResult run_training(const TrainSetup& setup, bool resume = false);

// ---------------------------------------------------------------------------
// Diagnostics

// Fraction of scan points where the trial solution satisfies the ODE locally
// (every residual component below `residual_tol`) while sitting far from the
// reference trajectory. High values are the signature of a bundle pinned to
// the nullclines.
struct StuckMetric {
  double residual_tol = 1e-3;
  double far_distance = 0.5;
};

double stuck_fraction(const Bundle& bundle, std::span<const double> x0,
                      std::span<const double> theta_free, std::span<const double> t_grid,
                      double reference_h, const StuckMetric& metric = {});

}  // namespace odebundle
