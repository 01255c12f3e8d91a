#include "odebundle/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "odebundle/reference.hpp"
#include "odebundle/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace odebundle {

// ---------------------------------------------------------------------------
// Schedules

double curriculum_horizon(double t0, double tf, std::int64_t m, std::int64_t total) {
  const double frac = total > 0 ? static_cast<double>(m) / static_cast<double>(total) : 1.0;
  return t0 + (tf - t0) / std::log(11.0) * std::log(10.0 * frac + 1.0);
}

double curriculum_lambda(double horizon_length) { return 4.0 / (horizon_length + 5.0); }

double annealed_lambda(std::int64_t m, std::int64_t total) {
  const double frac = total > 0 ? static_cast<double>(m) / static_cast<double>(total) : 1.0;
  return std::exp(-std::log(100.0) * frac);
}

double effective_lambda(const WeightingFn& weighting, LambdaSchedule schedule, std::int64_t m,
                        std::int64_t total, double horizon_length) {
  if (weighting.kind == WeightingFn::Kind::constant) return 0.0;
  switch (schedule) {
    case LambdaSchedule::fixed:
      return weighting.lambda;
    case LambdaSchedule::curriculum:
      return curriculum_lambda(horizon_length);
    case LambdaSchedule::anneal:
      return annealed_lambda(m, total);
  }
  return weighting.lambda;
}

double plateau_step(const PlateauConfig& config, PlateauState& state, double metric, double lr) {
  if (!config.enabled) return lr;
  if (metric < state.best * (1.0 - config.threshold)) {
    state.best = metric;
    state.since_improvement = 0;
    return lr;
  }
  if (state.cooldown_left > 0) {
    --state.cooldown_left;
    return lr;
  }
  ++state.since_improvement;
  if (state.since_improvement > config.patience) {
    state.since_improvement = 0;
    state.cooldown_left = config.cooldown;
    return std::max(lr * config.factor, config.min_lr);
  }
  return lr;
}

// ---------------------------------------------------------------------------
// Batches

BatchSample batch_sample(const Batch& batch, std::int64_t i) {
  return {batch.t[static_cast<std::size_t>(i)],
          {batch.x0.data() + static_cast<std::size_t>(i) * batch.n,
           static_cast<std::size_t>(batch.n)},
          {batch.theta.data() + static_cast<std::size_t>(i) * batch.pfree,
           static_cast<std::size_t>(batch.pfree)}};
}

void sample_batch(const BundleConfig& config, double t_horizon, std::uint64_t seed,
                  std::int64_t batch_index, std::int64_t count, Batch& out) {
  const int n = static_cast<int>(config.x0_box.size());
  const int pfree = config.free_count();
  out.count = count;
  out.n = n;
  out.pfree = pfree;
  out.t.resize(count);
  out.x0.resize(count * static_cast<std::size_t>(n));
  out.theta.resize(count * static_cast<std::size_t>(pfree));

  const double t_lo = config.t0 - config.train_time_margin;
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(batch_index)));
  for (std::int64_t i = 0; i < count; ++i) {
    out.t[i] = rng.uniform(t_lo, t_horizon);
    for (int d = 0; d < n; ++d)
      out.x0[i * n + d] = rng.uniform(config.x0_box[d][0], config.x0_box[d][1]);
    for (int d = 0; d < pfree; ++d)
      out.theta[i * pfree + d] = rng.uniform(config.theta_box[d][0], config.theta_box[d][1]);
  }
}

// ---------------------------------------------------------------------------
// Loss evaluator

LossEvaluator::LossEvaluator(const OdeSystem& system, const NetworkSpec& spec,
                             const BundleConfig& config) {
  spec.validate();
  config.validate(system);
  n_ = system.n;
  pfree_ = config.free_count();
  if (spec.input_dim != 1 + n_ + pfree_ || spec.output_dim != n_)
    throw ConfigError("loss: network dimensions do not match system/bundle");
  nparams_ = static_cast<std::size_t>(spec.parameter_count());

  // Record the per-point loss once, on mid-domain placeholder values.
  // Replay substitutes the real leaves.
  std::vector<ad::Var> weights;
  weights.reserve(nparams_);
  for (std::size_t k = 0; k < nparams_; ++k) weights.push_back(tape_.leaf(0.0));

  t_leaf_ = nparams_;
  ad::Var t = tape_.leaf(0.5 * (config.t0 + config.tf), 1.0);

  x0_leaf_ = t_leaf_ + 1;
  std::vector<ad::Var> x0;
  for (int d = 0; d < n_; ++d)
    x0.push_back(tape_.leaf(0.5 * (config.x0_box[d][0] + config.x0_box[d][1])));

  theta_leaf_ = x0_leaf_ + static_cast<std::size_t>(n_);
  std::vector<ad::Var> theta_free;
  for (int d = 0; d < pfree_; ++d)
    theta_free.push_back(tape_.leaf(0.5 * (config.theta_box[d][0] + config.theta_box[d][1])));

  lambda_leaf_ = theta_leaf_ + static_cast<std::size_t>(pfree_);
  ad::Var lambda = tape_.leaf(0.0);

  std::vector<ad::Var> theta_full(system.p);
  for (int idx = 0; idx < system.p; ++idx) theta_full[idx] = tape_.constant(config.theta_fixed[idx]);
  for (std::size_t j = 0; j < config.theta_free.size(); ++j)
    theta_full[static_cast<std::size_t>(config.theta_free[j])] = theta_free[j];

  ForwardScratch<ad::Var> scratch;
  std::vector<ad::Var> xhat(n_);
  eval_trial<ad::Var, ad::Var>(spec, std::span<const ad::Var>(weights), config.a_kind, config.t0,
                               t, std::span<const ad::Var>(x0),
                               std::span<const ad::Var>(theta_free), std::span<ad::Var>(xhat),
                               scratch);

  std::vector<ad::Var> f(n_);
  system.rhs_recorded(t, xhat, theta_full, f);

  ad::Var r0 = ad::tangent_of(xhat[0]) - f[0];
  ad::Var sq = r0 * r0;
  for (int i = 1; i < n_; ++i) {
    ad::Var r = ad::tangent_of(xhat[i]) - f[i];
    sq = sq + r * r;
  }
  ad::Var b = ad::exp(-(lambda * (t - config.t0)));
  ad::Var point_loss = b * sq;
  out_index_ = point_loss.index();

  slots_.resize(kSlots);
}

double LossEvaluator::run(std::span<const double> params, const Batch& batch, double lambda,
                          std::span<double> grad, bool with_gradient, int threads) {
  if (params.size() != nparams_) throw ConfigError("loss: parameter vector length mismatch");
  if (batch.n != n_ || batch.pfree != pfree_) throw ConfigError("loss: batch shape mismatch");
  const std::int64_t count = batch.count;
  if (count <= 0) return 0.0;

#ifdef _OPENMP
  const int max_threads = threads > 0 ? threads : omp_get_max_threads();
#else
  (void)threads;
#endif

  const std::size_t leaves = tape_.leaf_count();

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 1) num_threads(max_threads)
#endif
  for (int s = 0; s < kSlots; ++s) {
    Slot& slot = slots_[static_cast<std::size_t>(s)];
    if (slot.buf.primal.empty()) {
      tape_.seed(slot.buf);
      slot.grad.resize(nparams_);
      slot.leaf_grad.resize(leaves);
    }
    slot.loss = 0.0;
    if (with_gradient) std::fill(slot.grad.begin(), slot.grad.end(), 0.0);
    if (s >= count) continue;

    for (std::size_t k = 0; k < nparams_; ++k) tape_.set_leaf(slot.buf, k, params[k]);
    tape_.set_leaf(slot.buf, lambda_leaf_, lambda);

    for (std::int64_t i = s; i < count; i += kSlots) {
      tape_.set_leaf(slot.buf, t_leaf_, batch.t[i], 1.0);
      for (int d = 0; d < n_; ++d)
        tape_.set_leaf(slot.buf, x0_leaf_ + static_cast<std::size_t>(d), batch.x0[i * n_ + d]);
      for (int d = 0; d < pfree_; ++d)
        tape_.set_leaf(slot.buf, theta_leaf_ + static_cast<std::size_t>(d),
                       batch.theta[i * pfree_ + d]);
      tape_.replay(slot.buf);
      slot.loss += slot.buf.primal[out_index_];
      if (with_gradient) {
        tape_.reverse(slot.buf, out_index_, slot.leaf_grad);
        for (std::size_t k = 0; k < nparams_; ++k) slot.grad[k] += slot.leaf_grad[k];
      }
    }
  }

  // Fixed merge order makes the result independent of the thread count.
  double total = 0.0;
  if (with_gradient) std::fill(grad.begin(), grad.end(), 0.0);
  for (int s = 0; s < kSlots; ++s) {
    total += slots_[static_cast<std::size_t>(s)].loss;
    if (with_gradient)
      for (std::size_t k = 0; k < nparams_; ++k)
        grad[k] += slots_[static_cast<std::size_t>(s)].grad[k];
  }
  const double inv = 1.0 / static_cast<double>(count);
  if (with_gradient)
    for (std::size_t k = 0; k < nparams_; ++k) grad[k] *= inv;
  return total * inv;
}

double LossEvaluator::loss_and_gradient(std::span<const double> params, const Batch& batch,
                                        double lambda, std::span<double> grad, int threads) {
  if (grad.size() != nparams_) throw ConfigError("loss: gradient vector length mismatch");
  return run(params, batch, lambda, grad, true, threads);
}

double LossEvaluator::loss_value(std::span<const double> params, const Batch& batch,
                                 double lambda, int threads) {
  return run(params, batch, lambda, {}, false, threads);
}

// ---------------------------------------------------------------------------
// Adam

void adam_step(AdamState& state, const OptimizerConfig& config, double lr,
               std::span<const double> grad, std::span<double> params) {
  const std::size_t count = params.size();
  if (state.m.size() != count) {
    state.m.assign(count, 0.0);
    state.v.assign(count, 0.0);
    state.step = 0;
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < count; ++k) {
    const double g = grad[k];
    state.m[k] = config.beta1 * state.m[k] + (1.0 - config.beta1) * g;
    state.v[k] = config.beta2 * state.v[k] + (1.0 - config.beta2) * g * g;
    const double mhat = state.m[k] / c1;
    const double vhat = state.v[k] / c2;
    params[k] -= lr * mhat / (std::sqrt(vhat) + config.eps);
  }
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

class MovingAverage {
 public:
  explicit MovingAverage(std::size_t capacity) : ring_(std::max<std::size_t>(capacity, 1), 0.0) {}

  void push(double v) {
    if (count_ < ring_.size()) {
      ring_[(head_ + count_) % ring_.size()] = v;
      sum_ += v;
      ++count_;
    } else {
      sum_ += v - ring_[head_];
      ring_[head_] = v;
      head_ = (head_ + 1) % ring_.size();
    }
  }

  double mean() const { return count_ == 0 ? 0.0 : sum_ / static_cast<double>(count_); }

  nlohmann::json to_json() const {
    std::vector<double> ordered;
    ordered.reserve(count_);
    for (std::size_t i = 0; i < count_; ++i) ordered.push_back(ring_[(head_ + i) % ring_.size()]);
    return {{"values", ordered}, {"sum", sum_}};
  }

  void restore(const nlohmann::json& j) {
    const auto values = j.at("values").get<std::vector<double>>();
    head_ = 0;
    count_ = std::min(values.size(), ring_.size());
    for (std::size_t i = 0; i < count_; ++i) ring_[i] = values[i];
    sum_ = j.at("sum").get<double>();
  }

 private:
  std::vector<double> ring_;
  std::size_t head_ = 0;
  std::size_t count_ = 0;
  double sum_ = 0.0;
};

void append_log_row(std::ofstream& log, std::int64_t batch, double raw, double smoothed,
                    double lr, double horizon, double lambda) {
  char buf[200];
  std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                static_cast<long long>(batch), raw, smoothed, lr, horizon, lambda);
  log << buf;
}

}  // namespace

TrainResult run_training(const TrainSetup& setup, bool resume) {
  const OdeSystem& system = system_registry(setup.system);
  setup.network.validate();
  setup.bundle.validate(system);
  const TrainingConfig& tc = setup.training;
  if (tc.total_batches <= 0 || tc.batch_size <= 0)
    throw ConfigError("training: total_batches and batch_size must be positive");

  const bool to_disk = !setup.output_dir.empty();
  std::string ckpt_path;
  if (to_disk) {
    std::filesystem::create_directories(setup.output_dir);
    ckpt_path = (std::filesystem::path(setup.output_dir) / "checkpoint.ckpt").string();
  }

  NetworkParams params;
  AdamState adam;
  PlateauState plateau;
  MovingAverage smoother(static_cast<std::size_t>(tc.smoothing_window));
  double lr = tc.optimizer.lr;
  std::int64_t start_batch = 0;

  if (resume) {
    if (!to_disk) throw ConfigError("training: resume requires an output directory");
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    if (!(ckpt.params.spec == setup.network))
      throw ConfigError("training: checkpoint architecture does not match configuration");
    if (ckpt.extra.value("system", "") != setup.system)
      throw ConfigError("training: checkpoint system does not match configuration");
    params = std::move(ckpt.params);
    start_batch = ckpt.batches;
    const auto& opt = ckpt.extra.at("optimizer");
    adam.m = opt.at("m").get<std::vector<double>>();
    adam.v = opt.at("v").get<std::vector<double>>();
    adam.step = opt.at("step").get<std::int64_t>();
    lr = opt.at("lr").get<double>();
    const auto& pj = opt.at("plateau");
    plateau.best = pj.at("best").get<double>();
    plateau.since_improvement = pj.at("since_improvement").get<std::int64_t>();
    plateau.cooldown_left = pj.at("cooldown_left").get<std::int64_t>();
    smoother.restore(ckpt.extra.at("smoother"));
  } else {
    params = init_network(setup.network, tc.seed);
  }

  LossEvaluator evaluator(system, setup.network, setup.bundle);
  std::vector<double> grad(evaluator.parameter_count());
  Batch batch;

  std::ofstream log;
  if (to_disk) {
    const std::string log_path = (std::filesystem::path(setup.output_dir) / "loss.csv").string();
    log.open(log_path, resume ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("cannot open loss log: " + log_path);
    if (!resume) log << "batch,raw_loss,smoothed_loss,lr,t_horizon,lambda\n";
  }

  double raw_loss = 0.0;

  const auto save = [&](std::int64_t batches_done) {
    if (!to_disk) return;
    Checkpoint ckpt;
    ckpt.params = params;
    ckpt.seed = tc.seed;
    ckpt.batches = batches_done;
    ckpt.raw_loss = raw_loss;
    ckpt.smoothed_loss = smoother.mean();
    ckpt.extra = {{"system", setup.system},
                  {"bundle", bundle_config_to_json(setup.bundle)},
                  {"optimizer",
                   {{"m", adam.m},
                    {"v", adam.v},
                    {"step", adam.step},
                    {"lr", lr},
                    {"plateau",
                     {{"best", plateau.best},
                      {"since_improvement", plateau.since_improvement},
                      {"cooldown_left", plateau.cooldown_left}}}}},
                  {"smoother", smoother.to_json()},
                  {"total_batches", tc.total_batches}};
    save_checkpoint(ckpt, ckpt_path);
  };

  for (std::int64_t m = start_batch; m < tc.total_batches; ++m) {
    const double horizon = tc.curriculum
                               ? curriculum_horizon(setup.bundle.t0, setup.bundle.tf, m,
                                                    tc.total_batches)
                               : setup.bundle.tf;
    const double lambda = effective_lambda(tc.weighting, tc.lambda_schedule, m, tc.total_batches,
                                           horizon - setup.bundle.t0);

    sample_batch(setup.bundle, horizon, tc.seed, m, tc.batch_size, batch);
    raw_loss = evaluator.loss_and_gradient(params.values, batch, lambda, grad, tc.threads);
    if (!std::isfinite(raw_loss))
      throw NumericError("training: non-finite loss at batch " + std::to_string(m));
    for (double g : grad)
      if (!std::isfinite(g))
        throw NumericError("training: non-finite gradient at batch " + std::to_string(m));

    smoother.push(raw_loss);
    const double smoothed = smoother.mean();

    for (const auto& [at, value] : tc.lr_overrides)
      if (at == m) lr = value;
    lr = plateau_step(tc.plateau, plateau, smoothed, lr);

    adam_step(adam, tc.optimizer, lr, grad, params.values);

    if (to_disk && (tc.log_every <= 1 || m % tc.log_every == 0 || m + 1 == tc.total_batches))
      append_log_row(log, m, raw_loss, smoothed, lr, horizon, lambda);
    if (tc.checkpoint_every > 0 && (m + 1) % tc.checkpoint_every == 0 &&
        m + 1 < tc.total_batches) {
      log.flush();
      save(m + 1);
    }
  }

  save(tc.total_batches);

  TrainResult result;
  result.params = std::move(params);
  result.batches_done = tc.total_batches;
  result.raw_loss = raw_loss;
  result.smoothed_loss = smoother.mean();
  result.checkpoint_path = ckpt_path;
  return result;
}

// ---------------------------------------------------------------------------
// Stuck detection

double stuck_fraction(const Bundle& bundle, std::span<const double> x0,
                      std::span<const double> theta_free, std::span<const double> t_grid,
                      double reference_h, const StuckMetric& metric) {
  if (t_grid.empty()) return 0.0;
  const OdeSystem& sys = bundle.system();
  const int n = sys.n;
  const std::vector<double> theta = bundle.full_theta(theta_free);
  const double t_max = *std::max_element(t_grid.begin(), t_grid.end());
  const Trajectory traj =
      rk4_solve(sys, x0, theta, bundle.config().t0, t_max, reference_h);

  std::vector<double> xhat(n), xdot(n), res(n);
  std::int64_t stuck = 0;
  for (double t : t_grid) {
    bundle.evaluate_with_time_derivative(t, x0, theta_free, xhat, xdot);
    residual(sys, xhat, xdot, t, theta, res);
    bool local_ok = true;
    for (int i = 0; i < n; ++i)
      if (std::fabs(res[i]) >= metric.residual_tol) local_ok = false;
    if (!local_ok) continue;
    const std::vector<double> ref = dense_eval(traj, sys, theta, t);
    double dist_sq = 0.0;
    for (int i = 0; i < n; ++i) dist_sq += (xhat[i] - ref[i]) * (xhat[i] - ref[i]);
    if (std::sqrt(dist_sq) > metric.far_distance) ++stuck;
  }
  return static_cast<double>(stuck) / static_cast<double>(t_grid.size());
}

}  // namespace odebundle
