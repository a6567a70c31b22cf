#pragma once

// Joint training of n networks coupled by the robust fusion term.
//
// The weighted problem solved at every stage is
//   min sum_i f_i(theta_i) + s * sum_{i<j} sum_l c_ijl ||theta_i^l - theta_j^l||^2
// where s is TrainConfig::fusion_scale() and c comes from the layer-pair weights
// (all ones for the L2 initialization, IRLS weights afterwards). It is solved by
// block-coordinate descent: network i is trained for an epoch against the
// quadratic pull s * sum_l P_il ||theta^l - anchor_il||^2 with
//   P_il = sum_{j != i} c_ijl,  anchor_il = sum_{j != i} c_ijl theta_j^l / P_il.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "fusenet/fusion.hpp"
#include "fusenet/network.hpp"
#include "fusenet/numerics.hpp"

namespace fusenet {

enum class TrainMode { joint_robust, isolated, l2_reg, shareall, pretrain_finetune };

inline std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::joint_robust: return "joint_robust";
    case TrainMode::isolated: return "isolated";
    case TrainMode::l2_reg: return "l2_reg";
    case TrainMode::shareall: return "shareall";
    case TrainMode::pretrain_finetune: return "pretrain_finetune";
  }
  return "?";
}

inline TrainMode parse_train_mode(const std::string& s) {
  if (s == "joint_robust" || s == "joint") return TrainMode::joint_robust;
  if (s == "isolated") return TrainMode::isolated;
  if (s == "l2_reg") return TrainMode::l2_reg;
  if (s == "shareall") return TrainMode::shareall;
  if (s == "pretrain_finetune" || s == "finetune") return TrainMode::pretrain_finetune;
  throw ConfigError("unknown training mode '" + s + "'");
}

/// Gauss-Seidel updates networks in order against the latest parameters.
/// Jacobi freezes all anchors at sweep start and trains networks concurrently.
enum class SweepOrder { gauss_seidel, jacobi };

struct TrainConfig {
  double lambda = 10.0;
  // Count each unordered pair twice, as in a sum over all ordered (i, j);
  // the effective coupling is then 2 * lambda on the i<j sums.
  bool ordered_pairs = true;
  double lr = 1e-2;
  std::size_t batch_size = 32;
  std::size_t inner_epochs_per_sweep = 1;
  std::size_t sweeps_per_irls_iter = 1;
  std::size_t max_irls_iters = 12;
  double delta_tol = 1e-2;
  std::size_t init_max_sweeps = 20;
  double init_rel_tol = 1e-3;
  // Epochs per network for the baselines; 0 means the joint budget
  // (init_max_sweeps + max_irls_iters * sweeps_per_irls_iter) * inner_epochs_per_sweep.
  std::size_t baseline_epochs = 0;
  // Fine-tuning epochs for pretrain_finetune; negative means half the budget.
  long finetune_epochs = -1;
  double divergence_factor = 1e3;
  // Multiplies every f_i; 1 in normal use.
  double task_weight = 1.0;
  SweepOrder order = SweepOrder::gauss_seidel;
  std::uint64_t seed = 0;
  // Explicit per-network seeds; empty means child_seed(seed, i).
  std::vector<std::uint64_t> network_seeds;
  TrainMode mode = TrainMode::joint_robust;

  double fusion_scale() const { return ordered_pairs ? 2.0 * lambda : lambda; }

  std::size_t epoch_budget() const {
    if (baseline_epochs > 0) return baseline_epochs;
    return (init_max_sweeps + max_irls_iters * sweeps_per_irls_iter) * inner_epochs_per_sweep;
  }

  void validate() const {
    if (!(lambda >= 0.0)) throw ConfigError("train.lambda must be >= 0");
    if (!(delta_tol > 0.0)) throw ConfigError("train.delta_tol must be > 0");
    if (max_irls_iters < 1) throw ConfigError("train.max_irls_iters must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("train.lr must be > 0");
    if (batch_size == 0) throw ConfigError("train.batch_size must be > 0");
    if (inner_epochs_per_sweep == 0) throw ConfigError("train.inner_epochs_per_sweep must be > 0");
    if (sweeps_per_irls_iter == 0) throw ConfigError("train.sweeps_per_irls_iter must be > 0");
    if (init_max_sweeps == 0) throw ConfigError("train.init_max_sweeps must be > 0");
    if (!(divergence_factor > 1.0)) throw ConfigError("train.divergence_factor must be > 1");
    if (!(task_weight >= 0.0)) throw ConfigError("train.task_weight must be >= 0");
  }
};

/// Independent init and SGD streams for one network.
struct NetworkStreams {
  Rng init;
  Rng sgd;
};

inline std::vector<NetworkStreams> make_streams(const TrainConfig& cfg, std::size_t n) {
  if (!cfg.network_seeds.empty() && cfg.network_seeds.size() != n)
    throw ConfigError("train.network_seeds must have one entry per dataset");
  std::vector<NetworkStreams> s;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t base = cfg.network_seeds.empty() ? child_seed(cfg.seed, i) : cfg.network_seeds[i];
    s.push_back({Rng(child_seed(base, 0)), Rng(child_seed(base, 1))});
  }
  return s;
}

struct IterationRecord {
  std::size_t iteration = 0;
  Vector train_loss;
  Vector test_loss;
  Vector test_accuracy;  // classification only
  double consistency = 0.0;
  double delta = std::numeric_limits<double>::quiet_NaN();
  std::size_t sweeps = 0;     // cumulative
  std::size_t sgd_steps = 0;  // cumulative, summed over networks
  double elapsed_seconds = 0.0;
  Vector sweep_objectives;  // weighted objective before the first and after every sweep
};

struct TrainHistory {
  std::vector<IterationRecord> records;
  PairTensor final_weights;
  Vector sigma;
  std::size_t epochs_per_network = 0;
};

struct Anchor {
  double strength = 0.0;
  Vector point;
};

/// c-weighted mean of the other networks' layer l; strength 0 means no coupling.
inline Anchor anchor(std::size_t i, std::size_t l, const PairTensor& coeffs, const ParamEnsemble& e) {
  Anchor a;
  a.point.assign(e.nets[i][l].param_count(), 0.0);
  for (std::size_t j = 0; j < e.size(); ++j) {
    if (j == i) continue;
    const double c = coeffs.at(i, j, l);
    if (c == 0.0) continue;
    a.strength += c;
    std::size_t k = 0;
    e.nets[j][l].for_each([&](double v) { a.point[k++] += c * v; });
  }
  if (a.strength > 0.0)
    for (double& v : a.point) v /= a.strength;
  return a;
}

inline LayerPull make_pull(std::size_t i, const PairTensor& coeffs, const ParamEnsemble& e, double scale) {
  LayerPull pull;
  for (std::size_t l = 0; l < e.spec.depth(); ++l) {
    auto a = anchor(i, l, coeffs, e);
    pull.strength.push_back(scale * a.strength);
    pull.anchor.push_back(std::move(a.point));
  }
  return pull;
}

/// sum_i f_i(theta_i) over training splits plus the weighted layer coupling.
inline double weighted_objective(std::span<const Dataset> data, const ParamEnsemble& e,
                                 const PairTensor& coeffs, double scale, double task_weight = 1.0) {
  double total = 0.0;
  if (task_weight != 0.0)
    for (std::size_t i = 0; i < e.size(); ++i)
      total += task_weight * task_loss(e.spec, e.nets[i], data[i], data[i].train);
  if (scale == 0.0) return total;
  const auto sq = layer_squared_distances(e);
  double coupling = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i)
    for (std::size_t j = i + 1; j < e.size(); ++j)
      for (std::size_t l = 0; l < e.spec.depth(); ++l) coupling += coeffs.at(i, j, l) * sq.at(i, j, l);
  return total + scale * coupling;
}

struct SolveReport {
  Vector objectives;  // before, then after each sweep
  std::size_t sweeps = 0;
  std::size_t sgd_steps = 0;
};

/// Block-coordinate descent on the weighted problem for up to `sweeps` sweeps.
/// With rel_tol > 0, stops once the relative objective change of a sweep drops below it.
inline SolveReport solve_weighted_joint(std::span<const Dataset> data, ParamEnsemble& e,
                                        const PairTensor& coeffs, const TrainConfig& cfg,
                                        std::vector<NetworkStreams>& streams, std::size_t sweeps,
                                        double rel_tol = 0.0) {
  const std::size_t n = e.size();
  const double scale = cfg.fusion_scale();
  SolveReport rep;
  const double initial = weighted_objective(data, e, coeffs, scale, cfg.task_weight);
  rep.objectives.push_back(initial);

  auto train_one = [&](std::size_t i, Params& theta, const ParamEnsemble& anchors_from) {
    std::size_t steps = 0;
    const bool coupled = scale != 0.0 && n > 1;
    LayerPull pull;
    if (coupled) pull = make_pull(i, coeffs, anchors_from, scale);
    for (std::size_t ep = 0; ep < cfg.inner_epochs_per_sweep; ++ep)
      steps += sgd_epoch(e.spec, theta, data[i], cfg.lr, cfg.batch_size, streams[i].sgd,
                         coupled ? &pull : nullptr, cfg.task_weight);
    return steps;
  };

  for (std::size_t s = 0; s < sweeps; ++s) {
    if (cfg.order == SweepOrder::gauss_seidel) {
      for (std::size_t i = 0; i < n; ++i) rep.sgd_steps += train_one(i, e.nets[i], e);
    } else {
      const ParamEnsemble snapshot = e;
      std::vector<Params> next = e.nets;
      std::vector<std::size_t> steps(n, 0);
      std::vector<std::exception_ptr> errors(n);
      std::vector<std::thread> workers;
      for (std::size_t i = 0; i < n; ++i)
        workers.emplace_back([&, i] {
          try {
            steps[i] = train_one(i, next[i], snapshot);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        });
      for (auto& w : workers) w.join();
      for (auto& err : errors)
        if (err) std::rethrow_exception(err);
      e.nets = std::move(next);
      for (auto st : steps) rep.sgd_steps += st;
    }
    ++rep.sweeps;
    const double obj = weighted_objective(data, e, coeffs, scale, cfg.task_weight);
    rep.objectives.push_back(obj);
    if (!std::isfinite(obj) || (initial > 0.0 && obj > cfg.divergence_factor * initial))
      throw DivergenceError("joint objective diverged at sweep " + std::to_string(s + 1) + " (" +
                            std::to_string(obj) + " vs initial " + std::to_string(initial) +
                            "); lower train.lr");
    if (rel_tol > 0.0) {
      const double prev = rep.objectives[rep.objectives.size() - 2];
      if (std::abs(prev - obj) <= rel_tol * std::max(std::abs(prev), 1e-300)) break;
    }
  }
  return rep;
}

inline ParamEnsemble init_ensemble(const NetworkSpec& spec, std::vector<NetworkStreams>& streams) {
  ParamEnsemble e{spec, {}};
  for (auto& s : streams) e.nets.push_back(init_params(spec, s.init));
  return e;
}

inline void check_datasets(const NetworkSpec& spec, std::span<const Dataset> data) {
  spec.validate();
  if (data.empty()) throw ConfigError("no datasets");
  for (const auto& ds : data) {
    check_dataset(spec, ds);
    if (ds.train.empty()) throw ConfigError("dataset '" + ds.name + "' has an empty training split");
  }
}

namespace detail {

class Clock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline IterationRecord evaluate(std::span<const Dataset> data, const ParamEnsemble& e) {
  IterationRecord r;
  for (std::size_t i = 0; i < e.size(); ++i) {
    r.train_loss.push_back(task_loss(e.spec, e.nets[i], data[i], data[i].train));
    r.test_loss.push_back(data[i].test.empty()
                              ? std::numeric_limits<double>::quiet_NaN()
                              : task_loss(e.spec, e.nets[i], data[i], data[i].test));
    if (e.spec.loss == LossKind::cross_entropy)
      r.test_accuracy.push_back(accuracy(e.spec, e.nets[i], data[i], data[i].test));
  }
  return r;
}

inline double consistency_or_zero(const ParamEnsemble& e, std::span<const double> sigma) {
  return e.size() < 2 || sigma.empty() ? 0.0 : consistency_loss(e, sigma);
}

}  // namespace detail

struct InitResult {
  ParamEnsemble ensemble;
  SolveReport report;
};

/// L2 initialization: all pair weights 1, run until the relative objective
/// change falls below init_rel_tol or init_max_sweeps sweeps.
inline InitResult init_l2(std::span<const Dataset> data, const NetworkSpec& spec, const TrainConfig& cfg,
                          std::vector<NetworkStreams>& streams) {
  InitResult r{init_ensemble(spec, streams), {}};
  const PairTensor coeffs = layer_coefficients(PairTensor(data.size(), spec.depth() - 1, 1.0));
  r.report = solve_weighted_joint(data, r.ensemble, coeffs, cfg, streams, cfg.init_max_sweeps,
                                  cfg.init_rel_tol);
  return r;
}

inline InitResult init_l2(std::span<const Dataset> data, const NetworkSpec& spec, const TrainConfig& cfg) {
  check_datasets(spec, data);
  cfg.validate();
  auto streams = make_streams(cfg, data.size());
  return init_l2(data, spec, cfg, streams);
}

struct IrlsResult {
  ParamEnsemble ensemble;
  TrainHistory history;
  FusionState state;
};

using ProgressFn = std::function<void(const IterationRecord&)>;

inline IrlsResult irls_train(std::span<const Dataset> data, const NetworkSpec& spec, const TrainConfig& cfg,
                             const ProgressFn& progress = {}) {
  check_datasets(spec, data);
  cfg.validate();
  const std::size_t n = data.size();
  const std::size_t pairs = spec.depth() - 1;
  detail::Clock clock;
  auto streams = make_streams(cfg, n);

  IrlsResult out;
  auto init = init_l2(data, spec, cfg, streams);
  out.ensemble = std::move(init.ensemble);
  std::size_t sweeps = init.report.sweeps;
  std::size_t steps = init.report.sgd_steps;

  auto& st = out.state;
  st.sigma = estimate_sigma(pair_distances(out.ensemble), sigma_floor(out.ensemble));
  st.weights = PairTensor(n, pairs, 1.0);
  st.prev_weights = st.weights;

  auto record = [&](std::size_t k, double delta_k, Vector objectives) {
    auto r = detail::evaluate(data, out.ensemble);
    r.iteration = k;
    r.consistency = detail::consistency_or_zero(out.ensemble, st.sigma);
    r.delta = delta_k;
    r.sweeps = sweeps;
    r.sgd_steps = steps;
    r.elapsed_seconds = clock.seconds();
    r.sweep_objectives = std::move(objectives);
    if (progress) progress(r);
    out.history.records.push_back(std::move(r));
  };
  record(0, std::numeric_limits<double>::quiet_NaN(), init.report.objectives);

  for (std::size_t k = 1; k <= cfg.max_irls_iters; ++k) {
    st.prev_weights = std::move(st.weights);
    st.weights = compute_weights(pair_distances(out.ensemble), st.sigma);
    st.k = k;
    const double d = delta(st);
    const auto coeffs = layer_coefficients(st.weights);
    auto rep = solve_weighted_joint(data, out.ensemble, coeffs, cfg, streams, cfg.sweeps_per_irls_iter);
    sweeps += rep.sweeps;
    steps += rep.sgd_steps;
    record(k, d, std::move(rep.objectives));
    if (d <= cfg.delta_tol) break;
  }
  out.history.final_weights = st.weights;
  out.history.sigma = st.sigma;
  out.history.epochs_per_network = sweeps * cfg.inner_epochs_per_sweep;
  return out;
}

/// Concatenates the training records of every dataset into one dataset.
inline Dataset union_dataset(std::span<const Dataset> data) {
  Dataset u;
  u.name = "union";
  const std::size_t d = data.front().features.cols();
  Vector feats, targets, mask;
  std::vector<int> labels;
  const bool has_labels = data.front().labels.has_value();
  const bool has_targets = data.front().targets.has_value();
  const bool has_mask = data.front().mask.has_value();
  std::size_t rows = 0;
  std::size_t tcols = has_targets ? data.front().targets->cols() : 0;
  for (const auto& ds : data) {
    if (ds.labels.has_value() != has_labels || ds.targets.has_value() != has_targets ||
        ds.mask.has_value() != has_mask)
      throw ConfigError("union_dataset: datasets disagree on labels/targets/mask");
    for (std::size_t r : ds.train) {
      auto row = ds.features.row(r);
      feats.insert(feats.end(), row.begin(), row.end());
      if (has_labels) labels.push_back((*ds.labels)[r]);
      if (has_targets) {
        auto t = ds.targets->row(r);
        targets.insert(targets.end(), t.begin(), t.end());
      }
      if (has_mask) {
        auto m = ds.mask->row(r);
        mask.insert(mask.end(), m.begin(), m.end());
      }
      ++rows;
    }
  }
  u.features = Matrix(rows, d, std::move(feats));
  if (has_labels) u.labels = std::move(labels);
  if (has_targets) u.targets = Matrix(rows, tcols, std::move(targets));
  if (has_mask) u.mask = Matrix(rows, d, std::move(mask));
  u.train = all_records(u);
  return u;
}

struct BaselineResult {
  ParamEnsemble ensemble;
  TrainHistory history;
};

/// isolated, l2_reg, shareall and pretrain_finetune, each with epoch_budget() epochs per network.
inline BaselineResult train_baseline(std::span<const Dataset> data, const NetworkSpec& spec,
                                     const TrainConfig& cfg, const ProgressFn& progress = {}) {
  check_datasets(spec, data);
  cfg.validate();
  const std::size_t n = data.size();
  const std::size_t budget = cfg.epoch_budget();
  detail::Clock clock;
  auto streams = make_streams(cfg, n);
  BaselineResult out;
  std::size_t steps = 0;
  std::size_t iteration = 0;

  auto record = [&](Vector objectives = {}) {
    auto r = detail::evaluate(data, out.ensemble);
    r.iteration = iteration++;
    r.sweeps = iteration - 1;
    r.sgd_steps = steps;
    r.elapsed_seconds = clock.seconds();
    r.sweep_objectives = std::move(objectives);
    if (progress) progress(r);
    out.history.records.push_back(std::move(r));
  };

  auto shared_phase = [&](std::size_t epochs) {
    const Dataset u = union_dataset(data);
    Params theta = init_params(spec, streams[0].init);
    out.ensemble = ParamEnsemble{spec, std::vector<Params>(n, theta)};
    record();
    for (std::size_t ep = 0; ep < epochs; ++ep) {
      steps += sgd_epoch(spec, theta, u, cfg.lr, cfg.batch_size, streams[0].sgd);
      out.ensemble.nets.assign(n, theta);
      record();
    }
  };

  switch (cfg.mode) {
    case TrainMode::isolated: {
      out.ensemble = init_ensemble(spec, streams);
      record();
      for (std::size_t ep = 0; ep < budget; ++ep) {
        for (std::size_t i = 0; i < n; ++i)
          steps += sgd_epoch(spec, out.ensemble.nets[i], data[i], cfg.lr, cfg.batch_size, streams[i].sgd);
        record();
      }
      break;
    }
    case TrainMode::l2_reg: {
      out.ensemble = init_ensemble(spec, streams);
      record();
      const PairTensor coeffs = layer_coefficients(PairTensor(n, spec.depth() - 1, 1.0));
      const std::size_t sweeps = (budget + cfg.inner_epochs_per_sweep - 1) / cfg.inner_epochs_per_sweep;
      for (std::size_t s = 0; s < sweeps; ++s) {
        auto rep = solve_weighted_joint(data, out.ensemble, coeffs, cfg, streams, 1);
        steps += rep.sgd_steps;
        record(std::move(rep.objectives));
      }
      out.history.final_weights = PairTensor(n, spec.depth() - 1, 1.0);
      break;
    }
    case TrainMode::shareall:
      shared_phase(budget);
      break;
    case TrainMode::pretrain_finetune: {
      const std::size_t fine =
          cfg.finetune_epochs < 0 ? budget / 2 : std::min<std::size_t>(budget, static_cast<std::size_t>(cfg.finetune_epochs));
      shared_phase(budget - fine);
      for (std::size_t ep = 0; ep < fine; ++ep) {
        for (std::size_t i = 0; i < n; ++i)
          steps += sgd_epoch(spec, out.ensemble.nets[i], data[i], cfg.lr, cfg.batch_size, streams[i].sgd);
        record();
      }
      break;
    }
    case TrainMode::joint_robust:
      throw ConfigError("train_baseline: joint_robust is trained by irls_train");
  }
  out.history.epochs_per_network = budget;
  return out;
}

}  // namespace fusenet
