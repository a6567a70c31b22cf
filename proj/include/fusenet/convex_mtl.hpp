#pragma once

// Linear multi-task models over m datasets that share one feature space.
//
// Joint SVMs:
//   sum_i [ sum_j max(0, 1 - y_ij (w_i.x_ij + b_i)) + lambda ||w_i||^2 ]
//     + mu sum_{i<i'} ||w_i - w_i'||^2
// Joint logistic regression:
//   sum_i [ sum_j (sigmoid(w_i.x_ij + b_i) - (1 + y_ij)/2)^2 + lambda ||w_i||^2 ]
//     + mu sum_{i<i'} ||w_i - w_i'||_1  [+ gamma sum_{i<i'} ||w_i - w_i'||^2]
//
// Labels are +-1. Biases are never penalized. Sums run over each dataset's
// training split.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fusenet/network.hpp"
#include "fusenet/numerics.hpp"

namespace fusenet {

struct LinearModel {
  Vector w;
  double b = 0.0;
  bool operator==(const LinearModel&) const = default;
};

/// joint_prox updates every model at once; block_cycle minimizes one model at
/// a time with the others fixed (logistic regression only).
enum class ConvexSolver { joint_prox, block_cycle };

struct ConvexConfig {
  double lambda = 0.1;
  double mu = 1.0;
  double gamma = 0.1;
  bool augmented = true;  // include the gamma term in the logistic objective
  double lr = 0.1;
  std::size_t max_iters = 20000;
  double tol = 1e-10;
  std::size_t inner_iters = 500;  // block_cycle: prox-gradient steps per block
  ConvexSolver solver = ConvexSolver::joint_prox;
  double divergence_factor = 1e3;
  std::size_t log_every = 100;

  void validate() const {
    if (!(lambda >= 0.0) || !(mu >= 0.0) || !(gamma >= 0.0))
      throw ConfigError("convex: lambda, mu and gamma must be >= 0");
    if (!(lr > 0.0)) throw ConfigError("convex.lr must be > 0");
    if (max_iters == 0) throw ConfigError("convex.max_iters must be > 0");
    if (!(tol > 0.0)) throw ConfigError("convex.tol must be > 0");
  }
};

inline void check_binary_dataset(const Dataset& ds, std::size_t dim) {
  if (!ds.labels) throw ConfigError("dataset '" + ds.name + "': linear models need labels");
  if (ds.features.cols() != dim)
    throw ConfigError("dataset '" + ds.name + "': feature dim " + std::to_string(ds.features.cols()) +
                      " != " + std::to_string(dim));
  for (std::size_t r = 0; r < ds.labels->size(); ++r) {
    const int y = (*ds.labels)[r];
    if (y != -1 && y != 1)
      throw ConfigError("dataset '" + ds.name + "': label " + std::to_string(y) + " at record " +
                        std::to_string(r) + " is not -1/+1");
  }
}

inline void check_convex_inputs(std::span<const LinearModel> models, std::span<const Dataset> data) {
  if (models.size() != data.size()) throw ConfigError("convex: one model per dataset required");
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (models[i].w.size() != data[0].features.cols()) throw ConfigError("convex: model dim mismatch");
    check_binary_dataset(data[i], data[0].features.cols());
  }
}

inline double margin(const LinearModel& m, std::span<const double> x) { return dot(m.w, x) + m.b; }

inline double stable_sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

inline double hinge_sum(const LinearModel& m, const Dataset& ds) {
  double s = 0.0;
  for (std::size_t r : ds.train) s += std::max(0.0, 1.0 - (*ds.labels)[r] * margin(m, ds.features.row(r)));
  return s;
}

inline double logistic_sq_sum(const LinearModel& m, const Dataset& ds) {
  double s = 0.0;
  for (std::size_t r : ds.train) {
    const double d = stable_sigmoid(margin(m, ds.features.row(r))) - 0.5 * (1.0 + (*ds.labels)[r]);
    s += d * d;
  }
  return s;
}

inline double pairwise_sq(std::span<const LinearModel> models) {
  double s = 0.0;
  for (std::size_t i = 0; i < models.size(); ++i)
    for (std::size_t j = i + 1; j < models.size(); ++j) s += squared_distance(models[i].w, models[j].w);
  return s;
}

inline double pairwise_l1(std::span<const LinearModel> models) {
  double s = 0.0;
  for (std::size_t i = 0; i < models.size(); ++i)
    for (std::size_t j = i + 1; j < models.size(); ++j)
      for (std::size_t k = 0; k < models[i].w.size(); ++k) s += std::abs(models[i].w[k] - models[j].w[k]);
  return s;
}

inline double svm_objective(std::span<const LinearModel> models, std::span<const Dataset> data,
                            const ConvexConfig& cfg) {
  check_convex_inputs(models, data);
  double total = 0.0;
  for (std::size_t i = 0; i < models.size(); ++i)
    total += hinge_sum(models[i], data[i]) + cfg.lambda * squared_norm(models[i].w);
  return total + cfg.mu * pairwise_sq(models);
}

inline double logreg_objective(std::span<const LinearModel> models, std::span<const Dataset> data,
                               const ConvexConfig& cfg, bool augmented) {
  check_convex_inputs(models, data);
  double total = 0.0;
  for (std::size_t i = 0; i < models.size(); ++i)
    total += logistic_sq_sum(models[i], data[i]) + cfg.lambda * squared_norm(models[i].w);
  total += cfg.mu * pairwise_l1(models);
  if (augmented) total += cfg.gamma * pairwise_sq(models);
  return total;
}

/// Per-outer-iteration progress: (iteration, objective).
using ConvexProgressFn = std::function<void(std::size_t, double)>;

struct ConvexResult {
  std::vector<LinearModel> models;
  double objective = 0.0;
  std::size_t iterations = 0;
};

namespace detail {

inline std::vector<LinearModel> zero_models(std::span<const Dataset> data) {
  if (data.empty()) throw ConfigError("convex: no datasets");
  return std::vector<LinearModel>(data.size(), LinearModel{Vector(data[0].features.cols(), 0.0), 0.0});
}

inline void check_models_finite(std::span<const LinearModel> models, std::size_t t) {
  for (const auto& m : models)
    if (!all_finite(m.w) || !std::isfinite(m.b))
      throw DivergenceError("convex solver: non-finite model at iteration " + std::to_string(t) +
                            "; lower convex.lr");
}

}  // namespace detail

/// Proximal subgradient descent with step lr/sqrt(t): a hinge subgradient step
/// followed by the exact prox of the quadratic penalties. Returns the
/// best-objective iterate (per model when mu == 0, since the objective separates).
inline ConvexResult svm_joint_train(std::span<const Dataset> data, const ConvexConfig& cfg,
                                    const ConvexProgressFn& progress = {}) {
  cfg.validate();
  auto models = detail::zero_models(data);
  check_convex_inputs(models, data);
  const std::size_t m = models.size();
  const std::size_t d = models[0].w.size();

  auto per_model = [&](const LinearModel& mod, std::size_t i) {
    return hinge_sum(mod, data[i]) + cfg.lambda * squared_norm(mod.w);
  };
  const bool separable = cfg.mu == 0.0;
  ConvexResult best{models, svm_objective(models, data, cfg), 0};
  const double initial = best.objective;
  Vector best_part(m);
  for (std::size_t i = 0; i < m; ++i) best_part[i] = per_model(models[i], i);

  std::vector<Vector> v(m, Vector(d));
  for (std::size_t t = 1; t <= cfg.max_iters; ++t) {
    const double eta = cfg.lr / std::sqrt(static_cast<double>(t));
    for (std::size_t i = 0; i < m; ++i) {
      Vector gw(d, 0.0);
      double gb = 0.0;
      for (std::size_t r : data[i].train) {
        const auto x = data[i].features.row(r);
        const int y = (*data[i].labels)[r];
        if (y * margin(models[i], x) < 1.0) {
          for (std::size_t k = 0; k < d; ++k) gw[k] -= y * x[k];
          gb -= y;
        }
      }
      for (std::size_t k = 0; k < d; ++k) v[i][k] = models[i].w[k] - eta * gw[k];
      models[i].b -= eta * gb;
    }
    // argmin sum_i 0.5||w_i - v_i||^2 + eta*lambda sum ||w_i||^2 + eta*mu sum_{i<i'} ||w_i - w_i'||^2
    const double shrink = 1.0 + 2.0 * eta * cfg.lambda;
    const double fuse = 2.0 * eta * cfg.mu * static_cast<double>(m);
    for (std::size_t k = 0; k < d; ++k) {
      double mean = 0.0;
      for (std::size_t i = 0; i < m; ++i) mean += v[i][k];
      mean /= static_cast<double>(m) * shrink;
      for (std::size_t i = 0; i < m; ++i) models[i].w[k] = (v[i][k] + fuse * mean) / (shrink + fuse);
    }
    detail::check_models_finite(models, t);

    const double obj = svm_objective(models, data, cfg);
    if (obj > cfg.divergence_factor * std::max(initial, 1.0))
      throw DivergenceError("svm_joint_train: objective diverged; lower convex.lr");
    if (separable) {
      for (std::size_t i = 0; i < m; ++i) {
        const double part = per_model(models[i], i);
        if (part < best_part[i]) {
          best_part[i] = part;
          best.models[i] = models[i];
        }
      }
      best.objective = std::accumulate(best_part.begin(), best_part.end(), 0.0);
    } else if (obj < best.objective) {
      best.models = models;
      best.objective = obj;
    }
    best.iterations = t;
    if (progress && (t % cfg.log_every == 0 || t == cfg.max_iters)) progress(t, best.objective);
  }
  return best;
}

/// argmin_x 0.5 (x - v)^2 + tau sum_k |x - a_k|: the median of the a_k and
/// v + tau (p - 2r), r = 0..p.
inline double prox_abs_deviation(double v, std::span<const double> a, double tau) {
  const std::size_t p = a.size();
  Vector pts(a.begin(), a.end());
  for (std::size_t r = 0; r <= p; ++r)
    pts.push_back(v + tau * (static_cast<double>(p) - 2.0 * static_cast<double>(r)));
  auto mid = pts.begin() + static_cast<std::ptrdiff_t>(p);
  std::nth_element(pts.begin(), mid, pts.end());
  return *mid;
}

/// argmin_x 0.5 ||x - v||^2 + tau sum_{i<j} |x_i - x_j|. The minimizer keeps the
/// order of v, where the penalty is linear, so it is the isotonic regression of
/// v_(k) - tau (2k - m - 1) over the sorted order (pool-adjacent-violators).
inline Vector prox_complete_graph_l1(std::span<const double> v, double tau) {
  const std::size_t m = v.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  struct Block {
    double sum;
    std::size_t count;
  };
  std::vector<Block> blocks;
  for (std::size_t k = 0; k < m; ++k) {
    const double z = v[order[k]] - tau * (2.0 * static_cast<double>(k + 1) - static_cast<double>(m) - 1.0);
    blocks.push_back({z, 1});
    while (blocks.size() > 1) {
      auto& hi = blocks[blocks.size() - 1];
      auto& lo = blocks[blocks.size() - 2];
      if (lo.sum / static_cast<double>(lo.count) < hi.sum / static_cast<double>(hi.count)) break;
      lo.sum += hi.sum;
      lo.count += hi.count;
      blocks.pop_back();
    }
  }
  Vector x(m);
  std::size_t k = 0;
  for (const auto& blk : blocks) {
    const double val = blk.sum / static_cast<double>(blk.count);
    for (std::size_t c = 0; c < blk.count; ++c) x[order[k++]] = val;
  }
  return x;
}

namespace detail {

// Gradient of the logistic data term plus lambda||w||^2 for one model.
inline double logreg_data_grad(const LinearModel& mod, const Dataset& ds, double lambda, Vector& gw, double& gb) {
  const std::size_t d = mod.w.size();
  gw.assign(d, 0.0);
  gb = 0.0;
  double value = 0.0;
  for (std::size_t r : ds.train) {
    const auto x = ds.features.row(r);
    const double s = stable_sigmoid(margin(mod, x));
    const double diff = s - 0.5 * (1.0 + (*ds.labels)[r]);
    value += diff * diff;
    const double dz = 2.0 * diff * s * (1.0 - s);
    for (std::size_t k = 0; k < d; ++k) gw[k] += dz * x[k];
    gb += dz;
  }
  for (std::size_t k = 0; k < d; ++k) gw[k] += 2.0 * lambda * mod.w[k];
  return value + lambda * squared_norm(mod.w);
}

inline double max_abs_change(std::span<const LinearModel> a, std::span<const LinearModel> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a[i].b - b[i].b));
    for (std::size_t k = 0; k < a[i].w.size(); ++k) m = std::max(m, std::abs(a[i].w[k] - b[i].w[k]));
  }
  return m;
}

// Smooth part of the joint logistic objective and its gradient.
inline double logreg_smooth(std::span<const LinearModel> models, std::span<const Dataset> data, double lambda,
                            double gamma, std::vector<Vector>* gw, Vector* gb) {
  const std::size_t m = models.size();
  double value = 0.0;
  Vector g;
  double b = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    value += logreg_data_grad(models[i], data[i], lambda, g, b);
    if (gw) (*gw)[i] = g;
    if (gb) (*gb)[i] = b;
  }
  if (gamma != 0.0) {
    value += gamma * pairwise_sq(models);
    if (gw)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j)
          if (j != i)
            for (std::size_t k = 0; k < models[i].w.size(); ++k)
              (*gw)[i][k] += 2.0 * gamma * (models[i].w[k] - models[j].w[k]);
  }
  return value;
}

inline double quad_model_gap(std::span<const LinearModel> from, std::span<const LinearModel> to,
                             const std::vector<Vector>& gw, const Vector& gb, double step) {
  double lin = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < from.size(); ++i) {
    const double db = to[i].b - from[i].b;
    lin += gb[i] * db;
    sq += db * db;
    for (std::size_t k = 0; k < from[i].w.size(); ++k) {
      const double dw = to[i].w[k] - from[i].w[k];
      lin += gw[i][k] * dw;
      sq += dw * dw;
    }
  }
  return lin + sq / (2.0 * step);
}

inline ConvexResult logreg_joint_prox(std::span<const Dataset> data, const ConvexConfig& cfg, double gamma,
                                      const ConvexProgressFn& progress) {
  auto models = zero_models(data);
  const std::size_t m = models.size();
  const std::size_t d = models[0].w.size();
  std::vector<Vector> gw(m);
  Vector gb(m);
  double step = cfg.lr;
  const double initial = logreg_objective(models, data, cfg, gamma != 0.0);
  ConvexResult res;
  for (std::size_t t = 1; t <= cfg.max_iters; ++t) {
    const double s0 = logreg_smooth(models, data, cfg.lambda, gamma, &gw, &gb);
    std::vector<LinearModel> cand;
    for (;;) {
      cand = models;
      for (std::size_t i = 0; i < m; ++i) {
        cand[i].b -= step * gb[i];
        for (std::size_t k = 0; k < d; ++k) cand[i].w[k] -= step * gw[i][k];
      }
      if (cfg.mu != 0.0 && m > 1) {
        Vector col(m);
        for (std::size_t k = 0; k < d; ++k) {
          for (std::size_t i = 0; i < m; ++i) col[i] = cand[i].w[k];
          const auto x = prox_complete_graph_l1(col, step * cfg.mu);
          for (std::size_t i = 0; i < m; ++i) cand[i].w[k] = x[i];
        }
      }
      const double s1 = logreg_smooth(cand, data, cfg.lambda, gamma, nullptr, nullptr);
      if (s1 <= s0 + quad_model_gap(models, cand, gw, gb, step) + 1e-15 * std::abs(s0)) break;
      step *= 0.5;
      if (step < 1e-300) throw DivergenceError("logreg_joint_train: line search failed");
    }
    const double change = max_abs_change(models, cand);
    models = std::move(cand);
    detail::check_models_finite(models, t);
    step *= 1.25;
    res.iterations = t;
    if (progress && (t % cfg.log_every == 0)) progress(t, logreg_objective(models, data, cfg, gamma != 0.0));
    if (change <= cfg.tol) break;
  }
  res.models = std::move(models);
  res.objective = logreg_objective(res.models, data, cfg, gamma != 0.0);
  if (res.objective > cfg.divergence_factor * std::max(initial, 1.0))
    throw DivergenceError("logreg_joint_train: objective diverged");
  return res;
}

// Minimizes over (w_i, b_i) with the other models fixed.
inline void logreg_block(std::vector<LinearModel>& models, std::size_t i, std::span<const Dataset> data,
                         const ConvexConfig& cfg, double gamma) {
  const std::size_t m = models.size();
  const std::size_t d = models[i].w.size();
  std::vector<Vector> partners(d);
  for (std::size_t k = 0; k < d; ++k)
    for (std::size_t j = 0; j < m; ++j)
      if (j != i) partners[k].push_back(models[j].w[k]);

  auto smooth = [&](const LinearModel& mod, Vector* g, double* gbias) {
    Vector gl;
    double bl = 0.0;
    double v = logreg_data_grad(mod, data[i], cfg.lambda, gl, bl);
    for (std::size_t k = 0; k < d; ++k)
      for (double a : partners[k]) {
        v += gamma * (mod.w[k] - a) * (mod.w[k] - a);
        gl[k] += 2.0 * gamma * (mod.w[k] - a);
      }
    if (g) *g = std::move(gl);
    if (gbias) *gbias = bl;
    return v;
  };

  double step = cfg.lr;
  for (std::size_t it = 0; it < cfg.inner_iters; ++it) {
    const LinearModel cur = models[i];
    Vector g;
    double gbias = 0.0;
    const double s0 = smooth(cur, &g, &gbias);
    LinearModel cand;
    for (;;) {
      cand = cur;
      cand.b -= step * gbias;
      for (std::size_t k = 0; k < d; ++k) {
        const double v = cur.w[k] - step * g[k];
        cand.w[k] = cfg.mu != 0.0 ? prox_abs_deviation(v, partners[k], step * cfg.mu) : v;
      }
      double lin = gbias * (cand.b - cur.b), sq = (cand.b - cur.b) * (cand.b - cur.b);
      for (std::size_t k = 0; k < d; ++k) {
        lin += g[k] * (cand.w[k] - cur.w[k]);
        sq += (cand.w[k] - cur.w[k]) * (cand.w[k] - cur.w[k]);
      }
      if (smooth(cand, nullptr, nullptr) <= s0 + lin + sq / (2.0 * step) + 1e-15 * std::abs(s0)) break;
      step *= 0.5;
      if (step < 1e-300) throw DivergenceError("logreg_joint_train: line search failed");
    }
    double change = std::abs(cand.b - cur.b);
    for (std::size_t k = 0; k < d; ++k) change = std::max(change, std::abs(cand.w[k] - cur.w[k]));
    models[i] = std::move(cand);
    step *= 1.25;
    if (change <= cfg.tol) break;
  }
}

inline ConvexResult logreg_block_cycle(std::span<const Dataset> data, const ConvexConfig& cfg, double gamma,
                                       const ConvexProgressFn& progress) {
  auto models = zero_models(data);
  ConvexResult res;
  for (std::size_t t = 1; t <= cfg.max_iters; ++t) {
    const auto before = models;
    for (std::size_t i = 0; i < models.size(); ++i) logreg_block(models, i, data, cfg, gamma);
    detail::check_models_finite(models, t);
    res.iterations = t;
    if (progress && (t % cfg.log_every == 0)) progress(t, logreg_objective(models, data, cfg, gamma != 0.0));
    if (max_abs_change(before, models) <= cfg.tol) break;
  }
  res.models = std::move(models);
  res.objective = logreg_objective(res.models, data, cfg, gamma != 0.0);
  return res;
}

}  // namespace detail

/// Proximal gradient with backtracking on the smooth part (data, lambda and
/// gamma terms); the L1 fusion term is handled by its exact prox.
inline ConvexResult logreg_joint_train(std::span<const Dataset> data, const ConvexConfig& cfg,
                                       const ConvexProgressFn& progress = {}) {
  cfg.validate();
  check_convex_inputs(detail::zero_models(data), data);
  const double gamma = cfg.augmented ? cfg.gamma : 0.0;
  return cfg.solver == ConvexSolver::joint_prox ? detail::logreg_joint_prox(data, cfg, gamma, progress)
                                                : detail::logreg_block_cycle(data, cfg, gamma, progress);
}

}  // namespace fusenet
