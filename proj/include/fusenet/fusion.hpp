#pragma once

// Robust fusion over concatenated adjacent-layer parameters.
//
// For networks i, j and layer pair l (layers l and l+1, zero-based l in
// [0, L-2]) the pair distance is
//   d_ijl = ||(theta_i^l, theta_i^{l+1}) - (theta_j^l, theta_j^{l+1})||
// and the consistency term is sum_{i<j} sum_l rho(d_ijl, sigma_l) with
//   rho(x, s) = s^2 x^2 / (s^2 + x^2) = w(x, s) * x^2,  w(x, s) = s^2 / (s^2 + x^2).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "fusenet/network.hpp"
#include "fusenet/numerics.hpp"

namespace fusenet {

inline double rho(double x, double sigma) {
  const double s2 = sigma * sigma;
  const double x2 = x * x;
  return s2 * x2 / (s2 + x2);
}

inline double robust_weight(double x, double sigma) {
  const double s2 = sigma * sigma;
  return s2 / (s2 + x * x);
}

/// Dense symmetric n x n x depth tensor indexed (i, j, slot).
class PairTensor {
 public:
  PairTensor() = default;
  PairTensor(std::size_t n, std::size_t depth, double fill = 0.0)
      : n_(n), depth_(depth), data_(n * n * depth, fill) {}

  std::size_t n() const noexcept { return n_; }
  std::size_t depth() const noexcept { return depth_; }

  double& at(std::size_t i, std::size_t j, std::size_t l) { return data_[(i * n_ + j) * depth_ + l]; }
  double at(std::size_t i, std::size_t j, std::size_t l) const {
    return data_[(i * n_ + j) * depth_ + l];
  }

  void set_symmetric(std::size_t i, std::size_t j, std::size_t l, double v) {
    at(i, j, l) = v;
    at(j, i, l) = v;
  }

  /// n x n slice at one slot.
  Matrix slice(std::size_t l) const {
    Matrix m(n_, n_);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < n_; ++j) m(i, j) = at(i, j, l);
    return m;
  }

  const Vector& values() const noexcept { return data_; }
  bool operator==(const PairTensor&) const = default;

 private:
  std::size_t n_ = 0;
  std::size_t depth_ = 0;
  Vector data_;
};

/// Squared per-layer distances ||theta_i^l - theta_j^l||^2, slots = layers.
inline PairTensor layer_squared_distances(const ParamEnsemble& e) {
  const std::size_t n = e.size();
  const std::size_t depth = e.spec.depth();
  PairTensor t(n, depth);
  std::vector<std::vector<Vector>> flat(n);
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& layer : e.nets[i]) flat[i].push_back(layer.flatten());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      for (std::size_t l = 0; l < depth; ++l)
        t.set_symmetric(i, j, l, squared_distance(flat[i][l], flat[j][l]));
  return t;
}

/// d_ijl over the L-1 adjacent layer pairs.
inline PairTensor pair_distances(const ParamEnsemble& e) {
  const auto sq = layer_squared_distances(e);
  const std::size_t n = e.size();
  const std::size_t pairs = e.spec.depth() - 1;
  PairTensor d(n, pairs);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      for (std::size_t l = 0; l < pairs; ++l)
        d.set_symmetric(i, j, l, std::sqrt(sq.at(i, j, l) + sq.at(i, j, l + 1)));
  return d;
}

/// 1e-8 * (1 + mean parameter norm); lower bound applied to every sigma_l.
inline double sigma_floor(const ParamEnsemble& e) {
  if (e.size() == 0) return 1e-8;
  double total = 0.0;
  for (const auto& net : e.nets) total += std::sqrt(squared_norm(flatten(net)));
  return 1e-8 * (1.0 + total / static_cast<double>(e.size()));
}

/// sigma_l = mean_i min_{j != i} d_ijl, floored at `floor`.
inline Vector estimate_sigma(const PairTensor& table, double floor = 0.0) {
  const std::size_t n = table.n();
  Vector sigma(table.depth(), floor);
  if (n < 2) return sigma;
  for (std::size_t l = 0; l < table.depth(); ++l) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) best = std::min(best, table.at(i, j, l));
      acc += best;
    }
    sigma[l] = std::max(acc / static_cast<double>(n), floor);
  }
  return sigma;
}

/// w_ijl = sigma_l^2 / (sigma_l^2 + d_ijl^2); the diagonal is set to 1 and never read.
inline PairTensor compute_weights(const PairTensor& table, std::span<const double> sigma) {
  if (sigma.size() != table.depth()) throw ConfigError("compute_weights: sigma length mismatch");
  for (double s : sigma)
    if (!(s > 0.0)) throw ConfigError("compute_weights: sigma must be positive");
  const std::size_t n = table.n();
  PairTensor w(n, table.depth(), 1.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      for (std::size_t l = 0; l < table.depth(); ++l)
        w.set_symmetric(i, j, l, robust_weight(table.at(i, j, l), sigma[l]));
  return w;
}

inline double consistency_loss(const PairTensor& table, std::span<const double> sigma) {
  double total = 0.0;
  for (std::size_t i = 0; i < table.n(); ++i)
    for (std::size_t j = i + 1; j < table.n(); ++j)
      for (std::size_t l = 0; l < table.depth(); ++l) total += rho(table.at(i, j, l), sigma[l]);
  return total;
}

inline double consistency_loss(const ParamEnsemble& e, std::span<const double> sigma) {
  return consistency_loss(pair_distances(e), sigma);
}

/// max_{i<j,l} |current - previous|.
inline double weight_change(const PairTensor& current, const PairTensor& previous) {
  if (current.n() != previous.n() || current.depth() != previous.depth())
    throw ConfigError("weight_change: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < current.n(); ++i)
    for (std::size_t j = i + 1; j < current.n(); ++j)
      for (std::size_t l = 0; l < current.depth(); ++l)
        m = std::max(m, std::abs(current.at(i, j, l) - previous.at(i, j, l)));
  return m;
}

struct FusionState {
  Vector sigma;              // one per layer pair
  PairTensor weights;        // w^(k)
  PairTensor prev_weights;   // w^(k-1); all ones before the first reweighting
  std::size_t k = 0;
};

inline double delta(const FusionState& s) { return weight_change(s.weights, s.prev_weights); }

/// Rewrites sum_l w_l ||pair_l diff||^2 as sum_l c_l ||layer_l diff||^2 with
/// c_l = w_{l-1} + w_l (out-of-range terms are zero). w has L-1 entries, c has L.
inline Vector pair_weights_to_layer_coeffs(std::span<const double> w) {
  const std::size_t depth = w.size() + 1;
  Vector c(depth, 0.0);
  for (std::size_t l = 0; l < w.size(); ++l) {
    c[l] += w[l];
    c[l + 1] += w[l];
  }
  return c;
}

/// Applies pair_weights_to_layer_coeffs to every (i, j).
inline PairTensor layer_coefficients(const PairTensor& weights) {
  const std::size_t n = weights.n();
  PairTensor c(n, weights.depth() + 1);
  Vector w(weights.depth());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      for (std::size_t l = 0; l < w.size(); ++l) w[l] = weights.at(i, j, l);
      const auto cl = pair_weights_to_layer_coeffs(w);
      for (std::size_t l = 0; l < cl.size(); ++l) c.set_symmetric(i, j, l, cl[l]);
    }
  return c;
}

}  // namespace fusenet
