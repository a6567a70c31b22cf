#pragma once

// A small fully-connected network with hand-written backprop.
//
// Layer l computes a_l = act_l(W_l a_{l-1} + b_l). Both task losses are means
// over the selected records:
//   cross_entropy:  -log softmax(a_L)[y]
//   reconstruction: ||target - a_L||^2   (target defaults to the record itself)

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fusenet/numerics.hpp"

namespace fusenet {

enum class Activation { relu, tanh, sigmoid, identity };
enum class LossKind { cross_entropy, reconstruction };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
    case Activation::identity: return "identity";
  }
  return "?";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "identity" || s == "linear") return Activation::identity;
  throw ConfigError("unknown activation '" + s + "'");
}

inline std::string to_string(LossKind k) {
  return k == LossKind::cross_entropy ? "cross_entropy" : "reconstruction";
}

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "cross_entropy") return LossKind::cross_entropy;
  if (s == "reconstruction") return LossKind::reconstruction;
  throw ConfigError("unknown loss kind '" + s + "'");
}

inline double activate(Activation a, double z) {
  switch (a) {
    case Activation::relu: return z > 0.0 ? z : 0.0;
    case Activation::tanh: return std::tanh(z);
    case Activation::sigmoid:
      return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    case Activation::identity: return z;
  }
  return z;
}

// Derivative expressed through the pre-activation z and the output y = act(z).
inline double activate_derivative(Activation a, double z, double y) {
  switch (a) {
    case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: return 1.0 - y * y;
    case Activation::sigmoid: return y * (1.0 - y);
    case Activation::identity: return 1.0;
  }
  return 1.0;
}

struct LayerShape {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t param_count() const { return out * in + out; }
  bool operator==(const LayerShape&) const = default;
};

struct NetworkSpec {
  std::vector<LayerShape> layers;
  std::vector<Activation> activations;
  LossKind loss = LossKind::reconstruction;

  /// widths = {d0, d1, ..., dL}; layer l maps d_{l-1} -> d_l.
  static NetworkSpec from_widths(const std::vector<std::size_t>& widths,
                                 std::vector<Activation> activations, LossKind loss) {
    NetworkSpec s;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l)
      s.layers.push_back({widths[l], widths[l + 1]});
    s.activations = std::move(activations);
    s.loss = loss;
    s.validate();
    return s;
  }

  std::size_t depth() const { return layers.size(); }
  std::size_t input_dim() const { return layers.front().in; }
  std::size_t output_dim() const { return layers.back().out; }

  void validate() const {
    if (layers.size() < 2)
      throw ConfigError("network needs at least 2 layers (one adjacent pair), got " +
                        std::to_string(layers.size()));
    if (activations.size() != layers.size())
      throw ConfigError("network: " + std::to_string(activations.size()) + " activations for " +
                        std::to_string(layers.size()) + " layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (layers[l].in == 0 || layers[l].out == 0)
        throw ConfigError("network: layer " + std::to_string(l) + " has a zero dimension");
      if (l + 1 < layers.size() && layers[l].out != layers[l + 1].in)
        throw ConfigError("network: layer " + std::to_string(l) + " out_dim " +
                          std::to_string(layers[l].out) + " != layer " + std::to_string(l + 1) +
                          " in_dim " + std::to_string(layers[l + 1].in));
    }
  }
};

struct LayerParams {
  Matrix weights;  // out x in
  Vector bias;     // out

  LayerParams() = default;
  explicit LayerParams(LayerShape shape) : weights(shape.out, shape.in), bias(shape.out, 0.0) {}

  LayerShape shape() const { return {weights.cols(), weights.rows()}; }
  std::size_t param_count() const { return weights.size() + bias.size(); }

  /// Weights (row-major) followed by bias.
  Vector flatten() const {
    Vector flat(weights.values());
    flat.insert(flat.end(), bias.begin(), bias.end());
    return flat;
  }

  static LayerParams unflatten(LayerShape shape, std::span<const double> flat) {
    if (flat.size() != shape.param_count())
      throw ConfigError("LayerParams::unflatten: expected " + std::to_string(shape.param_count()) +
                        " values, got " + std::to_string(flat.size()));
    LayerParams p(shape);
    const std::size_t nw = shape.out * shape.in;
    std::copy(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(nw), p.weights.data().begin());
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(nw), flat.end(), p.bias.begin());
    return p;
  }

  // Visit weights then bias in flat order.
  template <typename F>
  void for_each(F&& f) {
    for (double& x : weights.data()) f(x);
    for (double& x : bias) f(x);
  }
  template <typename F>
  void for_each(F&& f) const {
    for (double x : weights.data()) f(x);
    for (double x : bias) f(x);
  }

  bool operator==(const LayerParams&) const = default;
};

/// One network's parameters theta_i, one entry per layer.
using Params = std::vector<LayerParams>;

inline Params zero_params(const NetworkSpec& spec) {
  Params p;
  for (const auto& s : spec.layers) p.emplace_back(s);
  return p;
}

/// Gaussian weights with std 1/sqrt(in_dim), zero bias.
inline Params init_params(const NetworkSpec& spec, Rng& rng) {
  Params p = zero_params(spec);
  for (auto& layer : p)
    layer.weights = gaussian_fill(rng, std::move(layer.weights), 0.0,
                                  1.0 / std::sqrt(static_cast<double>(layer.weights.cols())));
  return p;
}

inline Vector flatten(const Params& p) {
  Vector out;
  for (const auto& layer : p) {
    auto f = layer.flatten();
    out.insert(out.end(), f.begin(), f.end());
  }
  return out;
}

inline Params unflatten(const NetworkSpec& spec, std::span<const double> flat) {
  Params p;
  std::size_t off = 0;
  for (const auto& s : spec.layers) {
    if (off + s.param_count() > flat.size()) throw ConfigError("unflatten: vector too short");
    p.push_back(LayerParams::unflatten(s, flat.subspan(off, s.param_count())));
    off += s.param_count();
  }
  if (off != flat.size()) throw ConfigError("unflatten: vector too long");
  return p;
}

/// theta_i for every dataset; all share one spec.
struct ParamEnsemble {
  NetworkSpec spec;
  std::vector<Params> nets;

  std::size_t size() const { return nets.size(); }
};

struct Dataset {
  std::size_t id = 0;
  std::string name;
  Matrix features;                        // n_i x d
  std::optional<std::vector<int>> labels;  // classification only
  std::optional<Matrix> targets;          // regression targets; default: features
  std::optional<Matrix> mask;             // 0 entries are zeroed in the input only
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;

  std::size_t records() const { return features.rows(); }

  Vector input(std::size_t r) const {
    Vector x(features.row(r).begin(), features.row(r).end());
    if (mask)
      for (std::size_t k = 0; k < x.size(); ++k)
        if ((*mask)(r, k) == 0.0) x[k] = 0.0;
    return x;
  }

  std::span<const double> target(std::size_t r) const {
    return targets ? targets->row(r) : features.row(r);
  }
};

inline std::vector<std::size_t> all_records(const Dataset& ds) {
  std::vector<std::size_t> idx(ds.records());
  for (std::size_t r = 0; r < idx.size(); ++r) idx[r] = r;
  return idx;
}

inline void check_dataset(const NetworkSpec& spec, const Dataset& ds) {
  if (ds.features.cols() != spec.input_dim())
    throw ConfigError("dataset '" + ds.name + "': feature dim " +
                      std::to_string(ds.features.cols()) + " != network input dim " +
                      std::to_string(spec.input_dim()));
  if (spec.loss == LossKind::cross_entropy) {
    if (!ds.labels) throw ConfigError("dataset '" + ds.name + "': classification needs labels");
    if (ds.labels->size() != ds.records())
      throw ConfigError("dataset '" + ds.name + "': label count mismatch");
    const int k = static_cast<int>(spec.output_dim());
    for (std::size_t r = 0; r < ds.labels->size(); ++r)
      if ((*ds.labels)[r] < 0 || (*ds.labels)[r] >= k)
        throw ConfigError("dataset '" + ds.name + "': label " + std::to_string((*ds.labels)[r]) +
                          " at record " + std::to_string(r) + " outside [0," + std::to_string(k) +
                          ")");
  } else {
    if (ds.labels) throw ConfigError("dataset '" + ds.name + "': reconstruction loss takes no labels");
    const std::size_t tdim = ds.targets ? ds.targets->cols() : ds.features.cols();
    if (tdim != spec.output_dim())
      throw ConfigError("dataset '" + ds.name + "': target dim " + std::to_string(tdim) +
                        " != network output dim " + std::to_string(spec.output_dim()));
    if (ds.targets && ds.targets->rows() != ds.records())
      throw ConfigError("dataset '" + ds.name + "': target count mismatch");
  }
  if (ds.mask && (ds.mask->rows() != ds.records() || ds.mask->cols() != ds.features.cols()))
    throw ConfigError("dataset '" + ds.name + "': mask shape mismatch");
}

struct ForwardCache {
  std::vector<Vector> pre;   // z_l, one per layer
  std::vector<Vector> post;  // post[0] = input, post[l+1] = act(z_l)
  const Vector& output() const { return post.back(); }
};

inline ForwardCache forward(const NetworkSpec& spec, const Params& theta, std::span<const double> x) {
  if (x.size() != spec.input_dim())
    throw ConfigError("forward: input length " + std::to_string(x.size()) + " != " +
                      std::to_string(spec.input_dim()));
  ForwardCache c;
  c.post.emplace_back(x.begin(), x.end());
  for (std::size_t l = 0; l < spec.depth(); ++l) {
    const auto& layer = theta[l];
    const Vector& a = c.post.back();
    Vector z(layer.bias);
    for (std::size_t r = 0; r < z.size(); ++r) z[r] += dot(layer.weights.row(r), a);
    Vector y(z.size());
    for (std::size_t r = 0; r < z.size(); ++r) y[r] = activate(spec.activations[l], z[r]);
    c.pre.push_back(std::move(z));
    c.post.push_back(std::move(y));
  }
  return c;
}

inline Vector predict(const NetworkSpec& spec, const Params& theta, std::span<const double> x) {
  return forward(spec, theta, x).output();
}

/// Numerically stable log-softmax.
inline Vector log_softmax(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  const double lse = m + std::log(s);
  Vector out(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) out[k] = z[k] - lse;
  return out;
}

inline Vector softmax(std::span<const double> z) {
  Vector p = log_softmax(z);
  for (double& v : p) v = std::exp(v);
  return p;
}

namespace detail {
inline void require_nonempty(std::span<const std::size_t> subset, const char* what) {
  if (subset.empty()) throw ConfigError(std::string(what) + ": empty record subset");
}
}  // namespace detail

inline double loss_classification(const NetworkSpec& spec, const Params& theta, const Dataset& ds,
                                  std::span<const std::size_t> subset) {
  if (spec.loss != LossKind::cross_entropy)
    throw ConfigError("loss_classification on a reconstruction network");
  if (!ds.labels) throw ConfigError("loss_classification: dataset has no labels");
  detail::require_nonempty(subset, "loss_classification");
  const int k = static_cast<int>(spec.output_dim());
  double total = 0.0;
  for (std::size_t r : subset) {
    const int y = (*ds.labels)[r];
    if (y < 0 || y >= k)
      throw ConfigError("label " + std::to_string(y) + " out of range at record " + std::to_string(r));
    const auto c = forward(spec, theta, ds.input(r));
    total -= log_softmax(c.output())[static_cast<std::size_t>(y)];
  }
  return total / static_cast<double>(subset.size());
}

inline double loss_reconstruction(const NetworkSpec& spec, const Params& theta, const Dataset& ds,
                                  std::span<const std::size_t> subset) {
  if (spec.loss != LossKind::reconstruction)
    throw ConfigError("loss_reconstruction on a classification network");
  detail::require_nonempty(subset, "loss_reconstruction");
  double total = 0.0;
  for (std::size_t r : subset) {
    const auto c = forward(spec, theta, ds.input(r));
    total += squared_distance(ds.target(r), c.output());
  }
  return total / static_cast<double>(subset.size());
}

inline double task_loss(const NetworkSpec& spec, const Params& theta, const Dataset& ds,
                        std::span<const std::size_t> subset) {
  return spec.loss == LossKind::cross_entropy ? loss_classification(spec, theta, ds, subset)
                                              : loss_reconstruction(spec, theta, ds, subset);
}

/// Fraction of records whose argmax prediction equals the label.
inline double accuracy(const NetworkSpec& spec, const Params& theta, const Dataset& ds,
                       std::span<const std::size_t> subset) {
  if (!ds.labels || subset.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t r : subset) {
    const auto out = predict(spec, theta, ds.input(r));
    const auto best = static_cast<int>(std::max_element(out.begin(), out.end()) - out.begin());
    hits += best == (*ds.labels)[r];
  }
  return static_cast<double>(hits) / static_cast<double>(subset.size());
}

/// Exact gradient of task_loss over `batch`, shaped like theta.
inline Params grad_task_loss(const NetworkSpec& spec, const Params& theta, const Dataset& ds,
                             std::span<const std::size_t> batch) {
  detail::require_nonempty(batch, "grad_task_loss");
  Params grad = zero_params(spec);
  const double scale = 1.0 / static_cast<double>(batch.size());
  const std::size_t depth = spec.depth();
  for (std::size_t r : batch) {
    const auto c = forward(spec, theta, ds.input(r));
    // d loss / d a_L
    Vector delta;
    if (spec.loss == LossKind::cross_entropy) {
      delta = softmax(c.output());
      delta[static_cast<std::size_t>((*ds.labels)[r])] -= 1.0;
    } else {
      const auto t = ds.target(r);
      delta.resize(t.size());
      for (std::size_t k = 0; k < t.size(); ++k) delta[k] = 2.0 * (c.output()[k] - t[k]);
    }
    for (std::size_t li = depth; li-- > 0;) {
      const Vector& z = c.pre[li];
      const Vector& y = c.post[li + 1];
      const Vector& a = c.post[li];
      for (std::size_t o = 0; o < delta.size(); ++o)
        delta[o] *= activate_derivative(spec.activations[li], z[o], y[o]);
      auto& g = grad[li];
      for (std::size_t o = 0; o < delta.size(); ++o) {
        const double d = delta[o] * scale;
        g.bias[o] += d;
        auto row = g.weights.row(o);
        for (std::size_t i = 0; i < a.size(); ++i) row[i] += d * a[i];
      }
      if (li == 0) break;
      Vector prev(a.size(), 0.0);
      const auto& w = theta[li].weights;
      for (std::size_t o = 0; o < delta.size(); ++o) {
        const auto row = w.row(o);
        for (std::size_t i = 0; i < prev.size(); ++i) prev[i] += row[i] * delta[o];
      }
      delta = std::move(prev);
    }
  }
  return grad;
}

/// Quadratic pull sum_l strength_l * ||theta^l - anchor_l||^2 added to the task loss.
/// strength_l == 0 disables the term for that layer.
struct LayerPull {
  std::vector<double> strength;
  std::vector<Vector> anchor;  // flat, one per layer

  bool active(std::size_t l) const { return l < strength.size() && strength[l] != 0.0; }

  double value(const Params& theta) const {
    double v = 0.0;
    for (std::size_t l = 0; l < theta.size(); ++l)
      if (active(l)) v += strength[l] * squared_distance(theta[l].flatten(), anchor[l]);
    return v;
  }
};

/// One shuffled pass over ds.train with plain minibatch SGD; returns the number of steps.
/// Each step subtracts lr * (task_weight * task gradient + 2 strength_l (theta^l - anchor_l)).
inline std::size_t sgd_epoch(const NetworkSpec& spec, Params& theta, const Dataset& ds, double lr,
                             std::size_t batch_size, Rng& rng, const LayerPull* pull = nullptr,
                             double task_weight = 1.0) {
  if (!(lr >= 0.0)) throw ConfigError("sgd_epoch: learning rate must be non-negative");
  if (batch_size == 0) throw ConfigError("sgd_epoch: batch size must be positive");
  std::vector<std::size_t> order = ds.train;
  rng.shuffle(order);
  std::size_t steps = 0;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    const std::span<const std::size_t> batch(order.data() + start, end - start);
    Params g = task_weight == 0.0 ? zero_params(spec) : grad_task_loss(spec, theta, ds, batch);
    if (task_weight != 1.0 && task_weight != 0.0)
      for (auto& layer : g) layer.for_each([&](double& v) { v *= task_weight; });
    for (std::size_t l = 0; l < theta.size(); ++l) {
      auto& layer = theta[l];
      const auto& gl = g[l];
      auto wdata = layer.weights.data();
      const auto gw = gl.weights.data();
      if (pull && pull->active(l)) {
        const double s2 = 2.0 * pull->strength[l];
        const auto& anc = pull->anchor[l];
        const std::size_t nw = wdata.size();
        for (std::size_t k = 0; k < nw; ++k) wdata[k] -= lr * (gw[k] + s2 * (wdata[k] - anc[k]));
        for (std::size_t k = 0; k < layer.bias.size(); ++k)
          layer.bias[k] -= lr * (gl.bias[k] + s2 * (layer.bias[k] - anc[nw + k]));
      } else {
        for (std::size_t k = 0; k < wdata.size(); ++k) wdata[k] -= lr * gw[k];
        for (std::size_t k = 0; k < layer.bias.size(); ++k) layer.bias[k] -= lr * gl.bias[k];
      }
      if (!all_finite(wdata) || !all_finite(layer.bias)) {
        const double norm = std::sqrt(squared_norm(wdata) + squared_norm(layer.bias));
        throw DivergenceError("sgd_epoch: non-finite parameters at step " + std::to_string(steps) +
                              ", layer " + std::to_string(l) + " (norm " + std::to_string(norm) +
                              "); lower the learning rate");
      }
    }
    ++steps;
  }
  return steps;
}

}  // namespace fusenet
