#pragma once

// Planted-cluster data. Every cluster owns a hidden teacher; each member
// dataset uses the teacher plus an i.i.d. gaussian perturbation of its
// parameters, so members of one cluster share (almost) the same law.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "fusenet/network.hpp"
#include "fusenet/numerics.hpp"

namespace fusenet {

enum class SyntheticKind { teacher_net, gaussian_blobs };

struct TeacherCluster {
  std::vector<std::size_t> members;
  std::uint64_t teacher_seed = 0;
  double perturbation_std = 0.0;
};

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::teacher_net;
  std::vector<TeacherCluster> clusters;
  std::size_t train_samples = 500;
  std::size_t test_samples = 100;
  double noise_std = 0.0;
  std::size_t input_dim = 8;
  // teacher_net: multiplies the teacher's 1/sqrt(in) weight std.
  // gaussian_blobs: distance of each blob centre from the origin.
  double teacher_scale = 1.0;

  std::size_t dataset_count() const {
    std::size_t n = 0;
    for (const auto& c : clusters) n += c.members.size();
    return n;
  }

  void validate() const {
    if (clusters.empty()) throw ConfigError("synthetic: no clusters");
    const std::size_t n = dataset_count();
    std::set<std::size_t> seen;
    for (const auto& c : clusters) {
      if (c.members.empty()) throw ConfigError("synthetic: empty cluster");
      if (!(c.perturbation_std >= 0.0)) throw ConfigError("synthetic: negative perturbation_std");
      for (auto m : c.members) {
        if (m >= n) throw ConfigError("synthetic: dataset id " + std::to_string(m) + " out of range");
        if (!seen.insert(m).second)
          throw ConfigError("synthetic: dataset id " + std::to_string(m) + " in more than one cluster");
      }
    }
    if (train_samples == 0) throw ConfigError("synthetic: train_samples must be > 0");
    if (!(noise_std >= 0.0)) throw ConfigError("synthetic: negative noise_std");
    if (input_dim == 0) throw ConfigError("synthetic: input_dim must be > 0");
  }
};

/// Index of the cluster that owns each dataset id.
inline std::vector<std::size_t> cluster_assignment(const SyntheticSpec& spec) {
  std::vector<std::size_t> a(spec.dataset_count(), 0);
  for (std::size_t c = 0; c < spec.clusters.size(); ++c)
    for (auto m : spec.clusters[c].members) a[m] = c;
  return a;
}

inline Params teacher_params(const NetworkSpec& net, std::uint64_t seed, double scale) {
  Rng rng(seed);
  Params p = zero_params(net);
  for (auto& layer : p) {
    const double std = scale / std::sqrt(static_cast<double>(layer.weights.cols()));
    layer.weights = gaussian_fill(rng, std::move(layer.weights), 0.0, std);
    for (double& b : layer.bias) b = rng.normal(0.0, 0.1 * scale);
  }
  return p;
}

namespace detail {

inline void split_train_test(Dataset& ds, std::size_t train) {
  ds.train.clear();
  ds.test.clear();
  for (std::size_t r = 0; r < ds.records(); ++r) (r < train ? ds.train : ds.test).push_back(r);
}

inline std::vector<Dataset> teacher_datasets(const SyntheticSpec& spec, const NetworkSpec& net, const Rng& rng) {
  if (net.input_dim() != spec.input_dim)
    throw ConfigError("synthetic: input_dim " + std::to_string(spec.input_dim) +
                      " != network input dim " + std::to_string(net.input_dim()));
  std::vector<Dataset> out(spec.dataset_count());
  const std::size_t total = spec.train_samples + spec.test_samples;
  for (const auto& cluster : spec.clusters) {
    const Params teacher = teacher_params(net, cluster.teacher_seed, spec.teacher_scale);
    for (auto id : cluster.members) {
      Rng r = rng.child(id);
      Params member = teacher;
      for (auto& layer : member) layer.for_each([&](double& v) { v += r.normal(0.0, cluster.perturbation_std); });
      Dataset ds;
      ds.id = id;
      ds.name = "d" + std::to_string(id);
      ds.features = Matrix(total, spec.input_dim);
      for (double& v : ds.features.data()) v = r.normal();
      if (net.loss == LossKind::cross_entropy) {
        std::vector<int> labels(total);
        for (std::size_t k = 0; k < total; ++k) {
          auto logits = predict(net, member, ds.features.row(k));
          for (double& z : logits) z += r.normal(0.0, spec.noise_std);
          labels[k] = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
        }
        ds.labels = std::move(labels);
      } else {
        Matrix t(total, net.output_dim());
        for (std::size_t k = 0; k < total; ++k) {
          const auto y = predict(net, member, ds.features.row(k));
          for (std::size_t c = 0; c < y.size(); ++c) t(k, c) = y[c] + r.normal(0.0, spec.noise_std);
        }
        ds.targets = std::move(t);
      }
      split_train_test(ds, spec.train_samples);
      out[id] = std::move(ds);
    }
  }
  return out;
}

// Two blobs per dataset at +-centre with labels +-1; the centre direction is
// the cluster's (seeded) direction plus the member perturbation.
inline std::vector<Dataset> blob_datasets(const SyntheticSpec& spec, const Rng& rng) {
  std::vector<Dataset> out(spec.dataset_count());
  const std::size_t total = spec.train_samples + spec.test_samples;
  for (const auto& cluster : spec.clusters) {
    Rng tr(cluster.teacher_seed);
    Vector dir(spec.input_dim);
    for (double& v : dir) v = tr.normal();
    const double norm = std::sqrt(squared_norm(dir));
    for (double& v : dir) v *= spec.teacher_scale / norm;
    for (auto id : cluster.members) {
      Rng r = rng.child(id);
      Vector centre = dir;
      for (double& v : centre) v += r.normal(0.0, cluster.perturbation_std);
      Dataset ds;
      ds.id = id;
      ds.name = "d" + std::to_string(id);
      ds.features = Matrix(total, spec.input_dim);
      std::vector<int> labels(total);
      for (std::size_t k = 0; k < total; ++k) {
        const int y = r.uniform() < 0.5 ? -1 : 1;
        labels[k] = y;
        for (std::size_t c = 0; c < spec.input_dim; ++c)
          ds.features(k, c) = y * centre[c] + r.normal(0.0, spec.noise_std);
      }
      ds.labels = std::move(labels);
      split_train_test(ds, spec.train_samples);
      out[id] = std::move(ds);
    }
  }
  return out;
}

}  // namespace detail

/// `net` supplies the teacher architecture for teacher_net; ignored for gaussian_blobs.
inline std::vector<Dataset> generate_synthetic(const SyntheticSpec& spec, const NetworkSpec& net, const Rng& rng) {
  spec.validate();
  return spec.kind == SyntheticKind::teacher_net ? detail::teacher_datasets(spec, net, rng)
                                                 : detail::blob_datasets(spec, rng);
}

}  // namespace fusenet
