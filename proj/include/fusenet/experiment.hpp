#pragma once

// Config-driven experiments: a JSON config names the task, the data sources,
// the network and the trainer settings; run_experiment writes
//   metrics.csv    one row per IRLS iteration / epoch / logged convex iteration
//   weights.json   fusion snapshot (network tasks) or linear models (convex tasks)
//   ensemble.json  trained network parameters (network tasks)
//   sharing_l<l>.dot  per layer pair, joint_robust only
//   summary.json   written last; its presence means the run completed

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fusenet/convex_mtl.hpp"
#include "fusenet/data_io.hpp"
#include "fusenet/fusion.hpp"
#include "fusenet/joint_trainer.hpp"
#include "fusenet/network.hpp"
#include "fusenet/numerics.hpp"
#include "fusenet/sharing_graph.hpp"
#include "fusenet/synthetic.hpp"

namespace fusenet {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

enum class Task { classification, autoencoder, svm_joint, logreg_joint };

inline std::string to_string(Task t) {
  switch (t) {
    case Task::classification: return "classification";
    case Task::autoencoder: return "autoencoder";
    case Task::svm_joint: return "svm_joint";
    case Task::logreg_joint: return "logreg_joint";
  }
  return "?";
}

inline Task parse_task(const std::string& s) {
  if (s == "classification") return Task::classification;
  if (s == "autoencoder" || s == "regression") return Task::autoencoder;
  if (s == "svm_joint") return Task::svm_joint;
  if (s == "logreg_joint") return Task::logreg_joint;
  throw ConfigError("unknown task '" + s + "'");
}

inline bool is_network_task(Task t) { return t == Task::classification || t == Task::autoencoder; }

struct DatasetSource {
  enum class Kind { csv, idx, synthetic } kind = Kind::csv;
  std::string name;
  fs::path path;                            // csv, or idx images
  std::optional<fs::path> labels_path;      // idx
  std::optional<std::size_t> label_column;  // csv
  double test_fraction = 0.2;               // files only
  bool shuffle = true;
  std::size_t mask_square = 0;              // zero a random square of this side per record
  std::vector<std::size_t> image_shape;     // (height, width) for masks on csv data
  SyntheticSpec synthetic;
};

struct ExperimentConfig {
  Task task = Task::autoencoder;
  std::uint64_t seed = 0;
  fs::path output_dir = "out";
  NetworkSpec network;
  TrainConfig train;
  ConvexConfig convex;
  std::vector<DatasetSource> sources;
  std::size_t graph_k = 3;
  InfluenceMetric graph_metric = InfluenceMetric::weight;
  // Wall time makes metrics.csv differ between runs, so it is opt-in.
  bool record_wall_time = false;
};

namespace detail {

inline std::string key_path(const std::string& where, const std::string& key) {
  return where.empty() ? key : where + "." + key;
}

inline void allow_keys(const json& obj, const std::string& where, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) throw ConfigError((where.empty() ? "config" : where) + " must be an object");
  for (const auto& [k, v] : obj.items()) {
    bool ok = false;
    for (const char* a : keys) ok = ok || k == a;
    if (!ok) throw ConfigError("unknown key '" + key_path(where, k) + "'");
  }
}

template <class T>
T get_or(const json& obj, const std::string& where, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("'" + key_path(where, key) + "' has the wrong type");
  }
}

template <class T>
T get_required(const json& obj, const std::string& where, const char* key) {
  if (!obj.contains(key)) throw ConfigError("missing '" + key_path(where, key) + "'");
  return get_or<T>(obj, where, key, T{});
}

inline std::size_t get_count(const json& obj, const std::string& where, const char* key, std::size_t fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0)
    throw ConfigError("'" + key_path(where, key) + "' must be a non-negative integer");
  return v.get<std::size_t>();
}

inline fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

inline SyntheticSpec parse_synthetic(const json& j, const std::string& where) {
  allow_keys(j, where, {"source", "name", "kind", "clusters", "train_samples", "test_samples", "noise_std",
                        "input_dim", "teacher_scale"});
  SyntheticSpec s;
  const auto kind = get_or<std::string>(j, where, "kind", "teacher_net");
  if (kind == "teacher_net")
    s.kind = SyntheticKind::teacher_net;
  else if (kind == "gaussian_blobs")
    s.kind = SyntheticKind::gaussian_blobs;
  else
    throw ConfigError("'" + key_path(where, "kind") + "': unknown synthetic kind '" + kind + "'");
  if (!j.contains("clusters") || !j.at("clusters").is_array())
    throw ConfigError("'" + key_path(where, "clusters") + "' must be an array");
  std::size_t idx = 0;
  for (const auto& c : j.at("clusters")) {
    const std::string cw = key_path(where, "clusters[" + std::to_string(idx++) + "]");
    allow_keys(c, cw, {"members", "teacher_seed", "perturbation_std"});
    TeacherCluster tc;
    tc.members = get_required<std::vector<std::size_t>>(c, cw, "members");
    tc.teacher_seed = get_or<std::uint64_t>(c, cw, "teacher_seed", 0);
    tc.perturbation_std = get_or<double>(c, cw, "perturbation_std", 0.0);
    s.clusters.push_back(tc);
  }
  s.train_samples = get_count(j, where, "train_samples", s.train_samples);
  s.test_samples = get_count(j, where, "test_samples", s.test_samples);
  s.noise_std = get_or<double>(j, where, "noise_std", s.noise_std);
  s.input_dim = get_count(j, where, "input_dim", s.input_dim);
  s.teacher_scale = get_or<double>(j, where, "teacher_scale", s.teacher_scale);
  s.validate();
  return s;
}

inline DatasetSource parse_source(const json& j, const std::string& where, const fs::path& base) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  DatasetSource src;
  const auto kind = get_required<std::string>(j, where, "source");
  src.name = get_or<std::string>(j, where, "name", "");
  if (kind == "synthetic") {
    src.kind = DatasetSource::Kind::synthetic;
    src.synthetic = parse_synthetic(j, where);
    return src;
  }
  if (kind == "csv") {
    allow_keys(j, where, {"source", "name", "path", "label_column", "test_fraction", "shuffle", "mask_square",
                          "image_shape"});
    src.kind = DatasetSource::Kind::csv;
    src.path = resolve(base, get_required<std::string>(j, where, "path"));
    if (j.contains("label_column")) src.label_column = get_count(j, where, "label_column", 0);
  } else if (kind == "idx") {
    allow_keys(j, where, {"source", "name", "images", "labels", "test_fraction", "shuffle", "mask_square"});
    src.kind = DatasetSource::Kind::idx;
    src.path = resolve(base, get_required<std::string>(j, where, "images"));
    if (j.contains("labels")) src.labels_path = resolve(base, get_required<std::string>(j, where, "labels"));
  } else {
    throw ConfigError("'" + key_path(where, "source") + "': unknown source '" + kind + "' (csv, idx, synthetic)");
  }
  src.test_fraction = get_or<double>(j, where, "test_fraction", src.test_fraction);
  if (!(src.test_fraction >= 0.0 && src.test_fraction < 1.0))
    throw ConfigError("'" + key_path(where, "test_fraction") + "' must be in [0, 1)");
  src.shuffle = get_or<bool>(j, where, "shuffle", src.shuffle);
  src.mask_square = get_count(j, where, "mask_square", 0);
  src.image_shape = get_or<std::vector<std::size_t>>(j, where, "image_shape", {});
  if (src.mask_square && src.kind == DatasetSource::Kind::csv && src.image_shape.size() != 2)
    throw ConfigError("'" + key_path(where, "image_shape") + "' must be [height, width] when mask_square is set");
  if (src.name.empty()) src.name = src.path.stem().string();
  return src;
}

inline NetworkSpec parse_network(const json& j, Task task) {
  allow_keys(j, "network", {"widths", "activations"});
  const auto widths = get_required<std::vector<std::size_t>>(j, "network", "widths");
  const auto names = get_required<std::vector<std::string>>(j, "network", "activations");
  std::vector<Activation> acts;
  for (const auto& a : names) acts.push_back(parse_activation(a));
  return NetworkSpec::from_widths(widths, acts,
                                  task == Task::classification ? LossKind::cross_entropy : LossKind::reconstruction);
}

inline TrainConfig parse_train(const json& j) {
  const std::string w = "train";
  allow_keys(j, w, {"mode", "lambda", "ordered_pairs", "lr", "batch_size", "inner_epochs_per_sweep",
                    "sweeps_per_irls_iter", "max_irls_iters", "delta_tol", "init_max_sweeps", "init_rel_tol",
                    "baseline_epochs", "finetune_epochs", "divergence_factor", "order", "network_seeds"});
  TrainConfig c;
  c.mode = parse_train_mode(get_or<std::string>(j, w, "mode", to_string(c.mode)));
  c.lambda = get_or(j, w, "lambda", c.lambda);
  c.ordered_pairs = get_or(j, w, "ordered_pairs", c.ordered_pairs);
  c.lr = get_or(j, w, "lr", c.lr);
  c.batch_size = get_count(j, w, "batch_size", c.batch_size);
  c.inner_epochs_per_sweep = get_count(j, w, "inner_epochs_per_sweep", c.inner_epochs_per_sweep);
  c.sweeps_per_irls_iter = get_count(j, w, "sweeps_per_irls_iter", c.sweeps_per_irls_iter);
  c.max_irls_iters = get_count(j, w, "max_irls_iters", c.max_irls_iters);
  c.delta_tol = get_or(j, w, "delta_tol", c.delta_tol);
  c.init_max_sweeps = get_count(j, w, "init_max_sweeps", c.init_max_sweeps);
  c.init_rel_tol = get_or(j, w, "init_rel_tol", c.init_rel_tol);
  c.baseline_epochs = get_count(j, w, "baseline_epochs", c.baseline_epochs);
  c.finetune_epochs = get_or<long>(j, w, "finetune_epochs", c.finetune_epochs);
  c.divergence_factor = get_or(j, w, "divergence_factor", c.divergence_factor);
  const auto order = get_or<std::string>(j, w, "order", "gauss_seidel");
  if (order == "gauss_seidel")
    c.order = SweepOrder::gauss_seidel;
  else if (order == "jacobi")
    c.order = SweepOrder::jacobi;
  else
    throw ConfigError("'train.order' must be gauss_seidel or jacobi");
  c.network_seeds = get_or<std::vector<std::uint64_t>>(j, w, "network_seeds", {});
  return c;
}

inline ConvexConfig parse_convex(const json& j) {
  const std::string w = "convex";
  allow_keys(j, w, {"lambda", "mu", "gamma", "augmented", "lr", "max_iters", "tol", "inner_iters", "solver",
                    "divergence_factor", "log_every"});
  ConvexConfig c;
  c.lambda = get_or(j, w, "lambda", c.lambda);
  c.mu = get_or(j, w, "mu", c.mu);
  c.gamma = get_or(j, w, "gamma", c.gamma);
  c.augmented = get_or(j, w, "augmented", c.augmented);
  c.lr = get_or(j, w, "lr", c.lr);
  c.max_iters = get_count(j, w, "max_iters", c.max_iters);
  c.tol = get_or(j, w, "tol", c.tol);
  c.inner_iters = get_count(j, w, "inner_iters", c.inner_iters);
  const auto solver = get_or<std::string>(j, w, "solver", "joint_prox");
  if (solver == "joint_prox")
    c.solver = ConvexSolver::joint_prox;
  else if (solver == "block_cycle")
    c.solver = ConvexSolver::block_cycle;
  else
    throw ConfigError("'convex.solver' must be joint_prox or block_cycle");
  c.divergence_factor = get_or(j, w, "divergence_factor", c.divergence_factor);
  c.log_every = std::max<std::size_t>(1, get_count(j, w, "log_every", c.log_every));
  return c;
}

}  // namespace detail

/// Parses a config document; relative data paths resolve against base_dir.
inline ExperimentConfig parse_config(const json& j, const fs::path& base_dir = ".") {
  detail::allow_keys(j, "", {"task", "seed", "output_dir", "network", "datasets", "train", "convex", "graph",
                             "record_wall_time"});
  ExperimentConfig c;
  c.task = parse_task(detail::get_required<std::string>(j, "", "task"));
  c.seed = detail::get_or<std::uint64_t>(j, "", "seed", 0);
  c.output_dir = detail::get_or<std::string>(j, "", "output_dir", "out");
  c.record_wall_time = detail::get_or(j, "", "record_wall_time", false);
  if (!j.contains("datasets") || !j.at("datasets").is_array() || j.at("datasets").empty())
    throw ConfigError("'datasets' must be a non-empty array");
  for (std::size_t k = 0; k < j.at("datasets").size(); ++k)
    c.sources.push_back(detail::parse_source(j.at("datasets")[k], "datasets[" + std::to_string(k) + "]", base_dir));
  if (is_network_task(c.task)) {
    if (!j.contains("network")) throw ConfigError("missing 'network'");
    c.network = detail::parse_network(j.at("network"), c.task);
    c.train = detail::parse_train(j.contains("train") ? j.at("train") : json::object());
    c.train.validate();
  } else if (j.contains("network") || j.contains("train")) {
    throw ConfigError("'network' and 'train' apply only to classification/autoencoder tasks");
  }
  if (j.contains("convex")) {
    if (is_network_task(c.task)) throw ConfigError("'convex' applies only to svm_joint/logreg_joint tasks");
    c.convex = detail::parse_convex(j.at("convex"));
  }
  c.convex.validate();
  if (j.contains("graph")) {
    const auto& g = j.at("graph");
    detail::allow_keys(g, "graph", {"k", "metric"});
    c.graph_k = detail::get_count(g, "graph", "k", c.graph_k);
    if (c.graph_k == 0) throw ConfigError("'graph.k' must be > 0");
    const auto metric = detail::get_or<std::string>(g, "graph", "metric", "weight");
    if (metric == "weight")
      c.graph_metric = InfluenceMetric::weight;
    else if (metric == "inverse_distance")
      c.graph_metric = InfluenceMetric::inverse_distance;
    else
      throw ConfigError("'graph.metric' must be weight or inverse_distance");
  }
  return c;
}

inline json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

/// Reads a config file; FUSENET_SEED, when set, replaces the seed.
inline ExperimentConfig load_config(const fs::path& path) {
  auto cfg = parse_config(read_json_file(path), path.parent_path().empty() ? fs::path(".") : path.parent_path());
  if (const char* env = std::getenv("FUSENET_SEED"); env && *env) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (*end != '\0' || env[0] == '-') throw ConfigError("FUSENET_SEED must be a non-negative integer");
    cfg.seed = v;
  }
  cfg.train.seed = cfg.seed;
  return cfg;
}

namespace detail {

inline void split_records(Dataset& ds, double test_fraction, bool shuffle, Rng& rng) {
  std::vector<std::size_t> order = all_records(ds);
  if (shuffle) rng.shuffle(order);
  const auto test = static_cast<std::size_t>(test_fraction * static_cast<double>(order.size()));
  ds.train.assign(order.begin(), order.end() - static_cast<std::ptrdiff_t>(test));
  ds.test.assign(order.end() - static_cast<std::ptrdiff_t>(test), order.end());
  std::sort(ds.train.begin(), ds.train.end());
  std::sort(ds.test.begin(), ds.test.end());
  if (ds.train.empty()) throw ConfigError("dataset '" + ds.name + "': empty training split");
}

inline void apply_square_mask(Dataset& ds, std::size_t height, std::size_t width, std::size_t side, Rng& rng) {
  if (height * width != ds.features.cols())
    throw ConfigError("dataset '" + ds.name + "': image shape does not match record width");
  if (side > height || side > width) throw ConfigError("dataset '" + ds.name + "': mask_square larger than image");
  Matrix mask(ds.records(), ds.features.cols());
  for (double& v : mask.data()) v = 1.0;
  for (std::size_t r = 0; r < ds.records(); ++r) {
    const std::size_t top = rng.uniform_index(height - side + 1), left = rng.uniform_index(width - side + 1);
    for (std::size_t y = top; y < top + side; ++y)
      for (std::size_t x = left; x < left + side; ++x) mask(r, y * width + x) = 0.0;
  }
  ds.mask = std::move(mask);
}

}  // namespace detail

/// Loads or generates every dataset, in config order, and assigns ids.
inline std::vector<Dataset> load_datasets(const ExperimentConfig& cfg) {
  const Rng root(child_seed(cfg.seed, 0xda7a));
  std::vector<Dataset> out;
  for (std::size_t s = 0; s < cfg.sources.size(); ++s) {
    const auto& src = cfg.sources[s];
    Rng rng = root.child(s);
    if (src.kind == DatasetSource::Kind::synthetic) {
      if (src.synthetic.kind == SyntheticKind::teacher_net && !is_network_task(cfg.task))
        throw ConfigError("synthetic teacher_net data needs a network task; use gaussian_blobs");
      auto part = generate_synthetic(src.synthetic, cfg.network, rng);
      for (auto& ds : part) {
        if (!src.name.empty()) ds.name = src.name + "_" + ds.name;
        out.push_back(std::move(ds));
      }
      continue;
    }
    std::vector<std::size_t> shape = src.image_shape;
    Dataset ds;
    if (src.kind == DatasetSource::Kind::csv) {
      ds = load_csv(src.path.string(), src.label_column);
    } else {
      ds = load_idx(src.path.string(),
                    src.labels_path ? std::optional<std::string>(src.labels_path->string()) : std::nullopt);
      if (shape.empty()) {
        // Row-major images: take the two innermost dimensions from the record width.
        const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(ds.features.cols()))));
        shape = {side, side};
      }
    }
    ds.name = src.name;
    if (src.mask_square) {
      if (!is_network_task(cfg.task) || cfg.network.loss != LossKind::reconstruction)
        throw ConfigError("dataset '" + ds.name + "': mask_square needs the autoencoder task");
      detail::apply_square_mask(ds, shape[0], shape[1], src.mask_square, rng);
    }
    detail::split_records(ds, src.test_fraction, src.shuffle, rng);
    out.push_back(std::move(ds));
  }
  std::set<std::string> names;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].id = i;
    if (!names.insert(out[i].name).second) throw ConfigError("duplicate dataset name '" + out[i].name + "'");
  }
  return out;
}

/// Every check a run performs before it writes anything.
inline std::vector<Dataset> prepare(const ExperimentConfig& cfg) {
  auto data = load_datasets(cfg);
  if (is_network_task(cfg.task)) {
    check_datasets(cfg.network, data);
    cfg.train.validate();
    make_streams(cfg.train, data.size());
  } else {
    cfg.convex.validate();
    check_convex_inputs(detail::zero_models(data), data);
  }
  return data;
}

// ---- outputs ---------------------------------------------------------------

inline json pair_tensor_json(const PairTensor& t) {
  json out = json::array();
  for (std::size_t l = 0; l < t.depth(); ++l) {
    json m = json::array();
    for (std::size_t i = 0; i < t.n(); ++i) {
      json row = json::array();
      for (std::size_t j = 0; j < t.n(); ++j) row.push_back(t.at(i, j, l));
      m.push_back(row);
    }
    out.push_back(m);
  }
  return out;
}

inline PairTensor pair_tensor_from_json(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw ConfigError("snapshot: '" + what + "' must be a non-empty array");
  const std::size_t depth = j.size(), n = j[0].size();
  PairTensor t(n, depth);
  for (std::size_t l = 0; l < depth; ++l) {
    if (!j[l].is_array() || j[l].size() != n) throw ConfigError("snapshot: '" + what + "' is not n x n");
    for (std::size_t i = 0; i < n; ++i) {
      if (!j[l][i].is_array() || j[l][i].size() != n) throw ConfigError("snapshot: '" + what + "' is not n x n");
      for (std::size_t k = 0; k < n; ++k) {
        if (!j[l][i][k].is_number()) throw ConfigError("snapshot: non-numeric entry in '" + what + "'");
        t.at(i, k, l) = j[l][i][k].get<double>();
      }
    }
  }
  return t;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

/// Writes sharing_l<l>.dot for every layer pair into dir; returns the file names.
inline std::vector<std::string> write_sharing_graphs(const fs::path& dir, const PairTensor& weights,
                                                     const PairTensor& distances,
                                                     const std::vector<std::string>& names, std::size_t k,
                                                     InfluenceMetric metric) {
  std::vector<std::string> files;
  for (const auto& g : build_graphs(weights, distances, k, metric)) {
    const std::string file = "sharing_l" + std::to_string(g.layer_pair) + ".dot";
    write_text(dir / file, export_dot(g, names));
    files.push_back(file);
  }
  return files;
}

namespace detail {

inline std::string csv_number(double v) { return std::isfinite(v) ? format_number(v) : ""; }

class MetricsWriter {
 public:
  MetricsWriter(const fs::path& path, const std::string& header) : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot write '" + path.string() + "'");
    out_ << "#schema=1\n" << header << '\n';
    out_.flush();
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t k = 0; k < cells.size(); ++k) out_ << (k ? "," : "") << cells[k];
    out_ << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

inline std::string network_metrics_header(const std::vector<Dataset>& data, bool accuracy) {
  std::string h = "iteration,sweeps,sgd_steps";
  for (const auto& d : data) h += ",train_loss_" + d.name;
  for (const auto& d : data) h += ",test_loss_" + d.name;
  if (accuracy)
    for (const auto& d : data) h += ",test_accuracy_" + d.name;
  return h + ",consistency,delta,elapsed_seconds";
}

inline json params_json(const Params& p) {
  json layers = json::array();
  for (const auto& l : p) {
    json w = json::array();
    for (std::size_t r = 0; r < l.weights.rows(); ++r)
      w.push_back(std::vector<double>(l.weights.row(r).begin(), l.weights.row(r).end()));
    layers.push_back(json{{"weights", w}, {"bias", l.bias}});
  }
  return layers;
}

inline double mean_finite(const Vector& v) {
  double s = 0.0;
  std::size_t c = 0;
  for (double x : v)
    if (std::isfinite(x)) s += x, ++c;
  return c ? s / static_cast<double>(c) : std::numeric_limits<double>::quiet_NaN();
}

inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json dataset_entries(const std::vector<Dataset>& data) {
  json out = json::array();
  for (const auto& d : data)
    out.push_back(json{{"name", d.name}, {"records", d.records()}, {"train", d.train.size()}, {"test", d.test.size()}});
  return out;
}

}  // namespace detail

struct RunResult {
  fs::path output_dir;
  json summary;
};

using LogFn = std::function<void(const std::string&)>;

namespace detail {

inline RunResult run_network(const ExperimentConfig& cfg, const std::vector<Dataset>& data, const fs::path& dir,
                             const LogFn& log) {
  const bool classify = cfg.network.loss == LossKind::cross_entropy;
  MetricsWriter metrics(dir / "metrics.csv", network_metrics_header(data, classify));
  auto on_record = [&](const IterationRecord& r) {
    std::vector<std::string> cells{std::to_string(r.iteration), std::to_string(r.sweeps), std::to_string(r.sgd_steps)};
    for (double v : r.train_loss) cells.push_back(csv_number(v));
    for (double v : r.test_loss) cells.push_back(csv_number(v));
    for (double v : r.test_accuracy) cells.push_back(csv_number(v));
    cells.push_back(csv_number(r.consistency));
    cells.push_back(csv_number(r.delta));
    cells.push_back(cfg.record_wall_time ? csv_number(r.elapsed_seconds) : "");
    metrics.row(cells);
    if (log) {
      std::ostringstream os;
      os << "iteration " << r.iteration << ": mean train loss " << mean_finite(r.train_loss);
      if (std::isfinite(r.delta)) os << ", delta " << r.delta;
      log(os.str());
    }
  };

  ParamEnsemble ensemble;
  TrainHistory history;
  PairTensor weights;
  Vector sigma;
  const bool joint = cfg.train.mode == TrainMode::joint_robust;
  if (joint) {
    auto r = irls_train(data, cfg.network, cfg.train, on_record);
    ensemble = std::move(r.ensemble);
    history = std::move(r.history);
    weights = r.state.weights;
    sigma = r.state.sigma;
  } else {
    auto r = train_baseline(data, cfg.network, cfg.train, on_record);
    ensemble = std::move(r.ensemble);
    history = std::move(r.history);
  }

  std::vector<std::string> names;
  for (const auto& d : data) names.push_back(d.name);
  const auto distances = pair_distances(ensemble);
  std::string weight_source = "irls";
  if (!joint) {
    // Baselines have no IRLS weights; derive them from the final ensemble for inspection.
    sigma = estimate_sigma(distances, sigma_floor(ensemble));
    weights = compute_weights(distances, sigma);
    weight_source = "final_ensemble";
  }
  write_json(dir / "weights.json", json{{"schema", 1},
                                        {"names", names},
                                        {"layer_pairs", distances.depth()},
                                        {"weight_source", weight_source},
                                        {"sigma", sigma},
                                        {"weights", pair_tensor_json(weights)},
                                        {"distances", pair_tensor_json(distances)}});
  json nets = json::array();
  for (const auto& p : ensemble.nets) nets.push_back(params_json(p));
  write_json(dir / "ensemble.json", json{{"schema", 1}, {"names", names}, {"networks", nets}});

  std::vector<std::string> outputs{"metrics.csv", "weights.json", "ensemble.json"};
  if (joint)
    for (auto& f : write_sharing_graphs(dir, weights, distances, names, cfg.graph_k, cfg.graph_metric))
      outputs.push_back(f);

  const auto& last = history.records.back();
  json per = dataset_entries(data);
  for (std::size_t i = 0; i < data.size(); ++i) {
    per[i]["train_loss"] = number_or_null(last.train_loss[i]);
    per[i]["test_loss"] = number_or_null(last.test_loss[i]);
    if (classify) per[i]["test_accuracy"] = number_or_null(last.test_accuracy[i]);
  }
  json summary{{"schema", 1},
               {"task", to_string(cfg.task)},
               {"mode", to_string(cfg.train.mode)},
               {"seed", cfg.seed},
               {"datasets", per},
               {"mean_test_loss", number_or_null(mean_finite(last.test_loss))}};
  if (classify) summary["mean_test_accuracy"] = number_or_null(mean_finite(last.test_accuracy));
  summary["epochs_per_network"] = history.epochs_per_network;
  if (joint) {
    summary["irls_iterations"] = last.iteration;
    summary["final_delta"] = number_or_null(last.delta);
    summary["converged"] = std::isfinite(last.delta) && last.delta <= cfg.train.delta_tol;
    summary["sigma"] = sigma;
  }
  summary["outputs"] = outputs;
  return {dir, summary};
}

inline RunResult run_convex(const ExperimentConfig& cfg, const std::vector<Dataset>& data, const fs::path& dir,
                            const LogFn& log) {
  MetricsWriter metrics(dir / "metrics.csv", "iteration,objective");
  auto progress = [&](std::size_t t, double obj) {
    metrics.row({std::to_string(t), csv_number(obj)});
    if (log) log("iteration " + std::to_string(t) + ": objective " + format_number(obj));
  };
  const bool svm = cfg.task == Task::svm_joint;
  const auto res = svm ? svm_joint_train(data, cfg.convex, progress) : logreg_joint_train(data, cfg.convex, progress);
  json models = json::array();
  for (std::size_t i = 0; i < res.models.size(); ++i)
    models.push_back(json{{"name", data[i].name}, {"w", res.models[i].w}, {"b", res.models[i].b}});
  write_json(dir / "weights.json", json{{"schema", 1}, {"task", to_string(cfg.task)}, {"models", models}});

  json per = dataset_entries(data);
  Vector acc;
  for (std::size_t i = 0; i < data.size(); ++i) {
    double a = std::numeric_limits<double>::quiet_NaN();
    if (!data[i].test.empty()) {
      std::size_t hit = 0;
      for (std::size_t r : data[i].test)
        if ((margin(res.models[i], data[i].features.row(r)) >= 0.0 ? 1 : -1) == (*data[i].labels)[r]) ++hit;
      a = static_cast<double>(hit) / static_cast<double>(data[i].test.size());
    }
    acc.push_back(a);
    per[i]["test_accuracy"] = number_or_null(a);
  }
  json summary{{"schema", 1},
               {"task", to_string(cfg.task)},
               {"seed", cfg.seed},
               {"datasets", per},
               {"objective", res.objective},
               {"iterations", res.iterations},
               {"mean_test_accuracy", number_or_null(mean_finite(acc))},
               {"outputs", {"metrics.csv", "weights.json"}}};
  return {dir, summary};
}

}  // namespace detail

/// Validates everything, then trains and writes the outputs; summary.json last.
inline RunResult run_experiment(const ExperimentConfig& cfg, const LogFn& log = {}) {
  const auto data = prepare(cfg);
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  fs::remove(dir / "summary.json");
  auto result = is_network_task(cfg.task) ? detail::run_network(cfg, data, dir, log)
                                          : detail::run_convex(cfg, data, dir, log);
  write_json(dir / "summary.json", result.summary);
  return result;
}

/// Re-derives the sharing graphs from a weights.json snapshot.
inline std::vector<fs::path> graph_from_snapshot(const fs::path& snapshot, std::size_t k,
                                                 InfluenceMetric metric = InfluenceMetric::weight,
                                                 std::optional<fs::path> out_dir = std::nullopt) {
  if (k == 0) throw ConfigError("--k must be > 0");
  const json j = read_json_file(snapshot);
  if (!j.is_object() || !j.contains("weights") || !j.contains("distances"))
    throw ConfigError(snapshot.string() + ": not a fusion weights snapshot");
  const auto weights = pair_tensor_from_json(j.at("weights"), "weights");
  const auto distances = pair_tensor_from_json(j.at("distances"), "distances");
  if (weights.n() != distances.n() || weights.depth() != distances.depth())
    throw ConfigError(snapshot.string() + ": weights and distances differ in shape");
  std::vector<std::string> names;
  if (j.contains("names")) names = detail::get_or<std::vector<std::string>>(j, "", "names", {});
  const fs::path dir = out_dir ? *out_dir : (snapshot.parent_path().empty() ? fs::path(".") : snapshot.parent_path());
  fs::create_directories(dir);
  std::vector<fs::path> paths;
  for (const auto& f : write_sharing_graphs(dir, weights, distances, names, k, metric)) paths.push_back(dir / f);
  return paths;
}

}  // namespace fusenet
