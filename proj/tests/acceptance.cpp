// Acceptance suite: one PASS/FAIL line per criterion; exit status is the number of failures.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fusenet/fusenet.hpp"
#include "oracles.hpp"

using namespace fusenet;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ExperimentConfig config_file(const std::string& name) {
  const fs::path path = fs::path(FUSENET_CONFIG_DIR) / name;
  return parse_config(read_json_file(path), path.parent_path());
}

double mean(const Vector& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// ---- 1 --------------------------------------------------------------------------

Dataset random_dataset(Rng& rng, std::size_t n, std::size_t d, std::optional<int> classes) {
  Dataset ds;
  ds.features = gaussian_fill(rng, Matrix(n, d), 0.0, 1.0);
  if (classes) {
    std::vector<int> y(n);
    for (int& v : y) v = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(*classes)));
    ds.labels = y;
  } else {
    ds.targets = gaussian_fill(rng, Matrix(n, d), 0.0, 1.0);
  }
  ds.train = all_records(ds);
  return ds;
}

Outcome gradient_oracle() {
  Rng rng(101);
  const Activation acts[] = {Activation::relu, Activation::tanh, Activation::sigmoid, Activation::identity};
  double worst = 0.0;
  std::size_t configs = 0;
  for (; configs < 24; ++configs) {
    const bool classify = configs % 2 == 0;
    const std::size_t depth = 2 + rng.uniform_index(3);
    const std::size_t d = 2 + rng.uniform_index(3);
    std::vector<std::size_t> widths{d};
    for (std::size_t l = 1; l < depth; ++l) widths.push_back(2 + rng.uniform_index(4));
    widths.push_back(classify ? 3 : d);
    std::vector<Activation> a(depth);
    for (auto& v : a) v = acts[rng.uniform_index(4)];
    if (classify) a.back() = Activation::identity;
    const auto spec = NetworkSpec::from_widths(widths, a, classify ? LossKind::cross_entropy : LossKind::reconstruction);
    Params p = init_params(spec, rng);
    for (auto& layer : p)
      for (double& b : layer.bias) b = rng.normal(0.0, 0.5);
    const auto ds = random_dataset(rng, 6, d, classify ? std::optional<int>(3) : std::nullopt);
    const Vector analytic = flatten(grad_task_loss(spec, p, ds, ds.train));
    // Central differences, written out here rather than borrowed from the library.
    Vector theta = flatten(p), fd(theta.size());
    const double h = 1e-6;
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double keep = theta[k];
      theta[k] = keep + h;
      const double up = task_loss(spec, unflatten(spec, theta), ds, ds.train);
      theta[k] = keep - h;
      const double down = task_loss(spec, unflatten(spec, theta), ds, ds.train);
      theta[k] = keep;
      fd[k] = (up - down) / (2.0 * h);
    }
    double num = 0.0, na = 0.0, nf = 0.0;
    for (std::size_t k = 0; k < fd.size(); ++k) {
      num += (analytic[k] - fd[k]) * (analytic[k] - fd[k]);
      na += analytic[k] * analytic[k];
      nf += fd[k] * fd[k];
    }
    worst = std::max(worst, std::sqrt(num) / std::max({std::sqrt(na), std::sqrt(nf), 1e-8}));
  }
  return {configs >= 20 && worst <= 1e-5,
          std::to_string(configs) + " configurations, worst relative error " + fmt(worst, 3)};
}

// ---- 2 --------------------------------------------------------------------------

Outcome robust_identities() {
  double split = 0.0, half = 0.0, bound = 0.0;
  std::size_t points = 0;
  for (std::size_t a = 0; a < 100; ++a) {
    const double x = -50.0 + 100.0 * static_cast<double>(a) / 99.0;
    for (std::size_t b = 0; b < 100; ++b) {
      const double sigma = std::pow(10.0, -3.0 + 5.0 * static_cast<double>(b) / 99.0);
      const double r = rho(x, sigma);
      const double scale = std::max(1.0, r);
      split = std::max(split, std::abs(r - robust_weight(x, sigma) * x * x) / scale);
      half = std::max(half, std::abs(rho(sigma, sigma) - 0.5 * sigma * sigma) / std::max(1.0, sigma * sigma));
      bound = std::max(bound, r - std::min(x * x, sigma * sigma));
      ++points;
    }
  }
  const bool ok = points >= 10000 && split <= 1e-14 && half <= 1e-14 && bound <= 0.0;
  return {ok, std::to_string(points) + " grid points; |rho - w x^2| " + fmt(split, 3) + ", |rho(s,s) - s^2/2| " +
                  fmt(half, 3) + ", max(rho - min(x^2, s^2)) " + fmt(bound, 3)};
}

// ---- 3 --------------------------------------------------------------------------

Outcome coefficient_identity() {
  Rng rng(303);
  double worst = 0.0;
  std::size_t ensembles = 0;
  for (std::size_t depth = 2; depth <= 6; ++depth)
    for (int t = 0; t < 20; ++t, ++ensembles) {
      std::vector<std::size_t> widths{1 + rng.uniform_index(4)};
      for (std::size_t l = 0; l < depth; ++l) widths.push_back(1 + rng.uniform_index(4));
      ParamEnsemble e{NetworkSpec::from_widths(widths, std::vector<Activation>(depth, Activation::tanh),
                                               LossKind::reconstruction),
                      {}};
      const std::size_t n = 2 + rng.uniform_index(4);
      for (std::size_t i = 0; i < n; ++i) {
        Params p = init_params(e.spec, rng);
        for (auto& layer : p)
          for (double& b : layer.bias) b = rng.normal();
        e.nets.push_back(p);
      }
      PairTensor w(n, depth - 1);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
          for (std::size_t l = 0; l + 1 < depth; ++l) w.set_symmetric(i, j, l, rng.uniform(0.0, 1.0));
      const auto c = layer_coefficients(w);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
          double pair_form = 0.0, layer_form = 0.0;
          for (std::size_t l = 0; l + 1 < depth; ++l) {
            // ||(theta_i^l, theta_i^{l+1}) - (theta_j^l, theta_j^{l+1})||^2 from the concatenation.
            Vector a = e.nets[i][l].flatten(), b = e.nets[j][l].flatten();
            const Vector a2 = e.nets[i][l + 1].flatten(), b2 = e.nets[j][l + 1].flatten();
            a.insert(a.end(), a2.begin(), a2.end());
            b.insert(b.end(), b2.begin(), b2.end());
            double sq = 0.0;
            for (std::size_t k = 0; k < a.size(); ++k) sq += (a[k] - b[k]) * (a[k] - b[k]);
            pair_form += w.at(i, j, l) * sq;
          }
          for (std::size_t l = 0; l < depth; ++l) {
            const Vector a = e.nets[i][l].flatten(), b = e.nets[j][l].flatten();
            double sq = 0.0;
            for (std::size_t k = 0; k < a.size(); ++k) sq += (a[k] - b[k]) * (a[k] - b[k]);
            layer_form += c.at(i, j, l) * sq;
          }
          worst = std::max(worst, std::abs(pair_form - layer_form) / std::max(1.0, pair_form));
        }
    }
  return {ensembles >= 100 && worst <= 1e-12,
          std::to_string(ensembles) + " ensembles, L 2..6, worst relative gap " + fmt(worst, 3)};
}

// ---- 4 --------------------------------------------------------------------------

std::vector<Dataset> teacher_data(const NetworkSpec& net, std::size_t n, std::size_t train, std::uint64_t seed) {
  SyntheticSpec s;
  TeacherCluster c;
  for (std::size_t i = 0; i < n; ++i) c.members.push_back(i);
  c.teacher_seed = seed;
  c.perturbation_std = 0.3;
  s.clusters = {c};
  s.train_samples = train;
  s.test_samples = 10;
  s.noise_std = 0.05;
  s.input_dim = net.input_dim();
  return generate_synthetic(s, net, Rng(seed + 1));
}

std::vector<Dataset> blob_data(std::size_t m, std::size_t dim, std::size_t samples, std::uint64_t seed) {
  SyntheticSpec s;
  s.kind = SyntheticKind::gaussian_blobs;
  TeacherCluster c;
  for (std::size_t i = 0; i < m; ++i) c.members.push_back(i);
  c.teacher_seed = seed;
  c.perturbation_std = 0.5;
  s.clusters = {c};
  s.train_samples = samples;
  s.test_samples = 0;
  s.noise_std = 1.0;
  s.input_dim = dim;
  return generate_synthetic(s, NetworkSpec{}, Rng(seed + 7));
}

Outcome decoupling() {
  const auto net =
      NetworkSpec::from_widths({4, 6, 3}, {Activation::tanh, Activation::identity}, LossKind::reconstruction);
  const auto data = teacher_data(net, 3, 40, 41);
  TrainConfig cfg;
  cfg.lambda = 0.0;
  cfg.lr = 0.02;
  cfg.batch_size = 8;
  cfg.inner_epochs_per_sweep = 2;
  cfg.init_max_sweeps = 5;
  cfg.max_irls_iters = 3;
  cfg.sweeps_per_irls_iter = 2;
  cfg.seed = 42;
  const auto joint = irls_train(data, net, cfg);
  const std::size_t epochs = joint.history.records.back().sweeps * cfg.inner_epochs_per_sweep;
  // Isolated reference: network i draws init from child 0 and SGD from child 1 of child_seed(seed, i).
  bool bitwise = true;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::uint64_t base = child_seed(cfg.seed, i);
    Rng init(child_seed(base, 0)), sgd(child_seed(base, 1));
    Params theta = init_params(net, init);
    for (std::size_t ep = 0; ep < epochs; ++ep) sgd_epoch(net, theta, data[i], cfg.lr, cfg.batch_size, sgd);
    bitwise = bitwise && theta == joint.ensemble.nets[i];
  }
  auto iso_cfg = cfg;
  iso_cfg.mode = TrainMode::isolated;
  iso_cfg.baseline_epochs = epochs;
  const auto iso = train_baseline(data, net, iso_cfg);
  bitwise = bitwise && iso.ensemble.nets == joint.ensemble.nets;

  double gap = 0.0;
  const auto blobs = blob_data(3, 2, 25, 43);
  ConvexConfig cc;
  cc.mu = 0.0;
  cc.gamma = 0.0;
  cc.max_iters = 5000;
  const auto svm = svm_joint_train(blobs, cc);
  const auto lr = logreg_joint_train(blobs, cc);
  for (std::size_t i = 0; i < blobs.size(); ++i) {
    const std::vector<Dataset> one{blobs[i]};
    const auto svm_solo = svm_joint_train(one, cc);
    const auto lr_solo = logreg_joint_train(one, cc);
    const std::vector<LinearModel> svm_mine{svm.models[i]}, lr_mine{lr.models[i]};
    gap = std::max(gap, std::abs(svm_objective(svm_mine, one, cc) - svm_solo.objective));
    gap = std::max(gap, std::abs(logreg_objective(lr_mine, one, cc, true) - lr_solo.objective));
  }
  return {bitwise && gap <= 1e-6, std::string("lambda=0 joint vs isolated ") + (bitwise ? "bitwise equal" : "DIFFERENT") +
                                      " after " + std::to_string(epochs) + " epochs; convex mu=gamma=0 objective gap " +
                                      fmt(gap, 3)};
}

// ---- 5, 6, 10 ---------------------------------------------------------------------

struct ClusterRun {
  fs::path dir;
  std::vector<std::size_t> cluster;
  double seconds = 0.0;
};

ClusterRun run_cluster_config(const fs::path& dir) {
  auto cfg = config_file("cluster_recovery.json");
  cfg.output_dir = dir;
  fs::remove_all(dir);
  const auto t0 = std::chrono::steady_clock::now();
  run_experiment(cfg);
  ClusterRun r;
  r.dir = dir;
  r.cluster = cluster_assignment(cfg.sources.at(0).synthetic);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

std::vector<std::pair<std::size_t, std::size_t>> dot_edges(const std::string& text) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  const std::regex edge(R"(n(\d+) -- n(\d+);)");
  for (auto it = std::sregex_iterator(text.begin(), text.end(), edge); it != std::sregex_iterator(); ++it)
    out.emplace_back(std::stoul((*it)[1]), std::stoul((*it)[2]));
  return out;
}

Outcome cluster_recovery(const ClusterRun& run) {
  const auto snap = read_json_file(run.dir / "weights.json");
  const std::size_t pairs = snap["weights"].size();
  bool ok = pairs > 0;
  std::ostringstream detail;
  for (std::size_t l = 0; l < pairs; ++l) {
    const auto edges = dot_edges(slurp(run.dir / ("sharing_l" + std::to_string(l + 1) + ".dot")));
    std::size_t intra = 0;
    for (auto [a, b] : edges) intra += run.cluster.at(a) == run.cluster.at(b);
    const double precision = edges.empty() ? 0.0 : static_cast<double>(intra) / static_cast<double>(edges.size());
    double win = 0.0, wout = 0.0;
    std::size_t nin = 0, nout = 0;
    const auto& w = snap["weights"][l];
    for (std::size_t i = 0; i < run.cluster.size(); ++i)
      for (std::size_t j = 0; j < run.cluster.size(); ++j) {
        if (i == j) continue;
        const double v = w[i][j].get<double>();
        if (run.cluster[i] == run.cluster[j])
          win += v, ++nin;
        else
          wout += v, ++nout;
      }
    win /= static_cast<double>(nin);
    wout /= static_cast<double>(nout);
    ok = ok && precision >= 0.9 && win > wout;
    detail << (l ? "; " : "") << "pair " << l + 1 << ": precision " << fmt(precision, 3) << " (" << intra << "/"
           << edges.size() << "), intra w " << fmt(win, 3) << " vs inter " << fmt(wout, 3);
  }
  ok = ok && run.seconds < 600.0;
  detail << "; " << fmt(run.seconds, 3) << " s";
  return {ok, detail.str()};
}

Outcome irls_budget(const ClusterRun& run) {
  // Read delta straight from metrics.csv.
  std::istringstream in(slurp(run.dir / "metrics.csv"));
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  std::vector<std::string> header;
  {
    std::istringstream h(line);
    for (std::string c; std::getline(h, c, ',');) header.push_back(c);
  }
  const auto col = static_cast<std::size_t>(std::find(header.begin(), header.end(), "delta") - header.begin());
  std::optional<std::size_t> hit;
  std::string trace;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream r(line);
    for (std::string c; std::getline(r, c, ',');) cells.push_back(c);
    if (col >= cells.size() || cells[col].empty()) continue;
    const std::size_t k = std::stoul(cells[0]);
    const double d = std::stod(cells[col]);
    trace += (trace.empty() ? "" : " ") + fmt(d, 3);
    if (!hit && d <= 1e-2) hit = k;
  }
  return {hit && *hit <= 12,
          (hit ? "delta <= 1e-2 at iteration " + std::to_string(*hit) : std::string("delta never reached 1e-2")) +
              " (deltas: " + trace + ")"};
}

Outcome determinism(const ClusterRun& a, const ClusterRun& b) {
  std::vector<std::string> files{"metrics.csv"};
  for (const auto& entry : fs::directory_iterator(a.dir))
    if (entry.path().extension() == ".dot") files.push_back(entry.path().filename().string());
  std::sort(files.begin(), files.end());
  bool same = files.size() > 1;
  std::string diff;
  for (const auto& f : files)
    if (!fs::exists(b.dir / f) || slurp(a.dir / f) != slurp(b.dir / f)) {
      same = false;
      diff += " " + f;
    }
  std::string list;
  for (const auto& f : files) list += (list.empty() ? "" : ", ") + f;
  return {same, (same ? "byte-identical: " : "differ:" + diff + "; compared: ") + list};
}

// ---- 7 --------------------------------------------------------------------------

double mean_test_loss(const TrainHistory& h) { return mean(h.records.back().test_loss); }

Outcome starved_data() {
  auto base = config_file("starved.json");
  std::size_t beats_isolated = 0, beats_l2 = 0;
  std::ostringstream detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto cfg = base;
    cfg.seed = seed;
    cfg.train.seed = seed;
    auto data = load_datasets(cfg);
    const auto joint = irls_train(data, cfg.network, cfg.train);
    auto iso_cfg = cfg.train;
    iso_cfg.mode = TrainMode::isolated;
    iso_cfg.baseline_epochs = joint.history.epochs_per_network;
    const auto iso = train_baseline(data, cfg.network, iso_cfg);

    auto outlier = cfg;
    auto& synth = outlier.sources.at(0).synthetic;
    synth.clusters.push_back({{synth.dataset_count()}, 303, synth.clusters.front().perturbation_std});
    data = load_datasets(outlier);
    const auto joint_o = irls_train(data, outlier.network, outlier.train);
    auto l2_cfg = outlier.train;
    l2_cfg.mode = TrainMode::l2_reg;
    l2_cfg.baseline_epochs = joint_o.history.epochs_per_network;
    const auto l2 = train_baseline(data, outlier.network, l2_cfg);

    const double j = mean_test_loss(joint.history), i = mean_test_loss(iso.history);
    const double jo = mean_test_loss(joint_o.history), lo = mean_test_loss(l2.history);
    beats_isolated += j <= i;
    beats_l2 += jo <= lo;
    detail << (seed > 1 ? "; " : "") << "seed " << seed << ": joint " << fmt(j, 3) << " vs isolated " << fmt(i, 3)
           << ", +outlier joint " << fmt(jo, 3) << " vs l2_reg " << fmt(lo, 3);
  }
  return {beats_isolated >= 4 && beats_l2 >= 4, "joint <= isolated on " + std::to_string(beats_isolated) +
                                                    "/5, joint <= l2_reg with outlier on " + std::to_string(beats_l2) +
                                                    "/5 (" + detail.str() + ")"};
}

// ---- 8 --------------------------------------------------------------------------

Outcome full_batch_monotone() {
  Rng rng(808);
  double worst = -std::numeric_limits<double>::infinity();
  std::size_t steps = 0;
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t hidden = 3 + rng.uniform_index(4), n = 2 + rng.uniform_index(3);
    const auto net =
        NetworkSpec::from_widths({3, hidden, 2}, {Activation::tanh, Activation::identity}, LossKind::reconstruction);
    const auto data = teacher_data(net, n, 20, 80 + static_cast<std::uint64_t>(trial));
    TrainConfig cfg;
    cfg.lambda = rng.uniform(0.1, 1.0);
    cfg.lr = 0.02;
    cfg.batch_size = data[0].train.size();
    cfg.seed = static_cast<std::uint64_t>(trial);
    auto streams = make_streams(cfg, n);
    auto e = init_ensemble(net, streams);
    PairTensor w(n, 1);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) w.set_symmetric(i, j, 0, rng.uniform(0.05, 1.0));
    const auto rep = solve_weighted_joint(data, e, layer_coefficients(w), cfg, streams, 40);
    for (std::size_t k = 1; k < rep.objectives.size(); ++k, ++steps)
      worst = std::max(worst, rep.objectives[k] - rep.objectives[k - 1]);
  }
  return {worst <= 1e-9, "5 instances, " + std::to_string(steps) + " sweeps, largest step increase " + fmt(worst, 3)};
}

// ---- 9 --------------------------------------------------------------------------

Dataset points(const oracle::Points& pts) {
  Dataset ds;
  ds.features = Matrix(pts.size(), 1);
  std::vector<int> y;
  for (std::size_t r = 0; r < pts.size(); ++r) {
    ds.features(r, 0) = pts[r].first;
    y.push_back(pts[r].second);
  }
  ds.labels = y;
  ds.train = all_records(ds);
  return ds;
}

Outcome convex_oracles() {
  std::ostringstream detail;
  bool ok = true;
  {
    const oracle::Points pts{{2.0, 1}, {-2.0, -1}};
    const std::vector<Dataset> data{points(pts)};
    ConvexConfig cfg;
    cfg.lambda = 0.25;
    const auto res = svm_joint_train(data, cfg);
    const double gap = std::abs(res.objective - oracle::svm_grid_1d(pts, 0.25, -3.0, 3.0, 1200));
    ok = ok && gap <= 1e-3;
    detail << "svm 1-D gap " << fmt(gap, 3);
  }
  {
    const oracle::Points p1{{2.0, 1}, {-1.0, -1}, {0.5, 1}}, p2{{1.0, 1}, {-1.5, -1}, {-0.25, 1}};
    const std::vector<Dataset> data{points(p1), points(p2)};
    ConvexConfig cfg;
    cfg.lambda = 0.25;
    cfg.mu = 0.5;
    const auto res = svm_joint_train(data, cfg);
    const double gap = std::abs(res.objective - oracle::svm_grid_pair_1d(p1, p2, 0.25, 0.5, -4.0, 4.0, 4000));
    ok = ok && gap <= 1e-3;
    detail << ", svm two-task gap " << fmt(gap, 3);
  }
  {
    const oracle::Points p1{{1.0, 1}, {-1.0, -1}}, p2{{2.0, 1}, {-0.5, -1}};
    const std::vector<Dataset> data{points(p1), points(p2)};
    ConvexConfig cfg;
    cfg.lambda = 0.1;
    cfg.mu = 0.05;
    cfg.gamma = 0.05;
    const auto res = logreg_joint_train(data, cfg);
    const double gap = std::abs(res.objective - oracle::logreg_grid_pair_1d(p1, p2, 0.1, 0.05, 0.05, -4.0, 4.0, 800));
    ok = ok && gap <= 1e-3;
    detail << ", logreg two-task gap " << fmt(gap, 3);
  }
  {
    const auto base = blob_data(1, 2, 30, 91);
    const std::vector<Dataset> data{base[0], base[0]};
    ConvexConfig cfg;
    cfg.lambda = 0.1;
    cfg.mu = 1e6;
    const auto res = svm_joint_train(data, cfg);
    const double d = std::sqrt(squared_distance(res.models[0].w, res.models[1].w));
    ok = ok && d <= 1e-3;
    detail << ", svm consensus ||w1-w2|| " << fmt(d, 3);
  }
  {
    const auto base = blob_data(1, 3, 25, 92);
    const std::vector<Dataset> data{base[0], base[0], base[0]};
    ConvexConfig cfg;
    cfg.mu = 100.0;
    cfg.gamma = 0.0;
    const auto res = logreg_joint_train(data, cfg);
    double d = 0.0;
    for (std::size_t i = 1; i < 3; ++i)
      for (std::size_t k = 0; k < 3; ++k) d = std::max(d, std::abs(res.models[0].w[k] - res.models[i].w[k]));
    ok = ok && d <= 1e-4;
    detail << ", logreg consensus max |w_ik - w_jk| " << fmt(d, 3);
  }
  return {ok, detail.str()};
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / "fusenet_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);
  std::optional<ClusterRun> first, second;
  auto cluster_run = [&](std::optional<ClusterRun>& slot, const char* name) -> const ClusterRun& {
    if (!slot) slot = run_cluster_config(work / name);
    return *slot;
  };

  struct Criterion {
    int id;
    std::string name;
    double limit_seconds;  // 0 = no runtime limit
    std::function<Outcome()> check;
  };
  const std::vector<Criterion> criteria{
      {1, "gradient oracle", 30.0, gradient_oracle},
      {2, "robust-norm identities", 1.0, robust_identities},
      {3, "pair/layer coefficient identity", 5.0, coefficient_identity},
      {4, "decoupling", 60.0, decoupling},
      {5, "cluster recovery", 0.0, [&] { return cluster_recovery(cluster_run(first, "run_a")); }},
      {6, "IRLS convergence budget", 0.0, [&] { return irls_budget(cluster_run(first, "run_a")); }},
      {7, "joint beats baselines on starved data", 0.0, starved_data},
      {8, "full-batch monotonicity", 0.0, full_batch_monotone},
      {9, "convex oracles", 120.0, convex_oracles},
      {10, "determinism", 0.0,
       [&] { return determinism(cluster_run(first, "run_a"), cluster_run(second, "run_b")); }},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.limit_seconds > 0.0 && secs >= c.limit_seconds) {
      o.pass = false;
      o.detail += "; over the " + fmt(c.limit_seconds) + " s limit";
    }
    failures += !o.pass;
    std::printf("criterion %2d %-40s %s  [%.2f s]  %s\n", c.id, c.name.c_str(), o.pass ? "PASS" : "FAIL", secs,
                o.detail.c_str());
    std::fflush(stdout);
  }
  fs::remove_all(work);
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures;
}
