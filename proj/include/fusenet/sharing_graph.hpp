#pragma once

// Layer-wise "who shares with whom" graph: an undirected edge (i, j) exists when
// j is among i's k most influential neighbours and i among j's.

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fusenet/fusion.hpp"
#include "fusenet/numerics.hpp"

namespace fusenet {

struct SharingGraph {
  std::size_t layer_pair = 0;  // 1-based index of the adjacent layer pair
  std::size_t nodes = 0;
  std::vector<std::pair<std::size_t, std::size_t>> edges;  // i < j, sorted
  Matrix influence;

  bool has_edge(std::size_t i, std::size_t j) const {
    if (i > j) std::swap(i, j);
    return std::binary_search(edges.begin(), edges.end(), std::make_pair(i, j));
  }
};

/// The k highest-influence neighbours of i; ties go to the lower index.
inline std::vector<std::size_t> top_k_neighbours(const Matrix& influence, std::size_t i, std::size_t k) {
  std::vector<std::size_t> others;
  for (std::size_t j = 0; j < influence.rows(); ++j)
    if (j != i) others.push_back(j);
  std::stable_sort(others.begin(), others.end(),
                   [&](std::size_t a, std::size_t b) { return influence(i, a) > influence(i, b); });
  if (others.size() > k) others.resize(k);
  return others;
}

inline SharingGraph build_graph(const Matrix& influence, std::size_t k = 3, std::size_t layer_pair = 1) {
  if (influence.rows() != influence.cols()) throw ConfigError("build_graph: influence must be square");
  const std::size_t n = influence.rows();
  SharingGraph g;
  g.layer_pair = layer_pair;
  g.nodes = n;
  // Influence is symmetric by construction; averaging with the transpose makes
  // the edge rule independent of which triangle a caller filled in.
  g.influence = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) g.influence(i, j) = 0.5 * (influence(i, j) + influence(j, i));
  std::vector<std::vector<bool>> top(n, std::vector<bool>(n, false));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j : top_k_neighbours(g.influence, i, k)) top[i][j] = true;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (top[i][j] && top[j][i]) g.edges.emplace_back(i, j);
  return g;
}

enum class InfluenceMetric { weight, inverse_distance };

/// n x n influence at zero-based layer pair l: the IRLS weight, or 1/d.
inline Matrix influence_slice(const PairTensor& weights, const PairTensor& distances, std::size_t l,
                              InfluenceMetric metric) {
  if (metric == InfluenceMetric::weight) return weights.slice(l);
  Matrix m = distances.slice(l);
  for (double& v : m.data()) v = v > 0.0 ? 1.0 / v : std::numeric_limits<double>::max();
  return m;
}

inline std::vector<SharingGraph> build_graphs(const PairTensor& weights, const PairTensor& distances,
                                              std::size_t k, InfluenceMetric metric = InfluenceMetric::weight) {
  std::vector<SharingGraph> out;
  for (std::size_t l = 0; l < weights.depth(); ++l)
    out.push_back(build_graph(influence_slice(weights, distances, l, metric), k, l + 1));
  return out;
}

namespace detail {
inline std::string dot_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  return out;
}
}  // namespace detail

/// Undirected DOT text with nodes and edges in index order.
inline std::string export_dot(const SharingGraph& g, const std::vector<std::string>& labels = {}) {
  std::ostringstream os;
  os << "graph sharing_l" << g.layer_pair << " {\n";
  for (std::size_t i = 0; i < g.nodes; ++i) {
    const std::string label = i < labels.size() ? labels[i] : std::to_string(i);
    os << "  n" << i << " [label=\"" << detail::dot_escape(label) << "\"];\n";
  }
  for (const auto& [i, j] : g.edges) os << "  n" << i << " -- n" << j << ";\n";
  os << "}\n";
  return os.str();
}

}  // namespace fusenet
