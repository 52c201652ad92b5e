// Graph storage, synthetic generation, client partitioning and
// cross-client edge bookkeeping.
//
// Adjacency is symmetric CSR without self-loops or duplicates; the model
// handles the self term separately, so storing (v,v) would double-count.
// All generators and partitioners are pure functions of (inputs, seed).
#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fedais/common.hpp"
#include "fedais/matrix.hpp"
#include "fedais/rng.hpp"

namespace fedais {

enum class Split : std::uint8_t { train, val, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

struct Csr {
  std::vector<std::uint32_t> offsets;  // size n+1
  std::vector<NodeId> neighbors;       // directed entries, both directions stored

  std::size_t num_nodes() const { return offsets.empty() ? 0 : offsets.size() - 1; }
  std::size_t num_directed_edges() const { return neighbors.size(); }

  std::span<const NodeId> neighbors_of(NodeId v) const {
    return {neighbors.data() + offsets[v], neighbors.data() + offsets[v + 1]};
  }
  std::size_t degree(NodeId v) const { return offsets[v + 1] - offsets[v]; }
};

// Canonicalizes an edge list into symmetric CSR: symmetrizes, drops
// self-loops, deduplicates.
inline Csr build_csr(std::size_t n, std::vector<std::pair<NodeId, NodeId>> edges) {
  std::vector<std::pair<NodeId, NodeId>> dir;
  dir.reserve(edges.size() * 2);
  for (auto [u, v] : edges) {
    if (u >= n || v >= n) throw ParameterError("edge endpoint out of range");
    if (u == v) continue;
    dir.emplace_back(u, v);
    dir.emplace_back(v, u);
  }
  std::sort(dir.begin(), dir.end());
  dir.erase(std::unique(dir.begin(), dir.end()), dir.end());

  Csr csr;
  csr.offsets.assign(n + 1, 0);
  for (auto& [u, v] : dir) csr.offsets[u + 1]++;
  for (std::size_t i = 0; i < n; ++i) csr.offsets[i + 1] += csr.offsets[i];
  csr.neighbors.resize(dir.size());
  std::vector<std::uint32_t> cursor(csr.offsets.begin(), csr.offsets.end() - 1);
  for (auto& [u, v] : dir) csr.neighbors[cursor[u]++] = v;
  return csr;
}

struct Graph {
  std::uint32_t n = 0;
  std::uint32_t d0 = 0;
  std::uint32_t num_classes = 0;
  Matrix features;                  // n x d0
  std::vector<std::uint32_t> labels;
  std::vector<Split> splits;
  Csr adjacency;

  std::size_t num_undirected_edges() const { return adjacency.num_directed_edges() / 2; }

  std::vector<NodeId> split_nodes(Split s) const {
    std::vector<NodeId> out;
    for (NodeId v = 0; v < n; ++v)
      if (splits[v] == s) out.push_back(v);
    return out;
  }

  void validate() const {
    if (features.rows() != n || features.cols() != d0)
      throw ParameterError("graph: feature matrix shape");
    if (labels.size() != n || splits.size() != n)
      throw ParameterError("graph: labels/splits length");
    for (auto y : labels)
      if (y >= num_classes) throw ParameterError("graph: label out of range");
    if (adjacency.num_nodes() != n) throw ParameterError("graph: adjacency size");
    // Symmetry, no self-loops, no duplicates.
    std::set<std::pair<NodeId, NodeId>> seen;
    for (NodeId u = 0; u < n; ++u) {
      for (NodeId v : adjacency.neighbors_of(u)) {
        if (u == v) throw ParameterError("graph: self-loop stored");
        if (!seen.insert({u, v}).second) throw ParameterError("graph: duplicate edge");
      }
    }
    for (auto& [u, v] : seen)
      if (!seen.count({v, u})) throw ParameterError("graph: asymmetric adjacency");
  }
};

// Canonical undirected edge list (u < v), sorted.
inline std::vector<std::pair<NodeId, NodeId>> undirected_edges(const Graph& g) {
  std::vector<std::pair<NodeId, NodeId>> out;
  out.reserve(g.num_undirected_edges());
  for (NodeId u = 0; u < g.n; ++u)
    for (NodeId v : g.adjacency.neighbors_of(u))
      if (u < v) out.emplace_back(u, v);
  return out;
}

// Stochastic-block-model graph whose blocks are the classes. Features are
// a per-class mean plus isotropic noise so the labels are learnable.
inline Graph generate_sbm(std::uint32_t num_nodes, std::uint32_t num_classes, double p_in,
                          double p_out, std::uint32_t d0, std::uint64_t seed,
                          double train_frac = 0.8, double val_frac = 0.1,
                          double noise_sigma = 1.0) {
  if (!(p_out >= 0.0 && p_in >= p_out && p_in <= 1.0))
    throw ParameterError("generate_sbm: need 0 <= p_out <= p_in <= 1");
  if (num_classes < 2) throw ParameterError("generate_sbm: num_classes >= 2");
  if (train_frac < 0 || val_frac < 0 || train_frac + val_frac > 1.0)
    throw ParameterError("generate_sbm: bad split fractions");

  Graph g;
  g.n = num_nodes;
  g.d0 = d0;
  g.num_classes = num_classes;

  // Balanced labels in random positions.
  Rng label_rng(derive_seed(seed, {1}));
  g.labels.resize(num_nodes);
  for (std::uint32_t i = 0; i < num_nodes; ++i) g.labels[i] = i % num_classes;
  label_rng.shuffle(g.labels);

  Rng mean_rng(derive_seed(seed, {2}));
  Matrix class_means(num_classes, d0);
  for (std::uint32_t c = 0; c < num_classes; ++c)
    for (std::uint32_t j = 0; j < d0; ++j) class_means(c, j) = mean_rng.normal();

  Rng feat_rng(derive_seed(seed, {3}));
  g.features = Matrix(num_nodes, d0);
  for (std::uint32_t v = 0; v < num_nodes; ++v)
    for (std::uint32_t j = 0; j < d0; ++j)
      g.features(v, j) = class_means(g.labels[v], j) + noise_sigma * feat_rng.normal();

  Rng edge_rng(derive_seed(seed, {4}));
  std::vector<std::pair<NodeId, NodeId>> edges;
  for (NodeId u = 0; u < num_nodes; ++u)
    for (NodeId v = u + 1; v < num_nodes; ++v) {
      double p = (g.labels[u] == g.labels[v]) ? p_in : p_out;
      if (edge_rng.uniform() < p) edges.emplace_back(u, v);
    }
  g.adjacency = build_csr(num_nodes, std::move(edges));

  Rng split_rng(derive_seed(seed, {5}));
  std::vector<NodeId> order(num_nodes);
  for (NodeId v = 0; v < num_nodes; ++v) order[v] = v;
  split_rng.shuffle(order);
  auto n_train = static_cast<std::size_t>(std::llround(train_frac * num_nodes));
  auto n_val = static_cast<std::size_t>(std::llround(val_frac * num_nodes));
  g.splits.assign(num_nodes, Split::test);
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i < n_train)
      g.splits[order[i]] = Split::train;
    else if (i < n_train + n_val)
      g.splits[order[i]] = Split::val;
  }
  return g;
}

// JSON graph file:
// { "n": int, "d0": int, "num_classes": int, "features": [[f64]],
//   "labels": [int], "edges": [[u,v]], "splits": ["train"|"val"|"test"] }
// The edge list may be directed; loading symmetrizes, deduplicates and
// drops self-loops.
inline Graph load_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_graph: cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("load_graph: " + path + ": " + e.what());
  }

  auto require = [&](const char* key) {
    if (!j.contains(key)) throw ConfigError("load_graph: " + path + ": missing field '" + key + "'");
  };
  for (const char* k : {"n", "d0", "num_classes", "features", "labels", "edges", "splits"})
    require(k);

  Graph g;
  g.n = j["n"].get<std::uint32_t>();
  g.d0 = j["d0"].get<std::uint32_t>();
  g.num_classes = j["num_classes"].get<std::uint32_t>();

  const auto& feats = j["features"];
  if (feats.size() != g.n) throw ConfigError("load_graph: features row count != n");
  g.features = Matrix(g.n, g.d0);
  for (std::uint32_t v = 0; v < g.n; ++v) {
    if (feats[v].size() != g.d0)
      throw ConfigError("load_graph: feature length mismatch at node " + std::to_string(v));
    for (std::uint32_t k = 0; k < g.d0; ++k) g.features(v, k) = feats[v][k].get<double>();
  }

  if (j["labels"].size() != g.n) throw ConfigError("load_graph: labels length != n");
  g.labels.resize(g.n);
  for (std::uint32_t v = 0; v < g.n; ++v) {
    g.labels[v] = j["labels"][v].get<std::uint32_t>();
    if (g.labels[v] >= g.num_classes)
      throw ConfigError("load_graph: label out of range at node " + std::to_string(v));
  }

  if (j["splits"].size() != g.n) throw ConfigError("load_graph: splits length != n");
  g.splits.resize(g.n);
  for (std::uint32_t v = 0; v < g.n; ++v) {
    std::string s = j["splits"][v].get<std::string>();
    if (s == "train")
      g.splits[v] = Split::train;
    else if (s == "val")
      g.splits[v] = Split::val;
    else if (s == "test")
      g.splits[v] = Split::test;
    else
      throw ConfigError("load_graph: unknown split tag '" + s + "'");
  }

  std::vector<std::pair<NodeId, NodeId>> edges;
  for (const auto& e : j["edges"]) {
    if (e.size() != 2) throw ConfigError("load_graph: edge is not a pair");
    NodeId u = e[0].get<NodeId>(), v = e[1].get<NodeId>();
    if (u >= g.n || v >= g.n) throw ConfigError("load_graph: edge endpoint out of range");
    edges.emplace_back(u, v);
  }
  g.adjacency = build_csr(g.n, std::move(edges));
  return g;
}

inline void save_graph(const Graph& g, const std::string& path) {
  nlohmann::json j;
  j["n"] = g.n;
  j["d0"] = g.d0;
  j["num_classes"] = g.num_classes;
  auto feats = nlohmann::json::array();
  for (std::uint32_t v = 0; v < g.n; ++v) {
    auto row = nlohmann::json::array();
    for (std::uint32_t k = 0; k < g.d0; ++k) row.push_back(g.features(v, k));
    feats.push_back(std::move(row));
  }
  j["features"] = std::move(feats);
  j["labels"] = g.labels;
  auto edges = nlohmann::json::array();
  for (auto& [u, v] : undirected_edges(g)) edges.push_back({u, v});
  j["edges"] = std::move(edges);
  auto splits = nlohmann::json::array();
  for (auto s : g.splits) splits.push_back(to_string(s));
  j["splits"] = std::move(splits);
  std::ofstream out(path);
  if (!out) throw IoError("save_graph: cannot open " + path);
  out << j.dump(2) << "\n";
}

struct Partition {
  std::uint32_t num_clients = 0;
  std::vector<ClientId> assignment;                 // per node
  std::vector<std::vector<NodeId>> local_nodes;     // per client, sorted
  std::vector<std::uint32_t> train_counts;          // n_k, train nodes per client
  std::vector<std::pair<NodeId, NodeId>> cross_edges;  // u < v, endpoints on different clients

  ClientId owner(NodeId v) const { return assignment[v]; }
};

// Cross-client edges by scanning the CSR (the canonical route; tests
// re-derive the same set from the undirected edge list).
inline std::vector<std::pair<NodeId, NodeId>> cross_edges_from_csr(
    const Graph& g, const std::vector<ClientId>& assignment) {
  std::vector<std::pair<NodeId, NodeId>> out;
  for (NodeId u = 0; u < g.n; ++u)
    for (NodeId v : g.adjacency.neighbors_of(u))
      if (u < v && assignment[u] != assignment[v]) out.emplace_back(u, v);
  return out;
}

inline Partition finish_partition(const Graph& g, std::uint32_t k,
                                  std::vector<ClientId> assignment) {
  Partition p;
  p.num_clients = k;
  p.assignment = std::move(assignment);
  p.local_nodes.assign(k, {});
  p.train_counts.assign(k, 0);
  for (NodeId v = 0; v < g.n; ++v) {
    p.local_nodes[p.assignment[v]].push_back(v);
    if (g.splits[v] == Split::train) p.train_counts[p.assignment[v]]++;
  }
  p.cross_edges = cross_edges_from_csr(g, p.assignment);
  return p;
}

// Uniform split-stratified assignment: within each split tag, nodes are
// shuffled and dealt round-robin, so per-client train counts differ by at
// most one.
inline Partition partition_iid(const Graph& g, std::uint32_t k, std::uint64_t seed) {
  if (k < 1) throw ParameterError("partition_iid: K >= 1");
  auto train = g.split_nodes(Split::train);
  if (k > train.size()) throw ParameterError("partition_iid: K exceeds train node count");

  std::vector<ClientId> assignment(g.n, 0);
  int tag = 0;
  for (Split s : {Split::train, Split::val, Split::test}) {
    auto nodes = g.split_nodes(s);
    Rng rng(derive_seed(seed, {10, static_cast<std::uint64_t>(tag++)}));
    rng.shuffle(nodes);
    for (std::size_t i = 0; i < nodes.size(); ++i)
      assignment[nodes[i]] = static_cast<ClientId>(i % k);
  }
  return finish_partition(g, k, assignment);
}

// Largest-remainder apportionment of `total` into k parts ~ weights.
inline std::vector<std::uint32_t> largest_remainder(const std::vector<double>& weights,
                                                    std::uint32_t total) {
  std::size_t k = weights.size();
  std::vector<std::uint32_t> counts(k, 0);
  std::vector<std::pair<double, std::size_t>> rema(k);
  std::uint32_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    double exact = weights[i] * total;
    counts[i] = static_cast<std::uint32_t>(exact);
    assigned += counts[i];
    rema[i] = {exact - counts[i], i};
  }
  // Largest fractional part first; index breaks ties deterministically.
  std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::uint32_t r = 0; r < total - assigned; ++r) counts[rema[r].second]++;
  return counts;
}

// Class-skewed assignment: each class draws client proportions from
// Dirichlet(alpha) and its nodes are allocated in those proportions. Val
// and test nodes follow the same per-class proportions as train.
inline Partition partition_dirichlet(const Graph& g, std::uint32_t k, double alpha,
                                     std::uint64_t seed) {
  if (k < 1) throw ParameterError("partition_dirichlet: K >= 1");
  if (!(alpha > 0.0)) throw ParameterError("partition_dirichlet: alpha > 0");

  std::vector<std::vector<double>> class_props(g.num_classes);
  Rng dir_rng(derive_seed(seed, {20}));
  for (std::uint32_t c = 0; c < g.num_classes; ++c) class_props[c] = dir_rng.dirichlet(alpha, k);

  std::vector<ClientId> assignment(g.n, 0);
  int tag = 0;
  for (Split s : {Split::train, Split::val, Split::test}) {
    Rng rng(derive_seed(seed, {21, static_cast<std::uint64_t>(tag++)}));
    for (std::uint32_t c = 0; c < g.num_classes; ++c) {
      std::vector<NodeId> nodes;
      for (NodeId v = 0; v < g.n; ++v)
        if (g.splits[v] == s && g.labels[v] == c) nodes.push_back(v);
      rng.shuffle(nodes);
      auto counts = largest_remainder(class_props[c], static_cast<std::uint32_t>(nodes.size()));
      std::size_t pos = 0;
      for (std::uint32_t cl = 0; cl < k; ++cl)
        for (std::uint32_t i = 0; i < counts[cl]; ++i) assignment[nodes[pos++]] = cl;
    }
  }
  return finish_partition(g, k, assignment);
}

// Keeps each within-client undirected edge with probability keep_ratio
// (both directions together). Cross-client edges are untouched unless
// include_cross is set.
inline Graph downsample_local_edges(const Graph& g, const Partition& p, double keep_ratio,
                                    std::uint64_t seed, bool include_cross = false) {
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0))
    throw ParameterError("downsample_local_edges: keep_ratio in (0,1]");
  Rng rng(derive_seed(seed, {30}));
  std::vector<std::pair<NodeId, NodeId>> kept;
  for (auto& [u, v] : undirected_edges(g)) {
    bool local = p.assignment[u] == p.assignment[v];
    if (local || include_cross) {
      if (rng.uniform() < keep_ratio) kept.emplace_back(u, v);
    } else {
      kept.emplace_back(u, v);
    }
  }
  Graph out = g;
  out.adjacency = build_csr(g.n, std::move(kept));
  return out;
}

}  // namespace fedais
