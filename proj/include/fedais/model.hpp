// Mean-aggregator GCN: exact recursive forward, historical-table forward,
// softmax cross-entropy with hand-derived backpropagation, Adam, and
// server-side evaluation.
//
// Layer rule for node v (1-based layers, act = ReLU below the top layer,
// identity at the top):
//   h_v^(l) = act( h_v^(l-1) W_self + mean_{w in N(v)} in_w^(l-1) W_neigh + b )
// where in_w is the fresh value when w was computed this pass and the
// stored historical value otherwise. Historical reads are constants in
// backpropagation: they come out of storage, nothing flows into them.
// Isolated nodes use a zero neighbor-mean term.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "fedais/common.hpp"
#include "fedais/cost_metrics.hpp"
#include "fedais/embedding_store.hpp"
#include "fedais/graph.hpp"
#include "fedais/matrix.hpp"
#include "fedais/rng.hpp"

namespace fedais {

// ---------------------------------------------------------------------------
// Parameters, gradients, optimizer.

struct LayerParams {
  Matrix w_self;   // d^(l-1) x d^l
  Matrix w_neigh;  // d^(l-1) x d^l
  std::vector<double> bias;  // d^l

  bool operator==(const LayerParams&) const = default;
};

struct ModelParams {
  std::vector<int> dims;  // [d0, d1, ..., dL]; dL = num_classes
  std::vector<LayerParams> layers;

  int num_layers() const { return static_cast<int>(layers.size()); }

  void validate() const {
    if (dims.size() != layers.size() + 1) throw ParameterError("params: dims/layers mismatch");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& lp = layers[l];
      auto din = static_cast<std::size_t>(dims[l]), dout = static_cast<std::size_t>(dims[l + 1]);
      if (lp.w_self.rows() != din || lp.w_self.cols() != dout ||
          lp.w_neigh.rows() != din || lp.w_neigh.cols() != dout || lp.bias.size() != dout)
        throw ParameterError("params: layer " + std::to_string(l) + " shape");
      if (!lp.w_self.all_finite() || !lp.w_neigh.all_finite())
        throw NumericError("params: non-finite weight");
    }
  }

  bool operator==(const ModelParams&) const = default;
};

struct Gradients {
  std::vector<LayerParams> layers;  // same shapes as the model weights

  bool operator==(const Gradients&) const = default;
};

inline Gradients zero_gradients(const ModelParams& p) {
  Gradients g;
  g.layers.reserve(p.layers.size());
  for (const auto& lp : p.layers) {
    LayerParams z;
    z.w_self = Matrix(lp.w_self.rows(), lp.w_self.cols());
    z.w_neigh = Matrix(lp.w_neigh.rows(), lp.w_neigh.cols());
    z.bias.assign(lp.bias.size(), 0.0);
    g.layers.push_back(std::move(z));
  }
  return g;
}

inline void grad_add(Gradients& a, const Gradients& b, double scale = 1.0) {
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    auto& x = a.layers[l];
    const auto& y = b.layers[l];
    for (std::size_t i = 0; i < x.w_self.data().size(); ++i)
      x.w_self.data()[i] += scale * y.w_self.data()[i];
    for (std::size_t i = 0; i < x.w_neigh.data().size(); ++i)
      x.w_neigh.data()[i] += scale * y.w_neigh.data()[i];
    for (std::size_t i = 0; i < x.bias.size(); ++i) x.bias[i] += scale * y.bias[i];
  }
}

inline std::vector<double> grad_flatten(const Gradients& g) {
  std::vector<double> out;
  for (const auto& lp : g.layers) {
    out.insert(out.end(), lp.w_self.data().begin(), lp.w_self.data().end());
    out.insert(out.end(), lp.w_neigh.data().begin(), lp.w_neigh.data().end());
    out.insert(out.end(), lp.bias.begin(), lp.bias.end());
  }
  return out;
}

inline double grad_norm(const Gradients& g) { return l2_norm(grad_flatten(g)); }

inline double grad_dist(const Gradients& a, const Gradients& b) {
  return l2_dist(grad_flatten(a), grad_flatten(b));
}

inline std::vector<double> params_flatten(const ModelParams& p) {
  std::vector<double> out;
  for (const auto& lp : p.layers) {
    out.insert(out.end(), lp.w_self.data().begin(), lp.w_self.data().end());
    out.insert(out.end(), lp.w_neigh.data().begin(), lp.w_neigh.data().end());
    out.insert(out.end(), lp.bias.begin(), lp.bias.end());
  }
  return out;
}

inline double params_dist(const ModelParams& a, const ModelParams& b) {
  return l2_dist(params_flatten(a), params_flatten(b));
}

// Glorot-uniform weights, zero bias.
inline ModelParams init_params(const std::vector<int>& dims, std::uint64_t seed) {
  if (dims.size() < 2) throw ParameterError("init_params: need at least one layer");
  ModelParams p;
  p.dims = dims;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Rng rng(derive_seed(seed, {100, l}));
    auto din = static_cast<std::size_t>(dims[l]), dout = static_cast<std::size_t>(dims[l + 1]);
    double limit = std::sqrt(6.0 / static_cast<double>(din + dout));
    LayerParams lp;
    lp.w_self = Matrix(din, dout);
    lp.w_neigh = Matrix(din, dout);
    for (auto& v : lp.w_self.data()) v = rng.uniform(-limit, limit);
    for (auto& v : lp.w_neigh.data()) v = rng.uniform(-limit, limit);
    lp.bias.assign(dout, 0.0);
    p.layers.push_back(std::move(lp));
  }
  return p;
}

struct OptimizerState {
  double lr = 1e-3;
  double weight_decay = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<LayerParams> m;  // first moments, weight shapes
  std::vector<LayerParams> v;  // second moments
};

inline OptimizerState make_optimizer(const ModelParams& p, double lr, double weight_decay) {
  OptimizerState s;
  s.lr = lr;
  s.weight_decay = weight_decay;
  s.m = zero_gradients(p).layers;
  s.v = zero_gradients(p).layers;
  return s;
}

// One Adam step with decoupled weight decay (decay is not folded into the
// moment estimates). Increments the step counter exactly once.
inline void adam_step(ModelParams& params, const Gradients& grads, OptimizerState& st) {
  if (params.layers.size() != grads.layers.size())
    throw ParameterError("adam_step: gradient shape mismatch");
  st.step += 1;
  double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  auto update = [&](std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                    std::vector<double>& v) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g[i];
      v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      p[i] -= st.lr * (mhat / (std::sqrt(vhat) + st.eps) + st.weight_decay * p[i]);
    }
  };
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    update(params.layers[l].w_self.data(), grads.layers[l].w_self.data(),
           st.m[l].w_self.data(), st.v[l].w_self.data());
    update(params.layers[l].w_neigh.data(), grads.layers[l].w_neigh.data(),
           st.m[l].w_neigh.data(), st.v[l].w_neigh.data());
    update(params.layers[l].bias, grads.layers[l].bias, st.m[l].bias, st.v[l].bias);
  }
}

// ---------------------------------------------------------------------------
// Forward passes.

// Optional uniform neighbor truncation. cap == 0 disables it. The sampled
// set for a node is a pure function of (seed, node), so one forward pass
// sees a consistent neighborhood across layers.
struct NeighborCap {
  std::size_t cap = 0;
  std::uint64_t seed = 0;
};

class NeighborProvider {
 public:
  NeighborProvider(const Graph& g, NeighborCap cap) : g_(g), cap_(cap) {}

  const std::vector<NodeId>& get(NodeId v) {
    auto it = memo_.find(v);
    if (it != memo_.end()) return it->second;
    auto nbrs = g_.adjacency.neighbors_of(v);
    std::vector<NodeId> out;
    if (cap_.cap == 0 || nbrs.size() <= cap_.cap) {
      out.assign(nbrs.begin(), nbrs.end());
    } else {
      Rng rng(derive_seed(cap_.seed, {200, v}));
      auto idx = rng.sample_indices(static_cast<std::uint32_t>(nbrs.size()),
                                    static_cast<std::uint32_t>(cap_.cap));
      out.reserve(idx.size());
      for (auto i : idx) out.push_back(nbrs[i]);
    }
    return memo_.emplace(v, std::move(out)).first->second;
  }

 private:
  const Graph& g_;
  NeighborCap cap_;
  std::unordered_map<NodeId, std::vector<NodeId>> memo_;
};

// One historical-table read (layers >= 1 only; layer-0 reads are raw
// features and always exact).
struct HistAccess {
  int layer = 0;
  NodeId node = 0;
  Stamp stamp;
  bool cross_client = false;
};

// Everything a forward pass computed, retained for backpropagation.
// fresh[l] lists the nodes whose layer-l value was computed this pass
// (gradients flow only through those); H[l]/Z[l] rows follow fresh[l].
struct ForwardTrace {
  const Graph* graph = nullptr;
  std::vector<int> dims;
  std::vector<std::vector<NodeId>> fresh;        // [0..L], fresh[0] unused
  std::vector<std::vector<std::int32_t>> row_of; // [0..L], node -> row or -1
  std::vector<Matrix> Z, H;                      // [0..L], valid for l >= 1
  std::vector<Matrix> self_in, neigh_mean;       // [0..L], inputs of layer l
  std::vector<std::vector<std::vector<NodeId>>> nbrs;  // [l][row] neighbors used
  std::vector<HistAccess> hist_reads;

  int num_layers() const { return static_cast<int>(dims.size()) - 1; }
  const std::vector<NodeId>& batch() const { return fresh.back(); }
  const Matrix& logits() const { return H.back(); }
};

namespace detail {

struct ForwardInputs {
  const EmbeddingTable* table = nullptr;   // null for the exact pass
  const Partition* partition = nullptr;
  ClientId client = 0;
};

inline ForwardTrace compute_trace(const Graph& g, const ModelParams& params,
                                  std::vector<std::vector<NodeId>> fresh_sets,
                                  const ForwardInputs& in, NeighborCap cap,
                                  CostLedger* ledger) {
  params.validate();
  if (static_cast<std::uint32_t>(params.dims[0]) != g.d0)
    throw ParameterError("forward: graph d0 != params dims[0]");
  int L = params.num_layers();

  ForwardTrace t;
  t.graph = &g;
  t.dims = params.dims;
  t.fresh = std::move(fresh_sets);
  t.row_of.assign(L + 1, {});
  t.Z.resize(L + 1);
  t.H.resize(L + 1);
  t.self_in.resize(L + 1);
  t.neigh_mean.resize(L + 1);
  t.nbrs.resize(L + 1);
  for (int l = 1; l <= L; ++l) {
    t.row_of[l].assign(g.n, -1);
    for (std::size_t i = 0; i < t.fresh[l].size(); ++i)
      t.row_of[l][t.fresh[l][i]] = static_cast<std::int32_t>(i);
  }

  NeighborProvider nbrs(g, cap);

  // Layer-(l-1) value of node x, copied into dst.
  auto gather = [&](int l, NodeId x, std::span<double> dst) {
    if (l == 1) {
      std::span<const double> src;
      if (in.table) {
        src = in.table->get(0, x).vec;  // bit-equal to features per invariant
      } else {
        src = g.features.row(x);
      }
      std::copy(src.begin(), src.end(), dst.begin());
      return;
    }
    std::int32_t row = t.row_of[l - 1][x];
    if (row >= 0) {
      auto src = t.H[l - 1].row(static_cast<std::size_t>(row));
      std::copy(src.begin(), src.end(), dst.begin());
      return;
    }
    if (!in.table)
      throw ContractError("exact forward: node outside receptive field");
    const auto& entry = in.table->get(static_cast<std::size_t>(l - 1), x);
    std::copy(entry.vec.begin(), entry.vec.end(), dst.begin());
    t.hist_reads.push_back({l - 1, x, entry.stamp,
                            in.partition && in.partition->owner(x) != in.client});
  };

  std::vector<double> buf;
  for (int l = 1; l <= L; ++l) {
    const auto& nodes = t.fresh[l];
    auto din = static_cast<std::size_t>(params.dims[l - 1]);
    auto dout = static_cast<std::size_t>(params.dims[l]);
    Matrix self(nodes.size(), din), nmean(nodes.size(), din);
    t.nbrs[l].resize(nodes.size());
    buf.resize(din);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      NodeId v = nodes[i];
      gather(l, v, self.row(i));
      const auto& nv = nbrs.get(v);
      t.nbrs[l][i] = nv;
      if (!nv.empty()) {
        auto acc = nmean.row(i);
        for (NodeId w : nv) {
          gather(l, w, buf);
          for (std::size_t j = 0; j < din; ++j) acc[j] += buf[j];
        }
        double inv = 1.0 / static_cast<double>(nv.size());
        for (std::size_t j = 0; j < din; ++j) acc[j] *= inv;
      }
    }
    Matrix z(nodes.size(), dout);
    add_matmul(z, self, params.layers[l - 1].w_self);
    add_matmul(z, nmean, params.layers[l - 1].w_neigh);
    add_row_broadcast(z, params.layers[l - 1].bias);
    Matrix h = z;
    if (l < L)
      for (auto& x : h.data()) x = x > 0.0 ? x : 0.0;
    t.self_in[l] = std::move(self);
    t.neigh_mean[l] = std::move(nmean);
    t.Z[l] = std::move(z);
    t.H[l] = std::move(h);
    charge_compute(ledger, nodes.size());
  }
  if (ledger) ledger->note_forward();
  return t;
}

}  // namespace detail

// Exact recursive forward: computes every embedding the batch transitively
// depends on. Cost grows with the receptive field, unlike the table-backed
// pass.
inline ForwardTrace forward_exact(const Graph& g, const ModelParams& params,
                                  std::span<const NodeId> nodes, NeighborCap cap = {},
                                  CostLedger* ledger = nullptr) {
  if (nodes.empty()) throw ParameterError("forward_exact: empty node list");
  int L = params.num_layers();
  NeighborProvider nbrs(g, cap);

  std::vector<std::vector<NodeId>> sets(L + 1);
  sets[L].assign(nodes.begin(), nodes.end());
  std::sort(sets[L].begin(), sets[L].end());
  sets[L].erase(std::unique(sets[L].begin(), sets[L].end()), sets[L].end());
  for (int l = L - 1; l >= 1; --l) {
    std::vector<NodeId> s = sets[l + 1];
    for (NodeId v : sets[l + 1])
      for (NodeId w : nbrs.get(v)) s.push_back(w);
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    sets[l] = std::move(s);
  }
  // The same cap seed is passed down so both expansions sample identical
  // neighborhoods.
  return detail::compute_trace(g, params, std::move(sets), {}, cap, ledger);
}

// Historical-estimator forward: fresh values for in-batch nodes at every
// layer, stored values for everything else. Does not mutate the table.
inline ForwardTrace forward_historical(const Graph& g, const ModelParams& params,
                                       std::span<const NodeId> batch,
                                       const EmbeddingTable& table, const Partition& partition,
                                       ClientId client, NeighborCap cap = {},
                                       CostLedger* ledger = nullptr) {
  if (batch.empty()) throw ParameterError("forward_historical: empty batch");
  int L = params.num_layers();
  if (table.num_layers() != static_cast<std::size_t>(L))
    throw ContractError("forward_historical: table has " + std::to_string(table.num_layers()) +
                        " layers, model needs " + std::to_string(L));
  for (int l = 0; l < L; ++l)
    if (table.dim(l) != params.dims[l])
      throw ContractError("forward_historical: table layer " + std::to_string(l) +
                          " has dim " + std::to_string(table.dim(l)) + ", model needs " +
                          std::to_string(params.dims[l]));
  std::vector<std::vector<NodeId>> sets(L + 1);
  for (int l = 1; l <= L; ++l) sets[l].assign(batch.begin(), batch.end());
  detail::ForwardInputs in;
  in.table = &table;
  in.partition = &partition;
  in.client = client;
  return detail::compute_trace(g, params, std::move(sets), in, cap, ledger);
}

// ---------------------------------------------------------------------------
// Loss and gradients.

struct LossGrad {
  double loss = 0.0;
  Gradients grads;
  std::vector<double> per_node_loss;  // aligned with trace.batch()
};

inline std::vector<double> softmax_row(std::span<const double> logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    p[j] = std::exp(logits[j] - mx);
    sum += p[j];
  }
  for (auto& v : p) v /= sum;
  return p;
}

// Mean softmax cross-entropy over the batch, no backward pass. Used where
// only losses are needed (probability updates cost one forward).
inline std::vector<double> per_node_losses(const ForwardTrace& t) {
  const auto& batch = t.batch();
  const Matrix& logits = t.logits();
  std::vector<double> out(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto row = logits.row(i);
    for (double v : row)
      if (!std::isfinite(v)) throw NumericError("per_node_losses: non-finite logit");
    auto p = softmax_row(row);
    out[i] = -std::log(std::max(p[t.graph->labels[batch[i]]], 1e-300));
  }
  return out;
}

// Batch-mean loss and gradients by backpropagation through the trace.
// Gradients flow only through values the pass computed; historical reads
// are constants.
inline LossGrad loss_and_grad(const ModelParams& params, const ForwardTrace& t,
                              CostLedger* ledger = nullptr) {
  int L = t.num_layers();
  const auto& batch = t.batch();
  auto bsz = batch.size();
  auto num_classes = static_cast<std::size_t>(t.dims[L]);

  LossGrad out;
  out.grads = zero_gradients(params);
  out.per_node_loss.resize(bsz);

  Matrix dZ(bsz, num_classes);
  for (std::size_t i = 0; i < bsz; ++i) {
    auto row = t.logits().row(i);
    for (double v : row)
      if (!std::isfinite(v)) throw NumericError("loss_and_grad: non-finite logit");
    auto p = softmax_row(row);
    std::uint32_t y = t.graph->labels[batch[i]];
    out.per_node_loss[i] = -std::log(std::max(p[y], 1e-300));
    out.loss += out.per_node_loss[i];
    for (std::size_t j = 0; j < num_classes; ++j)
      dZ(i, j) = (p[j] - (j == y ? 1.0 : 0.0)) / static_cast<double>(bsz);
  }
  out.loss /= static_cast<double>(bsz);

  for (int l = L; l >= 1; --l) {
    auto& layer_grads = out.grads.layers[l - 1];
    add_matmul_tn(layer_grads.w_self, t.self_in[l], dZ);
    add_matmul_tn(layer_grads.w_neigh, t.neigh_mean[l], dZ);
    auto bias = col_sums(dZ);
    for (std::size_t j = 0; j < bias.size(); ++j) layer_grads.bias[j] += bias[j];
    if (l == 1) break;

    auto din = static_cast<std::size_t>(t.dims[l - 1]);
    Matrix d_self(dZ.rows(), din), d_nei(dZ.rows(), din);
    add_matmul_nt(d_self, dZ, params.layers[l - 1].w_self);
    add_matmul_nt(d_nei, dZ, params.layers[l - 1].w_neigh);

    Matrix dH(t.fresh[l - 1].size(), din);
    for (std::size_t i = 0; i < t.fresh[l].size(); ++i) {
      NodeId v = t.fresh[l][i];
      std::int32_t row = t.row_of[l - 1][v];
      if (row >= 0)
        for (std::size_t j = 0; j < din; ++j) dH(row, j) += d_self(i, j);
      const auto& nv = t.nbrs[l][i];
      if (nv.empty()) continue;
      double inv = 1.0 / static_cast<double>(nv.size());
      for (NodeId w : nv) {
        std::int32_t wrow = t.row_of[l - 1][w];
        if (wrow < 0) continue;  // historical input: constant
        for (std::size_t j = 0; j < din; ++j) dH(wrow, j) += inv * d_nei(i, j);
      }
    }
    // ReLU mask of the producing layer.
    dZ = std::move(dH);
    for (std::size_t i = 0; i < dZ.rows(); ++i)
      for (std::size_t j = 0; j < dZ.cols(); ++j)
        if (t.Z[l - 1](i, j) <= 0.0) dZ(i, j) = 0.0;
  }
  if (ledger) ledger->note_backward();
  return out;
}

// ---------------------------------------------------------------------------
// Full-graph embeddings, evaluation, warm start.

// Layer matrices 0..max_layer for every node, exact recursion (index 0 is
// the raw features). pre_act, when given, receives the pre-activation of
// each computed layer.
inline std::vector<Matrix> full_layer_embeddings(const Graph& g, const ModelParams& params,
                                                 int max_layer, CostLedger* ledger = nullptr,
                                                 std::vector<Matrix>* pre_act = nullptr) {
  params.validate();
  if (static_cast<std::uint32_t>(params.dims[0]) != g.d0)
    throw ParameterError("full_layer_embeddings: graph d0 != params dims[0]");
  int L = params.num_layers();
  if (max_layer > L) throw ParameterError("full_layer_embeddings: layer out of range");
  std::vector<Matrix> h(max_layer + 1);
  if (pre_act) pre_act->assign(max_layer + 1, {});
  h[0] = g.features;
  for (int l = 1; l <= max_layer; ++l) {
    auto din = static_cast<std::size_t>(params.dims[l - 1]);
    Matrix nmean(g.n, din);
    for (NodeId v = 0; v < g.n; ++v) {
      auto nv = g.adjacency.neighbors_of(v);
      if (nv.empty()) continue;
      auto acc = nmean.row(v);
      for (NodeId w : nv) {
        auto src = h[l - 1].row(w);
        for (std::size_t j = 0; j < din; ++j) acc[j] += src[j];
      }
      double inv = 1.0 / static_cast<double>(nv.size());
      for (std::size_t j = 0; j < din; ++j) acc[j] *= inv;
    }
    Matrix z(g.n, static_cast<std::size_t>(params.dims[l]));
    add_matmul(z, h[l - 1], params.layers[l - 1].w_self);
    add_matmul(z, nmean, params.layers[l - 1].w_neigh);
    add_row_broadcast(z, params.layers[l - 1].bias);
    if (pre_act) (*pre_act)[l] = z;
    if (l < L)
      for (auto& x : z.data()) x = x > 0.0 ? x : 0.0;
    h[l] = std::move(z);
    charge_compute(ledger, g.n);
  }
  if (ledger) ledger->note_forward();
  return h;
}

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<std::uint32_t> predictions;  // aligned with the split's nodes
};

// Server-side exact evaluation over the full graph. Argmax ties break to
// the lowest class index. Read-only.
inline EvalResult evaluate(const Graph& g, const ModelParams& params, Split split) {
  auto nodes = g.split_nodes(split);
  if (nodes.empty()) throw ParameterError("evaluate: empty split");
  auto h = full_layer_embeddings(g, params, params.num_layers());
  const Matrix& logits = h.back();

  EvalResult r;
  std::vector<std::uint32_t> truth;
  truth.reserve(nodes.size());
  for (NodeId v : nodes) {
    auto row = logits.row(v);
    for (double x : row)
      if (!std::isfinite(x)) throw NumericError("evaluate: non-finite logit");
    auto p = softmax_row(row);
    r.loss += -std::log(std::max(p[g.labels[v]], 1e-300));
    std::uint32_t best = 0;
    for (std::uint32_t j = 1; j < row.size(); ++j)
      if (row[j] > row[best]) best = j;
    r.predictions.push_back(best);
    truth.push_back(g.labels[v]);
  }
  r.loss /= static_cast<double>(nodes.size());
  r.accuracy = accuracy(truth, r.predictions);
  r.macro_f1 = macro_f1(g.num_classes, truth, r.predictions);
  return r;
}

// ---------------------------------------------------------------------------
// Warm start.

// Sorted cross-client neighbors of a client's local nodes.
inline std::vector<NodeId> cross_client_neighbors(const Graph& g, const Partition& p,
                                                  ClientId client) {
  std::vector<NodeId> out;
  for (NodeId v : p.local_nodes[client])
    for (NodeId w : g.adjacency.neighbors_of(v))
      if (p.owner(w) != client) out.push_back(w);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// Cross-client neighbors of one batch only.
inline std::vector<NodeId> cross_client_neighbors_of(const Graph& g, const Partition& p,
                                                     ClientId client,
                                                     std::span<const NodeId> batch) {
  std::vector<NodeId> out;
  for (NodeId v : batch)
    for (NodeId w : g.adjacency.neighbors_of(v))
      if (p.owner(w) != client) out.push_back(w);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// One cross-client embedding movement, kept for post-run accounting
// checks. Warm-start transfers move layers 0..L-1, regular syncs 1..L-1.
struct SyncEvent {
  int round = 0;
  int epoch = 0;
  ClientId client = 0;
  std::vector<NodeId> nodes;
  bool warm = false;
};

// One exact pass over the whole graph seeds every client's table (layers
// 0..L-1, stamp (0,0)) for its local nodes and cross-client neighbors.
// Only cross-client entries cost communication; local entries are local.
inline std::vector<EmbeddingTable> warm_start(const Graph& g, const ModelParams& params,
                                              const Partition& partition,
                                              CostLedger* ledger = nullptr,
                                              std::vector<SyncEvent>* sync_trace = nullptr,
                                              std::size_t bytes_per_scalar = kScalarBytes) {
  int L = params.num_layers();
  auto h = full_layer_embeddings(g, params, L - 1, ledger);
  std::vector<int> table_dims(params.dims.begin(), params.dims.begin() + L);

  std::vector<EmbeddingTable> tables;
  tables.reserve(partition.num_clients);
  std::uint64_t per_node_bytes = 0;
  for (int l = 0; l < L; ++l)
    per_node_bytes += static_cast<std::uint64_t>(params.dims[l]) * bytes_per_scalar;

  for (ClientId k = 0; k < partition.num_clients; ++k) {
    EmbeddingTable table(k, table_dims);
    for (NodeId v : partition.local_nodes[k])
      for (int l = 0; l < L; ++l) table.push(v, l, h[l].row(v), Stamp{0, 0});
    auto cross = cross_client_neighbors(g, partition, k);
    for (NodeId w : cross)
      for (int l = 0; l < L; ++l) table.push(w, l, h[l].row(w), Stamp{0, 0});
    charge_comm(ledger, per_node_bytes * cross.size());
    if (sync_trace && !cross.empty())
      sync_trace->push_back({0, 0, k, std::move(cross), true});
    tables.push_back(std::move(table));
  }
  return tables;
}

// Per-node training losses for a client under the current model: one
// table-backed forward over the given nodes, no backward pass.
inline std::vector<double> client_train_losses(const Graph& g, const ModelParams& params,
                                               const EmbeddingTable& table,
                                               const Partition& partition, ClientId client,
                                               std::span<const NodeId> nodes,
                                               NeighborCap cap = {},
                                               CostLedger* ledger = nullptr) {
  auto trace = forward_historical(g, params, nodes, table, partition, client, cap, ledger);
  return per_node_losses(trace);
}

// ---------------------------------------------------------------------------
// Checkpoints.

inline constexpr int kCheckpointVersion = 1;

inline void save_params(const ModelParams& p, const std::string& path) {
  nlohmann::json j;
  j["version"] = kCheckpointVersion;
  j["dims"] = p.dims;
  auto layers = nlohmann::json::array();
  for (const auto& lp : p.layers)
    layers.push_back({{"w_self", lp.w_self.data()},
                      {"w_neigh", lp.w_neigh.data()},
                      {"bias", lp.bias}});
  j["layers"] = std::move(layers);
  std::ofstream out(path);
  if (!out) throw IoError("save_params: cannot open " + path);
  out << j.dump() << "\n";
}

inline ModelParams load_params(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_params: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  if (j.at("version").get<int>() != kCheckpointVersion)
    throw ConfigError("load_params: unsupported checkpoint version");
  ModelParams p;
  p.dims = j.at("dims").get<std::vector<int>>();
  for (std::size_t l = 0; l + 1 < p.dims.size(); ++l) {
    const auto& lj = j.at("layers").at(l);
    LayerParams lp;
    auto din = static_cast<std::size_t>(p.dims[l]), dout = static_cast<std::size_t>(p.dims[l + 1]);
    lp.w_self = Matrix(din, dout);
    lp.w_self.data() = lj.at("w_self").get<std::vector<double>>();
    lp.w_neigh = Matrix(din, dout);
    lp.w_neigh.data() = lj.at("w_neigh").get<std::vector<double>>();
    lp.bias = lj.at("bias").get<std::vector<double>>();
    p.layers.push_back(std::move(lp));
  }
  p.validate();
  return p;
}

}  // namespace fedais
