// Loss-difference importance sampling and the variance diagnostics that
// justify it.
//
// Per-node selection probabilities are the normalized absolute loss
// differences between two consecutive measurements under fresh global
// models: p_v = |delta_v| / sum |delta_v|; a client that has not measured
// twice yet (or whose deltas are all zero) samples uniformly. The update
// costs one table-backed forward pass over the client's training nodes and
// no backward pass.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "fedais/common.hpp"
#include "fedais/graph.hpp"
#include "fedais/model.hpp"
#include "fedais/rng.hpp"
#include "fedais/scheduler.hpp"

namespace fedais {

struct SamplerState {
  ClientId client = 0;
  std::vector<NodeId> nodes;       // the client's train nodes, sorted
  std::vector<double> prev_loss;   // f at the previous measurement
  std::vector<double> delta;       // |f_new - f_prev| per node
  std::vector<double> p;           // selection probabilities, sums to 1
  double ratio = 1.0;              // r_k
  bool has_prev = false;

  std::size_t size() const { return nodes.size(); }
};

inline SamplerState make_sampler_state(const Graph& g, const Partition& partition,
                                       ClientId client, double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ParameterError("sampler: ratio in (0,1]");
  SamplerState s;
  s.client = client;
  s.ratio = ratio;
  for (NodeId v : partition.local_nodes[client])
    if (g.splits[v] == Split::train) s.nodes.push_back(v);
  std::sort(s.nodes.begin(), s.nodes.end());
  s.delta.assign(s.nodes.size(), 0.0);
  if (!s.nodes.empty()) s.p.assign(s.nodes.size(), 1.0 / static_cast<double>(s.nodes.size()));
  return s;
}

// Folds a new per-node loss vector into the state. The first call only
// records losses and keeps the uniform prior.
inline void update_probabilities(SamplerState& s, std::span<const double> losses) {
  if (losses.size() != s.nodes.size())
    throw ParameterError("update_probabilities: loss vector length != n_k");
  for (double x : losses)
    if (!std::isfinite(x)) throw NumericError("update_probabilities: non-finite loss");
  if (!s.has_prev) {
    s.prev_loss.assign(losses.begin(), losses.end());
    s.has_prev = true;
    return;
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    s.delta[i] = std::abs(losses[i] - s.prev_loss[i]);
    sum += s.delta[i];
  }
  if (sum > 0.0) {
    for (std::size_t i = 0; i < losses.size(); ++i) s.p[i] = s.delta[i] / sum;
  } else {
    // Normalizing all-zero differences would divide by zero.
    s.p.assign(s.nodes.size(), 1.0 / static_cast<double>(s.nodes.size()));
  }
  s.prev_loss.assign(losses.begin(), losses.end());
}

struct BatchSample {
  std::vector<NodeId> ids;      // sorted
  std::size_t uniform_fill = 0;  // nodes drawn uniformly because p ran out of mass
};

// Weighted sampling without replacement, Efraimidis-Spirakis key method:
// draw u_v once per positive-probability node (in ascending node order)
// and keep the batch_size largest keys u_v^(1/p_v), compared as
// log(u_v)/p_v for numerical range. Ties break toward the lower node id.
// If fewer than batch_size nodes carry positive probability, the
// remainder is drawn uniformly from the zero-probability nodes and
// reported in uniform_fill.
inline BatchSample sample_batch(const SamplerState& s, std::size_t batch_size,
                                std::uint64_t seed) {
  if (batch_size < 1 || batch_size > s.nodes.size())
    throw ParameterError("sample_batch: batch size must be in [1, n_k]");
  Rng rng(seed);
  std::vector<std::pair<double, NodeId>> keys;
  std::vector<NodeId> zeros;
  keys.reserve(s.nodes.size());
  for (std::size_t i = 0; i < s.nodes.size(); ++i) {
    if (s.p[i] > 0.0) {
      double u = rng.uniform_pos();
      keys.emplace_back(std::log(u) / s.p[i], s.nodes[i]);
    } else {
      zeros.push_back(s.nodes[i]);
    }
  }
  std::sort(keys.begin(), keys.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });

  BatchSample out;
  std::size_t take = std::min(batch_size, keys.size());
  out.ids.reserve(batch_size);
  for (std::size_t i = 0; i < take; ++i) out.ids.push_back(keys[i].second);
  if (take < batch_size) {
    out.uniform_fill = batch_size - take;
    auto extra = rng.sample_indices(static_cast<std::uint32_t>(zeros.size()),
                                    static_cast<std::uint32_t>(out.uniform_fill));
    for (auto i : extra) out.ids.push_back(zeros[i]);
  }
  std::sort(out.ids.begin(), out.ids.end());
  return out;
}

// Inspection dump: node, probability, last delta.
inline void dump_probabilities_csv(const SamplerState& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("dump_probabilities_csv: cannot open " + path);
  out << "node,p,delta\n";
  for (std::size_t i = 0; i < s.nodes.size(); ++i)
    out << s.nodes[i] << ',' << format_double(s.p[i]) << ',' << format_double(s.delta[i])
        << "\n";
}

// ---------------------------------------------------------------------------
// Variance decomposition probe.
//
// Separates the two variance sources of the stochastic gradient estimator:
//   approx term    E || g~(B, table) - g(B, exact table) ||   (staleness)
//   minibatch term E || g(B, exact)  - g(V, exact)       ||   (subsampling)
// where g(., .) is the batch-mean gradient the training path computes
// (historical reads constant in backprop), summed over clients with
// weight 1/|B_k| per client and 1/n_k for the full-batch reference. Also
// evaluates the gradient-error bound: the approx term never exceeds
// lambda_hat * max_v ||h~_v - h_v|| with lambda_hat the largest observed
// gradient-difference-to-output-difference ratio.

struct VarianceProbeResult {
  double approx_term = 0.0;
  double minibatch_term = 0.0;
  double triangle_lhs = 0.0;   // E || g~(B, table) - g(V, exact) ||
  double max_output_err = 0.0;  // max_v || h~_v^(L) - h_v^(L) || over probed batches
  double lambda_hat = 0.0;
  double grad_bound = 0.0;       // lambda_hat * max_output_err
  bool grad_bound_ok = true;
  std::uint64_t forward_evals = 0;
};

inline VarianceProbeResult variance_decomposition_probe(
    const Graph& g, const ModelParams& params, const Partition& partition,
    const std::vector<EmbeddingTable>& tables, std::uint64_t seed, int num_batches = 10,
    double batch_frac = 0.5, bool full_batches = false) {
  if (g.n > 200) throw ParameterError("variance probe: exact terms need n <= 200");
  VarianceProbeResult r;

  // Exact-value tables under the current parameters.
  auto exact_tables = warm_start(g, params, partition);

  std::vector<std::vector<NodeId>> train_nodes(partition.num_clients);
  for (ClientId k = 0; k < partition.num_clients; ++k)
    for (NodeId v : partition.local_nodes[k])
      if (g.splits[v] == Split::train) train_nodes[k].push_back(v);

  // Full-batch exact-table reference, 1/n_k per client.
  Gradients g_full;
  {
    bool first = true;
    for (ClientId k = 0; k < partition.num_clients; ++k) {
      if (train_nodes[k].empty()) continue;
      auto trace = forward_historical(g, params, train_nodes[k], exact_tables[k], partition, k);
      r.forward_evals += train_nodes[k].size();
      auto lg = loss_and_grad(params, trace);
      if (first) {
        g_full = std::move(lg.grads);
        first = false;
      } else {
        grad_add(g_full, lg.grads);
      }
    }
    if (first) throw ParameterError("variance probe: no train nodes");
  }

  for (int b = 0; b < num_batches; ++b) {
    Gradients g_tilde, g_exact;
    double batch_err = 0.0;
    bool first = true;
    for (ClientId k = 0; k < partition.num_clients; ++k) {
      if (train_nodes[k].empty()) continue;
      std::vector<NodeId> batch;
      if (full_batches) {
        batch = train_nodes[k];
      } else {
        auto n = static_cast<std::uint32_t>(train_nodes[k].size());
        auto m = std::max<std::uint32_t>(
            1, static_cast<std::uint32_t>(std::ceil(batch_frac * n)));
        Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(b), k}));
        for (auto i : rng.sample_indices(n, m)) batch.push_back(train_nodes[k][i]);
      }
      auto trace = forward_historical(g, params, batch, tables[k], partition, k);
      auto exact_trace = forward_historical(g, params, batch, exact_tables[k], partition, k);
      r.forward_evals += 2 * batch.size();
      for (std::size_t i = 0; i < batch.size(); ++i)
        batch_err = std::max(batch_err, l2_dist(trace.logits().row(i),
                                                exact_trace.logits().row(i)));
      auto gt = loss_and_grad(params, trace).grads;
      auto ge = loss_and_grad(params, exact_trace).grads;
      if (first) {
        g_tilde = std::move(gt);
        g_exact = std::move(ge);
        first = false;
      } else {
        grad_add(g_tilde, gt);
        grad_add(g_exact, ge);
      }
    }
    double approx = grad_dist(g_tilde, g_exact);
    r.approx_term += approx;
    r.minibatch_term += grad_dist(g_exact, g_full);
    r.triangle_lhs += grad_dist(g_tilde, g_full);
    r.max_output_err = std::max(r.max_output_err, batch_err);
    if (batch_err > 1e-12) r.lambda_hat = std::max(r.lambda_hat, approx / batch_err);
  }
  r.approx_term /= num_batches;
  r.minibatch_term /= num_batches;
  r.triangle_lhs /= num_batches;
  r.grad_bound = gradient_error_bound(r.lambda_hat, r.max_output_err);
  r.grad_bound_ok = r.approx_term <= r.grad_bound + 1e-12;
  return r;
}

// ---------------------------------------------------------------------------
// Output-error bound probe.
//
// Measures, for every client's full train batch, the historical-estimator
// output error against the exact forward, and instantiates the bound
//   sum_l (alpha1*alpha2*|N(v)|)^(L-l) * eps_l
// with measured constants: alpha1 from activation difference ratios,
// alpha2 as the largest observed per-layer transition gain (output error
// over alpha1 * |N(v)| * worst input error), eps_l the largest staleness
// error among layer-l table reads.

struct OutputBoundProbeResult {
  double alpha1_hat = 1.0;
  double alpha2_hat = 0.0;
  std::vector<double> layer_err;   // eps_l for l = 1..L-1
  double max_ratio = 0.0;          // max_v measured / bound over nodes with positive bound
  double max_output_err = 0.0;
  bool satisfied = true;
};

inline OutputBoundProbeResult output_bound_probe(const Graph& g, const ModelParams& params,
                                                 const Partition& partition,
                                                 const std::vector<EmbeddingTable>& tables) {
  int L = params.num_layers();
  OutputBoundProbeResult r;
  r.layer_err.assign(std::max(0, L - 1), 0.0);
  std::vector<Matrix> exact_z;
  auto exact = full_layer_embeddings(g, params, L, nullptr, &exact_z);

  // Worst staleness error of the table entries a layer may substitute.
  for (ClientId k = 0; k < partition.num_clients; ++k) {
    tables[k].for_each([&](std::size_t l, NodeId node, const EmbeddingEntry& e) {
      if (l == 0) return;
      r.layer_err[l - 1] =
          std::max(r.layer_err[l - 1], l2_dist(e.vec, exact[l].row(node)));
    });
  }

  struct Observation {
    double out_err;
    double in_err;
    double fan_in;
  };
  std::vector<Observation> obs;
  std::vector<double> per_node_err(g.n, 0.0);

  r.alpha1_hat = 0.0;
  for (ClientId k = 0; k < partition.num_clients; ++k) {
    std::vector<NodeId> batch;
    for (NodeId v : partition.local_nodes[k])
      if (g.splits[v] == Split::train) batch.push_back(v);
    if (batch.empty()) continue;
    auto trace = forward_historical(g, params, batch, tables[k], partition, k);

    for (int l = 1; l <= L; ++l) {
      for (std::size_t i = 0; i < trace.fresh[l].size(); ++i) {
        NodeId v = trace.fresh[l][i];
        // Activation Lipschitz ratio on the observed pre-activation pair.
        double dz = l2_dist(trace.Z[l].row(i), exact_z[l].row(v));
        double dh = l2_dist(trace.H[l].row(i), exact[l].row(v));
        if (dz > 1e-12) r.alpha1_hat = std::max(r.alpha1_hat, dh / dz);

        double out_err = dh;
        if (l == L) {
          per_node_err[v] = out_err;
          r.max_output_err = std::max(r.max_output_err, out_err);
        }
        const auto& nv = trace.nbrs[l][i];
        if (nv.empty()) continue;
        double in_err = l2_dist(trace.self_in[l].row(i), exact[l - 1].row(v));
        for (NodeId w : nv) {
          // The value the forward actually used for w.
          std::span<const double> used;
          if (l == 1) {
            used = g.features.row(w);
          } else {
            std::int32_t row = trace.row_of[l - 1][w];
            used = row >= 0 ? trace.H[l - 1].row(static_cast<std::size_t>(row))
                            : std::span<const double>(
                                  tables[k].get(static_cast<std::size_t>(l - 1), w).vec);
          }
          in_err = std::max(in_err, l2_dist(used, exact[l - 1].row(w)));
        }
        obs.push_back({out_err, in_err, static_cast<double>(nv.size())});
      }
    }
  }
  if (r.alpha1_hat <= 0.0) r.alpha1_hat = 1.0;  // nothing differed; activation gain moot

  // alpha2: smallest per-layer gain that dominates every observed
  // transition, out_err <= alpha1 * alpha2 * fan_in * in_err.
  r.alpha2_hat = 1e-9;
  for (const auto& o : obs)
    if (o.in_err > 1e-12)
      r.alpha2_hat = std::max(r.alpha2_hat, o.out_err / (r.alpha1_hat * o.fan_in * o.in_err));

  for (NodeId v = 0; v < g.n; ++v) {
    if (per_node_err[v] <= 1e-15) continue;
    double deg = static_cast<double>(g.adjacency.degree(v));
    double bound = output_error_bound(r.alpha1_hat, r.alpha2_hat, deg, L, r.layer_err);
    if (bound <= 0.0) {
      r.satisfied = false;
      continue;
    }
    r.max_ratio = std::max(r.max_ratio, per_node_err[v] / bound);
  }
  if (r.max_ratio > 1.0 + 1e-9) r.satisfied = false;
  return r;
}

}  // namespace fedais
