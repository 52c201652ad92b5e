// End-to-end federated training: server round loop, client selection,
// local updates with conditional embedding synchronization, uniform
// FedAvg aggregation, and the adaptive interval update. The baselines
// share this harness and differ only in sampler and interval policy:
//
//   fedais     importance sampling (ratio r), adaptive tau
//   fedall     all local samples,              tau = 1
//   fedrandom  uniform samples (ratio r),      tau = 1
//   fedpns     all local samples,              tau = 2
//
// Client updates execute in ascending client-id order; a sync pull sees
// the owners' latest stored entries under that serialization. A full run
// is a pure function of (config, graph, partition, seeds).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fedais/common.hpp"
#include "fedais/cost_metrics.hpp"
#include "fedais/embedding_store.hpp"
#include "fedais/graph.hpp"
#include "fedais/model.hpp"
#include "fedais/sampler.hpp"
#include "fedais/scheduler.hpp"

namespace fedais {

enum class Strategy { fedais, fedall, fedrandom, fedpns };

inline const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::fedais: return "fedais";
    case Strategy::fedall: return "fedall";
    case Strategy::fedrandom: return "fedrandom";
    case Strategy::fedpns: return "fedpns";
  }
  return "?";
}

inline Strategy strategy_from_string(const std::string& s) {
  if (s == "fedais") return Strategy::fedais;
  if (s == "fedall") return Strategy::fedall;
  if (s == "fedrandom") return Strategy::fedrandom;
  if (s == "fedpns") return Strategy::fedpns;
  throw ConfigError("unknown strategy '" + s + "'");
}

enum class Tau0Mode { fixed, avg_batch };

struct RunConfig {
  std::uint32_t clients = 5;            // K
  std::uint32_t clients_per_round = 0;  // m; 0 means all clients
  int rounds = 100;                     // T
  int local_epochs = 10;                // J
  int batch_count = 10;                 // B; batch size = ceil(n_k * r / B)
  double sample_ratio = 0.7;            // r
  double lr = 1e-3;
  double weight_decay = 1e-3;
  int tau0 = 2;
  Tau0Mode tau0_mode = Tau0Mode::fixed;
  int fixed_tau = 0;                    // 0 = strategy default (adaptive for fedais)
  std::size_t neighbor_cap = 10;        // 0 disables truncation
  Strategy strategy = Strategy::fedais;
  std::uint64_t seed = 1;
  std::uint64_t model_seed = 0;         // 0 = derived from seed
  double target_accuracy = 0.0;         // early stop; 0 disables
  std::vector<int> hidden_dims = {32};
  DelayModel delay;
  std::size_t scalar_bytes = kScalarBytes;
  bool estimate_constants = true;
  // Owners recompute requested embeddings under the round's global model
  // before transmitting, instead of sending their latest stored values.
  bool owner_recompute_on_sync = false;

  std::uint32_t effective_m() const {
    return clients_per_round == 0 ? clients : clients_per_round;
  }

  void validate() const {
    if (clients < 1) throw ParameterError("config: clients >= 1");
    if (effective_m() < 1 || effective_m() > clients)
      throw ParameterError("config: 1 <= clients_per_round <= clients");
    if (rounds < 0) throw ParameterError("config: rounds >= 0");
    if (local_epochs < 1) throw ParameterError("config: local_epochs >= 1");
    if (batch_count < 1) throw ParameterError("config: batch_count >= 1");
    if (!(sample_ratio > 0.0 && sample_ratio <= 1.0))
      throw ParameterError("config: sample_ratio in (0,1]");
    if (!(lr > 0.0)) throw ParameterError("config: lr > 0");
    if (weight_decay < 0.0) throw ParameterError("config: weight_decay >= 0");
    if (tau0 < 1) throw ParameterError("config: tau0 >= 1");
    if (fixed_tau < 0) throw ParameterError("config: fixed_tau >= 0");
    if (target_accuracy < 0.0 || target_accuracy > 1.0)
      throw ParameterError("config: target_accuracy in [0,1]");
    for (int d : hidden_dims)
      if (d < 1) throw ParameterError("config: hidden dims >= 1");
    delay.validate();
  }
};

struct RunResult {
  std::vector<RoundRecord> records;
  ModelParams final_params;
  SyncSchedule schedule;
  std::vector<SyncEvent> sync_trace;
  LedgerTotals totals;
  double lambda_hat = 0.0;   // measured loss-gradient Lipschitz estimate
  double zeta_sq_hat = 0.0;  // measured minibatch gradient variance
};

namespace detail {

struct RunState {
  const Graph* g = nullptr;
  const Partition* partition = nullptr;
  const RunConfig* cfg = nullptr;
  std::vector<EmbeddingTable> tables;
  std::vector<SamplerState> samplers;
  CostLedger ledger;
  std::vector<SyncEvent> sync_trace;
};

inline bool uses_importance(Strategy s) { return s == Strategy::fedais; }
inline bool uses_full_batch(Strategy s) {
  return s == Strategy::fedall || s == Strategy::fedpns;
}

inline int resolved_fixed_tau(const RunConfig& cfg) {
  if (cfg.fixed_tau > 0) return cfg.fixed_tau;
  switch (cfg.strategy) {
    case Strategy::fedais: return 0;  // adaptive
    case Strategy::fedall: return 1;
    case Strategy::fedrandom: return 1;
    case Strategy::fedpns: return 2;
  }
  return 0;
}

inline std::size_t batch_size_for(const SamplerState& s, const RunConfig& cfg) {
  if (uses_full_batch(cfg.strategy)) return s.size();
  auto raw = std::ceil(static_cast<double>(s.size()) * cfg.sample_ratio /
                       static_cast<double>(cfg.batch_count));
  return std::min<std::size_t>(s.size(), std::max<std::size_t>(1, static_cast<std::size_t>(raw)));
}

// One client's local update for round `t` under interval `tau`. Follows
// the per-epoch schedule: sample a batch, run the table-backed forward;
// on sync epochs (epoch % tau == 0, zero-based so the first epoch of a
// round always syncs) push the freshly computed batch embeddings and pull
// the batch's cross-client neighbors; then take the optimizer step.
inline ModelParams local_update(RunState& st, ClientId k, const ModelParams& global_params,
                                int tau, int t) {
  const auto& cfg = *st.cfg;
  const auto& g = *st.g;
  const auto& partition = *st.partition;
  ModelParams theta = global_params;
  auto& sampler = st.samplers[k];
  if (cfg.local_epochs == 0 || sampler.size() == 0) return theta;

  // Importance scores refresh once per participation, from per-node
  // losses under the freshly received global model. One forward, no
  // backward.
  if (uses_importance(cfg.strategy)) {
    NeighborCap cap{cfg.neighbor_cap, derive_seed(cfg.seed, {700, k, static_cast<std::uint64_t>(t)})};
    auto losses = client_train_losses(g, theta, st.tables[k], partition, k, sampler.nodes,
                                      cap, &st.ledger);
    update_probabilities(sampler, losses);
  }

  auto opt = make_optimizer(theta, cfg.lr, cfg.weight_decay);
  std::size_t batch_size = batch_size_for(sampler, cfg);
  int L = theta.num_layers();

  for (int j = 0; j < cfg.local_epochs; ++j) {
    auto ju = static_cast<std::uint64_t>(j);
    auto tu = static_cast<std::uint64_t>(t);
    std::vector<NodeId> batch;
    if (uses_full_batch(cfg.strategy)) {
      batch = sampler.nodes;
    } else if (uses_importance(cfg.strategy)) {
      batch = sample_batch(sampler, batch_size, derive_seed(cfg.seed, {400, k, tu, ju})).ids;
    } else {
      Rng rng(derive_seed(cfg.seed, {400, k, tu, ju}));
      for (auto i : rng.sample_indices(static_cast<std::uint32_t>(sampler.size()),
                                       static_cast<std::uint32_t>(batch_size)))
        batch.push_back(sampler.nodes[i]);
    }

    NeighborCap cap{cfg.neighbor_cap, derive_seed(cfg.seed, {500, k, tu, ju})};
    auto trace = forward_historical(g, theta, batch, st.tables[k], partition, k, cap, &st.ledger);

    if (tau >= 1 && j % tau == 0) {
      Stamp stamp{t, j};
      for (int l = 1; l <= L - 1; ++l)
        for (std::size_t i = 0; i < batch.size(); ++i) {
          // Owner-recompute requests from other clients may have advanced
          // this entry's stamp already; keep it monotone.
          Stamp have = st.tables[k].get(l, batch[i]).stamp;
          st.tables[k].push(batch[i], l, trace.H[l].row(i), std::max(have, stamp));
        }
      auto wanted = cross_client_neighbors_of(g, partition, k, batch);
      if (!wanted.empty()) {
        if (cfg.owner_recompute_on_sync) {
          // Group requested nodes by owner and have each owner refresh its
          // stored entries under the round's global model first.
          std::map<ClientId, std::vector<NodeId>> by_owner;
          for (NodeId w : wanted) by_owner[partition.owner(w)].push_back(w);
          for (auto& [q, nodes] : by_owner) {
            auto fresh = forward_historical(g, global_params, nodes, st.tables[q], partition, q,
                                            {}, &st.ledger);
            for (int l = 1; l <= L - 1; ++l)
              for (std::size_t i = 0; i < nodes.size(); ++i) {
                // An owner that already ran this round may hold newer
                // stamps; never regress them.
                Stamp have = st.tables[q].get(l, nodes[i]).stamp;
                st.tables[q].push(nodes[i], l, fresh.H[l].row(i), std::max(have, stamp));
              }
          }
        }
        sync_cross_client(st.tables, partition, k, wanted, stamp, &st.ledger, cfg.scalar_bytes);
        st.sync_trace.push_back({t, j, k, std::move(wanted), false});
      }
    }

    try {
      auto lg = loss_and_grad(theta, trace, &st.ledger);
      adam_step(theta, lg.grads, opt);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " (round " + std::to_string(t) + ", epoch " +
                         std::to_string(j) + ", client " + std::to_string(k) + ")");
    }
  }
  return theta;
}

inline std::vector<double>& data_of(Matrix& m) { return m.data(); }
inline const std::vector<double>& data_of(const Matrix& m) { return m.data(); }
inline std::vector<double>& data_of(std::vector<double>& v) { return v; }
inline const std::vector<double>& data_of(const std::vector<double>& v) { return v; }

// Unweighted mean over the participating clients' models.
inline ModelParams params_mean(const std::vector<ModelParams>& models) {
  ModelParams out = models.front();
  double inv = 1.0 / static_cast<double>(models.size());
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    auto blend = [&](auto member) {
      auto& dst = data_of(out.layers[l].*member);
      for (std::size_t i = 1; i < models.size(); ++i) {
        const auto& src = data_of(models[i].layers[l].*member);
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
      }
      for (auto& x : dst) x *= inv;
    };
    blend(&LayerParams::w_self);
    blend(&LayerParams::w_neigh);
    blend(&LayerParams::bias);
  }
  return out;
}

}  // namespace detail

// Runs warm start plus `rounds` federated rounds. Record 0 is the warm
// start round (its compute and cross-client transfer costs); records
// 1..T cover training. Early stop at target_accuracy still emits the
// final record.
inline RunResult run_training(const RunConfig& cfg, const Graph& g, const Partition& partition) {
  cfg.validate();
  if (partition.num_clients != cfg.clients)
    throw ParameterError("run_training: partition has " + std::to_string(partition.num_clients) +
                         " clients, config says " + std::to_string(cfg.clients));

  std::vector<int> dims;
  dims.push_back(static_cast<int>(g.d0));
  for (int d : cfg.hidden_dims) dims.push_back(d);
  dims.push_back(static_cast<int>(g.num_classes));

  detail::RunState st;
  st.g = &g;
  st.partition = &partition;
  st.cfg = &cfg;

  std::uint64_t model_seed = cfg.model_seed ? cfg.model_seed : derive_seed(cfg.seed, {600});
  ModelParams theta = init_params(dims, model_seed);

  st.ledger.begin_round(0);
  st.tables = warm_start(g, theta, partition, &st.ledger, &st.sync_trace, cfg.scalar_bytes);
  for (ClientId k = 0; k < cfg.clients; ++k)
    st.samplers.push_back(make_sampler_state(g, partition, k, cfg.sample_ratio));

  auto eval0 = evaluate(g, theta, Split::test);

  int tau0 = cfg.tau0;
  if (cfg.tau0_mode == Tau0Mode::avg_batch) {
    double sum_nk = 0.0;
    for (auto n : partition.train_counts) sum_nk += n;
    tau0 = std::max(1, static_cast<int>(std::llround(
                           sum_nk * cfg.batch_count / static_cast<double>(cfg.clients))));
  }
  int fixed_tau = detail::resolved_fixed_tau(cfg);
  auto schedule = make_schedule(tau0, eval0.loss);
  int tau_current = fixed_tau > 0 ? fixed_tau : tau0;
  schedule.tau_t = tau_current;

  RunResult result;
  result.schedule = schedule;

  auto emit_record = [&](int round, std::vector<int> participants, const EvalResult& ev, int tau,
                         double sim_time) {
    auto per_round = st.ledger.per_round().back();
    auto totals = st.ledger.totals();
    RoundRecord r;
    r.round = round;
    r.participants = std::move(participants);
    r.test_loss = ev.loss;
    r.test_acc = ev.accuracy;
    r.macro_f1 = ev.macro_f1;
    r.tau = tau;
    r.comp_ops = per_round.comp_ops;
    r.comm_bytes = per_round.comm_bytes;
    r.cum_comp_ops = totals.comp_ops;
    r.cum_comm_bytes = totals.comm_bytes;
    r.sync_events = per_round.sync_events;
    r.sim_time = sim_time;
    result.records.push_back(std::move(r));
  };

  emit_record(0, {}, eval0, tau_current, 0.0);

  double sim_time = 0.0;
  for (int t = 1; t <= cfg.rounds; ++t) {
    st.ledger.begin_round(t);
    Rng select_rng(derive_seed(cfg.seed, {300, static_cast<std::uint64_t>(t)}));
    auto selected = select_rng.sample_indices(cfg.clients, cfg.effective_m());

    std::vector<ModelParams> locals;
    locals.reserve(selected.size());
    for (auto k : selected)
      locals.push_back(detail::local_update(st, k, theta, tau_current, t));
    theta = detail::params_mean(locals);

    auto ev = evaluate(g, theta, Split::test);

    auto per_round = st.ledger.per_round().back();
    int syncs_per_client = (cfg.local_epochs + tau_current - 1) / tau_current;
    double round_time = cfg.local_epochs * cfg.delay.c + syncs_per_client * cfg.delay.o;
    if (cfg.delay.bandwidth > 0.0)
      round_time += static_cast<double>(per_round.comm_bytes) / cfg.delay.bandwidth;
    sim_time += round_time;

    int tau_used = tau_current;
    if (fixed_tau > 0) {
      result.schedule.history.push_back({t, ev.loss, fixed_tau});
      result.schedule.tau_t = fixed_tau;
    } else {
      tau_current = practical_tau(ev.loss, result.schedule, t);
    }

    std::vector<int> participants(selected.begin(), selected.end());
    emit_record(t, std::move(participants), ev, tau_used, sim_time);

    // Measured bound constants, once, after the first round (tables are
    // genuinely stale against theta_1 there). Diagnostics only: nothing
    // is charged.
    if (t == 1 && cfg.estimate_constants && g.n <= 200) {
      auto probe = variance_decomposition_probe(g, theta, partition, st.tables,
                                                derive_seed(cfg.seed, {800}));
      result.lambda_hat = probe.lambda_hat;
      result.zeta_sq_hat = std::max(probe.minibatch_term, 1e-12);
    }

    if (cfg.target_accuracy > 0.0 && ev.accuracy >= cfg.target_accuracy) break;
  }

  result.final_params = std::move(theta);
  result.totals = st.ledger.totals();
  result.sync_trace = std::move(st.sync_trace);
  return result;
}

// Baselines run through the same harness; the strategy field selects the
// sampler and interval policy.
inline RunResult run_baseline(const RunConfig& cfg, const Graph& g, const Partition& partition) {
  return run_training(cfg, g, partition);
}

}  // namespace fedais
