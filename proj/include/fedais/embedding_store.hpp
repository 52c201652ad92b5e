// Per-client historical embedding tables with staleness stamps, and the
// cross-client synchronization transaction.
//
// A table holds layers 0..L-1 (the inputs a forward pass may substitute).
// Layer 0 is a verbatim copy of raw features and is transferred for
// cross-client neighbors once, at warm start; features are static so they
// are never re-sent. Writes to one table must be serialized by the caller
// (single writer per client); a sync is applied as one transaction so no
// reader observes a node with mixed-layer freshness.
#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "fedais/common.hpp"
#include "fedais/cost_metrics.hpp"
#include "fedais/graph.hpp"

namespace fedais {

struct EmbeddingEntry {
  std::vector<double> vec;
  Stamp stamp;
};

class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(ClientId owner, std::vector<int> layer_dims)
      : owner_(owner), dims_(std::move(layer_dims)), layers_(dims_.size()) {}

  ClientId owner() const { return owner_; }
  std::size_t num_layers() const { return dims_.size(); }
  int dim(std::size_t layer) const { return dims_[layer]; }

  bool has(std::size_t layer, NodeId node) const {
    return layer < layers_.size() && layers_[layer].count(node) > 0;
  }

  const EmbeddingEntry& get(std::size_t layer, NodeId node) const {
    if (layer >= layers_.size())
      throw ContractError("embedding table: layer out of range");
    auto it = layers_[layer].find(node);
    if (it == layers_[layer].end())
      throw ContractError("embedding table: missing entry for node " + std::to_string(node) +
                          " layer " + std::to_string(layer) + " (table not warm-started?)");
    return it->second;
  }

  // Replaces an entry. Stamp regressions are rejected; an equal stamp is
  // last-writer-wins.
  void push(NodeId node, std::size_t layer, std::span<const double> vec, Stamp stamp) {
    if (layer >= layers_.size()) throw ContractError("push: layer out of range");
    if (vec.size() != static_cast<std::size_t>(dims_[layer]))
      throw ContractError("push: vector length != layer dim");
    auto it = layers_[layer].find(node);
    if (it != layers_[layer].end() && stamp < it->second.stamp)
      throw ContractError("push: stamp regression at node " + std::to_string(node) + ", have " +
                          to_string(it->second.stamp) + ", got " + to_string(stamp));
    auto& entry = layers_[layer][node];
    entry.vec.assign(vec.begin(), vec.end());
    entry.stamp = stamp;
  }

  std::size_t entry_count() const {
    std::size_t n = 0;
    for (const auto& layer : layers_) n += layer.size();
    return n;
  }

  template <typename Fn>  // fn(layer, node, entry)
  void for_each(Fn&& fn) const {
    for (std::size_t l = 0; l < layers_.size(); ++l)
      for (const auto& [node, entry] : layers_[l]) fn(l, node, entry);
  }

 private:
  ClientId owner_ = 0;
  std::vector<int> dims_;
  std::vector<std::unordered_map<NodeId, EmbeddingEntry>> layers_;
};

// Copies the owners' current stored embeddings (layers 1..L-1) for the
// requested nodes into the requester's table, stamped with the sync
// stamp. Returns the exact bytes moved: |nodes| * sum_l d^l * scalar
// bytes. Layer 0 never moves here.
inline std::uint64_t sync_cross_client(std::vector<EmbeddingTable>& tables,
                                       const Partition& partition, ClientId requester,
                                       std::span<const NodeId> nodes, Stamp stamp,
                                       CostLedger* ledger = nullptr,
                                       std::size_t bytes_per_scalar = kScalarBytes) {
  auto& dest = tables.at(requester);
  std::uint64_t bytes = 0;
  for (NodeId w : nodes) {
    ClientId source = partition.owner(w);
    if (source == requester)
      throw ContractError("sync_cross_client: node " + std::to_string(w) +
                          " is owned by the requester");
    const auto& src = tables.at(source);
    for (std::size_t l = 1; l < dest.num_layers(); ++l) {
      const auto& entry = src.get(l, w);
      dest.push(w, l, entry.vec, stamp);
      bytes += static_cast<std::uint64_t>(dest.dim(l)) * bytes_per_scalar;
    }
  }
  if (ledger) {
    ledger->charge_comm(bytes);
    ledger->note_sync();
  }
  return bytes;
}

// Histogram of staleness (local epochs since last write) over all entries.
inline std::map<std::int64_t, std::size_t> staleness_report(const EmbeddingTable& table,
                                                            Stamp now,
                                                            std::int32_t epochs_per_round) {
  std::map<std::int64_t, std::size_t> hist;
  table.for_each([&](std::size_t, NodeId, const EmbeddingEntry& e) {
    hist[now.epochs_since(e.stamp, epochs_per_round)]++;
  });
  return hist;
}

// Debug dump: {layer: {node: {"vector": [...], "stamp": [round, epoch]}}}.
inline nlohmann::json dump_table_json(const EmbeddingTable& table) {
  nlohmann::json j = nlohmann::json::object();
  table.for_each([&](std::size_t l, NodeId node, const EmbeddingEntry& e) {
    j[std::to_string(l)][std::to_string(node)] = {{"vector", e.vec},
                                                  {"stamp", {e.stamp.round, e.stamp.epoch}}};
  });
  return j;
}

}  // namespace fedais
