#include <catch2/catch_amalgamated.hpp>

#include <vector>

#include "fedais/model.hpp"

using namespace fedais;

namespace {

struct Fixture {
  Graph g;
  Partition partition;
  ModelParams params;

  Fixture()
      : g(generate_sbm(50, 3, 0.15, 0.05, 4, 19)),
        partition(partition_iid(g, 3, 23)),
        params(init_params({4, 6, 3}, 29)) {}
};

}  // namespace

TEST_CASE("warm start seeds exact embeddings everywhere") {
  Fixture f;
  CostLedger ledger;
  ledger.begin_round(0);
  std::vector<SyncEvent> trace;
  auto tables = warm_start(f.g, f.params, f.partition, &ledger, &trace);

  SECTION("layer-0 entries equal raw features") {
    for (const auto& t : tables)
      t.for_each([&](std::size_t l, NodeId v, const EmbeddingEntry& e) {
        if (l != 0) return;
        REQUIRE(l2_dist(e.vec, f.g.features.row(v)) == 0.0);
        REQUIRE(e.stamp == Stamp{0, 0});
      });
  }

  SECTION("forward_historical equals forward_exact for any batch") {
    Rng rng(5);
    for (ClientId k = 0; k < 3; ++k) {
      std::vector<NodeId> local = f.partition.local_nodes[k];
      auto pick = rng.sample_indices(static_cast<std::uint32_t>(local.size()), 5);
      std::vector<NodeId> batch;
      for (auto i : pick) batch.push_back(local[i]);
      auto ht = forward_historical(f.g, f.params, batch, tables[k], f.partition, k);
      auto et = forward_exact(f.g, f.params, batch);
      for (std::size_t i = 0; i < batch.size(); ++i)
        REQUIRE(l2_dist(ht.logits().row(i), et.logits().row(i)) < 1e-10);
    }
  }

  SECTION("bytes charged equal the cross-client entry count times entry size") {
    // Independent recount: sum over clients of |cross neighbors| x sum_l d^l x 8.
    std::uint64_t expected = 0;
    for (ClientId k = 0; k < 3; ++k) {
      auto cross = cross_client_neighbors(f.g, f.partition, k);
      expected += static_cast<std::uint64_t>(cross.size()) * (4 + 6) * 8;
    }
    REQUIRE(ledger.totals().comm_bytes == expected);

    std::uint64_t from_trace = 0;
    for (const auto& ev : trace) {
      REQUIRE(ev.warm);
      from_trace += static_cast<std::uint64_t>(ev.nodes.size()) * (4 + 6) * 8;
    }
    REQUIRE(from_trace == expected);
  }

  SECTION("table capacity covers local nodes and cross neighbors") {
    for (ClientId k = 0; k < 3; ++k) {
      for (NodeId v : f.partition.local_nodes[k]) REQUIRE(tables[k].has(1, v));
      for (NodeId w : cross_client_neighbors(f.g, f.partition, k)) REQUIRE(tables[k].has(1, w));
    }
  }
}

TEST_CASE("push semantics") {
  EmbeddingTable t(0, {2, 3});
  std::vector<double> v1 = {1.0, 2.0, 3.0};
  std::vector<double> v2 = {4.0, 5.0, 6.0};

  SECTION("push then get returns the pushed vector bit-exactly") {
    t.push(7, 1, v1, Stamp{1, 2});
    REQUIRE(t.get(1, 7).vec == v1);
    REQUIRE(t.get(1, 7).stamp == Stamp{1, 2});
  }

  SECTION("stamp regression is rejected and leaves the entry unchanged") {
    t.push(7, 1, v1, Stamp{2, 0});
    REQUIRE_THROWS_AS(t.push(7, 1, v2, Stamp{1, 9}), ContractError);
    REQUIRE(t.get(1, 7).vec == v1);
    REQUIRE(t.get(1, 7).stamp == Stamp{2, 0});
  }

  SECTION("same stamp is last-writer-wins") {
    t.push(7, 1, v1, Stamp{1, 1});
    t.push(7, 1, v2, Stamp{1, 1});
    REQUIRE(t.get(1, 7).vec == v2);
  }

  SECTION("wrong vector length rejected") {
    std::vector<double> bad = {1.0};
    REQUIRE_THROWS_AS(t.push(7, 1, bad, Stamp{0, 0}), ContractError);
  }

  SECTION("missing entry raises a contract error") {
    REQUIRE_THROWS_AS(t.get(1, 99), ContractError);
  }
}

TEST_CASE("cross-client synchronization") {
  Fixture f;
  auto tables = warm_start(f.g, f.params, f.partition);
  auto cross0 = cross_client_neighbors(f.g, f.partition, 0);
  REQUIRE(!cross0.empty());

  SECTION("empty node set moves nothing") {
    CostLedger ledger;
    auto before = dump_table_json(tables[0]);
    auto bytes = sync_cross_client(tables, f.partition, 0, {}, Stamp{1, 0}, &ledger);
    REQUIRE(bytes == 0);
    REQUIRE(ledger.totals().comm_bytes == 0);
    REQUIRE(dump_table_json(tables[0]) == before);
  }

  SECTION("one node, L=2, hidden width 32, 8-byte scalars: 256 bytes") {
    auto g2 = generate_sbm(30, 2, 0.3, 0.1, 4, 3);
    auto p2 = partition_iid(g2, 2, 7);
    auto params2 = init_params({4, 32, 2}, 11);
    auto t2 = warm_start(g2, params2, p2);
    auto cross = cross_client_neighbors(g2, p2, 0);
    std::vector<NodeId> one = {cross.front()};
    auto bytes = sync_cross_client(t2, p2, 0, one, Stamp{1, 0});
    REQUIRE(bytes == 256);
  }

  SECTION("synced entries carry the sync stamp (staleness zero)") {
    Stamp now{3, 1};
    sync_cross_client(tables, f.partition, 0, cross0, now);
    for (NodeId w : cross0)
      REQUIRE(tables[0].get(1, w).stamp == now);
    auto hist = staleness_report(tables[0], now, 10);
    // Cross-client hidden-layer entries are fresh; local ones still carry (0,0).
    REQUIRE(hist.count(0) == 1);
  }

  SECTION("idempotence: a repeated sync moves identical bytes and changes nothing") {
    Stamp now{2, 0};
    auto b1 = sync_cross_client(tables, f.partition, 0, cross0, now);
    auto snapshot = dump_table_json(tables[0]);
    auto b2 = sync_cross_client(tables, f.partition, 0, cross0, now);
    REQUIRE(b1 == b2);
    REQUIRE(dump_table_json(tables[0]) == snapshot);
  }

  SECTION("ledger accumulates exactly the per-sync bytes") {
    CostLedger ledger;
    std::uint64_t total = 0;
    total += sync_cross_client(tables, f.partition, 0, cross0, Stamp{1, 0}, &ledger);
    auto cross1 = cross_client_neighbors(f.g, f.partition, 1);
    total += sync_cross_client(tables, f.partition, 1, cross1, Stamp{1, 0}, &ledger);
    REQUIRE(ledger.totals().comm_bytes == total);
    REQUIRE(ledger.totals().sync_events == 2);
  }

  SECTION("a node owned by the requester is a contract violation") {
    std::vector<NodeId> own = {f.partition.local_nodes[0].front()};
    REQUIRE_THROWS_AS(sync_cross_client(tables, f.partition, 0, own, Stamp{1, 0}),
                      ContractError);
  }
}

TEST_CASE("staleness report") {
  Fixture f;
  auto tables = warm_start(f.g, f.params, f.partition);

  SECTION("all zero immediately after warm start") {
    auto hist = staleness_report(tables[0], Stamp{0, 0}, 10);
    REQUIRE(hist.size() == 1);
    REQUIRE(hist.count(0) == 1);
  }

  SECTION("histogram total equals entry count") {
    auto hist = staleness_report(tables[1], Stamp{4, 2}, 10);
    std::size_t total = 0;
    for (auto& [staleness, count] : hist) total += count;
    REQUIRE(total == tables[1].entry_count());
  }

  SECTION("entries age by elapsed epochs without sync") {
    const int tau = 5;
    // The client refreshes its own nodes at epoch 0 and never syncs again.
    Stamp write{1, 0};
    for (NodeId v : f.partition.local_nodes[0])
      if (tables[0].has(1, v)) {
        auto vec = tables[0].get(1, v).vec;
        tables[0].push(v, 1, vec, write);
      }
    Stamp now{1, tau};
    auto cross = cross_client_neighbors(f.g, f.partition, 0);
    std::int64_t min_cross = 1 << 30;
    tables[0].for_each([&](std::size_t l, NodeId v, const EmbeddingEntry& e) {
      if (l == 0) return;
      if (std::find(cross.begin(), cross.end(), v) == cross.end()) return;
      min_cross = std::min(min_cross, now.epochs_since(e.stamp, 10));
    });
    REQUIRE(min_cross >= tau - 1);
  }
}

TEST_CASE("table JSON dump shape") {
  EmbeddingTable t(2, {2, 3});
  t.push(4, 0, std::vector<double>{1, 2}, Stamp{0, 0});
  t.push(4, 1, std::vector<double>{3, 4, 5}, Stamp{1, 2});
  auto j = dump_table_json(t);
  REQUIRE(j["0"]["4"]["vector"] == nlohmann::json({1.0, 2.0}));
  REQUIRE(j["1"]["4"]["stamp"] == nlohmann::json({1, 2}));
}
