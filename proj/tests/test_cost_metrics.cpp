#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <vector>

#include "fedais/model.hpp"

using namespace fedais;

namespace {

// Confusion-matrix reimplementation used as the metrics oracle.
struct BruteMetrics {
  double accuracy;
  double macro_f1;
};

BruteMetrics brute_metrics(std::uint32_t classes, const std::vector<std::uint32_t>& truth,
                           const std::vector<std::uint32_t>& pred) {
  std::vector<std::vector<int>> cm(classes, std::vector<int>(classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) cm[truth[i]][pred[i]]++;
  int correct = 0;
  for (std::uint32_t c = 0; c < classes; ++c) correct += cm[c][c];
  double f1_sum = 0.0;
  for (std::uint32_t c = 0; c < classes; ++c) {
    int tp = cm[c][c], row = 0, col = 0;
    for (std::uint32_t j = 0; j < classes; ++j) {
      row += cm[c][j];
      col += cm[j][c];
    }
    double prec = col ? static_cast<double>(tp) / col : 0.0;
    double rec = row ? static_cast<double>(tp) / row : 0.0;
    f1_sum += (prec + rec > 0) ? 2 * prec * rec / (prec + rec) : 0.0;
  }
  return {static_cast<double>(correct) / truth.size(), f1_sum / classes};
}

// A tree whose receptive field grows per level: root 0, two children per
// node, three levels.
Graph tree_graph() {
  Graph g;
  g.n = 15;
  g.d0 = 3;
  g.num_classes = 2;
  Rng rng(3);
  g.features = Matrix(15, 3);
  for (auto& x : g.features.data()) x = rng.normal();
  g.labels.assign(15, 0);
  for (NodeId v = 0; v < 15; ++v) g.labels[v] = v % 2;
  g.splits.assign(15, Split::train);
  std::vector<std::pair<NodeId, NodeId>> edges;
  for (NodeId v = 0; v + 1 < 8; ++v) {
    edges.emplace_back(v, 2 * v + 1);
    edges.emplace_back(v, 2 * v + 2);
  }
  g.adjacency = build_csr(15, edges);
  return g;
}

}  // namespace

TEST_CASE("ledger charging") {
  CostLedger ledger;
  ledger.begin_round(1);

  SECTION("zero charges leave the ledger unchanged") {
    auto before = ledger.totals();
    ledger.charge_compute(0);
    ledger.charge_comm(0);
    REQUIRE(ledger.totals() == before);
  }

  SECTION("charges accumulate and attribute to the current round") {
    ledger.charge_compute(5);
    ledger.charge_comm(100);
    ledger.begin_round(2);
    ledger.charge_compute(7);
    auto rounds = ledger.per_round();
    REQUIRE(rounds.size() == 2);
    REQUIRE(rounds[0].comp_ops == 5);
    REQUIRE(rounds[0].comm_bytes == 100);
    REQUIRE(rounds[1].comp_ops == 7);
    REQUIRE(ledger.totals().comp_ops == 12);
  }
}

TEST_CASE("table-backed forward charges exactly batch times layers") {
  auto g = tree_graph();
  std::vector<ClientId> assignment(15, 0);
  auto partition = finish_partition(g, 1, assignment);

  for (int layers : {2, 3}) {
    std::vector<int> dims = {3};
    for (int l = 1; l < layers; ++l) dims.push_back(4);
    dims.push_back(2);
    auto params = init_params(dims, 5);
    auto tables = warm_start(g, params, partition);

    CostLedger ledger;
    std::vector<NodeId> batch = {0, 3, 7};
    forward_historical(g, params, batch, tables[0], partition, 0, {}, &ledger);
    REQUIRE(ledger.totals().comp_ops ==
            batch.size() * static_cast<std::size_t>(layers));
  }
}

TEST_CASE("compute units scale linearly in depth for the table-backed pass") {
  auto g = tree_graph();
  std::vector<ClientId> assignment(15, 0);
  auto partition = finish_partition(g, 1, assignment);
  std::vector<NodeId> batch = {0, 1, 2, 3, 4};

  auto charge_for = [&](const std::vector<int>& dims) {
    auto params = init_params(dims, 5);
    auto tables = warm_start(g, params, partition);
    CostLedger ledger;
    forward_historical(g, params, batch, tables[0], partition, 0, {}, &ledger);
    return ledger.totals().comp_ops;
  };
  auto c2 = charge_for({3, 4, 2});
  auto c3 = charge_for({3, 4, 4, 2});
  // Slope ratio L=3 vs L=2 is exactly 3/2.
  REQUIRE(c3 * 2 == c2 * 3);
}

TEST_CASE("exact recursion charges grow with the receptive field") {
  auto g = tree_graph();
  auto params = init_params({3, 4, 4, 2}, 7);  // L=3
  std::vector<NodeId> batch = {0};

  CostLedger exact_ledger;
  forward_exact(g, params, batch, {}, &exact_ledger);

  std::vector<ClientId> assignment(15, 0);
  auto partition = finish_partition(g, 1, assignment);
  auto tables = warm_start(g, params, partition);
  CostLedger table_ledger;
  forward_historical(g, params, batch, tables[0], partition, 0, {}, &table_ledger);

  // Table-backed: |batch| * L = 3. Exact: level sets are {0}, {0,1,2},
  // {0..6}, so 1 + 3 + 7 = 11 aggregations.
  REQUIRE(table_ledger.totals().comp_ops == 3);
  REQUIRE(exact_ledger.totals().comp_ops == 11);
  REQUIRE(exact_ledger.totals().comp_ops > table_ledger.totals().comp_ops);
}

TEST_CASE("classification metrics") {
  SECTION("perfect predictions") {
    std::vector<std::uint32_t> y = {0, 1, 2, 1, 0};
    REQUIRE(accuracy(y, y) == 1.0);
    REQUIRE(macro_f1(3, y, y) == 1.0);
  }

  SECTION("binary balanced all-one-class predictor") {
    std::vector<std::uint32_t> truth = {0, 0, 1, 1};
    std::vector<std::uint32_t> pred = {0, 0, 0, 0};
    REQUIRE(accuracy(truth, pred) == 0.5);
    REQUIRE(macro_f1(2, truth, pred) == Catch::Approx(1.0 / 3));
  }

  SECTION("random pairs match the confusion-matrix oracle") {
    Rng rng(99);
    for (int trial = 0; trial < 20; ++trial) {
      std::uint32_t classes = 2 + static_cast<std::uint32_t>(rng.below(5));
      std::vector<std::uint32_t> truth(50), pred(50);
      for (auto& y : truth) y = static_cast<std::uint32_t>(rng.below(classes));
      for (auto& y : pred) y = static_cast<std::uint32_t>(rng.below(classes));
      auto oracle = brute_metrics(classes, truth, pred);
      REQUIRE(accuracy(truth, pred) == Catch::Approx(oracle.accuracy).epsilon(1e-14));
      REQUIRE(macro_f1(classes, truth, pred) == Catch::Approx(oracle.macro_f1).epsilon(1e-14));
    }
  }

  SECTION("empty input rejected") {
    std::vector<std::uint32_t> empty;
    REQUIRE_THROWS_AS(accuracy(empty, empty), ParameterError);
  }
}

TEST_CASE("record export") {
  std::vector<RoundRecord> records;
  for (int t = 0; t <= 3; ++t) {
    RoundRecord r;
    r.round = t;
    r.participants = {0, 1};
    r.test_loss = 1.5 / (t + 1);
    r.test_acc = 0.2 * t;
    r.macro_f1 = 0.15 * t;
    r.tau = 2;
    r.comp_ops = 100 + 10 * t;
    r.comm_bytes = 50 * t;
    r.cum_comp_ops = 100 + 10 * t + (t > 0 ? 100 * t : 0);
    r.cum_comm_bytes = 25 * t * (t + 1);
    r.sync_events = t;
    r.sim_time = 12.5 * t;
    records.push_back(r);
  }
  RunMeta meta{"fedais", 42};

  SECTION("empty record list writes a header-only CSV") {
    export_csv({}, meta, "records_empty_tmp.csv");
    auto [loaded, lm] = load_records_csv("records_empty_tmp.csv");
    REQUIRE(loaded.empty());
    std::remove("records_empty_tmp.csv");
  }

  SECTION("CSV round-trip reproduces the schema fields") {
    export_csv(records, meta, "records_tmp.csv");
    auto [loaded, lm] = load_records_csv("records_tmp.csv");
    REQUIRE(lm.strategy == "fedais");
    REQUIRE(lm.seed == 42);
    REQUIRE(loaded.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
      REQUIRE(loaded[i].round == records[i].round);
      REQUIRE(loaded[i].tau == records[i].tau);
      REQUIRE(loaded[i].test_loss == records[i].test_loss);
      REQUIRE(loaded[i].test_acc == records[i].test_acc);
      REQUIRE(loaded[i].macro_f1 == records[i].macro_f1);
      REQUIRE(loaded[i].comp_ops == records[i].comp_ops);
      REQUIRE(loaded[i].comm_bytes == records[i].comm_bytes);
      REQUIRE(loaded[i].cum_comm_bytes == records[i].cum_comm_bytes);
      REQUIRE(loaded[i].sim_time == records[i].sim_time);
    }
    std::remove("records_tmp.csv");
  }

  SECTION("JSON round-trip reproduces records exactly") {
    export_json(records, meta, "records_tmp.json");
    auto [loaded, lm] = load_records_json("records_tmp.json");
    REQUIRE(loaded == records);
    REQUIRE(lm.strategy == meta.strategy);
    REQUIRE(lm.seed == meta.seed);
    std::remove("records_tmp.json");
  }

  SECTION("cumulative bytes are monotone") {
    for (std::size_t i = 1; i < records.size(); ++i)
      REQUIRE(records[i].cum_comm_bytes >= records[i - 1].cum_comm_bytes);
  }
}
