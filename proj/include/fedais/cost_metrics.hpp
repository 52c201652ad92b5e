// Computation and communication ledgers, classification metrics, and the
// round-record export formats.
//
// One compute unit = one neighbor-aggregation at one (node, layer); model
// weight FLOPs are excluded on purpose so table-backed training costs
// exactly batch_size * L units per forward.
#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedais/common.hpp"

namespace fedais {

struct LedgerTotals {
  std::uint64_t comp_ops = 0;
  std::uint64_t comm_bytes = 0;
  std::uint64_t forward_passes = 0;
  std::uint64_t backward_passes = 0;
  std::uint64_t sync_events = 0;

  bool operator==(const LedgerTotals&) const = default;
};

// Cumulative counters plus a per-round breakdown. Charges are serialized
// internally so concurrent client updates may share one ledger.
class CostLedger {
 public:
  struct RoundCosts {
    int round = 0;
    std::uint64_t comp_ops = 0;
    std::uint64_t comm_bytes = 0;
    std::uint64_t sync_events = 0;
  };

  void begin_round(int round) {
    std::lock_guard lk(mu_);
    round_ = round;
    per_round_.push_back({round, 0, 0, 0});
  }

  void charge_compute(std::uint64_t aggregations) {
    if (aggregations == 0) return;
    std::lock_guard lk(mu_);
    totals_.comp_ops += aggregations;
    current().comp_ops += aggregations;
  }

  void charge_comm(std::uint64_t bytes) {
    if (bytes == 0) return;
    std::lock_guard lk(mu_);
    totals_.comm_bytes += bytes;
    current().comm_bytes += bytes;
  }

  void note_sync() {
    std::lock_guard lk(mu_);
    totals_.sync_events += 1;
    current().sync_events += 1;
  }

  void note_forward() {
    std::lock_guard lk(mu_);
    totals_.forward_passes += 1;
  }

  void note_backward() {
    std::lock_guard lk(mu_);
    totals_.backward_passes += 1;
  }

  LedgerTotals totals() const {
    std::lock_guard lk(mu_);
    return totals_;
  }

  std::vector<RoundCosts> per_round() const {
    std::lock_guard lk(mu_);
    return per_round_;
  }

  int round() const {
    std::lock_guard lk(mu_);
    return round_;
  }

 private:
  RoundCosts& current() {
    if (per_round_.empty()) per_round_.push_back({round_, 0, 0, 0});
    return per_round_.back();
  }

  mutable std::mutex mu_;
  int round_ = 0;
  LedgerTotals totals_;
  std::vector<RoundCosts> per_round_;
};

inline void charge_compute(CostLedger* ledger, std::uint64_t aggregations) {
  if (ledger) ledger->charge_compute(aggregations);
}
inline void charge_comm(CostLedger* ledger, std::uint64_t bytes) {
  if (ledger) ledger->charge_comm(bytes);
}

// ---------------------------------------------------------------------------
// Classification metrics.

inline double accuracy(const std::vector<std::uint32_t>& truth,
                       const std::vector<std::uint32_t>& pred) {
  if (truth.size() != pred.size() || truth.empty())
    throw ParameterError("accuracy: size mismatch or empty");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += truth[i] == pred[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

// Macro-F1 over all classes; a class absent from both truth and
// predictions contributes 0.
inline double macro_f1(std::uint32_t num_classes, const std::vector<std::uint32_t>& truth,
                       const std::vector<std::uint32_t>& pred) {
  if (truth.size() != pred.size() || truth.empty())
    throw ParameterError("macro_f1: size mismatch or empty");
  std::vector<std::uint64_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == pred[i])
      tp[truth[i]]++;
    else {
      fp[pred[i]]++;
      fn[truth[i]]++;
    }
  }
  double sum = 0.0;
  for (std::uint32_t c = 0; c < num_classes; ++c) {
    double precision = (tp[c] + fp[c]) ? static_cast<double>(tp[c]) / (tp[c] + fp[c]) : 0.0;
    double recall = (tp[c] + fn[c]) ? static_cast<double>(tp[c]) / (tp[c] + fn[c]) : 0.0;
    sum += (precision + recall > 0.0) ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
  return sum / num_classes;
}

// ---------------------------------------------------------------------------
// Round records and export.

struct RoundRecord {
  int round = 0;
  std::vector<int> participants;
  double test_loss = 0.0;
  double test_acc = 0.0;
  double macro_f1 = 0.0;
  int tau = 1;
  std::uint64_t comp_ops = 0;        // this round
  std::uint64_t comm_bytes = 0;      // this round
  std::uint64_t cum_comp_ops = 0;
  std::uint64_t cum_comm_bytes = 0;
  std::uint64_t sync_events = 0;     // this round
  double sim_time = 0.0;             // cumulative simulated time

  bool operator==(const RoundRecord&) const = default;
};

struct RunMeta {
  std::string strategy = "fedais";
  std::uint64_t seed = 0;
};

// %.17g round-trips doubles exactly, which keeps exported files
// byte-stable across reruns and loadable without loss.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline constexpr const char* kRecordCsvHeader =
    "round,strategy,seed,tau,test_loss,test_acc,macro_f1,comp_ops,comm_bytes,"
    "cum_comm_bytes,sim_time";

inline void export_csv(const std::vector<RoundRecord>& records, const RunMeta& meta,
                       const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("export_csv: cannot open " + path);
  out << kRecordCsvHeader << "\n";
  for (const auto& r : records) {
    out << r.round << ',' << meta.strategy << ',' << meta.seed << ',' << r.tau << ','
        << format_double(r.test_loss) << ',' << format_double(r.test_acc) << ','
        << format_double(r.macro_f1) << ',' << r.comp_ops << ',' << r.comm_bytes << ','
        << r.cum_comm_bytes << ',' << format_double(r.sim_time) << "\n";
  }
  if (!out) throw IoError("export_csv: write failed for " + path);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  return out;
}

// Loads the CSV columns back into records (fields not in the CSV schema
// stay defaulted).
inline std::pair<std::vector<RoundRecord>, RunMeta> load_records_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_records_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != kRecordCsvHeader)
    throw ConfigError("load_records_csv: bad header in " + path);
  std::vector<RoundRecord> records;
  RunMeta meta;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != 11) throw ConfigError("load_records_csv: bad row in " + path);
    RoundRecord r;
    r.round = std::stoi(f[0]);
    meta.strategy = f[1];
    meta.seed = std::stoull(f[2]);
    r.tau = std::stoi(f[3]);
    r.test_loss = std::stod(f[4]);
    r.test_acc = std::stod(f[5]);
    r.macro_f1 = std::stod(f[6]);
    r.comp_ops = std::stoull(f[7]);
    r.comm_bytes = std::stoull(f[8]);
    r.cum_comm_bytes = std::stoull(f[9]);
    r.sim_time = std::stod(f[10]);
    records.push_back(std::move(r));
  }
  return {records, meta};
}

inline nlohmann::json record_to_json(const RoundRecord& r) {
  return {{"round", r.round},
          {"participants", r.participants},
          {"test_loss", r.test_loss},
          {"test_acc", r.test_acc},
          {"macro_f1", r.macro_f1},
          {"tau", r.tau},
          {"comp_ops", r.comp_ops},
          {"comm_bytes", r.comm_bytes},
          {"cum_comp_ops", r.cum_comp_ops},
          {"cum_comm_bytes", r.cum_comm_bytes},
          {"sync_events", r.sync_events},
          {"sim_time", r.sim_time}};
}

inline RoundRecord record_from_json(const nlohmann::json& j) {
  RoundRecord r;
  r.round = j.at("round").get<int>();
  r.participants = j.at("participants").get<std::vector<int>>();
  r.test_loss = j.at("test_loss").get<double>();
  r.test_acc = j.at("test_acc").get<double>();
  r.macro_f1 = j.at("macro_f1").get<double>();
  r.tau = j.at("tau").get<int>();
  r.comp_ops = j.at("comp_ops").get<std::uint64_t>();
  r.comm_bytes = j.at("comm_bytes").get<std::uint64_t>();
  r.cum_comp_ops = j.at("cum_comp_ops").get<std::uint64_t>();
  r.cum_comm_bytes = j.at("cum_comm_bytes").get<std::uint64_t>();
  r.sync_events = j.at("sync_events").get<std::uint64_t>();
  r.sim_time = j.at("sim_time").get<double>();
  return r;
}

inline void export_json(const std::vector<RoundRecord>& records, const RunMeta& meta,
                        const std::string& path) {
  nlohmann::json j;
  j["strategy"] = meta.strategy;
  j["seed"] = meta.seed;
  auto arr = nlohmann::json::array();
  for (const auto& r : records) arr.push_back(record_to_json(r));
  j["records"] = std::move(arr);
  std::ofstream out(path);
  if (!out) throw IoError("export_json: cannot open " + path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("export_json: write failed for " + path);
}

inline std::pair<std::vector<RoundRecord>, RunMeta> load_records_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_records_json: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  RunMeta meta{j.at("strategy").get<std::string>(), j.at("seed").get<std::uint64_t>()};
  std::vector<RoundRecord> records;
  for (const auto& rj : j.at("records")) records.push_back(record_from_json(rj));
  return {records, meta};
}

}  // namespace fedais
