// Experiment front end: JSON config parsing with field-level diagnostics,
// (strategy x seed) fan-out with per-run CSV artifacts and a mean/std
// summary, and the printable bound-probe report.
//
// Config file schema (all of "run" is optional; defaults shown in
// RunConfig):
// {
//   "dataset":   {"type": "sbm", "n": 200, "num_classes": 4, "p_in": 0.1,
//                 "p_out": 0.01, "d0": 16, "seed": 7,
//                 "train_frac": 0.8, "val_frac": 0.1, "noise_sigma": 1.0}
//              | {"type": "file", "path": "graph.json"},
//   "partition": {"scheme": "iid" | "dirichlet", "clients": 5,
//                 "alpha": 0.5, "seed": 11},
//   "downsample": {"keep_ratio": 0.5, "seed": 13, "include_cross": false},
//   "run":       {"rounds": 50, "clients_per_round": 5, "local_epochs": 10,
//                 "batch_count": 10, "sample_ratio": 0.7, "lr": 0.001,
//                 "weight_decay": 0.001, "tau0": 2, "tau0_mode": "fixed",
//                 "fixed_tau": 0, "neighbor_cap": 10, "model_seed": 0,
//                 "target_accuracy": 0, "hidden_dims": [32],
//                 "scalar_bytes": 8, "estimate_constants": true,
//                 "owner_recompute_on_sync": false,
//                 "delay": {"c": 1, "o": 10, "bandwidth": 0, "c_total": 1000}},
//   "strategies": ["fedais", "fedall"],
//   "seeds": [1, 2, 3],
//   "out_dir": "results"
// }
//
// Instead of an explicit "seeds" list, a grid can give "master_seed" and
// "num_seeds"; run i then uses derive_seed(master_seed, {i}), the same
// splitmix derivation documented in rng.hpp, so grids are reproducible
// from the one master value.
#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedais/common.hpp"
#include "fedais/graph.hpp"
#include "fedais/orchestrator.hpp"
#include "fedais/sampler.hpp"
#include "fedais/scheduler.hpp"

namespace fedais {

struct SbmSpec {
  std::uint32_t n = 200;
  std::uint32_t num_classes = 4;
  double p_in = 0.1;
  double p_out = 0.01;
  std::uint32_t d0 = 16;
  std::uint64_t seed = 7;
  double train_frac = 0.8;
  double val_frac = 0.1;
  double noise_sigma = 1.0;
};

struct DatasetSpec {
  bool from_file = false;
  std::string path;
  SbmSpec sbm;
};

struct PartitionSpec {
  bool dirichlet = false;
  std::uint32_t clients = 5;
  double alpha = 0.5;
  std::uint64_t seed = 11;
};

struct DownsampleSpec {
  bool enabled = false;
  double keep_ratio = 0.5;
  std::uint64_t seed = 13;
  bool include_cross = false;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  PartitionSpec partition;
  DownsampleSpec downsample;
  RunConfig run;
  std::vector<Strategy> strategies = {Strategy::fedais};
  std::vector<std::uint64_t> seeds = {1};
  std::string out_dir = "results";
  std::vector<std::string> warnings;  // unknown fields, non-fatal
};

namespace detail {

inline void check_known_keys(const nlohmann::json& j, const std::string& where,
                             std::initializer_list<const char*> known,
                             std::vector<std::string>& warnings) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known)
      if (it.key() == k) ok = true;
    if (!ok) warnings.push_back("unknown field '" + where + "." + it.key() + "' ignored");
  }
}

template <typename T>
inline T get_field(const nlohmann::json& j, const std::string& where, const char* key,
                   T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config field '" + where + "." + key + "': " + e.what());
  }
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  ExperimentConfig cfg;
  detail::check_known_keys(j, "",
                           {"dataset", "partition", "downsample", "run", "strategies", "seeds",
                            "master_seed", "num_seeds", "out_dir"},
                           cfg.warnings);

  if (!j.contains("dataset")) throw ConfigError("config: missing field 'dataset'");
  {
    const auto& d = j.at("dataset");
    detail::check_known_keys(d, "dataset",
                             {"type", "path", "n", "num_classes", "p_in", "p_out", "d0", "seed",
                              "train_frac", "val_frac", "noise_sigma"},
                             cfg.warnings);
    auto type = detail::get_field<std::string>(d, "dataset", "type", "sbm");
    if (type == "file") {
      cfg.dataset.from_file = true;
      if (!d.contains("path")) throw ConfigError("config: missing field 'dataset.path'");
      cfg.dataset.path = d.at("path").get<std::string>();
    } else if (type == "sbm") {
      auto& s = cfg.dataset.sbm;
      s.n = detail::get_field<std::uint32_t>(d, "dataset", "n", s.n);
      s.num_classes = detail::get_field<std::uint32_t>(d, "dataset", "num_classes", s.num_classes);
      s.p_in = detail::get_field<double>(d, "dataset", "p_in", s.p_in);
      s.p_out = detail::get_field<double>(d, "dataset", "p_out", s.p_out);
      s.d0 = detail::get_field<std::uint32_t>(d, "dataset", "d0", s.d0);
      s.seed = detail::get_field<std::uint64_t>(d, "dataset", "seed", s.seed);
      s.train_frac = detail::get_field<double>(d, "dataset", "train_frac", s.train_frac);
      s.val_frac = detail::get_field<double>(d, "dataset", "val_frac", s.val_frac);
      s.noise_sigma = detail::get_field<double>(d, "dataset", "noise_sigma", s.noise_sigma);
    } else {
      throw ConfigError("config: dataset.type must be 'sbm' or 'file', got '" + type + "'");
    }
  }

  if (!j.contains("partition")) throw ConfigError("config: missing field 'partition'");
  {
    const auto& p = j.at("partition");
    detail::check_known_keys(p, "partition", {"scheme", "clients", "alpha", "seed"}, cfg.warnings);
    auto scheme = detail::get_field<std::string>(p, "partition", "scheme", "iid");
    if (scheme == "dirichlet")
      cfg.partition.dirichlet = true;
    else if (scheme != "iid")
      throw ConfigError("config: partition.scheme must be 'iid' or 'dirichlet'");
    cfg.partition.clients =
        detail::get_field<std::uint32_t>(p, "partition", "clients", cfg.partition.clients);
    cfg.partition.alpha = detail::get_field<double>(p, "partition", "alpha", cfg.partition.alpha);
    cfg.partition.seed =
        detail::get_field<std::uint64_t>(p, "partition", "seed", cfg.partition.seed);
    if (cfg.partition.clients < 1) throw ConfigError("config: partition.clients >= 1");
    if (cfg.partition.dirichlet && !(cfg.partition.alpha > 0.0))
      throw ConfigError("config: partition.alpha must be > 0");
  }

  if (j.contains("downsample")) {
    const auto& d = j.at("downsample");
    detail::check_known_keys(d, "downsample", {"keep_ratio", "seed", "include_cross"},
                             cfg.warnings);
    cfg.downsample.enabled = true;
    cfg.downsample.keep_ratio =
        detail::get_field<double>(d, "downsample", "keep_ratio", cfg.downsample.keep_ratio);
    cfg.downsample.seed =
        detail::get_field<std::uint64_t>(d, "downsample", "seed", cfg.downsample.seed);
    cfg.downsample.include_cross =
        detail::get_field<bool>(d, "downsample", "include_cross", false);
    if (!(cfg.downsample.keep_ratio > 0.0 && cfg.downsample.keep_ratio <= 1.0))
      throw ConfigError("config: downsample.keep_ratio in (0,1]");
  }

  if (j.contains("run")) {
    const auto& r = j.at("run");
    detail::check_known_keys(
        r, "run",
        {"rounds", "clients_per_round", "local_epochs", "batch_count", "sample_ratio", "lr",
         "weight_decay", "tau0", "tau0_mode", "fixed_tau", "neighbor_cap", "model_seed",
         "target_accuracy", "hidden_dims", "scalar_bytes", "estimate_constants",
         "owner_recompute_on_sync", "delay"},
        cfg.warnings);
    auto& rc = cfg.run;
    rc.rounds = detail::get_field<int>(r, "run", "rounds", rc.rounds);
    rc.clients_per_round =
        detail::get_field<std::uint32_t>(r, "run", "clients_per_round", rc.clients_per_round);
    rc.local_epochs = detail::get_field<int>(r, "run", "local_epochs", rc.local_epochs);
    rc.batch_count = detail::get_field<int>(r, "run", "batch_count", rc.batch_count);
    rc.sample_ratio = detail::get_field<double>(r, "run", "sample_ratio", rc.sample_ratio);
    rc.lr = detail::get_field<double>(r, "run", "lr", rc.lr);
    rc.weight_decay = detail::get_field<double>(r, "run", "weight_decay", rc.weight_decay);
    rc.tau0 = detail::get_field<int>(r, "run", "tau0", rc.tau0);
    auto tau0_mode = detail::get_field<std::string>(r, "run", "tau0_mode", "fixed");
    if (tau0_mode == "avg_batch")
      rc.tau0_mode = Tau0Mode::avg_batch;
    else if (tau0_mode != "fixed")
      throw ConfigError("config: run.tau0_mode must be 'fixed' or 'avg_batch'");
    rc.fixed_tau = detail::get_field<int>(r, "run", "fixed_tau", rc.fixed_tau);
    rc.neighbor_cap = detail::get_field<std::size_t>(r, "run", "neighbor_cap", rc.neighbor_cap);
    rc.model_seed = detail::get_field<std::uint64_t>(r, "run", "model_seed", rc.model_seed);
    rc.target_accuracy =
        detail::get_field<double>(r, "run", "target_accuracy", rc.target_accuracy);
    rc.hidden_dims = detail::get_field<std::vector<int>>(r, "run", "hidden_dims", rc.hidden_dims);
    rc.scalar_bytes = detail::get_field<std::size_t>(r, "run", "scalar_bytes", rc.scalar_bytes);
    rc.estimate_constants =
        detail::get_field<bool>(r, "run", "estimate_constants", rc.estimate_constants);
    rc.owner_recompute_on_sync =
        detail::get_field<bool>(r, "run", "owner_recompute_on_sync", rc.owner_recompute_on_sync);
    if (r.contains("delay")) {
      const auto& d = r.at("delay");
      detail::check_known_keys(d, "run.delay", {"c", "o", "bandwidth", "c_total"}, cfg.warnings);
      rc.delay.c = detail::get_field<double>(d, "run.delay", "c", rc.delay.c);
      rc.delay.o = detail::get_field<double>(d, "run.delay", "o", rc.delay.o);
      rc.delay.bandwidth = detail::get_field<double>(d, "run.delay", "bandwidth", rc.delay.bandwidth);
      rc.delay.c_total = detail::get_field<double>(d, "run.delay", "c_total", rc.delay.c_total);
    }
  }
  cfg.run.clients = cfg.partition.clients;
  if (cfg.run.clients_per_round == 0) cfg.run.clients_per_round = cfg.run.clients;

  if (j.contains("strategies")) {
    cfg.strategies.clear();
    for (const auto& s : j.at("strategies"))
      cfg.strategies.push_back(strategy_from_string(s.get<std::string>()));
    if (cfg.strategies.empty()) throw ConfigError("config: strategies must be nonempty");
  }
  if (j.contains("seeds") && j.contains("master_seed"))
    throw ConfigError("config: give either 'seeds' or 'master_seed', not both");
  if (j.contains("seeds")) {
    cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (cfg.seeds.empty()) throw ConfigError("config: seeds must be nonempty");
  } else if (j.contains("master_seed")) {
    auto master = j.at("master_seed").get<std::uint64_t>();
    auto n = detail::get_field<int>(j, "", "num_seeds", 1);
    if (n < 1) throw ConfigError("config: num_seeds >= 1");
    cfg.seeds.clear();
    for (int i = 0; i < n; ++i)
      cfg.seeds.push_back(derive_seed(master, {static_cast<std::uint64_t>(i)}));
  }
  cfg.out_dir = detail::get_field<std::string>(j, "", "out_dir", cfg.out_dir);

  cfg.run.validate();
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  return parse_experiment_config(j);
}

inline Graph build_dataset(const ExperimentConfig& cfg) {
  Graph g = cfg.dataset.from_file
                ? load_graph(cfg.dataset.path)
                : generate_sbm(cfg.dataset.sbm.n, cfg.dataset.sbm.num_classes,
                               cfg.dataset.sbm.p_in, cfg.dataset.sbm.p_out, cfg.dataset.sbm.d0,
                               cfg.dataset.sbm.seed, cfg.dataset.sbm.train_frac,
                               cfg.dataset.sbm.val_frac, cfg.dataset.sbm.noise_sigma);
  return g;
}

inline Partition build_partition(const ExperimentConfig& cfg, const Graph& g) {
  return cfg.partition.dirichlet
             ? partition_dirichlet(g, cfg.partition.clients, cfg.partition.alpha,
                                   cfg.partition.seed)
             : partition_iid(g, cfg.partition.clients, cfg.partition.seed);
}

struct RunArtifacts {
  Strategy strategy;
  std::uint64_t seed;
  RunResult result;
};

inline std::string run_basename(Strategy s, std::uint64_t seed) {
  return std::string(to_string(s)) + "_seed" + std::to_string(seed);
}

// Runs every (strategy, seed) combination and writes, per run, a round
// CSV and a schedule CSV, plus one summary JSON with mean/std aggregates
// per strategy. Reruns with the same config are byte-identical.
inline std::vector<RunArtifacts> run_experiment(const ExperimentConfig& cfg) {
  Graph g = build_dataset(cfg);
  Partition partition = build_partition(cfg, g);
  if (cfg.downsample.enabled)
    g = downsample_local_edges(g, partition, cfg.downsample.keep_ratio, cfg.downsample.seed,
                               cfg.downsample.include_cross);

  std::filesystem::create_directories(cfg.out_dir);
  std::vector<RunArtifacts> runs;
  for (Strategy s : cfg.strategies) {
    for (std::uint64_t seed : cfg.seeds) {
      RunConfig rc = cfg.run;
      rc.strategy = s;
      rc.seed = seed;
      auto result = run_training(rc, g, partition);
      auto base = cfg.out_dir + "/" + run_basename(s, seed);
      export_csv(result.records, {to_string(s), seed}, base + ".csv");
      export_schedule_csv(result.schedule, base + "_schedule.csv", rc.lr, result.lambda_hat,
                          result.zeta_sq_hat, rc.delay);
      runs.push_back({s, seed, std::move(result)});
    }
  }

  // Summary: mean and population std over seeds, per strategy.
  auto stats = [](const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    return nlohmann::json{{"mean", mean}, {"std", std::sqrt(var)}};
  };
  nlohmann::json summary;
  summary["seeds"] = cfg.seeds;
  for (Strategy s : cfg.strategies) {
    std::vector<double> acc, loss, f1, bytes, rounds;
    for (const auto& r : runs) {
      if (r.strategy != s) continue;
      const auto& last = r.result.records.back();
      acc.push_back(last.test_acc);
      loss.push_back(last.test_loss);
      f1.push_back(last.macro_f1);
      bytes.push_back(static_cast<double>(last.cum_comm_bytes));
      rounds.push_back(static_cast<double>(last.round));
    }
    summary["strategies"][to_string(s)] = {{"final_test_acc", stats(acc)},
                                           {"final_test_loss", stats(loss)},
                                           {"final_macro_f1", stats(f1)},
                                           {"cum_comm_bytes", stats(bytes)},
                                           {"rounds", stats(rounds)}};
  }
  std::ofstream out(cfg.out_dir + "/summary.json");
  if (!out) throw IoError("cannot write " + cfg.out_dir + "/summary.json");
  out << summary.dump(2) << "\n";
  return runs;
}

// ---------------------------------------------------------------------------
// Probe report.

// Entry-wise Gaussian perturbation; used to make tables stale against a
// shifted model.
inline ModelParams perturb_params(const ModelParams& p, double sigma, std::uint64_t seed) {
  ModelParams out = p;
  Rng rng(derive_seed(seed, {900}));
  for (auto& lp : out.layers) {
    for (auto& v : lp.w_self.data()) v += sigma * rng.normal();
    for (auto& v : lp.w_neigh.data()) v += sigma * rng.normal();
    for (auto& v : lp.bias) v += sigma * rng.normal();
  }
  return out;
}

// A small SBM instance whose max degree stays <= 8 (the bound probe's
// regime); retries deterministically derived seeds until it fits.
inline Graph make_bounded_degree_graph(std::uint64_t seed, std::uint32_t n = 60,
                                       std::uint32_t num_classes = 3, std::uint32_t d0 = 8,
                                       std::size_t max_degree = 8) {
  for (std::uint64_t attempt = 0; attempt < 100; ++attempt) {
    Graph g = generate_sbm(n, num_classes, 0.06, 0.01, d0, derive_seed(seed, {attempt}));
    std::size_t deg = 0;
    for (NodeId v = 0; v < g.n; ++v) deg = std::max(deg, g.adjacency.degree(v));
    if (deg <= max_degree) return g;
  }
  throw ParameterError("make_bounded_degree_graph: no candidate within degree bound");
}

// Runs the variance-decomposition and output-error bound probes on the
// configured dataset plus a battery of small random graphs; prints
// measured-vs-bound tables. Returns false if any measured value exceeded
// its bound.
inline bool run_probe_report(const ExperimentConfig& cfg, std::ostream& os) {
  os << "probe: dataset variance decomposition\n";
  Graph g = build_dataset(cfg);
  if (g.n == 0) throw ParameterError("probe: dataset has no nodes");
  if (g.split_nodes(Split::train).empty()) throw ParameterError("probe: dataset has no train nodes");
  Partition partition = build_partition(cfg, g);

  bool all_ok = true;
  auto print_variance = [&](const char* tag, const VarianceProbeResult& r) {
    os << "  [" << tag << "] approx=" << r.approx_term << " minibatch=" << r.minibatch_term
       << " lhs=" << r.triangle_lhs << " max_output_err=" << r.max_output_err
       << " lambda_hat=" << r.lambda_hat << " grad_bound=" << r.grad_bound
       << " ratio=" << (r.grad_bound > 0 ? r.approx_term / r.grad_bound : 0.0)
       << (r.grad_bound_ok ? "  ok" : "  VIOLATED") << "\n";
    all_ok = all_ok && r.grad_bound_ok;
  };

  std::vector<int> dims = {static_cast<int>(g.d0), 16, static_cast<int>(g.num_classes)};
  auto theta0 = init_params(dims, derive_seed(cfg.run.seed, {901}));
  auto tables = warm_start(g, theta0, partition);
  print_variance("fresh table", variance_decomposition_probe(g, theta0, partition, tables,
                                                             derive_seed(cfg.run.seed, {902})));
  auto theta1 = perturb_params(theta0, 0.05, cfg.run.seed);
  print_variance("stale table", variance_decomposition_probe(g, theta1, partition, tables,
                                                             derive_seed(cfg.run.seed, {903})));

  os << "probe: output-error bound on bounded-degree graphs\n";
  for (int i = 0; i < 5; ++i) {
    Graph pg = make_bounded_degree_graph(derive_seed(cfg.run.seed, {904, static_cast<std::uint64_t>(i)}));
    Partition pp = partition_iid(pg, 3, derive_seed(cfg.run.seed, {905, static_cast<std::uint64_t>(i)}));
    std::vector<int> pdims = {static_cast<int>(pg.d0), 16, static_cast<int>(pg.num_classes)};
    auto p0 = init_params(pdims, derive_seed(cfg.run.seed, {906, static_cast<std::uint64_t>(i)}));
    auto ptables = warm_start(pg, p0, pp);
    auto p1 = perturb_params(p0, 0.05, derive_seed(cfg.run.seed, {907, static_cast<std::uint64_t>(i)}));
    auto probe = output_bound_probe(pg, p1, pp, ptables);
    os << "  graph " << i << ": alpha1=" << probe.alpha1_hat << " alpha2=" << probe.alpha2_hat
       << " max_output_err=" << probe.max_output_err << " max_ratio=" << probe.max_ratio
       << (probe.satisfied ? "  ok" : "  VIOLATED") << "\n";
    all_ok = all_ok && probe.satisfied;
  }

  os << "probe: interval rule vs numeric minimizer\n";
  {
    DelayModel m{1.0, 10.0, 0.0, 1000.0};
    double eta = 0.05, lambda = 1.0, zeta_sq = 0.5, f0 = 2.0, f_inf = 0.0;
    double tau_rule = theoretical_tau(f0, f_inf, m.o, eta, m.c_total, lambda, zeta_sq);
    double best_tau = 1.0, best = error_bound(f0, f_inf, eta, lambda, zeta_sq, 1.0, m).value;
    for (double tau = 1.0; tau <= 400.0; tau += 0.01) {
      double v = error_bound(f0, f_inf, eta, lambda, zeta_sq, tau, m).value;
      if (v < best) {
        best = v;
        best_tau = tau;
      }
    }
    double rel = std::abs(tau_rule - best_tau) / best_tau;
    os << "  closed form tau=" << tau_rule << " grid minimizer=" << best_tau
       << " rel_diff=" << rel << (rel <= 0.01 ? "  ok" : "  VIOLATED") << "\n";
    all_ok = all_ok && rel <= 0.01;
  }
  return all_ok;
}

}  // namespace fedais
