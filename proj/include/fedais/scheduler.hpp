// Adaptive synchronization interval: the delay model, the optimization
// error bound and its two tau rules (theoretical and practical), the
// layer-error bound calculators, and finite-horizon convergence-condition
// checks.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "fedais/common.hpp"
#include "fedais/cost_metrics.hpp"

namespace fedais {

// Constant-rate delay model: c simulated time units per local epoch, o per
// synchronization event, optional bandwidth for converting ledger bytes to
// time (0 disables it), and the total runtime budget the bound divides by.
struct DelayModel {
  double c = 1.0;
  double o = 10.0;
  double bandwidth = 0.0;
  double c_total = 1000.0;

  void validate() const {
    if (!(c > 0.0) || o < 0.0) throw ParameterError("delay model: c > 0, o >= 0");
  }
};

enum class SyncMode { full, periodic };

// Per-epoch time: full synchronization pays the communication delay every
// epoch, periodic amortizes it over tau epochs.
inline double round_runtime(const DelayModel& m, int tau, SyncMode mode) {
  m.validate();
  if (tau < 1) throw ParameterError("round_runtime: tau >= 1");
  if (mode == SyncMode::full) return m.c + m.o;
  return m.c + m.o / static_cast<double>(tau);
}

struct ErrorBoundResult {
  double value = 0.0;
  // eta*lambda + eta^2*lambda^2*tau*(tau-1) <= 1; false means the bound's
  // learning-rate hypothesis is violated and the value is only formal.
  bool lr_condition_ok = true;
};

// Minimal expected squared gradient norm after a c_total runtime budget:
//   2*(F0 - F_inf)/(eta*c_total) * (c + o/tau) + eta^2*lambda^2*zeta_sq*(tau-1).
// Decreasing in tau through the runtime term, increasing through the noise
// term; convex for tau >= 1.
inline ErrorBoundResult error_bound(double f0, double f_inf, double eta, double lambda,
                                    double zeta_sq, double tau, const DelayModel& m) {
  m.validate();
  if (!(m.c_total > 0.0)) throw ParameterError("error_bound: c_total > 0");
  if (!(eta > 0.0) || !(lambda > 0.0) || !(zeta_sq > 0.0))
    throw ParameterError("error_bound: eta, lambda, zeta_sq > 0");
  if (!(tau >= 1.0)) throw ParameterError("error_bound: tau >= 1");
  ErrorBoundResult r;
  r.value = 2.0 * (f0 - f_inf) / (eta * m.c_total) * (m.c + m.o / tau) +
            eta * eta * lambda * lambda * zeta_sq * (tau - 1.0);
  r.lr_condition_ok = eta * lambda + eta * eta * lambda * lambda * tau * (tau - 1.0) <= 1.0;
  return r;
}

// Interior minimizer of the error bound in continuous tau:
//   tau_t = sqrt( 2*(F_t - F_inf)*o / (eta^3 * c_total * lambda^2 * zeta_sq) ).
inline double theoretical_tau(double f_t, double f_inf, double o, double eta, double c_total,
                              double lambda, double zeta_sq) {
  if (!(o > 0.0) || !(eta > 0.0) || !(c_total > 0.0) || !(lambda > 0.0) || !(zeta_sq > 0.0))
    throw ParameterError("theoretical_tau: all inputs must be positive");
  double radicand = 2.0 * (f_t - f_inf) * o / (eta * eta * eta * c_total * lambda * lambda * zeta_sq);
  if (!(radicand > 0.0)) throw ParameterError("theoretical_tau: F_t must exceed F_inf");
  return std::sqrt(radicand);
}

// The constant-free fallback rule, driven by test loss:
//   tau_t = ceil( sqrt(F_t / F_0) * tau_0 ), clamped to >= 1.
// The clamp matters at F_t = 0, where a literal ceil would disable
// synchronization forever.
inline int practical_tau_value(double f_t, double f0, int tau0) {
  if (!(f0 > 0.0)) throw ParameterError("practical_tau: F_0 > 0");
  if (!(f_t >= 0.0)) throw ParameterError("practical_tau: F_t >= 0");
  if (tau0 < 1) throw ParameterError("practical_tau: tau_0 >= 1");
  double raw = std::sqrt(f_t / f0) * static_cast<double>(tau0);
  auto tau = static_cast<int>(std::ceil(raw));
  return tau < 1 ? 1 : tau;
}

struct SyncSchedule {
  struct Entry {
    int round = 0;
    double f_t = 0.0;
    int tau = 1;
  };

  int tau0 = 2;
  double f0 = 0.0;  // objective (test loss) at theta_0
  int tau_t = 2;
  std::vector<Entry> history;
};

inline SyncSchedule make_schedule(int tau0, double f0) {
  if (tau0 < 1) throw ParameterError("make_schedule: tau_0 >= 1");
  if (!(f0 > 0.0)) throw ParameterError("make_schedule: F_0 > 0");
  return {tau0, f0, tau0, {}};
}

// Applies the practical rule and appends to the schedule history.
inline int practical_tau(double f_t, SyncSchedule& schedule, int round) {
  int tau = practical_tau_value(f_t, schedule.f0, schedule.tau0);
  schedule.tau_t = tau;
  schedule.history.push_back({round, f_t, tau});
  return tau;
}

// Finite-horizon partial sums of the convergence conditions
//   sum eta_r*tau_r (should grow), sum eta_r^2*tau_r and
//   sum eta_r^3*tau_r^2 (should stay bounded).
struct ConvergenceReport {
  double sum_eta_tau = 0.0;
  double sum_eta2_tau = 0.0;
  double sum_eta3_tau2 = 0.0;
  bool constant_eta = true;
  int max_tau = 0;
  int rounds = 0;
};

inline ConvergenceReport check_convergence_conditions(std::span<const double> etas,
                                                      std::span<const int> taus) {
  if (etas.size() != taus.size())
    throw ParameterError("check_convergence_conditions: length mismatch");
  ConvergenceReport r;
  r.rounds = static_cast<int>(etas.size());
  for (std::size_t i = 0; i < etas.size(); ++i) {
    double eta = etas[i], tau = taus[i];
    r.sum_eta_tau += eta * tau;
    r.sum_eta2_tau += eta * eta * tau;
    r.sum_eta3_tau2 += eta * eta * eta * tau * tau;
    if (etas[i] != etas[0]) r.constant_eta = false;
    r.max_tau = std::max(r.max_tau, taus[i]);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Layer-error bound calculators.

// Final-output error bound for the historical estimator:
//   sum_{l=1}^{L-1} (alpha1*alpha2)^(L-l) * degree^(L-l) * layer_err[l-1],
// alpha1 the activation Lipschitz constant, alpha2 the per-layer
// aggregation gain, both instantiated from measurements. layer_err scales
// each term by the observed staleness error of that layer's inputs; pass
// ones to reproduce the unscaled form. Empty sum (L = 1) is zero.
inline double output_error_bound(double alpha1, double alpha2, double degree, int num_layers,
                                    std::span<const double> layer_err = {}) {
  if (num_layers < 1) throw ParameterError("output_error_bound: L >= 1");
  if (!layer_err.empty() && layer_err.size() != static_cast<std::size_t>(num_layers - 1))
    throw ParameterError("output_error_bound: layer_err size != L-1");
  double bound = 0.0;
  for (int l = 1; l <= num_layers - 1; ++l) {
    double amp = std::pow(alpha1 * alpha2 * degree, num_layers - l);
    bound += amp * (layer_err.empty() ? 1.0 : layer_err[l - 1]);
  }
  return bound;
}

// Gradient-error bound induced by the output error: lambda * max_v ||h~ - h||.
inline double gradient_error_bound(double lambda, double max_output_err) {
  if (!(lambda >= 0.0)) throw ParameterError("gradient_error_bound: lambda >= 0");
  return lambda * max_output_err;
}

// Schedule history CSV: round, objective value, interval, and the two
// error-bound terms evaluated at that interval.
inline void export_schedule_csv(const SyncSchedule& s, const std::string& path, double eta,
                                double lambda, double zeta_sq, const DelayModel& m) {
  std::ofstream out(path);
  if (!out) throw IoError("export_schedule_csv: cannot open " + path);
  out << "round,f_t,tau,bound_runtime_term,bound_noise_term\n";
  for (const auto& e : s.history) {
    double term1 = 0.0, term2 = 0.0;
    if (lambda > 0.0 && zeta_sq > 0.0 && m.c_total > 0.0) {
      term1 = 2.0 * (e.f_t) / (eta * m.c_total) * (m.c + m.o / e.tau);
      term2 = eta * eta * lambda * lambda * zeta_sq * (e.tau - 1.0);
    }
    out << e.round << ',' << format_double(e.f_t) << ',' << e.tau << ','
        << format_double(term1) << ',' << format_double(term2) << "\n";
  }
}

}  // namespace fedais
