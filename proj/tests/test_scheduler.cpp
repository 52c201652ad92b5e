#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <vector>

#include "fedais/rng.hpp"
#include "fedais/scheduler.hpp"

using namespace fedais;

namespace {

// Golden-section minimizer over continuous tau in [lo, hi].
double golden_min(double lo, double hi, const std::function<double(double)>& f) {
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - phi * (b - a), d = a + phi * (b - a);
  for (int it = 0; it < 200; ++it) {
    if (f(c) < f(d))
      b = d;
    else
      a = c;
    c = b - phi * (b - a);
    d = a + phi * (b - a);
  }
  return (a + b) / 2.0;
}

}  // namespace

TEST_CASE("round runtime") {
  DelayModel m{1.0, 10.0, 0.0, 1000.0};

  SECTION("tau = 1 makes both modes equal") {
    REQUIRE(round_runtime(m, 1, SyncMode::full) == round_runtime(m, 1, SyncMode::periodic));
    REQUIRE(round_runtime(m, 1, SyncMode::full) == 11.0);
  }

  SECTION("c=1, o=10, tau=5 gives per-epoch time 3") {
    REQUIRE(round_runtime(m, 5, SyncMode::periodic) == 3.0);
  }

  SECTION("periodic time is non-increasing in tau") {
    double prev = round_runtime(m, 1, SyncMode::periodic);
    for (int tau = 2; tau <= 50; ++tau) {
      double cur = round_runtime(m, tau, SyncMode::periodic);
      REQUIRE(cur <= prev);
      prev = cur;
    }
  }

  SECTION("bad tau rejected") {
    REQUIRE_THROWS_AS(round_runtime(m, 0, SyncMode::full), ParameterError);
  }
}

TEST_CASE("error bound") {
  DelayModel m{1.0, 10.0, 0.0, 1000.0};
  double f0 = 2.0, f_inf = 0.1, eta = 0.05, lambda = 1.0, zeta_sq = 0.5;

  SECTION("tau = 1 removes the noise term") {
    auto r = error_bound(f0, f_inf, eta, lambda, zeta_sq, 1.0, m);
    double expected = 2.0 * (f0 - f_inf) * (m.c + m.o) / (eta * m.c_total);
    REQUIRE(r.value == Catch::Approx(expected).epsilon(1e-14));
  }

  SECTION("closed-form minimizer beats every integer tau on a grid") {
    double tau_star = theoretical_tau(f0, f_inf, m.o, eta, m.c_total, lambda, zeta_sq);
    int lo = std::max(1, static_cast<int>(std::floor(tau_star)));
    int hi = lo + 1;
    double best_near = std::min(error_bound(f0, f_inf, eta, lambda, zeta_sq, lo, m).value,
                                error_bound(f0, f_inf, eta, lambda, zeta_sq, hi, m).value);
    for (int tau = 1; tau <= 100; ++tau) {
      double v = error_bound(f0, f_inf, eta, lambda, zeta_sq, tau, m).value;
      REQUIRE(best_near <= v + 1e-12);
    }
  }

  SECTION("zero communication delay favors tau = 1") {
    DelayModel m0{1.0, 0.0, 0.0, 1000.0};
    double v1 = error_bound(f0, f_inf, eta, lambda, zeta_sq, 1.0, m0).value;
    for (int tau = 2; tau <= 30; ++tau)
      REQUIRE(v1 < error_bound(f0, f_inf, eta, lambda, zeta_sq, tau, m0).value);
  }

  SECTION("convex in continuous tau (second differences nonnegative)") {
    for (double tau = 1.0; tau <= 60.0; tau += 0.5) {
      double a = error_bound(f0, f_inf, eta, lambda, zeta_sq, tau, m).value;
      double b = error_bound(f0, f_inf, eta, lambda, zeta_sq, tau + 0.5, m).value;
      double c = error_bound(f0, f_inf, eta, lambda, zeta_sq, tau + 1.0, m).value;
      REQUIRE(a + c - 2.0 * b >= -1e-12);
    }
  }

  SECTION("learning-rate condition flag") {
    REQUIRE(error_bound(f0, f_inf, 0.01, 1.0, zeta_sq, 5.0, m).lr_condition_ok);
    REQUIRE_FALSE(error_bound(f0, f_inf, 0.5, 3.0, zeta_sq, 8.0, m).lr_condition_ok);
  }

  SECTION("nonpositive runtime budget rejected") {
    DelayModel bad{1.0, 10.0, 0.0, 0.0};
    REQUIRE_THROWS_AS(error_bound(f0, f_inf, eta, lambda, zeta_sq, 1.0, bad), ParameterError);
  }
}

TEST_CASE("theoretical tau") {
  SECTION("quadrupling the sync delay doubles tau") {
    double t1 = theoretical_tau(2.0, 0.0, 10.0, 0.05, 1000.0, 1.0, 0.5);
    double t2 = theoretical_tau(2.0, 0.0, 40.0, 0.05, 1000.0, 1.0, 0.5);
    REQUIRE(t2 == Catch::Approx(2.0 * t1).epsilon(1e-15));
  }

  SECTION("matches a golden-section minimizer of the bound within 1%") {
    Rng rng(404);
    int tested = 0;
    while (tested < 20) {
      DelayModel m{rng.uniform(0.5, 3.0), rng.uniform(1.0, 50.0), 0.0, rng.uniform(100.0, 5000.0)};
      double f0 = rng.uniform(0.5, 5.0);
      double f_inf = rng.uniform(0.0, 0.2);
      double eta = rng.uniform(0.01, 0.2);
      double lambda = rng.uniform(0.2, 3.0);
      double zeta_sq = rng.uniform(0.05, 2.0);
      double tau_rule = theoretical_tau(f0, f_inf, m.o, eta, m.c_total, lambda, zeta_sq);
      if (tau_rule < 2.0 || tau_rule > 300.0) continue;  // keep the minimizer interior
      double tau_gold = golden_min(1.0, 4.0 * tau_rule + 10.0, [&](double tau) {
        return error_bound(f0, f_inf, eta, lambda, zeta_sq, tau, m).value;
      });
      REQUIRE(std::abs(tau_rule - tau_gold) / tau_gold < 0.01);
      tested++;
    }
  }

  SECTION("F_t at the floor value is a parameter error") {
    REQUIRE_THROWS_AS(theoretical_tau(0.5, 0.5, 10.0, 0.05, 1000.0, 1.0, 0.5), ParameterError);
  }

  SECTION("nonpositive constants rejected") {
    REQUIRE_THROWS_AS(theoretical_tau(1.0, 0.0, 0.0, 0.05, 1000.0, 1.0, 0.5), ParameterError);
    REQUIRE_THROWS_AS(theoretical_tau(1.0, 0.0, 10.0, 0.05, 1000.0, 0.0, 0.5), ParameterError);
  }
}

TEST_CASE("practical tau") {
  SECTION("F_t = F_0 reproduces tau_0 exactly") {
    REQUIRE(practical_tau_value(2.0, 2.0, 2) == 2);
    REQUIRE(practical_tau_value(0.37, 0.37, 7) == 7);
  }

  SECTION("quartered loss with tau_0 = 2 gives 1") {
    REQUIRE(practical_tau_value(0.5, 2.0, 2) == 1);
  }

  SECTION("zero loss clamps to 1") {
    REQUIRE(practical_tau_value(0.0, 2.0, 2) == 1);
  }

  SECTION("non-increasing along any non-increasing loss sequence") {
    SyncSchedule s = make_schedule(2, 1.8);
    std::vector<double> losses = {1.8, 1.5, 1.5, 1.2, 0.9, 0.5, 0.44, 0.2, 0.05};
    int prev = 1 << 20;
    int round = 1;
    for (double f : losses) {
      int tau = practical_tau(f, s, round++);
      REQUIRE(tau <= prev);
      REQUIRE(tau >= 1);
      prev = tau;
    }
    REQUIRE(s.history.size() == losses.size());
  }

  SECTION("output stays within [1, tau0 * ceil(sqrt(Fmax/F0))]") {
    SyncSchedule s = make_schedule(3, 0.5);
    double f_max = 8.0;
    int cap = 3 * static_cast<int>(std::ceil(std::sqrt(f_max / 0.5)));
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
      int tau = practical_tau_value(rng.uniform(0.0, f_max), 0.5, 3);
      REQUIRE(tau >= 1);
      REQUIRE(tau <= cap);
    }
  }

  SECTION("bad inputs rejected") {
    REQUIRE_THROWS_AS(practical_tau_value(1.0, 0.0, 2), ParameterError);
    REQUIRE_THROWS_AS(practical_tau_value(-1.0, 1.0, 2), ParameterError);
    REQUIRE_THROWS_AS(make_schedule(0, 1.0), ParameterError);
  }
}

TEST_CASE("convergence condition partial sums") {
  SECTION("constant eta and tau") {
    const int rounds = 12;
    std::vector<double> etas(rounds, 0.01);
    std::vector<int> taus(rounds, 3);
    auto r = check_convergence_conditions(etas, taus);
    REQUIRE(r.sum_eta_tau == Catch::Approx(0.01 * rounds * 3).epsilon(1e-12));
    REQUIRE(r.sum_eta2_tau == Catch::Approx(0.01 * 0.01 * rounds * 3).epsilon(1e-12));
    REQUIRE(r.sum_eta3_tau2 == Catch::Approx(std::pow(0.01, 3) * rounds * 9).epsilon(1e-12));
    REQUIRE(r.constant_eta);
    REQUIRE(r.max_tau == 3);
  }

  SECTION("decreasing tau sequence is dominated by the constant one") {
    std::vector<double> etas(6, 0.01);
    std::vector<int> taus_dec = {6, 5, 4, 3, 2, 1};
    std::vector<int> taus_const(6, 6);
    auto dec = check_convergence_conditions(etas, taus_dec);
    auto cons = check_convergence_conditions(etas, taus_const);
    REQUIRE(dec.sum_eta2_tau <= cons.sum_eta2_tau);
    REQUIRE(dec.sum_eta3_tau2 <= cons.sum_eta3_tau2);
  }

  SECTION("report is pure") {
    std::vector<double> etas = {0.1, 0.05};
    std::vector<int> taus = {2, 1};
    auto a = check_convergence_conditions(etas, taus);
    auto b = check_convergence_conditions(etas, taus);
    REQUIRE(a.sum_eta_tau == b.sum_eta_tau);
    REQUIRE(a.sum_eta3_tau2 == b.sum_eta3_tau2);
  }
}

TEST_CASE("output bound calculator") {
  SECTION("single layer has an empty sum") {
    REQUIRE(output_error_bound(1.0, 2.0, 5.0, 1) == 0.0);
  }

  SECTION("two layers reproduce hand arithmetic") {
    // L=2: bound = alpha1 * alpha2 * degree * eps_1.
    std::vector<double> eps = {0.25};
    REQUIRE(output_error_bound(1.0, 2.0, 4.0, 2, eps) == Catch::Approx(2.0));
  }

  SECTION("three layers accumulate amplified terms") {
    std::vector<double> eps = {1.0, 1.0};
    double expected = std::pow(1.5 * 2.0, 2) + 1.5 * 2.0;  // (a1*a2*deg)^2 + (a1*a2*deg)
    REQUIRE(output_error_bound(1.5, 2.0, 1.0, 3, eps) == Catch::Approx(expected));
  }

  SECTION("gradient error bound is linear in the output error") {
    REQUIRE(gradient_error_bound(2.5, 0.4) == Catch::Approx(1.0));
    REQUIRE_THROWS_AS(gradient_error_bound(-1.0, 0.4), ParameterError);
  }
}

TEST_CASE("schedule CSV export") {
  SyncSchedule s = make_schedule(2, 1.0);
  practical_tau(0.81, s, 1);
  practical_tau(0.36, s, 2);
  DelayModel m{1.0, 10.0, 0.0, 1000.0};
  export_schedule_csv(s, "schedule_tmp.csv", 0.001, 1.0, 0.5, m);
  std::ifstream in("schedule_tmp.csv");
  std::string header;
  std::getline(in, header);
  REQUIRE(header == "round,f_t,tau,bound_runtime_term,bound_noise_term");
  std::string row;
  int rows = 0;
  while (std::getline(in, row))
    if (!row.empty()) rows++;
  REQUIRE(rows == 2);
  std::remove("schedule_tmp.csv");
}
