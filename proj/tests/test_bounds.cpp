#include <cmath>
#include <vector>

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <gtest/gtest.h>

#include "clalign/bounds.hpp"

using namespace clalign;
using namespace clalign::bounds;
using Big = boost::multiprecision::cpp_bin_float_50;

namespace {

Big big_epsilon(int b, int t, double delta) {
  const Big arg = Big(t) * b / Big(delta);
  if (arg <= 1) return 0;
  return sqrt(log(arg) / (2 * Big(b)));
}

Big big_delta(double c, Big eps, double tau) {
  return 2 * exp(2 / Big(tau)) * (1 / Big(c) + eps) / (1 - 1 / Big(c) - eps);
}

Big big_sim_bound(Big sum_eta, double tau, int b, Big delta) {
  return exp(sum_eta / (2 * Big(tau) * tau * b)) * sum_eta / (Big(tau) * sqrt(Big(b))) * delta;
}

void expect_rel(double value, const Big& reference, double tol = 1e-10) {
  const double ref = static_cast<double>(reference);
  EXPECT_LE(std::abs(value - ref), tol * std::abs(ref)) << value << " vs " << ref;
}

}  // namespace

TEST(Epsilon, WorkedExample) {
  EXPECT_NEAR(epsilon_B_delta(512, 100, 0.01), 0.1228, 5e-5);
  expect_rel(epsilon_B_delta(512, 100, 0.01), big_epsilon(512, 100, 0.01));
}

TEST(Epsilon, DegenerateConfidenceIsZero) {
  EXPECT_EQ(epsilon_B_delta(4, 3, 12.0), 0.0);
  EXPECT_TRUE(is_degenerate_confidence(4, 3, 12.0));
  EXPECT_FALSE(is_degenerate_confidence(4, 3, 0.1));
}

TEST(Epsilon, DecreasingInBatchSize) {
  double previous = INFINITY;
  for (int b : {2, 8, 32, 128, 512, 2048}) {
    const double eps = epsilon_B_delta(b, 100, 0.1);
    EXPECT_LT(eps, previous);
    previous = eps;
  }
}

TEST(DeltaFactor, DegenerateEpsilonGivesTwoE) {
  const double d = delta_C(2, 4, 3, 12.0, 2.0);
  EXPECT_NEAR(d, 2.0 * std::exp(1.0), 1e-14);
}

TEST(DeltaFactor, LargeClassLimit) {
  EXPECT_NEAR(delta_from_epsilon(1e9, 0.0, 0.5), 0.0, 1e-6);
}

TEST(DeltaFactor, WorkedExample) {
  const double d = delta_C(10, 128, 100, 0.1, 0.5);
  EXPECT_NEAR(d, 50.1, 0.1);
  expect_rel(d, big_delta(10, big_epsilon(128, 100, 0.1), 0.5));
}

TEST(DeltaFactor, DenominatorNonpositiveThrows) {
  EXPECT_THROW(delta_C(2, 2, 100, 0.01, 0.5), DenominatorNonpositive);
  EXPECT_THROW(delta_from_epsilon(2, 0.5, 0.5), DenominatorNonpositive);
}

TEST(DeltaFactor, MonotoneInClassesAndTau) {
  double previous = INFINITY;
  for (int c : {2, 4, 10, 100, 1000}) {
    const double d = delta_C(c, 1024, 100, 0.1, 0.5);
    EXPECT_LT(d, previous);
    previous = d;
  }
  previous = INFINITY;
  for (double tau : {0.1, 0.25, 0.5, 1.0, 2.0}) {
    const double d = delta_C(10, 128, 100, 0.1, tau);
    EXPECT_LT(d, previous);
    previous = d;
  }
}

TEST(DeltaFactor, AgreesWithExtendedPrecisionGrid) {
  for (int c : {3, 10, 64, 1000}) {
    for (int b : {64, 128, 512}) {
      for (double tau : {0.1, 0.5, 2.0}) {
        expect_rel(delta_C(c, b, 100, 0.05, tau), big_delta(c, big_epsilon(b, 100, 0.05), tau));
      }
    }
  }
}

TEST(SimBound, ZeroStepsIsZero) { EXPECT_EQ(sim_coupling_bound(0.0, 0.5, 128, 50.0), 0.0); }

TEST(SimBound, WorkedExample) {
  const double d = delta_C(10, 128, 100, 0.1, 0.5);
  const double bound = sim_coupling_bound(10.0, 0.5, 128, d);
  EXPECT_NEAR(bound, 104.0, 1.0);
  expect_rel(bound, big_sim_bound(10, 0.5, 128, big_delta(10, big_epsilon(128, 100, 0.1), 0.5)));
}

TEST(SimBound, MonotoneInStepSum) {
  double previous = -1.0;
  for (double s : {0.0, 0.1, 1.0, 10.0, 100.0}) {
    const double bound = sim_coupling_bound(s, 0.5, 32, 3.0);
    EXPECT_GT(bound, previous);
    previous = bound;
  }
}

TEST(SimBound, DecreasingInClasses) {
  double previous = INFINITY;
  for (int c : {2, 4, 10, 64}) {
    const double bound = sim_coupling_bound(10.0, 0.5, 256, delta_C(c, 256, 100, 0.1, 0.5));
    EXPECT_LT(bound, previous);
    previous = bound;
  }
}

TEST(SimBound, BatchDirectionFollowsEtaScaling) {
  // eta(B) = eta0 (B / 32)^k, T fixed; the bound at fixed T is
  // exp(eta T/(2 tau^2 B)) eta T/(tau sqrt B) Delta(B).
  auto bound_at = [](int b, double k) {
    const double eta = 0.1 * std::pow(b / 32.0, k);
    return sim_coupling_bound(eta * 100, 0.5, b, delta_C(10, b, 100, 0.1, 0.5));
  };
  for (double k : {0.0, 0.25}) {
    EXPECT_GT(bound_at(64, k), bound_at(128, k));
    EXPECT_GT(bound_at(128, k), bound_at(512, k));
  }
  EXPECT_LT(bound_at(128, 1.0), bound_at(512, 1.0));
}

TEST(DriftRecurrence, UnrollsBelowTerminalBound) {
  const double d = 5.0;
  double drift = 0.0;
  for (int t = 0; t < 200; ++t) drift = drift_recurrence_step(drift, 0.2, 0.5, 16, d);
  EXPECT_LE(drift, sim_coupling_bound(40.0, 0.5, 16, d) * (1 + 1e-12));
  EXPECT_NEAR(per_step_gap_bound(0.0, 0.5, 16, d), d / (0.5 * 4.0), 1e-14);
}

TEST(MetricLowerBounds, Values) {
  EXPECT_EQ(cka_lower(0.0), 1.0);
  EXPECT_EQ(cka_lower(1.0), 0.0);
  EXPECT_NEAR(cka_lower(0.5), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(rsa_lower(0.0), 1.0);
  EXPECT_EQ(rsa_lower(1.0), 0.0);
  EXPECT_NEAR(rsa_lower(0.25), 0.6, 1e-15);
  EXPECT_NEAR(rho_from_drift(2.0, 8.0), 0.25, 1e-15);
  EXPECT_NEAR(r_from_drift(3.0, 9.0, 2.0), 0.5, 1e-15);
  EXPECT_THROW(rho_from_drift(1.0, 0.0), std::invalid_argument);
  EXPECT_THROW(r_from_drift(1.0, 4.0, 0.0), std::invalid_argument);
}

TEST(ParamDrift, ZeroStepsAndSmallBetaLimit) {
  EXPECT_EQ(param_drift_bound(2.0, 0.3, 0.5, 4.0, 0.0), 0.0);
  const double limit = 2.0 / 0.5 * 4.0 * 7.0;
  EXPECT_NEAR(param_drift_bound(2.0, 1e-8, 0.5, 4.0, 7.0) / limit, 1.0, 1e-6);
  EXPECT_THROW(param_drift_bound(2.0, 0.0, 0.5, 4.0, 1.0), std::invalid_argument);
}

TEST(ParamDrift, MonotoneInInputs) {
  const double base = param_drift_bound(1.0, 0.2, 0.5, 3.0, 2.0);
  EXPECT_GT(param_drift_bound(1.5, 0.2, 0.5, 3.0, 2.0), base);
  EXPECT_GT(param_drift_bound(1.0, 0.2, 0.5, 3.5, 2.0), base);
  EXPECT_GT(param_drift_bound(1.0, 0.2, 0.5, 3.0, 2.5), base);
}

TEST(Fidelity, ZeroInputsGiveZero) {
  const std::vector<double> none;
  EXPECT_EQ(surrogate_fidelity_bound(2.0, 3.0, 0.5, 16, none, none), 0.0);
}

TEST(Fidelity, ConstantScheduleClosedForm) {
  const double eta = 0.05, xi = 0.7, l = 1.5, m = 2.0, tau = 0.5;
  const int b = 16, t = 40;
  const std::vector<double> etas(t, eta), xis(t, xi);
  const double s = eta * t;
  const double expected = std::exp(s / (2 * tau * tau * b)) *
                          (std::sqrt(2.0) * (l * l + 1) / (tau * std::sqrt(b)) * s +
                           m / 2 * eta * eta * t * xi);
  EXPECT_NEAR(surrogate_fidelity_bound(l, m, tau, b, etas, xis) / expected, 1.0, 1e-12);
}

TEST(Fidelity, SquareSummableSecondTermStaysBounded) {
  auto second_term = [](int t) {
    std::vector<double> etas(t), xis(t, 1.0);
    for (int k = 0; k < t; ++k) etas[k] = 0.1 / (k + 1);
    const double with_m = surrogate_fidelity_bound(0.0, 2.0, 0.5, 16, etas, xis);
    const double without = surrogate_fidelity_bound(0.0, 0.0, 0.5, 16, etas, xis);
    double s = 0.0;
    for (double e : etas) s += e;
    return (with_m - without) / std::exp(s / (2 * 0.25 * 16));
  };
  const double limit = 0.01 * M_PI * M_PI / 6.0;
  EXPECT_LT(second_term(10000), limit);
  EXPECT_NEAR(second_term(10000), limit, 1e-5);
}

TEST(Evaluate, ReportsWorkedExample) {
  BoundInputs in;
  in.schedule = ScheduleSpec{ScheduleKind::kConstant, 0.1, 0, 100, {}};
  const auto r = evaluate(in);
  ASSERT_TRUE(r.delta_factor && r.sim_drift_bound);
  EXPECT_NEAR(*r.sim_drift_bound, 104.0, 1.0);
  EXPECT_FALSE(r.cka_lower.has_value());
  const auto j = to_json(r);
  EXPECT_TRUE(j.contains("inputs"));
}

TEST(Evaluate, InvalidDeltaLeavesBoundsUnset) {
  BoundInputs in;
  in.num_classes = 2;
  in.batch_size = 2;
  in.delta = 0.01;
  in.schedule = ScheduleSpec{ScheduleKind::kConstant, 0.1, 0, 100, {}};
  const auto r = evaluate(in);
  EXPECT_FALSE(r.delta_factor.has_value());
  EXPECT_FALSE(r.sim_drift_bound.has_value());
  EXPECT_FALSE(r.notes.empty());
}
