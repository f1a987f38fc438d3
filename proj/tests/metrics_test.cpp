#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "snowcast/core/rng.hpp"
#include "snowcast/metrics/metrics.hpp"
#include "support/metric_oracle.hpp"

using namespace snowcast;
using namespace snowcast::metrics;
using V = std::vector<double>;

namespace {

const V kObs{1, 2, 3};
const V kSim{1.1, 1.9, 3.2};

V random_series(Rng& rng, std::size_t n, double lo, double hi) {
  V v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

V scaled(const V& v, double a, double b = 0.0) {
  V out(v);
  for (double& x : out) x = a * x + b;
  return out;
}

}  // namespace

TEST(Mae, Examples) {
  EXPECT_EQ(mae(kObs, kObs), 0.0);
  EXPECT_NEAR(mae(kObs, kSim), 0.4 / 3.0, 1e-15);
  EXPECT_THROW(mae(kObs, V{1, 2}), ContractError);
  EXPECT_THROW(mae(V{}, V{}), ContractError);
}

TEST(Rmse, Examples) {
  EXPECT_EQ(rmse(kObs, kObs), 0.0);
  EXPECT_NEAR(rmse(kObs, kSim), std::sqrt(0.02), 1e-15);
  EXPECT_NEAR(rmse(V{0, 0}, V{0, 2}), std::sqrt(2.0), 1e-15);
  EXPECT_EQ(mae(V{0, 0}, V{0, 2}), 1.0);
}

TEST(RSquared, Examples) {
  EXPECT_NEAR(r_squared(kObs, scaled(kObs, 2.0, 1.0)), 1.0, 1e-15);
  EXPECT_NEAR(r_squared(kObs, V{3, 2, 1}), 1.0, 1e-15);
  EXPECT_THROW(r_squared(kObs, V{4, 4, 4}), UndefinedMetricError);
  EXPECT_THROW(r_squared(V{4, 4, 4}, kObs), UndefinedMetricError);
}

TEST(Nse, Examples) {
  EXPECT_EQ(nse(kObs, kObs), 1.0);
  EXPECT_EQ(nse(kObs, V{2, 2, 2}), 0.0);
  EXPECT_NEAR(nse(kObs, kSim), 0.97, 1e-14);
  EXPECT_THROW(nse(V{1, 1}, V{1, 2}), UndefinedMetricError);
}

TEST(Kge, PerfectPrediction) {
  const KgeResult k = kge(kObs, kObs);
  EXPECT_EQ(k.value, 1.0);
  EXPECT_EQ(k.r, 1.0);
  EXPECT_EQ(k.beta, 1.0);
  EXPECT_EQ(k.gamma, 1.0);
}

TEST(Kge, DoubledSimulation) {
  const KgeResult k = kge(kObs, scaled(kObs, 2.0));
  EXPECT_NEAR(k.r, 1.0, 1e-15);
  EXPECT_NEAR(k.beta, 2.0, 1e-15);
  EXPECT_NEAR(k.gamma, 1.0, 1e-15);
  EXPECT_NEAR(k.value, 0.0, 1e-14);
}

TEST(Kge, ShiftedSimulation) {
  const double c = 0.5, mean = 2.0;
  const KgeResult k = kge(kObs, scaled(kObs, 1.0, c));
  EXPECT_NEAR(k.r, 1.0, 1e-15);
  EXPECT_NEAR(k.beta, (mean + c) / mean, 1e-15);
  // same spread, larger mean: CV ratio is mean / (mean + c)
  EXPECT_NEAR(k.gamma, mean / (mean + c), 1e-15);
  EXPECT_LT(k.gamma, 1.0);
  const double expected = 1.0 - std::sqrt(std::pow(k.beta - 1.0, 2) + std::pow(k.gamma - 1.0, 2));
  EXPECT_NEAR(k.value, expected, 1e-14);
}

TEST(Kge, ZeroMeansUndefined) {
  EXPECT_THROW(kge(V{-1, 0, 1}, V{1, 2, 3}), UndefinedMetricError);
  EXPECT_THROW(kge(V{1, 2, 3}, V{-1, 0, 1}), UndefinedMetricError);
}

TEST(EvaluateAll, PerfectPrediction) {
  const MetricReport m = evaluate_all(kObs, kObs);
  EXPECT_EQ(m.mae, 0.0);
  EXPECT_EQ(m.rmse, 0.0);
  EXPECT_EQ(m.r2, 1.0);
  EXPECT_EQ(m.kge, 1.0);
  EXPECT_EQ(m.nse, 1.0);
  EXPECT_EQ(m.n, 3u);
}

TEST(EvaluateAll, MatchesIndividualCallsBitExactly) {
  Rng rng(1);
  const V obs = random_series(rng, 100, 0.2, 3.0), sim = random_series(rng, 100, 0.2, 3.0);
  const MetricReport m = evaluate_all(obs, sim);
  EXPECT_EQ(m.mae, mae(obs, sim));
  EXPECT_EQ(m.rmse, rmse(obs, sim));
  EXPECT_EQ(m.r2, r_squared(obs, sim));
  EXPECT_EQ(m.nse, nse(obs, sim));
  EXPECT_EQ(m.kge, kge(obs, sim).value);
}

TEST(EvaluateAll, MatchesBruteForceOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.below(300);
    const V obs = random_series(rng, n, 0.05, 5.0);
    V sim = obs;
    const double noise = rng.uniform(0.0, 2.0), bias = rng.uniform(-0.5, 0.5);
    for (double& s : sim) s = s * rng.uniform(0.7, 1.3) + bias + noise * rng.normal();
    const MetricReport m = evaluate_all(obs, sim);
    const oracle::Metrics o = oracle::brute_force_metrics(obs, sim);
    ASSERT_NEAR(m.mae, o.mae, 1e-10);
    ASSERT_NEAR(m.rmse, o.rmse, 1e-10);
    ASSERT_NEAR(m.r2, o.r2, 1e-10);
    ASSERT_NEAR(m.nse, o.nse, 1e-10);
    ASSERT_NEAR(m.kge, o.kge, 1e-10) << "trial " << trial;
    ASSERT_NEAR(m.kge_parts.gamma, o.gamma, 1e-10);
  }
}

TEST(MetricProperties, RmseDominatesMae) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(50);
    const V obs = random_series(rng, n, -3, 3), sim = random_series(rng, n, -3, 3);
    EXPECT_GE(rmse(obs, sim), mae(obs, sim));
  }
  // equal absolute errors give equality
  const V obs{1, 5, -2, 0};
  const V sim{1.5, 4.5, -1.5, -0.5};
  EXPECT_NEAR(rmse(obs, sim), mae(obs, sim), 1e-15);
}

TEST(MetricProperties, NseRmseIdentity) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(100);
    const V obs = random_series(rng, n, 0, 2), sim = random_series(rng, n, 0, 2);
    double mean = 0.0, ss = 0.0;
    for (double o : obs) mean += o;
    mean /= static_cast<double>(n);
    for (double o : obs) ss += (o - mean) * (o - mean);
    const double r = rmse(obs, sim);
    EXPECT_NEAR(nse(obs, sim), 1.0 - r * r * static_cast<double>(n) / ss, 1e-12);
  }
}

TEST(MetricProperties, AffineBehaviour) {
  Rng rng(5);
  const V obs = random_series(rng, 60, 0.5, 2.0), sim = random_series(rng, 60, 0.5, 2.0);
  const V sim2 = scaled(sim, 2.0);
  EXPECT_NEAR(r_squared(obs, sim), r_squared(obs, scaled(sim, 3.5, -1.0)), 1e-12);
  EXPECT_NE(nse(obs, sim), nse(obs, sim2));
  EXPECT_NE(kge(obs, sim).value, kge(obs, sim2).value);
  const KgeResult a = kge(obs, sim), b = kge(obs, sim2);
  EXPECT_NEAR(a.gamma, b.gamma, 1e-12);
  EXPECT_NEAR(b.beta, 2.0 * a.beta, 1e-12);
}

TEST(MetricProperties, ReportInvariants) {
  Rng rng(6);
  for (int trial = 0; trial < 300; ++trial) {
    const V obs = random_series(rng, 20, 0.1, 1.0), sim = random_series(rng, 20, 0.1, 1.0);
    const MetricReport m = evaluate_all(obs, sim);
    EXPECT_GE(m.mae, 0.0);
    EXPECT_GE(m.rmse, m.mae);
    EXPECT_GE(m.r2, 0.0);
    EXPECT_LE(m.r2, 1.0);
    EXPECT_LE(m.nse, 1.0);
    EXPECT_LE(m.kge, 1.0);
  }
}

TEST(PopulationStd, DividesByN) {
  EXPECT_DOUBLE_EQ(population_std(V{1, 3}), 1.0);
  EXPECT_DOUBLE_EQ(population_std(V{2, 4, 4, 4, 5, 5, 7, 9}), 2.0);
}
