#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "snowcast/core/rng.hpp"
#include "snowcast/svr/svr.hpp"

using namespace snowcast;
using namespace snowcast::svr;

namespace {

struct Data {
  Tensor X;
  std::vector<double> y;
};

Data line(std::size_t n, double slope = 2.0) {
  Data d{Tensor({n, 1}), {}};
  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(i) / static_cast<double>(n - 1);
    d.X.at(i, 0) = x;
    d.y.push_back(slope * x);
  }
  return d;
}

Data noisy_wave(Rng& rng, std::size_t n, std::size_t dim) {
  Data d{Tensor({n, dim}), {}};
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < dim; ++c) {
      d.X.at(i, c) = rng.uniform(-1.0, 1.0);
      s += d.X.at(i, c);
    }
    d.y.push_back(std::sin(2.0 * s) + 0.1 * rng.normal());
  }
  return d;
}

// Written independently of the library: plain double loops over the dual.
double ref_kernel(const Tensor& X, std::size_t i, std::size_t j, const SvrSpec& spec) {
  double dot = 0.0, d2 = 0.0;
  for (std::size_t c = 0; c < X.dim(1); ++c) {
    dot += X.at(i, c) * X.at(j, c);
    d2 += (X.at(i, c) - X.at(j, c)) * (X.at(i, c) - X.at(j, c));
  }
  return spec.kernel == KernelKind::linear ? dot : std::exp(-d2 / (2.0 * spec.sigma * spec.sigma));
}

double ref_dual_objective(const Data& d, const std::vector<double>& a, const std::vector<double>& as,
                          const SvrSpec& spec) {
  const std::size_t n = d.y.size();
  double quad = 0.0, lin = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) quad += (a[i] - as[i]) * (a[j] - as[j]) * ref_kernel(d.X, i, j, spec);
    lin += spec.epsilon * (a[i] + as[i]) - d.y[i] * (a[i] - as[i]);
  }
  return 0.5 * quad + lin;
}

double ref_kkt(const Data& d, const SvrSolution& s) {
  const std::size_t n = d.y.size();
  const double C = s.spec.C, eps = s.spec.epsilon;
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double f = s.bias;
    for (std::size_t j = 0; j < n; ++j) f += (s.alpha[j] - s.alpha_star[j]) * ref_kernel(d.X, i, j, s.spec);
    const double r = d.y[i] - f;
    if (s.alpha[i] == 0.0) worst = std::max(worst, r - eps);
    else if (s.alpha[i] == C) worst = std::max(worst, eps - r);
    else worst = std::max(worst, std::abs(r - eps));
    if (s.alpha_star[i] == 0.0) worst = std::max(worst, -r - eps);
    else if (s.alpha_star[i] == C) worst = std::max(worst, eps + r);
    else worst = std::max(worst, std::abs(-r - eps));
  }
  return worst;
}

}  // namespace

TEST(Kernel, RbfOfIdenticalPointsIsOne) {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> x(3);
    for (double& v : x) v = rng.uniform(-5, 5);
    EXPECT_EQ(kernel_eval(x, x, {.kernel = KernelKind::rbf, .sigma = rng.uniform(0.1, 4.0)}), 1.0);
  }
}

TEST(Kernel, RbfDistanceTwoUnitSigma) {
  const std::vector<double> a{0.0}, b{2.0};
  EXPECT_NEAR(kernel_eval(a, b, {.kernel = KernelKind::rbf, .sigma = 1.0}), std::exp(-2.0), 1e-12);
  EXPECT_NEAR(kernel_eval(a, b, {.kernel = KernelKind::rbf, .sigma = 1.0}), 0.1353, 5e-5);
}

TEST(Kernel, LinearIsDotProduct) {
  EXPECT_EQ(kernel_eval(std::vector<double>{1, 2}, std::vector<double>{3, 4}, {}), 11.0);
}

TEST(Kernel, DimensionMismatch) {
  EXPECT_THROW(kernel_eval(std::vector<double>{1, 2}, std::vector<double>{3}, {}), DimensionError);
}

TEST(Kernel, SigmaHeuristicMatchesGammaScale) {
  Tensor X({4, 2}, {0, 1, 2, 3, 4, 5, 6, 7});
  // var over all 8 entries = 5.25, gamma = 1 / (2 * 5.25), sigma^2 = 1 / (2 gamma) = 5.25
  EXPECT_NEAR(rbf_sigma_heuristic(X), std::sqrt(5.25), 1e-14);
}

TEST(SvrFit, TargetsInsideTubeGiveZeroCoefficients) {
  Tensor X({5, 1}, {0, 1, 2, 3, 4});
  const std::vector<double> y{1.0, 1.05, 0.97, 1.02, 0.99};
  const SvrModel m = svr_fit(X, y, {.C = 1.0, .epsilon = 0.1});
  EXPECT_TRUE(m.coef.empty());
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / 5.0;
  EXPECT_DOUBLE_EQ(m.bias, mean);
  EXPECT_DOUBLE_EQ(svr_predict(m, std::vector<double>{17.0}), mean);
}

TEST(SvrFit, NoiselessLineRecovered) {
  for (std::size_t n : {20u, 50u}) {
    const Data d = line(n);
    const SvrSpec spec{.C = 10.0, .epsilon = 0.01};
    const SvrModel m = svr_fit(d.X, d.y, spec);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(svr_predict(m, d.X.data().subspan(i, 1)), d.y[i], 0.05);
    // off-sample points on the same line
    for (double x : {0.05, 0.333, 0.91}) EXPECT_NEAR(svr_predict(m, std::vector<double>{x}), 2.0 * x, 0.05);
  }
}

TEST(SvrFit, SupportVectorPredictionsWithinTube) {
  const Data d = line(20);
  const SvrModel m = svr_fit(d.X, d.y, {.C = 10.0, .epsilon = 0.01});
  ASSERT_FALSE(m.coef.empty());
  for (std::size_t r = 0; r < m.coef.size(); ++r) {
    const double x = m.support_vectors.at(r, 0);
    EXPECT_NEAR(svr_predict(m, std::vector<double>{x}), 2.0 * x, 0.01 + 0.05);
  }
}

TEST(SvrFit, KktResidualsBelowTolerance) {
  Rng rng(3);
  for (int trial = 0; trial < 8; ++trial) {
    const Data d = noisy_wave(rng, 40, 2);
    for (KernelKind kernel : {KernelKind::linear, KernelKind::rbf}) {
      for (double C : {0.1, 1.0, 10.0}) {
        const SvrSpec spec{.C = C, .epsilon = 0.1, .kernel = kernel};
        const SvrSolution s = svr_solve(d.X, d.y, spec);
        ASSERT_TRUE(s.converged);
        EXPECT_LT(max_kkt_violation(d.X, d.y, s), 1e-3);
        EXPECT_LT(ref_kkt(d, s), 1e-3) << to_string(kernel) << " C=" << C;
      }
    }
  }
}

TEST(SvrFit, DualFeasibility) {
  Rng rng(4);
  const Data d = noisy_wave(rng, 60, 3);
  for (double C : {0.1, 1.0, 10.0}) {
    const SvrSolution s = svr_solve(d.X, d.y, {.C = C, .epsilon = 0.01, .kernel = KernelKind::rbf});
    double balance = 0.0;
    for (std::size_t i = 0; i < s.alpha.size(); ++i) {
      EXPECT_GE(s.alpha[i], 0.0);
      EXPECT_LE(s.alpha[i], C);
      EXPECT_GE(s.alpha_star[i], 0.0);
      EXPECT_LE(s.alpha_star[i], C);
      EXPECT_LE(std::abs(s.alpha[i] - s.alpha_star[i]), C);
      balance += s.alpha[i] - s.alpha_star[i];
    }
    EXPECT_LT(std::abs(balance), 1e-8);
  }
}

// The dual is convex, so no feasible pairwise move may lower its objective by
// more than the solver tolerance allows.
TEST(SvrFit, NoFeasiblePairMoveImprovesDualObjective) {
  Rng rng(5);
  const Data d = noisy_wave(rng, 25, 2);
  const SvrSpec base{.C = 1.0, .epsilon = 0.05, .kernel = KernelKind::rbf};
  const SvrSolution s = svr_solve(d.X, d.y, base);
  const double f0 = ref_dual_objective(d, s.alpha, s.alpha_star, s.spec);
  const std::size_t n = d.y.size();
  for (int t = 0; t < 400; ++t) {
    std::vector<double> a = s.alpha, as = s.alpha_star;
    // moving a_i up and a_j up by the same amount, or a_i and a*_i together,
    // both keep sum(a - a*) fixed
    const std::size_t i = rng.below(n), j = rng.below(n);
    const double step = rng.uniform(-0.05, 0.05);
    if (rng.uniform() < 0.5) {
      a[i] += step;
      a[j] -= step;
    } else {
      a[i] += step;
      as[i] += step;
    }
    bool feasible = true;
    for (std::size_t q = 0; q < n; ++q) {
      feasible = feasible && a[q] >= 0 && a[q] <= base.C && as[q] >= 0 && as[q] <= base.C;
    }
    if (!feasible) continue;
    EXPECT_GE(ref_dual_objective(d, a, as, s.spec), f0 - 1e-3 * std::abs(step)) << "trial " << t;
  }
}

TEST(SvrFit, TubeHoldsOnNoiselessData) {
  Rng rng(6);
  Data d{Tensor({80, 3}), {}};
  for (std::size_t i = 0; i < 80; ++i) {
    double s = 0.5;
    for (std::size_t c = 0; c < 3; ++c) {
      d.X.at(i, c) = rng.uniform(0.0, 1.0);
      s += (c + 1.0) * 0.3 * d.X.at(i, c);
    }
    d.y.push_back(s);
  }
  const double eps = 0.02;
  const SvrModel m = svr_fit(d.X, d.y, {.C = 10.0, .epsilon = eps});
  const std::vector<double> pred = svr_predict(m, d.X);
  std::size_t inside = 0;
  for (std::size_t i = 0; i < 80; ++i) inside += std::abs(pred[i] - d.y[i]) <= eps + 1e-9;
  EXPECT_GE(inside, 72u);
}

TEST(SvrFit, PermutationInvariance) {
  Rng rng(7);
  const Data d = noisy_wave(rng, 50, 2);
  for (KernelKind kernel : {KernelKind::linear, KernelKind::rbf}) {
    const SvrSpec spec{.C = 1.0, .epsilon = 0.05, .kernel = kernel};
    const SvrModel m = svr_fit(d.X, d.y, spec);
    std::vector<std::size_t> perm(50);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Data p{Tensor({50, 2}), {}};
    for (std::size_t i = 0; i < 50; ++i) {
      p.X.at(i, 0) = d.X.at(perm[i], 0);
      p.X.at(i, 1) = d.X.at(perm[i], 1);
      p.y.push_back(d.y[perm[i]]);
    }
    const SvrModel mp = svr_fit(p.X, p.y, spec);
    for (int t = 0; t < 30; ++t) {
      const std::vector<double> x{rng.uniform(-1, 1), rng.uniform(-1, 1)};
      EXPECT_NEAR(svr_predict(m, x), svr_predict(mp, x), 1e-8);
    }
  }
}

TEST(SvrPredict, ZeroCoefficientModelReturnsBias) {
  SvrModel m;
  m.features = 2;
  m.bias = 0.375;
  EXPECT_EQ(svr_predict(m, std::vector<double>{4.0, -1.0}), 0.375);
}

TEST(SvrPredict, WrongDimension) {
  const Data d = line(10);
  const SvrModel m = svr_fit(d.X, d.y, {.C = 1.0, .epsilon = 0.01});
  EXPECT_THROW(svr_predict(m, std::vector<double>{1.0, 2.0}), DimensionError);
}

TEST(SvrFit, Contracts) {
  EXPECT_THROW(svr_fit(Tensor({1, 1}), {1.0}, {}), ParameterError);
  EXPECT_THROW(svr_fit(Tensor({3, 1}), {1.0, 2.0}, {}), DimensionError);
  EXPECT_THROW(svr_fit(Tensor({2, 1}), {1.0, 2.0}, {.C = 0.0}), ParameterError);
  EXPECT_THROW(svr_fit(Tensor({2, 1}), {1.0, 2.0}, {.epsilon = -0.1}), ParameterError);
}

TEST(SvrModelIo, JsonRoundTripIsExact) {
  Rng rng(8);
  const Data d = noisy_wave(rng, 30, 2);
  const SvrModel m = svr_fit(d.X, d.y, {.C = 1.0, .epsilon = 0.05, .kernel = KernelKind::rbf});
  const SvrModel back = svr_from_json(nlohmann::json::parse(svr_to_json(m).dump()));
  EXPECT_EQ(back.coef, m.coef);
  EXPECT_EQ(back.support_vectors, m.support_vectors);
  EXPECT_EQ(back.bias, m.bias);
  EXPECT_EQ(back.spec.sigma, m.spec.sigma);
  for (int t = 0; t < 10; ++t) {
    const std::vector<double> x{rng.uniform(-1, 1), rng.uniform(-1, 1)};
    EXPECT_EQ(svr_predict(back, x), svr_predict(m, x));
  }
}
