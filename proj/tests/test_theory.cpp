#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "distlearn/distgen.hpp"
#include "distlearn/random.hpp"
#include "distlearn/targets.hpp"
#include "distlearn/theory.hpp"

using namespace distlearn;

namespace {

StepDensity1D uniform_on(double lo, double hi) { return StepDensity1D({lo, hi}, {1.0 / (hi - lo)}); }

// Random step density on [lo, hi] with `n` pieces of random widths.
StepDensity1D random_step(RandomStream& rng, double lo, double hi, std::size_t n) {
  std::vector<double> cuts(n - 1);
  for (double& c : cuts) c = lo + (hi - lo) * rng.uniform();
  std::sort(cuts.begin(), cuts.end());
  std::vector<double> x{lo};
  for (double c : cuts)
    if (c > x.back()) x.push_back(c);
  if (hi > x.back()) x.push_back(hi);
  std::vector<double> mass(x.size() - 1);
  double total = 0.0;
  for (double& m : mass) total += (m = rng.exponential());
  std::vector<double> f(mass.size());
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = mass[i] / total / (x[i + 1] - x[i]);
  // Fix roundoff in the total mass on the last interval.
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < f.size(); ++i) acc += f[i] * (x[i + 1] - x[i]);
  f.back() = (1.0 - acc) / (x.back() - x[x.size() - 2]);
  return StepDensity1D(x, f);
}

// Brute-force W1 by fine Riemann sum of |F_a - F_b|.
double w1_riemann(const StepDensity1D& a, const StepDensity1D& b, double lo, double hi, int steps) {
  const double h = (hi - lo) / steps;
  double sum = 0.0;
  for (int i = 0; i < steps; ++i) {
    const double x = lo + (i + 0.5) * h;
    sum += std::abs(a.cdf(x) - b.cdf(x)) * h;
  }
  return sum;
}

}  // namespace

TEST(StepDensity1D, EnforcesInvariants) {
  EXPECT_THROW(StepDensity1D({0.0}, {}), std::invalid_argument);
  EXPECT_THROW(StepDensity1D({0.0, 1.0}, {0.5}), std::invalid_argument);
  EXPECT_THROW(StepDensity1D({0.0, 1.0, 1.0}, {0.5, 0.5}), std::invalid_argument);
  EXPECT_THROW(StepDensity1D({0.0, 1.0, 2.0}, {1.5, -0.5}), std::invalid_argument);
  const auto u = uniform_on(-2.0, 2.0);
  EXPECT_EQ(u.cdf(-3.0), 0.0);
  EXPECT_EQ(u.cdf(3.0), 1.0);
  EXPECT_DOUBLE_EQ(u.cdf(0.0), 0.5);
}

TEST(QuantileStepDensity, SingleMedian) {
  const std::vector<double> q{0.0};
  const auto s = quantile_step_density(q, {-2.0, 2.0});
  ASSERT_EQ(s.intervals(), 2u);
  EXPECT_EQ(s.breakpoints(), (std::vector<double>{-2.0, 0.0, 2.0}));
  EXPECT_DOUBLE_EQ(s.density()[0], 0.25);
  EXPECT_DOUBLE_EQ(s.density()[1], 0.25);
}

TEST(QuantileStepDensity, UniformIsAFixedPoint) {
  for (std::size_t K : {1u, 3u, 9u, 50u}) {
    std::vector<double> q(K);
    for (std::size_t k = 1; k <= K; ++k) q[k - 1] = -2.0 + 4.0 * static_cast<double>(k) / static_cast<double>(K + 1);
    const auto s = quantile_step_density(q, {-2.0, 2.0});
    EXPECT_EQ(s.intervals(), K + 1);
    for (double f : s.density()) EXPECT_NEAR(f, 0.25, 1e-12);
    EXPECT_NEAR(w1_1d(s, uniform_on(-2.0, 2.0)), 0.0, 1e-14);
  }
}

TEST(QuantileStepDensity, IntegratesToOne) {
  RandomStream rng(1);
  const auto d = sample_distribution(BinGrid::cube(1, {-2.0, 2.0}, 37), rng);
  for (std::size_t K : {1u, 10u, 200u}) {
    const auto s = quantile_reconstruction(d, K);
    double mass = 0.0;
    for (std::size_t i = 0; i < s.intervals(); ++i) mass += s.mass(i);
    EXPECT_NEAR(mass, 1.0, 1e-12);
    EXPECT_NEAR(s.cumulative().back(), 1.0, 1e-12);
  }
}

TEST(QuantileStepDensity, TiesCollapseAndMassMovesForward) {
  // Q = (0, 0, 1) on [-2, 2]: the zero-width interval (0, 0] passes its 1/4
  // to (0, 1].
  const std::vector<double> q{0.0, 0.0, 1.0};
  const auto s = quantile_step_density(q, {-2.0, 2.0});
  EXPECT_EQ(s.breakpoints(), (std::vector<double>{-2.0, 0.0, 1.0, 2.0}));
  EXPECT_DOUBLE_EQ(s.mass(0), 0.25);
  EXPECT_DOUBLE_EQ(s.mass(1), 0.5);
  EXPECT_DOUBLE_EQ(s.mass(2), 0.25);
  // A tie with the right end moves the last quarter back.
  const std::vector<double> r{-1.0, 0.5, 2.0};
  const auto t = quantile_step_density(r, {-2.0, 2.0});
  EXPECT_EQ(t.breakpoints(), (std::vector<double>{-2.0, -1.0, 0.5, 2.0}));
  EXPECT_DOUBLE_EQ(t.mass(2), 0.5);
}

TEST(QuantileStepDensity, RejectsBadInput) {
  const std::vector<double> outside{-3.0}, unsorted{1.0, 0.0};
  EXPECT_THROW(quantile_step_density(outside, {-2.0, 2.0}), std::domain_error);
  EXPECT_THROW(quantile_step_density(unsorted, {-2.0, 2.0}), std::invalid_argument);
}

TEST(QuantileStepDensity, ReconstructionIsIdempotent) {
  // A step density whose breakpoints are its own k/(K+1) quantiles is
  // reproduced exactly by the reconstruction.
  RandomStream rng(2);
  const std::size_t K = 7;
  std::vector<double> x{-2.0};
  for (std::size_t k = 1; k <= K; ++k) x.push_back(-2.0 + 4.0 * (k + 0.3 * rng.uniform()) / (K + 1.5));
  x.push_back(2.0);
  std::vector<double> f(K + 1);
  for (std::size_t i = 0; i <= K; ++i) f[i] = 1.0 / static_cast<double>(K + 1) / (x[i + 1] - x[i]);
  const StepDensity1D s(x, f);
  const std::vector<double> q(x.begin() + 1, x.end() - 1);
  const auto r = quantile_step_density(q, {-2.0, 2.0});
  EXPECT_EQ(r.breakpoints(), s.breakpoints());
  for (std::size_t i = 0; i <= K; ++i) EXPECT_NEAR(r.density()[i], s.density()[i], 1e-12);
}

TEST(W1, Examples) {
  const auto a = uniform_on(0.0, 1.0), b = uniform_on(0.0, 2.0);
  EXPECT_EQ(w1_1d(a, a), 0.0);
  EXPECT_NEAR(w1_1d(a, b), 0.5, 1e-15);
  EXPECT_NEAR(w1_1d(b, a), 0.5, 1e-15);
}

TEST(W1, TranslationGivesShift) {
  RandomStream rng(3);
  const auto a = random_step(rng, -2.0, 1.0, 8);
  for (double delta : {0.1, 0.37, 1.0}) {
    std::vector<double> x = a.breakpoints();
    for (double& v : x) v += delta;
    const StepDensity1D b(x, a.density());
    EXPECT_NEAR(w1_1d(a, b), delta, 1e-12);
  }
}

TEST(W1, MatchesRiemannSumWithSignChanges) {
  RandomStream rng(4);
  for (int i = 0; i < 5; ++i) {
    const auto a = random_step(rng, -2.0, 2.0, 6);
    const auto b = random_step(rng, -2.0, 2.0, 9);
    EXPECT_NEAR(w1_1d(a, b), w1_riemann(a, b, -2.0, 2.0, 400000), 1e-7);
  }
}

TEST(W1, MetricPropertiesOnRandomTriples) {
  RandomStream rng(5);
  for (int i = 0; i < 200; ++i) {
    const auto a = random_step(rng, -2.0, 2.0, 1 + rng.below(12));
    const auto b = random_step(rng, -2.0, 2.0, 1 + rng.below(12));
    const auto c = random_step(rng, -2.0, 2.0, 1 + rng.below(12));
    EXPECT_EQ(w1_1d(a, b), w1_1d(b, a));
    EXPECT_LE(w1_1d(a, c), w1_1d(a, b) + w1_1d(b, c) + 1e-10);
    EXPECT_GE(w1_1d(a, b), 0.0);
  }
}

TEST(ConvergenceStudy, UniformDistributionIsReconstructedExactly) {
  const BinGrid g = BinGrid::cube(1, {-2.0, 2.0}, 10);
  const BinDistribution u(g, std::vector<double>(10, 0.1));
  for (std::size_t K : {1u, 7u, 50u, 200u}) EXPECT_NEAR(w1_1d(to_step_density(u), quantile_reconstruction(u, K)), 0.0, 1e-13);
}

TEST(ConvergenceStudy, MaxW1DoesNotIncreaseWhenKDoubles) {
  RandomStream rng(6);
  const std::vector<std::size_t> Ks{10, 20, 40, 80, 160};
  const auto rows = convergence_study(20, Ks, BinGrid::cube(1, {-2.0, 2.0}, 50), rng);
  ASSERT_EQ(rows.size(), Ks.size());
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_LE(rows[i].max_w1, rows[i - 1].max_w1);
  for (const auto& r : rows) {
    EXPECT_LE(r.mean_w1, r.max_w1);
    // Hoelder step: sqrt(diam * W1) >= W1 whenever W1 <= diam.
    EXPECT_GE(r.w2_bound, r.max_w1);
    EXPECT_DOUBLE_EQ(r.w2_bound, std::sqrt(4.0 * r.max_w1));
  }
}

TEST(ConvergenceStudy, RejectsBadInput) {
  RandomStream rng(7);
  const std::vector<std::size_t> down{20, 10}, ok{10};
  EXPECT_THROW(convergence_study(5, down, BinGrid::cube(1, {-2.0, 2.0}, 10), rng), std::invalid_argument);
  EXPECT_THROW(convergence_study(5, ok, BinGrid::cube(2, {-2.0, 2.0}, 10), rng), DimensionMismatch);
}
