#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <numeric>
#include <vector>

#include "distlearn/distgen.hpp"
#include "distlearn/features.hpp"
#include "distlearn/random.hpp"
#include "distlearn/targets.hpp"

using namespace distlearn;

namespace {

// Replays a fixed list of exponential draws, optionally scaled.
struct ScriptedStream {
  std::vector<double> draws;
  double scale = 1.0;
  std::size_t next = 0;
  double exponential() { return scale * draws.at(next++); }
};

// Wraps a stream and multiplies its exponential draws by a constant.
struct ScaledStream {
  RandomStream base;
  double scale;
  double exponential() { return scale * base.exponential(); }
};

BinGrid line(double lo, double hi, std::size_t bins) { return BinGrid({{lo, hi}}, {bins}); }

}  // namespace

TEST(BinGrid, RejectsInvalidShapes) {
  EXPECT_THROW(BinGrid({}, {}), std::invalid_argument);
  EXPECT_THROW(BinGrid({{0.0, 1.0}}, {0}), std::invalid_argument);
  EXPECT_THROW(BinGrid({{1.0, 1.0}}, {3}), std::invalid_argument);
  EXPECT_THROW(BinGrid({{0.0, 1.0}}, {2, 2}), DimensionMismatch);
}

TEST(BinGrid, CellCountOverflowIsAnError) {
  const std::size_t big = std::size_t{1} << 40;
  EXPECT_THROW(BinGrid::cube(2, {0.0, 1.0}, big), std::overflow_error);
}

TEST(BinGrid, FlatIndexVariesFirstAxisFastest) {
  const BinGrid g({{0.0, 1.0}, {0.0, 1.0}, {0.0, 1.0}}, {3, 4, 5});
  EXPECT_EQ(g.cell_count(), 60u);
  EXPECT_EQ(g.flat_index({1, 0, 0}), 1u);
  EXPECT_EQ(g.flat_index({0, 1, 0}), 3u);
  EXPECT_EQ(g.flat_index({0, 0, 1}), 12u);
  EXPECT_EQ(g.flat_index({2, 3, 4}), 2u + 3u * 3u + 4u * 12u);
  for (std::size_t cell = 0; cell < g.cell_count(); ++cell) {
    const std::vector<std::size_t> j{g.axis_index(cell, 0), g.axis_index(cell, 1), g.axis_index(cell, 2)};
    EXPECT_EQ(g.flat_index(j), cell);
  }
}

TEST(BinGrid, BinOfAssignsUpperBoundaryToLastBin) {
  const BinGrid g = line(-2.0, 2.0, 4);
  EXPECT_EQ(g.bin_of(0, -2.0), 0u);
  EXPECT_EQ(g.bin_of(0, -0.5), 1u);
  EXPECT_EQ(g.bin_of(0, 2.0), 3u);
  EXPECT_DOUBLE_EQ(g.edge(0, 0), -2.0);
  EXPECT_DOUBLE_EQ(g.edge(0, 4), 2.0);
}

TEST(BinDistribution, EnforcesInvariants) {
  const BinGrid g = line(0.0, 1.0, 2);
  EXPECT_THROW(BinDistribution(g, {0.5}), std::invalid_argument);
  EXPECT_THROW(BinDistribution(g, {1.5, -0.5}), std::invalid_argument);
  EXPECT_THROW(BinDistribution(g, {0.5, 0.6}), std::invalid_argument);
  EXPECT_NO_THROW(BinDistribution(g, {0.25, 0.75}));
}

TEST(SampleDistribution, SingleBinHasUnitMass) {
  RandomStream rng(3);
  const auto d = sample_distribution(line(0.0, 1.0, 1), rng);
  ASSERT_EQ(d.probs().size(), 1u);
  EXPECT_EQ(d.probs()[0], 1.0);
}

TEST(SampleDistribution, NormalizesRawDraws) {
  ScriptedStream s{{1.0, 3.0}};
  const auto d = sample_distribution(line(0.0, 1.0, 2), s);
  EXPECT_DOUBLE_EQ(d.probs()[0], 0.25);
  EXPECT_DOUBLE_EQ(d.probs()[1], 0.75);
}

TEST(SampleDistribution, TwoByTwoGridIsPositiveAndNormalized) {
  RandomStream rng(11);
  const auto d = sample_distribution(BinGrid::cube(2, {-2.0, 2.0}, 2), rng);
  ASSERT_EQ(d.probs().size(), 4u);
  EXPECT_NEAR(std::accumulate(d.probs().begin(), d.probs().end(), 0.0), 1.0, 1e-12);
  for (double p : d.probs()) EXPECT_GT(p, 0.0);
}

TEST(SampleDistribution, NormalizedForManySeeds) {
  const BinGrid g = BinGrid::cube(2, {-2.0, 2.0}, 30);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    RandomStream rng(seed);
    const auto d = sample_distribution(g, rng);
    EXPECT_NEAR(std::accumulate(d.probs().begin(), d.probs().end(), 0.0), 1.0, 1e-12);
  }
}

TEST(SampleDistribution, ExponentialRateIsImmaterial) {
  const BinGrid g = line(-2.0, 2.0, 50);
  for (double c : {1e-3, 0.5, 7.0, 1e4}) {
    RandomStream plain(42);
    ScaledStream scaled{RandomStream(42), c};
    const auto a = sample_distribution(g, plain);
    const auto b = sample_distribution(g, scaled);
    for (std::size_t j = 0; j < a.probs().size(); ++j) EXPECT_NEAR(a.probs()[j], b.probs()[j], 1e-15);
  }
}

TEST(SamplePoints, SingleBinIsUniformOnSupport) {
  const BinDistribution d(line(0.0, 1.0, 1), {1.0});
  RandomStream rng(5);
  const auto batch = sample_points(d, 5, rng);
  EXPECT_EQ(batch.size(), 5u);
  EXPECT_TRUE(batch.within(d.grid()));

  RandomStream rng2(6);
  const auto big = sample_points(d, 100000, rng2);
  const auto x = big.column(0);
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  EXPECT_NEAR(mean, 0.5, 3.0 * std::sqrt(1.0 / 12.0 / 1e5));
}

TEST(SamplePoints, ZeroMassBinIsNeverChosen) {
  const BinDistribution d(line(-2.0, 2.0, 2), {1.0, 0.0});
  RandomStream rng(8);
  const auto batch = sample_points(d, 10000, rng);
  for (double x : batch.column(0)) {
    EXPECT_GE(x, -2.0);
    EXPECT_LE(x, 0.0);
  }
}

TEST(SamplePoints, UniformMeanWithinThreeSigma) {
  const BinDistribution d(line(-2.0, 2.0, 4), {0.25, 0.25, 0.25, 0.25});
  RandomStream rng(9);
  const std::size_t n = 1000000;
  const auto batch = sample_points(d, n, rng);
  const auto x = batch.column(0);
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  EXPECT_LT(std::abs(mean), 3.0 * std::sqrt(4.0 / 3.0) / std::sqrt(static_cast<double>(n)));
}

TEST(SamplePoints, RejectsZeroCount) {
  const BinDistribution d(line(0.0, 1.0, 1), {1.0});
  RandomStream rng(1);
  EXPECT_THROW(sample_points(d, 0, rng), std::invalid_argument);
}

TEST(SamplePoints, SameStreamSameBatch) {
  RandomStream r0(77);
  const auto d = sample_distribution(BinGrid::cube(2, {-2.0, 2.0}, 5), r0);
  RandomStream a(1), b(1);
  EXPECT_EQ(sample_points(d, 1000, a).points(), sample_points(d, 1000, b).points());
}

TEST(SamplePoints, UniformHistogramPassesChiSquare) {
  const BinGrid g = BinGrid::cube(2, {-2.0, 2.0}, 5);
  const std::size_t cells = g.cell_count();
  const BinDistribution d(g, std::vector<double>(cells, 1.0 / static_cast<double>(cells)));
  const double critical = boost::math::quantile(boost::math::chi_squared(static_cast<double>(cells - 1)), 0.999);
  const std::size_t n = 100000, seeds = 40;
  std::size_t passed = 0;
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    RandomStream rng(1000 + seed);
    const auto h = bin_histogram(sample_points(d, n, rng), g);
    const double expected = static_cast<double>(n) / static_cast<double>(cells);
    double chi2 = 0.0;
    for (double f : h.values) {
      const double count = f * static_cast<double>(n);
      chi2 += (count - expected) * (count - expected) / expected;
    }
    if (chi2 < critical) ++passed;
  }
  EXPECT_GE(static_cast<double>(passed), 0.95 * static_cast<double>(seeds));
}

TEST(ExactCdf1d, Examples) {
  const BinDistribution u(line(-2.0, 2.0, 4), {0.25, 0.25, 0.25, 0.25});
  EXPECT_DOUBLE_EQ(exact_cdf_1d(u, 0.0), 0.5);
  EXPECT_EQ(exact_cdf_1d(u, 2.0), 1.0);
  EXPECT_EQ(exact_cdf_1d(u, -2.0), 0.0);
  const BinDistribution d(line(-2.0, 2.0, 2), {0.25, 0.75});
  EXPECT_DOUBLE_EQ(exact_cdf_1d(d, 1.0), 0.625);
}

TEST(ExactCdf1d, ClampsOutsideSupport) {
  const BinDistribution d(line(-2.0, 2.0, 2), {0.25, 0.75});
  EXPECT_EQ(exact_cdf_1d(d, -10.0), 0.0);
  EXPECT_EQ(exact_cdf_1d(d, 10.0), 1.0);
}

TEST(ExactCdf1d, MonotoneWithBinDensityAsDerivative) {
  RandomStream rng(21);
  const BinGrid g = line(-2.0, 2.0, 20);
  const auto d = sample_distribution(g, rng);
  double prev = 0.0;
  for (int i = 0; i <= 4000; ++i) {
    const double x = -2.0 + 4.0 * i / 4000.0;
    const double f = exact_cdf_1d(d, x);
    EXPECT_GE(f, prev);
    prev = f;
  }
  const double h = 1e-6;
  for (std::size_t j = 0; j < 20; ++j) {
    const double mid = g.edge(0, j) + 0.5 * g.bin_width(0);
    const double slope = (exact_cdf_1d(d, mid + h) - exact_cdf_1d(d, mid - h)) / (2.0 * h);
    EXPECT_NEAR(slope, d.probs()[j] / g.bin_width(0), 1e-6);
  }
  // Right-continuity at bin edges (the CDF is continuous).
  for (std::size_t j = 1; j < 20; ++j) {
    const double e = g.edge(0, j);
    EXPECT_NEAR(exact_cdf_1d(d, e + 1e-12), exact_cdf_1d(d, e), 1e-10);
  }
}

TEST(Marginal, OneDimensionalIsIdentity) {
  const BinDistribution d(line(-2.0, 2.0, 2), {0.25, 0.75});
  EXPECT_EQ(marginal(d, 0).probs(), d.probs());
}

TEST(Marginal, RowSums) {
  // Cells (j0, j1) -> flat j0 + 2*j1: p(0,0)=0.1, p(1,0)=0.2, p(0,1)=0.3, p(1,1)=0.4.
  // Summing over axis 1 for each j0 gives (0.4, 0.6); over axis 0 gives (0.3, 0.7).
  const BinDistribution d(BinGrid::cube(2, {-2.0, 2.0}, 2), {0.1, 0.2, 0.3, 0.4});
  const auto m1 = marginal(d, 1);
  EXPECT_NEAR(m1.probs()[0], 0.3, 1e-15);
  EXPECT_NEAR(m1.probs()[1], 0.7, 1e-15);
  const auto m0 = marginal(d, 0);
  EXPECT_NEAR(m0.probs()[0], 0.4, 1e-15);
  EXPECT_NEAR(m0.probs()[1], 0.6, 1e-15);
  EXPECT_THROW(marginal(d, 2), std::out_of_range);
}

TEST(Marginal, NestedRowsIndexedByFirstAxis) {
  // p[j0][j1] = ((0.1, 0.2), (0.3, 0.4)); the axis-0 marginal is the row sums.
  const BinGrid g = BinGrid::cube(2, {-2.0, 2.0}, 2);
  const double nested[2][2] = {{0.1, 0.2}, {0.3, 0.4}};
  std::vector<double> p(4);
  for (std::size_t j0 = 0; j0 < 2; ++j0)
    for (std::size_t j1 = 0; j1 < 2; ++j1) p[g.flat_index({j0, j1})] = nested[j0][j1];
  const auto m0 = marginal(BinDistribution(g, p), 0);
  EXPECT_NEAR(m0.probs()[0], 0.3, 1e-15);
  EXPECT_NEAR(m0.probs()[1], 0.7, 1e-15);
}

TEST(Marginal, ProductFactorizes) {
  const std::vector<double> a{0.1, 0.6, 0.3}, b{0.5, 0.2, 0.2, 0.1};
  const BinGrid g({{-2.0, 2.0}, {0.0, 1.0}}, {3, 4});
  std::vector<double> p(12);
  for (std::size_t j1 = 0; j1 < 4; ++j1)
    for (std::size_t j0 = 0; j0 < 3; ++j0) p[g.flat_index({j0, j1})] = a[j0] * b[j1];
  const BinDistribution d(g, p);
  const auto m0 = marginal(d, 0);
  const auto m1 = marginal(d, 1);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(m0.probs()[j], a[j], 1e-15);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(m1.probs()[j], b[j], 1e-15);
  EXPECT_EQ(m1.grid().support()[0], (Interval{0.0, 1.0}));
}

TEST(Marginal, CommutesWithExactMoments) {
  RandomStream rng(31);
  const auto d = sample_distribution(BinGrid({{-2.0, 2.0}, {-1.0, 3.0}}, {7, 9}), rng);
  const auto m0 = marginal(d, 0);
  const auto m1 = marginal(d, 1);
  EXPECT_NEAR(std::accumulate(m0.probs().begin(), m0.probs().end(), 0.0), 1.0, 1e-12);
  for (unsigned k = 0; k <= 5; ++k) {
    EXPECT_NEAR(exact_moment(m0, {k}), exact_moment(d, {k, 0}), 1e-12);
    EXPECT_NEAR(exact_moment(m1, {k}), exact_moment(d, {0, k}), 1e-11);
  }
}
