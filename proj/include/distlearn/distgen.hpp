#pragma once

// Random bin distributions on a compact rectangle and i.i.d. sampling from
// them.
//
// Cell indexing: a lattice cell with 0-based per-axis indices (j_0, ..., j_{d-1})
// is stored at flat index j_0 + j_1*J_0 + j_2*J_0*J_1 + ..., i.e. axis 0 varies
// fastest.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "distlearn/errors.hpp"

namespace distlearn {

struct Interval {
  double lo = 0.0;
  double hi = 1.0;

  [[nodiscard]] double width() const noexcept { return hi - lo; }
  [[nodiscard]] bool contains(double x) const noexcept { return lo <= x && x <= hi; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

/// Axis-aligned support split into a regular lattice of cells.
class BinGrid {
 public:
  BinGrid(std::vector<Interval> support, std::vector<std::size_t> lattice)
      : support_(std::move(support)), lattice_(std::move(lattice)) {
    if (support_.empty()) throw std::invalid_argument("BinGrid: dimension must be >= 1");
    if (support_.size() != lattice_.size())
      throw DimensionMismatch("BinGrid: support and lattice have different dimensions");
    cells_ = 1;
    strides_.reserve(lattice_.size());
    for (std::size_t i = 0; i < lattice_.size(); ++i) {
      if (!(support_[i].lo < support_[i].hi))
        throw std::invalid_argument("BinGrid: empty interval on axis " + std::to_string(i));
      if (lattice_[i] == 0) throw std::invalid_argument("BinGrid: zero bins on axis " + std::to_string(i));
      strides_.push_back(cells_);
      if (cells_ > std::numeric_limits<std::size_t>::max() / lattice_[i])
        throw std::overflow_error("BinGrid: total cell count overflows size_t");
      cells_ *= lattice_[i];
    }
  }

  /// Same interval and bin count on every axis.
  static BinGrid cube(std::size_t dim, Interval interval, std::size_t bins) {
    return BinGrid(std::vector<Interval>(dim, interval), std::vector<std::size_t>(dim, bins));
  }

  [[nodiscard]] std::size_t dim() const noexcept { return support_.size(); }
  [[nodiscard]] std::size_t cell_count() const noexcept { return cells_; }
  [[nodiscard]] const std::vector<Interval>& support() const noexcept { return support_; }
  [[nodiscard]] const std::vector<std::size_t>& lattice() const noexcept { return lattice_; }
  [[nodiscard]] std::size_t stride(std::size_t axis) const { return strides_.at(axis); }
  [[nodiscard]] double bin_width(std::size_t axis) const {
    return support_.at(axis).width() / static_cast<double>(lattice_.at(axis));
  }

  /// Per-axis bin index of a flat cell index.
  [[nodiscard]] std::size_t axis_index(std::size_t cell, std::size_t axis) const {
    return (cell / strides_[axis]) % lattice_[axis];
  }

  [[nodiscard]] std::size_t flat_index(std::span<const std::size_t> index) const {
    if (index.size() != dim()) throw DimensionMismatch("BinGrid::flat_index: wrong index length");
    std::size_t cell = 0;
    for (std::size_t i = 0; i < dim(); ++i) {
      if (index[i] >= lattice_[i]) throw std::out_of_range("BinGrid::flat_index: index out of lattice");
      cell += index[i] * strides_[i];
    }
    return cell;
  }
  [[nodiscard]] std::size_t flat_index(std::initializer_list<std::size_t> index) const {
    return flat_index(std::span<const std::size_t>(index.begin(), index.size()));
  }

  /// Lower edge of bin `j` on `axis`.
  [[nodiscard]] double edge(std::size_t axis, std::size_t j) const {
    const auto& s = support_[axis];
    return j == lattice_[axis] ? s.hi : s.lo + static_cast<double>(j) * bin_width(axis);
  }

  /// Bin containing coordinate x on `axis`; the upper boundary belongs to the last bin.
  [[nodiscard]] std::size_t bin_of(std::size_t axis, double x) const {
    const auto& s = support_[axis];
    auto j = static_cast<std::size_t>((x - s.lo) / s.width() * static_cast<double>(lattice_[axis]));
    return std::min(j, lattice_[axis] - 1);
  }

  friend bool operator==(const BinGrid& a, const BinGrid& b) {
    return a.support_ == b.support_ && a.lattice_ == b.lattice_;
  }

 private:
  std::vector<Interval> support_;
  std::vector<std::size_t> lattice_;
  std::vector<std::size_t> strides_;
  std::size_t cells_ = 0;
};

/// Probability measure with constant density on every cell of a BinGrid.
class BinDistribution {
 public:
  static constexpr double kMassTolerance = 1e-12;

  BinDistribution(BinGrid grid, std::vector<double> probs) : grid_(std::move(grid)), probs_(std::move(probs)) {
    if (probs_.size() != grid_.cell_count())
      throw std::invalid_argument("BinDistribution: " + std::to_string(probs_.size()) + " probabilities for " +
                                  std::to_string(grid_.cell_count()) + " cells");
    double total = 0.0;
    for (double p : probs_) {
      if (!(p >= 0.0)) throw std::invalid_argument("BinDistribution: negative or NaN probability");
      total += p;
    }
    if (std::abs(total - 1.0) > kMassTolerance)
      throw std::invalid_argument("BinDistribution: probabilities sum to " + std::to_string(total));
  }

  [[nodiscard]] const BinGrid& grid() const noexcept { return grid_; }
  [[nodiscard]] std::size_t dim() const noexcept { return grid_.dim(); }
  [[nodiscard]] const std::vector<double>& probs() const noexcept { return probs_; }
  [[nodiscard]] double prob(std::size_t cell) const { return probs_.at(cell); }

 private:
  BinGrid grid_;
  std::vector<double> probs_;
};

/// N points in R^d, stored row-major.
class SampleBatch {
 public:
  SampleBatch(std::size_t dim, std::vector<double> points) : dim_(dim), points_(std::move(points)) {
    if (dim_ == 0) throw std::invalid_argument("SampleBatch: dimension must be >= 1");
    if (points_.empty() || points_.size() % dim_ != 0)
      throw std::invalid_argument("SampleBatch: point buffer is empty or not a multiple of the dimension");
  }

  [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
  [[nodiscard]] std::size_t size() const noexcept { return points_.size() / dim_; }
  [[nodiscard]] double operator()(std::size_t n, std::size_t axis) const { return points_[n * dim_ + axis]; }
  [[nodiscard]] std::span<const double> row(std::size_t n) const {
    return std::span<const double>(points_).subspan(n * dim_, dim_);
  }
  [[nodiscard]] const std::vector<double>& points() const noexcept { return points_; }

  [[nodiscard]] std::vector<double> column(std::size_t axis) const {
    if (axis >= dim_) throw DimensionMismatch("SampleBatch::column: axis out of range");
    std::vector<double> out(size());
    for (std::size_t n = 0; n < out.size(); ++n) out[n] = points_[n * dim_ + axis];
    return out;
  }

  [[nodiscard]] bool within(const BinGrid& grid) const {
    if (grid.dim() != dim_) return false;
    for (std::size_t n = 0; n < size(); ++n)
      for (std::size_t i = 0; i < dim_; ++i)
        if (!grid.support()[i].contains(points_[n * dim_ + i])) return false;
    return true;
  }

 private:
  std::size_t dim_;
  std::vector<double> points_;
};

/// Normalizes nonnegative cell weights into a BinDistribution.
inline BinDistribution distribution_from_weights(const BinGrid& grid, std::vector<double> weights) {
  if (weights.size() != grid.cell_count()) throw std::invalid_argument("distribution_from_weights: wrong length");
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total > 0.0) || !std::isfinite(total))
    throw std::invalid_argument("distribution_from_weights: weights must have positive finite total");
  for (double& w : weights) w /= total;
  return BinDistribution(grid, std::move(weights));
}

/// Random bin distribution: cell weights are i.i.d. exponential draws,
/// normalized to unit mass. The stream must provide `exponential()`.
template <class Stream>
BinDistribution sample_distribution(const BinGrid& grid, Stream& rng) {
  std::vector<double> weights(grid.cell_count());
  for (double& w : weights) w = rng.exponential();
  return distribution_from_weights(grid, std::move(weights));
}

/// Draws n i.i.d. points: a cell by inverse CDF over the cumulative cell
/// masses, then a uniform offset inside the cell on each axis. A guide table
/// starts the search near the answer; the cell found is the same as a binary
/// search would give.
template <class Stream>
SampleBatch sample_points(const BinDistribution& dist, std::size_t n, Stream& rng) {
  if (n == 0) throw std::invalid_argument("sample_points: n must be >= 1");
  const BinGrid& grid = dist.grid();
  const std::size_t d = grid.dim();

  std::vector<double> cumulative(dist.probs().size());
  std::partial_sum(dist.probs().begin(), dist.probs().end(), cumulative.begin());
  const double total = cumulative.back();
  const auto cells = static_cast<std::ptrdiff_t>(cumulative.size());

  // guide[g] = first cell whose cumulative mass exceeds level[g] <= u.
  const std::size_t G = cumulative.size();
  std::vector<double> level(G);
  std::vector<std::size_t> guide(G);
  for (std::size_t g = 0; g < G; ++g) {
    level[g] = static_cast<double>(g) * (total / static_cast<double>(G));
    guide[g] = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), level[g]) - cumulative.begin());
  }

  std::vector<double> lo(d), width(d);
  for (std::size_t i = 0; i < d; ++i) {
    lo[i] = grid.support()[i].lo;
    width[i] = grid.bin_width(i);
  }

  std::vector<double> points(n * d);
  for (std::size_t s = 0; s < n; ++s) {
    const double u = rng.uniform() * total;
    // First cell whose cumulative mass exceeds u; zero-mass cells are never chosen.
    std::size_t g = std::min(G - 1, static_cast<std::size_t>(u / total * static_cast<double>(G)));
    while (g > 0 && level[g] > u) --g;
    while (g + 1 < G && level[g + 1] <= u) ++g;
    std::size_t found = guide[g];
    while (found < G && cumulative[found] <= u) ++found;
    const auto cell = static_cast<std::size_t>(std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(found), cells - 1));
    for (std::size_t i = 0; i < d; ++i) {
      const auto j = static_cast<double>(grid.axis_index(cell, i));
      const double x = lo[i] + (j + rng.uniform()) * width[i];
      points[s * d + i] = std::min(x, grid.support()[i].hi);
    }
  }
  return SampleBatch(d, std::move(points));
}

/// Exact CDF of a 1-D bin distribution: piecewise linear, clamped to 0 below
/// the support and 1 above it.
inline double exact_cdf_1d(const BinDistribution& dist, double x) {
  if (dist.dim() != 1) throw DimensionMismatch("exact_cdf_1d: distribution is not 1-D");
  const BinGrid& grid = dist.grid();
  const Interval s = grid.support()[0];
  if (x <= s.lo) return 0.0;
  if (x >= s.hi) return 1.0;
  const std::size_t j = grid.bin_of(0, x);
  double below = 0.0;
  for (std::size_t k = 0; k < j; ++k) below += dist.probs()[k];
  const double frac = (x - grid.edge(0, j)) / grid.bin_width(0);
  return std::clamp(below + dist.probs()[j] * frac, 0.0, 1.0);
}

/// Marginal law along one axis. Exact: a per-cell-constant density has
/// per-bin-constant marginals.
inline BinDistribution marginal(const BinDistribution& dist, std::size_t axis) {
  const BinGrid& grid = dist.grid();
  if (axis >= grid.dim()) throw std::out_of_range("marginal: axis " + std::to_string(axis) + " out of range");
  if (grid.dim() == 1) return dist;
  std::vector<double> probs(grid.lattice()[axis], 0.0);
  for (std::size_t cell = 0; cell < grid.cell_count(); ++cell) probs[grid.axis_index(cell, axis)] += dist.probs()[cell];
  // Re-normalize against accumulated roundoff.
  const double total = std::accumulate(probs.begin(), probs.end(), 0.0);
  for (double& p : probs) p /= total;
  return BinDistribution(BinGrid({grid.support()[axis]}, {grid.lattice()[axis]}), std::move(probs));
}

}  // namespace distlearn
