#pragma once

// Distribution features estimated from a sample batch: empirical quantiles,
// mixed moments, quantiles/superquantiles of monomials, histograms, and a
// raw pass-through for the cylinder baseline.
//
// Quantiles use the nearest-rank rule: the level-p quantile of N values is the
// order statistic of 1-based rank ceil(p*N), clamped to [1, N]. Levels are
// k/(K+1); the rank is computed in integer arithmetic.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "distlearn/distgen.hpp"
#include "distlearn/errors.hpp"

namespace distlearn {

// ---------------------------------------------------------------------------
// Multi-indices

using MultiIndex = std::vector<unsigned>;

/// Number of multi-indices in N^d with total degree <= K, i.e. C(K+d, d).
inline std::size_t monomial_count(std::size_t max_degree, std::size_t dim) {
  std::size_t c = 1;
  for (std::size_t i = 1; i <= dim; ++i) c = c * (max_degree + i) / i;  // exact at every step
  return c;
}

/// All multi-indices of total degree <= K in R^d, ordered by increasing total
/// degree and lexicographically within a degree. The order is frozen: it is
/// the feature order of every moment-based scheme.
class MultiIndexSet {
 public:
  MultiIndexSet(std::size_t max_degree, std::size_t dim) : max_degree_(max_degree), dim_(dim) {
    if (dim == 0) throw std::invalid_argument("MultiIndexSet: dimension must be >= 1");
    indices_.reserve(monomial_count(max_degree, dim));
    MultiIndex current(dim, 0);
    for (std::size_t degree = 0; degree <= max_degree; ++degree) fill(current, 0, static_cast<unsigned>(degree));
  }

  [[nodiscard]] std::size_t size() const noexcept { return indices_.size(); }
  [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
  [[nodiscard]] std::size_t max_degree() const noexcept { return max_degree_; }
  [[nodiscard]] const MultiIndex& operator[](std::size_t i) const { return indices_[i]; }
  [[nodiscard]] auto begin() const { return indices_.begin(); }
  [[nodiscard]] auto end() const { return indices_.end(); }

 private:
  void fill(MultiIndex& current, std::size_t axis, unsigned remaining) {
    if (axis + 1 == dim_) {
      current[axis] = remaining;
      indices_.push_back(current);
      return;
    }
    for (unsigned k = 0; k <= remaining; ++k) {
      current[axis] = k;
      fill(current, axis + 1, remaining - k);
    }
  }

  std::size_t max_degree_;
  std::size_t dim_;
  std::vector<MultiIndex> indices_;
};

/// x^k by repeated multiplication. Every monomial in this library goes through
/// this (or an identical running product), so values computed along different
/// paths agree bit for bit.
inline double ipow(double x, unsigned k) noexcept {
  double r = 1.0;
  for (unsigned i = 0; i < k; ++i) r *= x;
  return r;
}

inline double monomial(std::span<const double> point, const MultiIndex& k) noexcept {
  double r = 1.0;
  for (std::size_t i = 0; i < k.size(); ++i) r *= ipow(point[i], k[i]);
  return r;
}

// ---------------------------------------------------------------------------
// Schemes

namespace scheme {
struct Quantile {
  std::size_t K = 200;
};
struct Moment {
  std::size_t K = 10;
};
struct MomentAndQuantile {
  std::size_t KM = 7;
  std::size_t KQ = 200;
};
struct QuantileOfMoments {
  std::size_t KM = 7;
  std::size_t KQ = 200;
};
struct Superquantile {
  std::size_t K = 200;
};
struct SuperquantileOfMoments {
  std::size_t KM = 5;
  std::size_t KQ = 200;
};
/// Normalized histogram. A single lattice entry applies to every axis. The
/// support is bound from the training grid when left empty.
struct BinHistogram {
  std::vector<std::size_t> J{200};
  std::vector<Interval> support{};
};
/// First n_keep raw samples (0 = all), consumed by the cylinder network.
struct CylinderRaw {
  std::size_t n_keep = 0;
};
}  // namespace scheme

using FeatureScheme =
    std::variant<scheme::Quantile, scheme::Moment, scheme::MomentAndQuantile, scheme::QuantileOfMoments,
                 scheme::Superquantile, scheme::SuperquantileOfMoments, scheme::BinHistogram, scheme::CylinderRaw>;

struct FeatureVector {
  FeatureScheme scheme;
  std::vector<double> values;
};

[[nodiscard]] inline bool is_cylinder(const FeatureScheme& s) { return std::holds_alternative<scheme::CylinderRaw>(s); }

/// Lattice of a histogram scheme in dimension `dim`.
inline std::vector<std::size_t> histogram_lattice(const scheme::BinHistogram& s, std::size_t dim) {
  if (s.J.size() == 1) return std::vector<std::size_t>(dim, s.J.front());
  if (s.J.size() != dim) throw DimensionMismatch("bin scheme lattice has " + std::to_string(s.J.size()) + " axes");
  return s.J;
}

/// Number of features `scheme` produces for d-dimensional batches of size n
/// (n only matters for the cylinder pass-through).
inline std::size_t feature_length(const FeatureScheme& fs, std::size_t dim, std::size_t n = 0) {
  return std::visit(
      [&](const auto& s) -> std::size_t {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, scheme::Quantile>) {
          return s.K;
        } else if constexpr (std::is_same_v<S, scheme::Moment>) {
          return monomial_count(s.K, dim);
        } else if constexpr (std::is_same_v<S, scheme::MomentAndQuantile>) {
          return monomial_count(s.KM, dim) + s.KQ;
        } else if constexpr (std::is_same_v<S, scheme::QuantileOfMoments>) {
          return (monomial_count(s.KM, dim) - 1) * s.KQ;
        } else if constexpr (std::is_same_v<S, scheme::Superquantile>) {
          return s.K + 1;
        } else if constexpr (std::is_same_v<S, scheme::SuperquantileOfMoments>) {
          return (monomial_count(s.KM, dim) - 1) * (s.KQ + 1);
        } else if constexpr (std::is_same_v<S, scheme::BinHistogram>) {
          auto lattice = histogram_lattice(s, dim);
          return std::accumulate(lattice.begin(), lattice.end(), std::size_t{1}, std::multiplies<>());
        } else {
          return (s.n_keep == 0 ? n : std::min(s.n_keep, n)) * dim;
        }
      },
      fs);
}

/// Throws unless `scheme` can be applied to d-dimensional samples.
inline void check_scheme(const FeatureScheme& fs, std::size_t dim) {
  auto positive = [](std::size_t v, const char* what) {
    if (v == 0) throw std::invalid_argument(std::string("feature scheme: ") + what + " must be >= 1");
  };
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, scheme::Quantile> || std::is_same_v<S, scheme::Superquantile>) {
          positive(s.K, "K");
          if (dim != 1) throw DimensionMismatch("quantile and superquantile features need 1-D samples");
        } else if constexpr (std::is_same_v<S, scheme::Moment>) {
          // K = 0 is allowed: the single constant feature 1.
        } else if constexpr (std::is_same_v<S, scheme::BinHistogram>) {
          for (auto j : histogram_lattice(s, dim)) positive(j, "J");
          if (!s.support.empty() && s.support.size() != dim)
            throw DimensionMismatch("bin scheme support has the wrong dimension");
        } else if constexpr (std::is_same_v<S, scheme::CylinderRaw>) {
        } else {
          if constexpr (std::is_same_v<S, scheme::MomentAndQuantile>)
            if (dim != 1) throw DimensionMismatch("momquant features need 1-D samples");
          positive(s.KM, "KM");
          positive(s.KQ, "KQ");
        }
      },
      fs);
}

// ---------------------------------------------------------------------------
// Text form: quantile:K=200, moment:K=10, momquant:KM=7,KQ=200,
// quantmom:KM=7,KQ=200, superquant:K=200, supermom:KM=5,KQ=200, bin:J=200,
// bin:J=20x20, cylinder, cylinder:n=1000.

namespace detail {
inline std::size_t parse_count(std::string_view text, std::string_view key) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty())
    throw ParseError("feature scheme: bad value '" + std::string(text) + "' for " + std::string(key));
  return v;
}
}  // namespace detail

inline FeatureScheme parse_scheme(std::string_view text) {
  const auto colon = text.find(':');
  const std::string_view name = text.substr(0, colon);
  std::vector<std::pair<std::string_view, std::string_view>> kv;
  if (colon != std::string_view::npos) {
    std::string_view rest = text.substr(colon + 1);
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      const std::string_view item = rest.substr(0, comma);
      const auto eq = item.find('=');
      if (eq == std::string_view::npos) throw ParseError("feature scheme: expected key=value in '" + std::string(text) + "'");
      kv.emplace_back(item.substr(0, eq), item.substr(eq + 1));
      rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
    }
  }
  std::vector<bool> used(kv.size(), false);
  auto take = [&](std::string_view key, bool required) -> std::string_view {
    for (std::size_t i = 0; i < kv.size(); ++i) {
      if (kv[i].first == key) {
        if (used[i]) throw ParseError("feature scheme: duplicate key " + std::string(key));
        used[i] = true;
        return kv[i].second;
      }
    }
    if (required) throw ParseError("feature scheme '" + std::string(name) + "' needs " + std::string(key));
    return {};
  };
  auto count = [&](std::string_view key) { return detail::parse_count(take(key, true), key); };

  FeatureScheme out;
  if (name == "quantile") {
    out = scheme::Quantile{count("K")};
  } else if (name == "moment") {
    out = scheme::Moment{count("K")};
  } else if (name == "momquant") {
    out = scheme::MomentAndQuantile{count("KM"), count("KQ")};
  } else if (name == "quantmom") {
    out = scheme::QuantileOfMoments{count("KM"), count("KQ")};
  } else if (name == "superquant") {
    out = scheme::Superquantile{count("K")};
  } else if (name == "supermom") {
    out = scheme::SuperquantileOfMoments{count("KM"), count("KQ")};
  } else if (name == "bin") {
    scheme::BinHistogram b;
    b.J.clear();
    std::string_view js = take("J", true);
    while (true) {
      const auto x = js.find('x');
      b.J.push_back(detail::parse_count(js.substr(0, x), "J"));
      if (x == std::string_view::npos) break;
      js = js.substr(x + 1);
    }
    out = b;
  } else if (name == "cylinder") {
    const auto n = take("n", false);
    out = scheme::CylinderRaw{n.empty() ? 0 : detail::parse_count(n, "n")};
  } else {
    throw ParseError("unknown feature scheme '" + std::string(name) + "'");
  }
  for (std::size_t i = 0; i < kv.size(); ++i)
    if (!used[i]) throw ParseError("feature scheme: unknown key '" + std::string(kv[i].first) + "' for " + std::string(name));
  return out;
}

inline std::string to_string(const FeatureScheme& fs) {
  return std::visit(
      [](const auto& s) -> std::string {
        using S = std::decay_t<decltype(s)>;
        using std::to_string;
        if constexpr (std::is_same_v<S, scheme::Quantile>) {
          return "quantile:K=" + to_string(s.K);
        } else if constexpr (std::is_same_v<S, scheme::Moment>) {
          return "moment:K=" + to_string(s.K);
        } else if constexpr (std::is_same_v<S, scheme::MomentAndQuantile>) {
          return "momquant:KM=" + to_string(s.KM) + ",KQ=" + to_string(s.KQ);
        } else if constexpr (std::is_same_v<S, scheme::QuantileOfMoments>) {
          return "quantmom:KM=" + to_string(s.KM) + ",KQ=" + to_string(s.KQ);
        } else if constexpr (std::is_same_v<S, scheme::Superquantile>) {
          return "superquant:K=" + to_string(s.K);
        } else if constexpr (std::is_same_v<S, scheme::SuperquantileOfMoments>) {
          return "supermom:KM=" + to_string(s.KM) + ",KQ=" + to_string(s.KQ);
        } else if constexpr (std::is_same_v<S, scheme::BinHistogram>) {
          std::string j;
          for (std::size_t i = 0; i < s.J.size(); ++i) j += (i ? "x" : "") + to_string(s.J[i]);
          return "bin:J=" + j;
        } else {
          return s.n_keep == 0 ? std::string("cylinder") : "cylinder:n=" + to_string(s.n_keep);
        }
      },
      fs);
}

// ---------------------------------------------------------------------------
// Order statistics

/// 1-based nearest rank of level k/(K+1) among n values.
constexpr std::size_t nearest_rank(std::size_t k, std::size_t K, std::size_t n) noexcept {
  const std::size_t r = (k * n + K) / (K + 1);  // ceil(k*n/(K+1))
  return std::clamp<std::size_t>(r, 1, n);
}

/// Sorts finite doubles by recursive equal-width bucketing, which stays
/// linear on samples concentrated in a small part of their range.
inline void bucket_sort(double* first, double* last) {
  const auto n = static_cast<std::size_t>(last - first);
  if (n <= 64) {
    std::sort(first, last);
    return;
  }
  const auto [lo, hi] = std::minmax_element(first, last);
  const double a = *lo, b = *hi;
  if (!(a < b)) return;
  const std::size_t buckets = n / 4;
  const double scale = static_cast<double>(buckets) / (b - a);
  const auto bucket = [&](double v) { return std::min(buckets - 1, static_cast<std::size_t>((v - a) * scale)); };
  std::vector<std::size_t> start(buckets + 1, 0);
  for (const double* p = first; p != last; ++p) ++start[bucket(*p) + 1];
  for (std::size_t k = 0; k < buckets; ++k) start[k + 1] += start[k];
  std::vector<double> tmp(n);
  for (const double* p = first; p != last; ++p) tmp[start[bucket(*p)]++] = *p;
  std::copy(tmp.begin(), tmp.end(), first);
  // start[k] is now the end of bucket k.
  std::size_t begin = 0;
  for (std::size_t k = 0; k < buckets; ++k) {
    if (start[k] - begin > 1) bucket_sort(first + begin, first + start[k]);
    begin = start[k];
  }
}

/// Order statistics of an unsorted sample, answering quantile and tail-mean
/// queries without a full sort.
///
/// Values are distributed into about n/8 equal-width buckets by a monotone
/// map, so bucket order agrees with value order and equal values share a
/// bucket. A bucket is sorted only when a query lands in it.
class OrderStatistics {
 public:
  explicit OrderStatistics(std::vector<double> values) {
    const std::size_t n = values.size();
    if (n == 0) throw std::invalid_argument("OrderStatistics: empty sample");
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    lo_ = *lo;
    hi_ = *hi;
    if (!(lo_ < hi_)) {
      // Constant sample (or NaN present): keep a single sorted bucket.
      if (!(lo_ == hi_)) throw std::domain_error("OrderStatistics: non-finite value");
      values_ = std::move(values);
      start_ = {0, n};
      bucket_sum_ = {0, 0};
      suffix_ = std::make_unique<Wide[]>(n + 1);
      sorted_.assign(1, 1);
      return;
    }
    const std::size_t buckets = std::max<std::size_t>(1, n / 8);
    scale_ = static_cast<double>(buckets) / (hi_ - lo_);
    buckets_ = buckets;
    start_.assign(buckets + 1, 0);
    // Shifted values are summed as 62-bit fixed point so that tail sums do
    // not depend on the input order.
    fixed_exp_ = 62 - std::ilogb(hi_ - lo_) - 1;
    fixed_scale_ = std::ldexp(1.0, fixed_exp_);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t b = bucket_of(values[i]);
      ++start_[b + 1];
    }
    for (std::size_t b = 0; b < buckets; ++b) start_[b + 1] += start_[b];
    // Scatter by bucket, using start_ shifted by one as the fill cursors.
    values_.resize(n);
    for (std::size_t i = 0; i < n; ++i) values_[start_[bucket_of(values[i])]++] = values[i];
    for (std::size_t b = buckets; b > 0; --b) start_[b] = start_[b - 1];
    start_[0] = 0;
    // Filled per bucket on first use.
    suffix_.reset(new Wide[n + 1]);
    sorted_.assign(buckets, 0);
  }

  [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }

  /// Value of 1-based rank r.
  [[nodiscard]] double at_rank(std::size_t r) {
    if (r < 1 || r > values_.size()) throw std::out_of_range("OrderStatistics: rank out of range");
    const std::size_t b = bucket_of_position(r - 1);
    ensure_sorted(b);
    return values_[r - 1];
  }

  /// Level k/(K+1) nearest-rank quantile; k = 0 gives the minimum.
  [[nodiscard]] double quantile(std::size_t k, std::size_t K) { return at_rank(nearest_rank(k, K, values_.size())); }

  /// Mean of all values >= threshold (NaN if none).
  [[nodiscard]] double tail_mean_at_least(double threshold) {
    if (threshold <= lo_) return tail_from(0, 0);
    if (threshold > hi_) return std::numeric_limits<double>::quiet_NaN();
    const std::size_t b = bucket_of(threshold);
    ensure_sorted(b);
    const auto first = std::lower_bound(values_.begin() + static_cast<std::ptrdiff_t>(start_[b]),
                                        values_.begin() + static_cast<std::ptrdiff_t>(start_[b + 1]), threshold);
    return tail_from(static_cast<std::size_t>(first - values_.begin()), b);
  }

  /// Mean of all values > threshold (NaN if none).
  [[nodiscard]] double tail_mean_above(double threshold) {
    if (threshold < lo_) return tail_from(0, 0);
    if (threshold >= hi_) return std::numeric_limits<double>::quiet_NaN();
    const std::size_t b = bucket_of(threshold);
    ensure_sorted(b);
    const auto first = std::upper_bound(values_.begin() + static_cast<std::ptrdiff_t>(start_[b]),
                                        values_.begin() + static_cast<std::ptrdiff_t>(start_[b + 1]), threshold);
    return tail_from(static_cast<std::size_t>(first - values_.begin()), b);
  }

  /// Conditional mean above the level k/(K+1) quantile (weak inequality, so
  /// never empty).
  [[nodiscard]] double superquantile(std::size_t k, std::size_t K) { return tail_mean_at_least(quantile(k, K)); }

 private:
  [[nodiscard]] std::size_t bucket_of(double v) const noexcept {
    if (buckets_ <= 1) return 0;
    const double x = (v - lo_) * scale_;
    return std::min(buckets_ - 1, static_cast<std::size_t>(x));
  }
  [[nodiscard]] std::size_t bucket_of_position(std::size_t pos) const {
    // Last bucket whose start is <= pos.
    const auto it = std::upper_bound(start_.begin(), start_.end() - 1, pos);
    return static_cast<std::size_t>(it - start_.begin()) - 1;
  }
  void ensure_sorted(std::size_t b) {
    if (sorted_[b]) return;
    const auto first = values_.begin() + static_cast<std::ptrdiff_t>(start_[b]);
    const auto last = values_.begin() + static_cast<std::ptrdiff_t>(start_[b + 1]);
    bucket_sort(&*first, &*first + (last - first));
    // Within-bucket shifted suffix sums, ending at the bucket boundary.
    Wide acc = 0;
    for (std::size_t i = start_[b + 1]; i-- > start_[b];) suffix_[i] = (acc += to_fixed(values_[i]));
    sorted_[b] = 1;
  }
  /// Mean of positions [first, n); `first` lies in sorted bucket b.
  [[nodiscard]] double tail_from(std::size_t first, std::size_t b) {
    const std::size_t count = values_.size() - first;
    if (count == 0) return std::numeric_limits<double>::quiet_NaN();
    if (bucket_sum_.empty()) {
      // bucket_sum_[b] = shifted sum of buckets b, b+1, ...
      bucket_sum_.assign(buckets_ + 1, 0);
      for (std::size_t k = buckets_; k-- > 0;) {
        Wide acc = 0;
        for (std::size_t i = start_[k]; i < start_[k + 1]; ++i) acc += to_fixed(values_[i]);
        bucket_sum_[k] = bucket_sum_[k + 1] + acc;
      }
    }
    Wide sum = bucket_sum_[0];
    if (first != 0) sum = bucket_sum_[b + 1] + (first < start_[b + 1] ? suffix_[first] : 0);
    return lo_ + std::ldexp(static_cast<double>(sum), -fixed_exp_) / static_cast<double>(count);
  }

  using Wide = __int128;
  [[nodiscard]] Wide to_fixed(double v) const noexcept {
    return static_cast<Wide>(static_cast<std::int64_t>((v - lo_) * fixed_scale_));
  }

  std::vector<double> values_;
  std::vector<std::size_t> start_;
  std::vector<Wide> bucket_sum_;
  std::unique_ptr<Wide[]> suffix_;
  int fixed_exp_ = 0;
  double fixed_scale_ = 1.0;
  std::vector<char> sorted_;
  double lo_ = 0.0;
  double hi_ = 0.0;
  double scale_ = 0.0;
  std::size_t buckets_ = 1;
};

/// Columns x_i^k, k = 0..K, of a batch, built by running products so that
/// they match ipow bit for bit.
class PowerTable {
 public:
  PowerTable(const SampleBatch& batch, std::size_t K) : n_(batch.size()), K_(K), table_(batch.dim() * (K + 1) * n_) {
    for (std::size_t i = 0; i < batch.dim(); ++i) {
      double* p = column(i, 0);
      std::fill(p, p + n_, 1.0);
      for (std::size_t k = 1; k <= K; ++k) {
        double* q = column(i, k);
        const double* prev = column(i, k - 1);
        for (std::size_t n = 0; n < n_; ++n) q[n] = prev[n] * batch(n, i);
      }
    }
  }

  /// Values of prod_i X_i^{k_i} over the batch, in row order.
  [[nodiscard]] std::vector<double> monomial(const MultiIndex& k) const {
    std::vector<double> v(n_, 1.0);
    for (std::size_t i = 0; i < k.size(); ++i) {
      const double* p = column(i, k[i]);
      for (std::size_t n = 0; n < n_; ++n) v[n] *= p[n];
    }
    return v;
  }

  /// Sample mean of prod_i X_i^{k_i}, summed in row order.
  [[nodiscard]] double mean(const MultiIndex& k) const {
    double sum = 0.0;
    if (k.size() == 2) {
      const double* a = column(0, k[0]);
      const double* b = column(1, k[1]);
      for (std::size_t n = 0; n < n_; ++n) sum += 1.0 * a[n] * b[n];
    } else {
      for (double x : monomial(k)) sum += x;
    }
    return sum / static_cast<double>(n_);
  }

  [[nodiscard]] const double* column(std::size_t axis, std::size_t k) const { return &table_[(axis * (K_ + 1) + k) * n_]; }

 private:
  double* column(std::size_t axis, std::size_t k) { return &table_[(axis * (K_ + 1) + k) * n_]; }

  std::size_t n_;
  std::size_t K_;
  std::vector<double> table_;
};

/// Values of the scalar variable prod_i X_i^{k_i} over the batch, unsorted.
inline std::vector<double> monomial_values(const SampleBatch& batch, const MultiIndex& k) {
  std::vector<double> v(batch.size());
  for (std::size_t n = 0; n < v.size(); ++n) v[n] = monomial(batch.row(n), k);
  return v;
}

// ---------------------------------------------------------------------------
// Estimators

namespace detail {
inline void require_1d(const SampleBatch& batch, const char* op) {
  if (batch.dim() != 1) throw DimensionMismatch(std::string(op) + ": needs a 1-D batch");
}

inline void append_quantiles(std::vector<double>& out, OrderStatistics& s, std::size_t K) {
  for (std::size_t k = 1; k <= K; ++k) out.push_back(s.quantile(k, K));
}
inline void append_superquantiles(std::vector<double>& out, OrderStatistics& s, std::size_t K) {
  for (std::size_t k = 0; k <= K; ++k) out.push_back(s.superquantile(k, K));
}

inline std::vector<double> moments(const SampleBatch& batch, std::size_t K) {
  const MultiIndexSet set(K, batch.dim());
  const PowerTable powers(batch, K);
  std::vector<double> sums(set.size(), 0.0);
  for (std::size_t m = 1; m < set.size(); ++m) {
    sums[m] = powers.mean(set[m]);
  }
  sums[0] = 1.0;
  return sums;
}

inline std::vector<double> histogram(const SampleBatch& batch, const BinGrid& grid) {
  if (grid.dim() != batch.dim()) throw DimensionMismatch("bin_histogram: grid and batch dimensions differ");
  std::vector<double> counts(grid.cell_count(), 0.0);
  for (std::size_t n = 0; n < batch.size(); ++n) {
    std::size_t cell = 0;
    for (std::size_t i = 0; i < batch.dim(); ++i) {
      const double x = batch(n, i);
      if (!grid.support()[i].contains(x))
        throw std::domain_error("bin_histogram: point outside the grid support on axis " + std::to_string(i));
      cell += grid.bin_of(i, x) * grid.stride(i);
    }
    counts[cell] += 1.0;
  }
  const auto total = static_cast<double>(batch.size());
  for (double& c : counts) c /= total;
  return counts;
}
}  // namespace detail

/// Nearest-rank quantiles at levels k/(K+1), k = 1..K.
inline FeatureVector empirical_quantiles(const SampleBatch& batch, std::size_t K) {
  detail::require_1d(batch, "empirical_quantiles");
  OrderStatistics s(batch.column(0));
  FeatureVector out{scheme::Quantile{K}, {}};
  out.values.reserve(K);
  detail::append_quantiles(out.values, s, K);
  return out;
}

/// Mixed moments of total degree <= K, degree-then-lex order; entry 0 is 1.
inline FeatureVector empirical_moments(const SampleBatch& batch, std::size_t K) {
  return {scheme::Moment{K}, detail::moments(batch, K)};
}

/// Quantiles of each nonconstant monomial of degree <= KM at levels
/// k/(KQ+1), k = 1..KQ; multi-index major, level minor.
inline FeatureVector quantiles_of_moments(const SampleBatch& batch, std::size_t KM, std::size_t KQ) {
  const MultiIndexSet set(KM, batch.dim());
  FeatureVector out{scheme::QuantileOfMoments{KM, KQ}, {}};
  out.values.reserve((set.size() - 1) * KQ);
  const PowerTable powers(batch, KM);
  for (std::size_t m = 1; m < set.size(); ++m) {
    OrderStatistics s(powers.monomial(set[m]));
    detail::append_quantiles(out.values, s, KQ);
  }
  return out;
}

/// E[X | X >= Q(k/(K+1))] for k = 0..K; k = 0 conditions on the minimum.
inline FeatureVector superquantiles(const SampleBatch& batch, std::size_t K) {
  detail::require_1d(batch, "superquantiles");
  OrderStatistics s(batch.column(0));
  FeatureVector out{scheme::Superquantile{K}, {}};
  out.values.reserve(K + 1);
  detail::append_superquantiles(out.values, s, K);
  return out;
}

inline FeatureVector superquantiles_of_moments(const SampleBatch& batch, std::size_t KM, std::size_t KQ) {
  const MultiIndexSet set(KM, batch.dim());
  FeatureVector out{scheme::SuperquantileOfMoments{KM, KQ}, {}};
  out.values.reserve((set.size() - 1) * (KQ + 1));
  const PowerTable powers(batch, KM);
  for (std::size_t m = 1; m < set.size(); ++m) {
    OrderStatistics s(powers.monomial(set[m]));
    detail::append_superquantiles(out.values, s, KQ);
  }
  return out;
}

/// Normalized cell counts over `grid`, flattened like BinDistribution.
inline FeatureVector bin_histogram(const SampleBatch& batch, const BinGrid& grid) {
  scheme::BinHistogram s;
  s.J = grid.lattice();
  s.support = grid.support();
  return {s, detail::histogram(batch, grid)};
}

/// Applies `scheme` to a batch.
inline FeatureVector extract(const FeatureScheme& fs, const SampleBatch& batch) {
  check_scheme(fs, batch.dim());
  return std::visit(
      [&](const auto& s) -> FeatureVector {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, scheme::Quantile>) {
          return empirical_quantiles(batch, s.K);
        } else if constexpr (std::is_same_v<S, scheme::Moment>) {
          return empirical_moments(batch, s.K);
        } else if constexpr (std::is_same_v<S, scheme::MomentAndQuantile>) {
          FeatureVector out{s, detail::moments(batch, s.KM)};
          const auto q = empirical_quantiles(batch, s.KQ);
          out.values.insert(out.values.end(), q.values.begin(), q.values.end());
          return out;
        } else if constexpr (std::is_same_v<S, scheme::QuantileOfMoments>) {
          return quantiles_of_moments(batch, s.KM, s.KQ);
        } else if constexpr (std::is_same_v<S, scheme::Superquantile>) {
          return superquantiles(batch, s.K);
        } else if constexpr (std::is_same_v<S, scheme::SuperquantileOfMoments>) {
          return superquantiles_of_moments(batch, s.KM, s.KQ);
        } else if constexpr (std::is_same_v<S, scheme::BinHistogram>) {
          if (s.support.empty()) throw std::invalid_argument("bin scheme has no support bound");
          const BinGrid grid(s.support, histogram_lattice(s, batch.dim()));
          return {s, detail::histogram(batch, grid)};
        } else {
          const std::size_t keep = s.n_keep == 0 ? batch.size() : s.n_keep;
          if (keep > batch.size())
            throw std::invalid_argument("cylinder: n_keep exceeds the batch size");
          const auto& p = batch.points();
          return {s, std::vector<double>(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(keep * batch.dim()))};
        }
      },
      fs);
}

}  // namespace distlearn
