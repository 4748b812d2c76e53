#include "gav/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "gav/error.hpp"

namespace gav {

namespace {

template <class T>
ErrorStats var_ned_impl(std::span<const T> exact, std::span<const T> approx) {
  if (exact.size() != approx.size()) throw ArgumentError("exact and approximate sequences differ in length");
  if (exact.empty()) throw ArgumentError("error statistics need at least one sample");
  ErrorStats s;
  s.n = exact.size();
  for (auto e : exact) s.e_max = std::max(s.e_max, std::abs(static_cast<double>(e)));
  if (s.e_max == 0.0) throw OverflowError("all exact values are zero: NED normalization is undefined");
  double sum = 0.0;
  double sq = 0.0;
  for (std::size_t i = 0; i < s.n; ++i) {
    const double d = static_cast<double>(exact[i]) - static_cast<double>(approx[i]);
    sum += d / s.e_max;
    sq += d * d;
  }
  s.mean_ned = sum / static_cast<double>(s.n);
  s.mse = sq / static_cast<double>(s.n);
  double var = 0.0;
  for (std::size_t i = 0; i < s.n; ++i) {
    const double ned = (static_cast<double>(exact[i]) - static_cast<double>(approx[i])) / s.e_max - s.mean_ned;
    var += ned * ned;
  }
  s.var_ned = var / static_cast<double>(s.n);
  return s;
}

}  // namespace

ErrorStats var_ned(std::span<const std::int64_t> exact, std::span<const std::int64_t> approx) {
  return var_ned_impl(exact, approx);
}

ErrorStats var_ned(std::span<const double> exact, std::span<const double> approx) { return var_ned_impl(exact, approx); }

ErrorStats var_ned(const IntMatrix& exact, const IntMatrix& approx) {
  if (exact.rows() != approx.rows() || exact.cols() != approx.cols()) throw ArgumentError("matrix shapes differ");
  std::vector<std::int64_t> e(exact.data().begin(), exact.data().end());
  std::vector<std::int64_t> a(approx.data().begin(), approx.data().end());
  return var_ned_impl<std::int64_t>(e, a);
}

double mean_squared_error(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ArgumentError("MSE operands differ in length");
  if (a.empty()) throw ArgumentError("MSE needs at least one sample");
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
  return sq / static_cast<double>(a.size());
}

double product_uniform_density(Rng& rng) { return std::exp(-rng.gamma(0.5)); }

void fill_activation_vector(std::span<std::int32_t> out, int bits, double density, Rng& rng) {
  for (auto& v : out) {
    std::int32_t x = 0;
    for (int p = 0; p < bits; ++p) x |= static_cast<std::int32_t>(rng.bernoulli(density)) << p;
    v = x;
  }
}

void fill_weight_vector(std::span<std::int32_t> out, int bits, double density, bool negative, Rng& rng) {
  for (auto& v : out) {
    std::int32_t m = 0;
    for (int p = 0; p < bits - 1; ++p) m |= static_cast<std::int32_t>(rng.bernoulli(density)) << p;
    v = negative ? -m : m;
  }
}

namespace {

// Densities whose uniform quantiles are stratified over n equal slots in random order:
// d = exp(-X) with X = erfinv(u)^2 ~ Gamma(1/2, 1). Stratifying both operands keeps the
// rank-one grid of products close to uniform even for small n.
std::vector<double> stratified_densities(std::size_t n, Rng& rng) {
  std::vector<std::size_t> slot(n);
  std::iota(slot.begin(), slot.end(), std::size_t{0});
  for (std::size_t i = n; i-- > 1;) std::swap(slot[i], slot[rng.below(i + 1)]);
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = (static_cast<double>(slot[i]) + rng.uniform()) / static_cast<double>(n);
    const double e = u > 0.0 ? boost::math::erf_inv(u) : 0.0;
    d[i] = std::exp(-e * e);
  }
  return d;
}

}  // namespace

CharacterizationOperands gen_characterization_matrices(std::size_t c_total, std::size_t l, std::size_t k, int a_bits,
                                                       int b_bits, std::uint64_t seed) {
  if (c_total == 0 || l == 0 || k == 0) throw ArgumentError("characterization dimensions must be positive");
  Rng rng(seed);
  const auto da = stratified_densities(l, rng);
  const auto db = stratified_densities(k, rng);
  // exactly half of the weight rows (rounded down) are negative
  std::vector<bool> negative(k, false);
  for (std::size_t r = 0; r < k / 2; ++r) negative[r] = true;
  for (std::size_t i = k; i-- > 1;) std::swap(negative[i], negative[rng.below(i + 1)]);
  if (k % 2 == 1 && rng.bernoulli(0.5)) negative.flip();

  std::vector<std::int32_t> a(c_total * l);
  std::vector<std::int32_t> column(c_total);
  for (std::size_t j = 0; j < l; ++j) {
    fill_activation_vector(column, a_bits, da[j], rng);
    for (std::size_t c = 0; c < c_total; ++c) a[c * l + j] = column[c];
  }
  std::vector<std::int32_t> b(k * c_total);
  for (std::size_t r = 0; r < k; ++r) {
    fill_weight_vector(std::span(b).subspan(r * c_total, c_total), b_bits, db[r], negative[r], rng);
  }
  return {IntMatrix(c_total, l, a_bits, Signedness::Unsigned, std::move(a)),
          IntMatrix(k, c_total, b_bits, Signedness::Signed, std::move(b))};
}

double histogram_flatness(std::span<const std::int64_t> values, int bins) {
  if (values.empty() || bins < 1) throw ArgumentError("histogram needs values and at least one bin");
  double vmax = 0.0;
  for (auto v : values) vmax = std::max(vmax, std::abs(static_cast<double>(v)));
  if (vmax == 0.0) return std::numeric_limits<double>::infinity();
  std::vector<std::size_t> h(bins, 0);
  for (auto v : values) {
    auto i = static_cast<long>(std::floor((static_cast<double>(v) + vmax) / (2.0 * vmax) * bins));
    h[std::clamp<long>(i, 0, bins - 1)]++;
  }
  const auto [lo, hi] = std::minmax_element(h.begin(), h.end());
  if (*lo == 0) return std::numeric_limits<double>::infinity();
  return static_cast<double>(*hi) / static_cast<double>(*lo);
}

ChiSquareResult chi_square_independence(std::span<const double> table, std::size_t rows, std::size_t cols) {
  if (table.size() != rows * cols) throw ArgumentError("contingency table size mismatch");
  std::vector<double> rsum(rows, 0.0);
  std::vector<double> csum(cols, 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      rsum[r] += table[r * cols + c];
      csum[c] += table[r * cols + c];
      total += table[r * cols + c];
    }
  const auto live_rows = std::count_if(rsum.begin(), rsum.end(), [](double v) { return v > 0; });
  const auto live_cols = std::count_if(csum.begin(), csum.end(), [](double v) { return v > 0; });
  ChiSquareResult res;
  if (live_rows < 2 || live_cols < 2) return res;
  for (std::size_t r = 0; r < rows; ++r) {
    if (rsum[r] == 0) continue;
    for (std::size_t c = 0; c < cols; ++c) {
      if (csum[c] == 0) continue;
      const double expected = rsum[r] * csum[c] / total;
      const double d = table[r * cols + c] - expected;
      res.statistic += d * d / expected;
    }
  }
  res.dof = static_cast<int>((live_rows - 1) * (live_cols - 1));
  res.p_value = boost::math::gamma_q(res.dof / 2.0, res.statistic / 2.0);
  return res;
}

}  // namespace gav
