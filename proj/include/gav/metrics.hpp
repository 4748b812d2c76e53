#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gav/core.hpp"
#include "gav/rng.hpp"

namespace gav {

/// Error statistics of an approximate result against its exact counterpart.
/// NED_i = (E_i - A_i) / E_max with E_max = max |E_i|; var_ned is the population
/// variance of NED over all n samples.
struct ErrorStats {
  double var_ned = 0.0;
  double mean_ned = 0.0;
  double mse = 0.0;
  std::size_t n = 0;
  double e_max = 0.0;
};

ErrorStats var_ned(std::span<const std::int64_t> exact, std::span<const std::int64_t> approx);
ErrorStats var_ned(std::span<const double> exact, std::span<const double> approx);
ErrorStats var_ned(const IntMatrix& exact, const IntMatrix& approx);

double mean_squared_error(std::span<const double> a, std::span<const double> b);

/// Operand density with d_a * d_b ~ U(0,1) for independent draws: d = exp(-X), X ~ Gamma(1/2, 1),
/// since the sum of two independent Gamma(1/2) variates is Exp(1).
double product_uniform_density(Rng& rng);

/// Unsigned activation values with Bernoulli(density) bit planes.
void fill_activation_vector(std::span<std::int32_t> out, int bits, double density, Rng& rng);
/// Symmetric signed weight values: Bernoulli(density) magnitude planes, common sign.
void fill_weight_vector(std::span<std::int32_t> out, int bits, double density, bool negative, Rng& rng);

struct CharacterizationOperands {
  IntMatrix a;  // [C_total, L], unsigned activations
  IntMatrix b;  // [K, C_total], signed symmetric weights
};

inline constexpr std::size_t kCharacterizationInner = 4608;
inline constexpr std::size_t kCharacterizationOuter = 64;

/// Random GEMM operands whose inner products spread evenly over the signed dynamic range:
/// every A column and B row gets its own density (stratified quantiles of the product-uniform
/// law) and half of the B rows are negative.
CharacterizationOperands gen_characterization_matrices(std::size_t c_total, std::size_t l, std::size_t k, int a_bits,
                                                       int b_bits, std::uint64_t seed);

/// Max/min occupancy ratio of an equal-width histogram over [-max|v|, max|v|].
/// Returns +inf when a bin is empty.
double histogram_flatness(std::span<const std::int64_t> values, int bins);

struct ChiSquareResult {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
};

/// Pearson test of independence on a rows x cols contingency table (row-major).
/// Rows or columns with zero total are dropped.
ChiSquareResult chi_square_independence(std::span<const double> table, std::size_t rows, std::size_t cols);

}  // namespace gav
