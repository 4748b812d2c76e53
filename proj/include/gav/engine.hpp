#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gav/core.hpp"
#include "gav/errmodel.hpp"

namespace gav {

/// One bit-serial GEMM: P[k][l] = sum_c A[c][l] * B[k][c].
struct GemmJob {
  IntMatrix a;  // [C_total, L_total], activation operand
  IntMatrix b;  // [K_total, C_total], weight operand
  ArrayShape shape;
  GavSchedule schedule;
  const ErrorLut* error_model = nullptr;
  std::uint64_t seed = 0;

  void validate() const;
};

struct GemmResult {
  IntMatrix p;  // [K_total, L_total], signed
  std::uint64_t cycles = 0;
  std::uint64_t approx_cycles = 0;
  std::uint64_t tile_count = 0;
};

struct TileCoord {
  std::size_t k0, l0, c0;
  std::size_t k_len, l_len, c_len;

  bool operator==(const TileCoord&) const = default;
};

/// Tiles covering [C_total, L_total, K_total] in k-outer, l-middle, c-inner order.
/// Edge tiles are shorter; the array zero-pads them.
std::vector<TileCoord> tile_iterator(std::size_t c_total, std::size_t l_total, std::size_t k_total,
                                     const ArrayShape& shape);

/// AND-then-popcount of two equal-length binary vectors.
unsigned ipe_column(std::span<const std::uint8_t> a_bits, std::span<const std::uint8_t> b_bits);

/// Peak MACs per cycle of the array at a given precision pair.
double peak_macs_per_cycle(const ArrayShape& shape, int a_bits, int b_bits);

/// Everything an error source may look at for one iPE output in an approximate pass.
/// Input vectors are packed 64 bits per word, bit i of word w is element 64*w+i of
/// the C-long tile column; `prev_*` hold the inputs of the same iPE on the previous
/// cycle (zeros before the first cycle).
struct IpeCycle {
  std::size_t l = 0;  // array column
  std::size_t k = 0;  // array row
  int ba = 0;
  int bb = 0;
  unsigned exact = 0;
  unsigned prev_exact = 0;
  std::size_t c = 0;
  std::span<const std::uint64_t> a;
  std::span<const std::uint64_t> b;
  std::span<const std::uint64_t> prev_a;
  std::span<const std::uint64_t> prev_b;
};

class ErrorInjector {
 public:
  virtual ~ErrorInjector() = default;
  /// Returns the value the accumulator receives instead of `cycle.exact`.
  virtual unsigned inject(const IpeCycle& cycle) = 0;
};

/// LUT-driven injector; owns its random stream.
class LutInjector final : public ErrorInjector {
 public:
  LutInjector(const ErrorLut& lut, std::uint64_t seed) : lut_(lut), rng_(seed) {}
  unsigned inject(const IpeCycle& cycle) override { return lut_.sample(cycle.exact, cycle.prev_exact, rng_); }

 private:
  const ErrorLut& lut_;
  Rng rng_;
};

GemmResult gemm_exact(const GemmJob& job);

/// GAV execution: approximate passes route each iPE output through the job's LUT.
GemmResult gemm_gav(const GemmJob& job);

/// Shared bit-serial loop. `injector` is consulted for every in-range iPE output of an
/// approximate pass; nullptr yields the exact product.
GemmResult gemm_injected(const GemmJob& job, ErrorInjector* injector);

/// Plain signed integer matmul, widened to 64 bits (reference path).
std::vector<std::int64_t> reference_matmul(const IntMatrix& a, const IntMatrix& b);

}  // namespace gav
