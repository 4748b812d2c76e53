#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace gav {

enum class Signedness : std::uint8_t { Unsigned = 0, Signed = 1 };

enum class VoltageMode : std::uint8_t { Guard, Approx };

/// Smallest and largest integers representable with `bits` under `sign`
/// (two's complement for signed operands).
std::int64_t min_value(int bits, Signedness sign);
std::int64_t max_value(int bits, Signedness sign);

/// Row-major integer matrix tagged with the precision its elements obey.
///
/// Operands of the bit-serial engine use 2..8 bits; results and accumulators
/// reuse the same type with wider precisions (up to 32 bits).
class IntMatrix {
 public:
  IntMatrix() = default;
  IntMatrix(std::size_t rows, std::size_t cols, int bits, Signedness sign);
  IntMatrix(std::size_t rows, std::size_t cols, int bits, Signedness sign,
            std::vector<std::int32_t> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  int bits() const noexcept { return bits_; }
  Signedness signedness() const noexcept { return sign_; }

  std::int32_t operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  /// Range-checked store.
  void set(std::size_t r, std::size_t c, std::int64_t value);

  std::span<const std::int32_t> data() const noexcept { return data_; }

  bool operator==(const IntMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  int bits_ = 8;
  Signedness sign_ = Signedness::Signed;
  std::vector<std::int32_t> data_;
};

/// Bit-serial storage: one binary plane per significance, LSB first.
class BitSlicedMatrix {
 public:
  BitSlicedMatrix(std::size_t rows, std::size_t cols, int bits, Signedness sign,
                  std::vector<std::vector<std::uint8_t>> planes);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  int bits() const noexcept { return bits_; }
  Signedness signedness() const noexcept { return sign_; }

  std::span<const std::uint8_t> plane(int significance) const { return planes_.at(significance); }
  std::uint8_t bit(int significance, std::size_t r, std::size_t c) const {
    return planes_[significance][r * cols_ + c];
  }
  /// Weight of a plane: +2^i, or -2^(bits-1) for the sign plane of a signed matrix.
  std::int64_t plane_weight(int significance) const;

 private:
  std::size_t rows_;
  std::size_t cols_;
  int bits_;
  Signedness sign_;
  std::vector<std::vector<std::uint8_t>> planes_;
};

BitSlicedMatrix bit_slice(const IntMatrix& m);
IntMatrix reconstruct(const BitSlicedMatrix& s);

/// Output width of an iPE summing C one-bit products: ceil(log2(C+1)).
constexpr int output_bits(std::uint64_t c) noexcept { return static_cast<int>(std::bit_width(c)); }

/// Hardware tile: A tile is [C, L], B tile is [K, C].
struct ArrayShape {
  std::size_t c = 32;
  std::size_t l = 8;
  std::size_t k = 16;

  int s_bits() const noexcept { return output_bits(c); }
  std::size_t ipe_count() const noexcept { return l * k; }
  void validate() const;
  bool operator==(const ArrayShape&) const = default;
};

/// Two-level significance-gated voltage schedule driven by one protection level G.
///
/// Combined significance s = ba + bb runs guarded iff s >= (a_bits + b_bits - 1) - G,
/// so G = 0 leaves every pass approximate and G = a_bits + b_bits - 1 guards all.
struct GavSchedule {
  int a_bits = 4;
  int b_bits = 4;
  int protection = 0;
  double v_guard = 0.55;
  double v_aprox = 0.35;

  static GavSchedule make(int a_bits, int b_bits, int protection);
  static GavSchedule fully_guarded(int a_bits, int b_bits) {
    return make(a_bits, b_bits, a_bits + b_bits - 1);
  }

  int max_protection() const noexcept { return a_bits + b_bits - 1; }
  int passes() const noexcept { return a_bits * b_bits; }
  int approx_passes() const;
  double approx_fraction() const { return static_cast<double>(approx_passes()) / passes(); }
  void validate() const;
};

VoltageMode schedule_mode(const GavSchedule& s, int ba, int bb);

}  // namespace gav
