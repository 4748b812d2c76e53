#include "gav/core.hpp"

#include <string>

#include "gav/error.hpp"

namespace gav {

namespace {

void check_bits(int bits) {
  if (bits < 1 || bits > 32) throw ArgumentError("precision must be within [1, 32] bits, got " + std::to_string(bits));
}

void check_operand_bits(int bits) {
  if (bits < 2 || bits > 8) {
    throw ArgumentError("operand precision must be within [2, 8] bits, got " + std::to_string(bits));
  }
}

}  // namespace

std::int64_t min_value(int bits, Signedness sign) {
  check_bits(bits);
  return sign == Signedness::Signed ? -(std::int64_t{1} << (bits - 1)) : 0;
}

std::int64_t max_value(int bits, Signedness sign) {
  check_bits(bits);
  return sign == Signedness::Signed ? (std::int64_t{1} << (bits - 1)) - 1 : (std::int64_t{1} << bits) - 1;
}

IntMatrix::IntMatrix(std::size_t rows, std::size_t cols, int bits, Signedness sign)
    : rows_(rows), cols_(cols), bits_(bits), sign_(sign), data_(rows * cols, 0) {
  check_bits(bits);
  if (sign == Signedness::Unsigned && bits > 31) throw ArgumentError("unsigned matrices hold at most 31 bits");
}

IntMatrix::IntMatrix(std::size_t rows, std::size_t cols, int bits, Signedness sign,
                     std::vector<std::int32_t> data)
    : rows_(rows), cols_(cols), bits_(bits), sign_(sign), data_(std::move(data)) {
  check_bits(bits);
  if (sign == Signedness::Unsigned && bits > 31) throw ArgumentError("unsigned matrices hold at most 31 bits");
  if (data_.size() != rows * cols) {
    throw ArgumentError("matrix data length " + std::to_string(data_.size()) + " does not match " +
                        std::to_string(rows) + "x" + std::to_string(cols));
  }
  const auto lo = min_value(bits, sign);
  const auto hi = max_value(bits, sign);
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (data_[i] < lo || data_[i] > hi) {
      throw RangeError("element " + std::to_string(i) + " = " + std::to_string(data_[i]) +
                       " is out of range for " + std::to_string(bits) + "-bit " +
                       (sign == Signedness::Signed ? "signed" : "unsigned") + " storage");
    }
  }
}

void IntMatrix::set(std::size_t r, std::size_t c, std::int64_t value) {
  if (r >= rows_ || c >= cols_) throw ArgumentError("matrix index out of bounds");
  if (value < min_value(bits_, sign_) || value > max_value(bits_, sign_)) {
    throw RangeError("value " + std::to_string(value) + " does not fit in " + std::to_string(bits_) + " bits");
  }
  data_[r * cols_ + c] = static_cast<std::int32_t>(value);
}

BitSlicedMatrix::BitSlicedMatrix(std::size_t rows, std::size_t cols, int bits, Signedness sign,
                                 std::vector<std::vector<std::uint8_t>> planes)
    : rows_(rows), cols_(cols), bits_(bits), sign_(sign), planes_(std::move(planes)) {
  check_operand_bits(bits);
  if (planes_.size() != static_cast<std::size_t>(bits)) throw ArgumentError("plane count must equal precision");
  for (const auto& p : planes_) {
    if (p.size() != rows * cols) throw ArgumentError("plane size mismatch");
    for (auto v : p) {
      if (v > 1) throw RangeError("bit plane elements must be 0 or 1");
    }
  }
}

std::int64_t BitSlicedMatrix::plane_weight(int significance) const {
  const std::int64_t w = std::int64_t{1} << significance;
  return (sign_ == Signedness::Signed && significance == bits_ - 1) ? -w : w;
}

BitSlicedMatrix bit_slice(const IntMatrix& m) {
  check_operand_bits(m.bits());
  std::vector<std::vector<std::uint8_t>> planes(m.bits(), std::vector<std::uint8_t>(m.size()));
  const auto lo = min_value(m.bits(), m.signedness());
  const auto hi = max_value(m.bits(), m.signedness());
  const auto data = m.data();
  const std::uint32_t mask = (1u << m.bits()) - 1u;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i] < lo || data[i] > hi) throw RangeError("element out of range for declared precision");
    const auto raw = static_cast<std::uint32_t>(data[i]) & mask;
    for (int b = 0; b < m.bits(); ++b) planes[b][i] = static_cast<std::uint8_t>((raw >> b) & 1u);
  }
  return BitSlicedMatrix(m.rows(), m.cols(), m.bits(), m.signedness(), std::move(planes));
}

IntMatrix reconstruct(const BitSlicedMatrix& s) {
  std::vector<std::int32_t> data(s.rows() * s.cols(), 0);
  for (int b = 0; b < s.bits(); ++b) {
    const auto w = s.plane_weight(b);
    const auto plane = s.plane(b);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += static_cast<std::int32_t>(plane[i] * w);
  }
  return IntMatrix(s.rows(), s.cols(), s.bits(), s.signedness(), std::move(data));
}

void ArrayShape::validate() const {
  if (c < 1 || l < 1 || k < 1) throw ArgumentError("array shape dimensions must be >= 1");
  if (c > 0xFFFF) throw ArgumentError("array inner dimension C must be < 65536");
}

GavSchedule GavSchedule::make(int a_bits, int b_bits, int protection) {
  GavSchedule s;
  s.a_bits = a_bits;
  s.b_bits = b_bits;
  s.protection = protection;
  s.validate();
  return s;
}

void GavSchedule::validate() const {
  check_operand_bits(a_bits);
  check_operand_bits(b_bits);
  if (protection < 0 || protection > max_protection()) {
    throw ArgumentError("protection level G=" + std::to_string(protection) + " outside [0, " +
                        std::to_string(max_protection()) + "]");
  }
}

int GavSchedule::approx_passes() const {
  int n = 0;
  for (int ba = 0; ba < a_bits; ++ba)
    for (int bb = 0; bb < b_bits; ++bb) n += schedule_mode(*this, ba, bb) == VoltageMode::Approx;
  return n;
}

VoltageMode schedule_mode(const GavSchedule& s, int ba, int bb) {
  if (ba < 0 || ba >= s.a_bits || bb < 0 || bb >= s.b_bits) {
    throw ArgumentError("significance pair (" + std::to_string(ba) + "," + std::to_string(bb) + ") out of range");
  }
  return ba + bb >= s.max_protection() - s.protection ? VoltageMode::Guard : VoltageMode::Approx;
}

}  // namespace gav
