#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace gav {

/// One sampled iPE cycle: exact output, the previous cycle's exact output, and
/// the value the synchronizer actually captured.
struct TraceRecord {
  std::uint16_t exact = 0;
  std::uint16_t prev = 0;
  std::uint16_t sampled = 0;

  std::uint16_t error_mask() const noexcept { return exact ^ sampled; }
  bool operator==(const TraceRecord&) const = default;
};

struct ErrorTrace {
  std::uint32_t c = 0;
  std::uint32_t s_bits = 0;
  std::vector<TraceRecord> records;

  bool operator==(const ErrorTrace&) const = default;
  /// Fraction of erroneous output bits over all records.
  double bit_error_rate() const;
  void validate() const;
};

/// "GVTR" container: magic, then u32 {C, S_BITS, n_cycles}, then u16 triplets
/// (exact, prev, sampled), little-endian.
std::vector<std::uint8_t> encode_trace(const ErrorTrace& t);
ErrorTrace decode_trace(std::span<const std::uint8_t> bytes);
void write_trace(const std::filesystem::path& path, const ErrorTrace& t);
ErrorTrace read_trace(const std::filesystem::path& path);

}  // namespace gav
