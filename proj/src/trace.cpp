#include "gav/trace.hpp"

#include <bit>
#include <cstring>
#include <string>

#include "gav/core.hpp"
#include "gav/error.hpp"
#include "gav/tensor_io.hpp"

namespace gav {

double ErrorTrace::bit_error_rate() const {
  if (records.empty() || s_bits == 0) return 0.0;
  std::uint64_t flips = 0;
  for (const auto& r : records) flips += std::popcount(static_cast<unsigned>(r.error_mask()));
  return static_cast<double>(flips) / (static_cast<double>(records.size()) * s_bits);
}

void ErrorTrace::validate() const {
  if (c < 1 || c > 0xFFFF) throw ArgumentError("trace C out of range");
  if (s_bits != static_cast<std::uint32_t>(output_bits(c))) throw ArgumentError("trace S_BITS does not match C");
  const std::uint32_t limit = 1u << s_bits;
  for (const auto& r : records) {
    if (r.exact > c || r.prev > c || r.sampled >= limit) throw RangeError("trace record value out of range");
  }
}

std::vector<std::uint8_t> encode_trace(const ErrorTrace& t) {
  std::vector<std::uint8_t> out{'G', 'V', 'T', 'R'};
  put_u32(out, t.c);
  put_u32(out, t.s_bits);
  put_u32(out, static_cast<std::uint32_t>(t.records.size()));
  out.reserve(out.size() + 6 * t.records.size());
  for (const auto& r : t.records) {
    put_u16(out, r.exact);
    put_u16(out, r.prev);
    put_u16(out, r.sampled);
  }
  return out;
}

ErrorTrace decode_trace(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "GVTR", 4) != 0) throw IoError("not a GVTR trace");
  ErrorTrace t;
  t.c = get_u32(bytes, 4);
  t.s_bits = get_u32(bytes, 8);
  const auto n = get_u32(bytes, 12);
  if (bytes.size() != 16 + 6 * static_cast<std::size_t>(n)) throw IoError("GVTR payload size does not match header");
  t.records.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t off = 16 + 6 * i;
    t.records[i] = {get_u16(bytes, off), get_u16(bytes, off + 2), get_u16(bytes, off + 4)};
  }
  t.validate();
  return t;
}

void write_trace(const std::filesystem::path& path, const ErrorTrace& t) { write_file_bytes(path, encode_trace(t)); }

ErrorTrace read_trace(const std::filesystem::path& path) {
  try {
    return decode_trace(read_file_bytes(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace gav
