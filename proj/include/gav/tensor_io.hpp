#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "gav/core.hpp"

namespace gav {

/// N-dimensional integer tensor as stored in a "GVT1" container.
///
/// Layout (all fields little-endian u32): magic "GVT1", version, dtype (0 = i32),
/// signedness (0 unsigned, 1 signed), bits, ndim, dims[ndim], then the row-major
/// i32 payload.
struct Tensor {
  std::vector<std::uint32_t> dims;
  int bits = 32;
  Signedness signedness = Signedness::Signed;
  std::vector<std::int32_t> data;

  std::size_t element_count() const;
  bool operator==(const Tensor&) const = default;
};

inline constexpr std::uint32_t kTensorVersion = 1;
inline constexpr std::uint32_t kDtypeI32 = 0;

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(std::span<const std::uint8_t> bytes);

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

Tensor to_tensor(const IntMatrix& m);
IntMatrix to_matrix(const Tensor& t);

/// Small-matrix import: one row per line, comma separated integers.
IntMatrix parse_csv_matrix(std::string_view text, int bits, Signedness sign);
IntMatrix read_csv_matrix(const std::filesystem::path& path, int bits, Signedness sign);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// Little-endian helpers shared by the binary container formats.
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v);
std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t offset);
std::uint16_t get_u16(std::span<const std::uint8_t> in, std::size_t offset);

}  // namespace gav
