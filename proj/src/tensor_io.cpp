#include "gav/tensor_io.hpp"

#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>

#include "gav/error.hpp"

namespace gav {

namespace {

constexpr char kMagic[4] = {'G', 'V', 'T', '1'};

}  // namespace

std::size_t Tensor::element_count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t offset) {
  if (offset + 4 > in.size()) throw IoError("truncated binary container");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[offset + i]) << (8 * i);
  return v;
}

std::uint16_t get_u16(std::span<const std::uint8_t> in, std::size_t offset) {
  if (offset + 2 > in.size()) throw IoError("truncated binary container");
  return static_cast<std::uint16_t>(in[offset] | (in[offset + 1] << 8));
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  if (t.data.size() != t.element_count()) throw ArgumentError("tensor payload does not match its dims");
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kTensorVersion);
  put_u32(out, kDtypeI32);
  put_u32(out, static_cast<std::uint32_t>(t.signedness));
  put_u32(out, static_cast<std::uint32_t>(t.bits));
  put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
  for (auto d : t.dims) put_u32(out, d);
  out.reserve(out.size() + 4 * t.data.size());
  for (auto v : t.data) put_u32(out, static_cast<std::uint32_t>(v));
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 24 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw IoError("not a GVT1 tensor");
  const auto version = get_u32(bytes, 4);
  if (version != kTensorVersion) throw IoError("unsupported GVT1 version " + std::to_string(version));
  if (get_u32(bytes, 8) != kDtypeI32) throw IoError("unsupported GVT1 dtype");
  Tensor t;
  const auto sign = get_u32(bytes, 12);
  if (sign > 1) throw IoError("invalid signedness field");
  t.signedness = static_cast<Signedness>(sign);
  t.bits = static_cast<int>(get_u32(bytes, 16));
  const auto ndim = get_u32(bytes, 20);
  if (ndim > 8) throw IoError("too many tensor dimensions");
  std::size_t off = 24;
  for (std::uint32_t i = 0; i < ndim; ++i, off += 4) t.dims.push_back(get_u32(bytes, off));
  const auto n = t.element_count();
  if (bytes.size() != off + 4 * n) throw IoError("GVT1 payload size does not match header");
  t.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) t.data[i] = static_cast<std::int32_t>(get_u32(bytes, off + 4 * i));
  if (t.bits < 1 || t.bits > 32) throw IoError("invalid precision field");
  const auto lo = min_value(t.bits, t.signedness);
  const auto hi = max_value(t.bits, t.signedness);
  for (auto v : t.data) {
    if (v < lo || v > hi) throw RangeError("GVT1 element outside declared precision");
  }
  return t;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) { write_file_bytes(path, encode_tensor(t)); }

Tensor read_tensor(const std::filesystem::path& path) {
  try {
    return decode_tensor(read_file_bytes(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

Tensor to_tensor(const IntMatrix& m) {
  Tensor t;
  t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  t.bits = m.bits();
  t.signedness = m.signedness();
  t.data.assign(m.data().begin(), m.data().end());
  return t;
}

IntMatrix to_matrix(const Tensor& t) {
  if (t.dims.size() != 2) throw ArgumentError("expected a 2-D tensor, got " + std::to_string(t.dims.size()) + "-D");
  return IntMatrix(t.dims[0], t.dims[1], t.bits, t.signedness, t.data);
}

IntMatrix parse_csv_matrix(std::string_view text, int bits, Signedness sign) {
  std::vector<std::int32_t> data;
  std::size_t rows = 0;
  std::size_t cols = 0;
  while (!text.empty()) {
    auto eol = text.find('\n');
    auto line = text.substr(0, eol);
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    std::size_t n = 0;
    while (true) {
      auto comma = line.find(',');
      auto field = line.substr(0, comma);
      while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
      while (!field.empty() && (field.back() == ' ' || field.back() == '\t')) field.remove_suffix(1);
      std::int32_t v = 0;
      auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
      if (ec != std::errc{} || ptr != field.data() + field.size() || field.empty()) {
        throw IoError("malformed CSV field '" + std::string(field) + "' on row " + std::to_string(rows));
      }
      data.push_back(v);
      ++n;
      if (comma == std::string_view::npos) break;
      line = line.substr(comma + 1);
    }
    if (rows == 0) cols = n;
    if (n != cols) throw IoError("ragged CSV row " + std::to_string(rows));
    ++rows;
  }
  return IntMatrix(rows, cols, bits, sign, std::move(data));
}

IntMatrix read_csv_matrix(const std::filesystem::path& path, int bits, Signedness sign) {
  const auto bytes = read_file_bytes(path);
  return parse_csv_matrix(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), bits, sign);
}

}  // namespace gav
