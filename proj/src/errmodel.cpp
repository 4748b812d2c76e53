#include "gav/errmodel.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gav/core.hpp"
#include "gav/error.hpp"
#include "gav/tensor_io.hpp"

namespace gav {

namespace {

constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(std::span<const std::uint8_t> in) {
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < in.size(); i += 3) {
    const std::uint32_t v = (in[i] << 16) | (in[i + 1] << 8) | in[i + 2];
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += kB64[(v >> 6) & 63];
    out += kB64[v & 63];
  }
  if (i < in.size()) {
    std::uint32_t v = in[i] << 16;
    if (i + 1 < in.size()) v |= in[i + 1] << 8;
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += i + 1 < in.size() ? kB64[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view in) {
  auto value = [](char ch) -> int {
    if (ch >= 'A' && ch <= 'Z') return ch - 'A';
    if (ch >= 'a' && ch <= 'z') return ch - 'a' + 26;
    if (ch >= '0' && ch <= '9') return ch - '0' + 52;
    if (ch == '+') return 62;
    if (ch == '/') return 63;
    return -1;
  };
  if (in.size() % 4 != 0) throw IoError("base64 payload length is not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(in.size() / 4 * 3);
  for (std::size_t i = 0; i < in.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int j = 0; j < 4; ++j) {
      if (in[i + j] == '=') {
        v[j] = 0;
        ++pad;
      } else {
        v[j] = value(in[i + j]);
        if (v[j] < 0 || pad) throw IoError("invalid base64 payload");
      }
    }
    const std::uint32_t w = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out.push_back(static_cast<std::uint8_t>(w >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>(w >> 8));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(w));
  }
  return out;
}

template <class T>
std::string pack_array(std::span<const T> values) {
  std::vector<std::uint8_t> bytes(values.size() * sizeof(T));
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t raw = 0;
    std::memcpy(&raw, &values[i], sizeof(T));
    for (std::size_t b = 0; b < sizeof(T); ++b) bytes[i * sizeof(T) + b] = static_cast<std::uint8_t>(raw >> (8 * b));
  }
  return base64_encode(bytes);
}

template <class T>
std::vector<T> unpack_array(std::string_view text, std::size_t expected) {
  const auto bytes = base64_decode(text);
  if (bytes.size() != expected * sizeof(T)) throw IoError("LUT table has the wrong number of cells");
  std::vector<T> out(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    std::uint64_t raw = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b) raw |= static_cast<std::uint64_t>(bytes[i * sizeof(T) + b]) << (8 * b);
    std::memcpy(&out[i], &raw, sizeof(T));
  }
  return out;
}

}  // namespace

int prev_bin(unsigned prev_output, unsigned c, int p_bins) {
  if (p_bins < 1) throw ArgumentError("p_bins must be >= 1");
  if (prev_output > c) throw ArgumentError("previous output exceeds C");
  const auto bin = static_cast<std::uint64_t>(prev_output) * static_cast<std::uint64_t>(p_bins) / (c + 1ULL);
  return static_cast<int>(std::min<std::uint64_t>(bin, p_bins - 1));
}

ErrorLut::ErrorLut(unsigned c, int n_nei, int p_bins, double lambda)
    : c_(c), s_bits_(output_bits(c)), n_nei_(n_nei), p_bins_(p_bins), lambda_(lambda) {
  if (c < 1 || c > 0xFFFF) throw ArgumentError("LUT C must be within [1, 65535]");
  if (n_nei < 0 || n_nei > 8) throw ArgumentError("n_nei must be within [0, 8]");
  if (p_bins < 1) throw ArgumentError("p_bins must be >= 1");
  if (lambda < 0.0) throw ArgumentError("smoothing must be non-negative");
  conds_.resize(s_bits_);
  tables_.resize(s_bits_);
  counts_.resize(s_bits_);
  flips_.resize(s_bits_);
  for (int b = 0; b < s_bits_; ++b) {
    conds_[b] = 1 << std::min(n_nei_, s_bits_ - 1 - b);
    const std::size_t cells = static_cast<std::size_t>(c_ + 1) * p_bins_ * conds_[b];
    tables_[b].assign(cells, 0.0);
    counts_[b].assign(cells, 0);
    flips_[b].assign(cells, 0);
  }
  bin_of_.resize(c_ + 1);
  for (unsigned v = 0; v <= c_; ++v) bin_of_[v] = prev_bin(v, c_, p_bins_);
}

int ErrorLut::conditions(int bit) const {
  if (bit < 0 || bit >= s_bits_) throw ArgumentError("output bit out of range");
  return conds_[bit];
}

std::array<std::size_t, 4> ErrorLut::full_shape() const {
  return {static_cast<std::size_t>(s_bits_), static_cast<std::size_t>(c_) + 1, static_cast<std::size_t>(p_bins_),
          std::size_t{1} << n_nei_};
}

void ErrorLut::check_cell(int bit, unsigned exact, int pbin, unsigned cond) const {
  if (bit < 0 || bit >= s_bits_ || exact > c_ || pbin < 0 || pbin >= p_bins_ ||
      cond >= static_cast<unsigned>(conds_[bit])) {
    throw ArgumentError("LUT cell index out of range");
  }
}

void ErrorLut::set_prob(int bit, unsigned exact, int pbin, unsigned cond, double p) {
  check_cell(bit, exact, pbin, cond);
  if (!(p >= 0.0 && p <= 1.0)) throw RangeError("probability must lie in [0, 1]");
  tables_[bit][index(bit, exact, pbin, cond)] = p;
}

void ErrorLut::restore_table(int bit, std::span<const double> prob, std::span<const std::uint64_t> counts,
                             std::span<const std::uint64_t> flips) {
  if (bit < 0 || bit >= s_bits_) throw ArgumentError("output bit out of range");
  const auto cells = tables_[bit].size();
  if (prob.size() != cells || counts.size() != cells || flips.size() != cells) {
    throw ArgumentError("restored table has the wrong number of cells");
  }
  for (std::size_t i = 0; i < cells; ++i) {
    if (!(prob[i] >= 0.0 && prob[i] <= 1.0)) throw RangeError("probability must lie in [0, 1]");
    if (flips[i] > counts[i]) throw RangeError("flip count exceeds observation count");
  }
  tables_[bit].assign(prob.begin(), prob.end());
  counts_[bit].assign(counts.begin(), counts.end());
  flips_[bit].assign(flips.begin(), flips.end());
}

void ErrorLut::fill_bit(int bit, double p) {
  if (bit < 0 || bit >= s_bits_) throw ArgumentError("output bit out of range");
  if (!(p >= 0.0 && p <= 1.0)) throw RangeError("probability must lie in [0, 1]");
  std::fill(tables_[bit].begin(), tables_[bit].end(), p);
}

bool ErrorLut::is_zero() const {
  return std::all_of(tables_.begin(), tables_.end(),
                     [](const auto& t) { return std::all_of(t.begin(), t.end(), [](double p) { return p == 0.0; }); });
}

unsigned ErrorLut::sample(unsigned exact, unsigned prev, Rng& rng) const {
  const int pbin = bin_of_[prev];
  unsigned mask = 0;
  for (int b = s_bits_ - 1; b >= 0; --b) {
    const unsigned cond = (mask >> (b + 1)) & static_cast<unsigned>(conds_[b] - 1);
    const double p = tables_[b][index(b, exact, pbin, cond)];
    if (p > 0.0 && rng.uniform() < p) mask |= 1u << b;
  }
  return exact ^ mask;
}

void ErrorLut::observe(const TraceRecord& r) {
  if (r.exact > c_ || r.prev > c_) throw RangeError("trace value exceeds LUT C");
  const unsigned err = r.error_mask();
  const int pbin = bin_of_[r.prev];
  for (int b = s_bits_ - 1; b >= 0; --b) {
    const unsigned cond = (err >> (b + 1)) & static_cast<unsigned>(conds_[b] - 1);
    const auto i = index(b, r.exact, pbin, cond);
    ++counts_[b][i];
    flips_[b][i] += (err >> b) & 1u;
  }
}

void ErrorLut::finalize() {
  for (int b = 0; b < s_bits_; ++b) {
    for (std::size_t i = 0; i < tables_[b].size(); ++i) {
      const auto n = counts_[b][i];
      tables_[b][i] = n == 0 ? 0.0 : (static_cast<double>(flips_[b][i]) + lambda_) / (static_cast<double>(n) + 2.0 * lambda_);
    }
  }
}

ErrorLut calibrate(std::span<const ErrorTrace> traces, int n_nei, int p_bins, double lambda) {
  if (traces.empty()) throw CalibrationError("no traces supplied for calibration");
  const auto c = traces.front().c;
  std::size_t total = 0;
  for (const auto& t : traces) {
    if (t.c != c) throw CalibrationError("traces disagree on C");
    total += t.records.size();
  }
  if (total == 0) throw CalibrationError("calibration traces are empty");
  ErrorLut lut(c, n_nei, p_bins, lambda);
  for (const auto& t : traces) {
    t.validate();
    for (const auto& r : t.records) lut.observe(r);
  }
  lut.finalize();
  lut.set_source_digest(trace_digest(traces));
  return lut;
}

std::vector<unsigned> sample_errors(std::span<const unsigned> exact_seq, std::span<const unsigned> prev_seq,
                                    const ErrorLut& lut, Rng& rng) {
  if (exact_seq.size() != prev_seq.size()) throw ArgumentError("exact and previous sequences must be aligned");
  std::vector<unsigned> out(exact_seq.size());
  for (std::size_t i = 0; i < exact_seq.size(); ++i) {
    if (exact_seq[i] > lut.c() || prev_seq[i] > lut.c()) {
      throw ConfigError("iPE value " + std::to_string(std::max(exact_seq[i], prev_seq[i])) +
                        " exceeds the LUT's C = " + std::to_string(lut.c()));
    }
    out[i] = lut.sample(exact_seq[i], prev_seq[i], rng);
  }
  return out;
}

std::string trace_digest(std::span<const ErrorTrace> traces) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : traces) {
    const auto bytes = encode_trace(t);
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), h);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string lut_to_json(const ErrorLut& lut) {
  nlohmann::json j;
  j["format"] = "gav-lut";
  j["version"] = 1;
  j["C"] = lut.c();
  j["S_BITS"] = lut.s_bits();
  j["n_nei"] = lut.n_nei();
  j["p_bins"] = lut.p_bins();
  j["lambda"] = lut.lambda();
  j["source_digest"] = lut.source_digest();
  j["encoding"] = "base64-le";
  auto& tables = j["tables"] = nlohmann::json::array();
  for (int b = 0; b < lut.s_bits(); ++b) {
    tables.push_back({{"bit", b},
                      {"conditions", lut.conditions(b)},
                      {"prob_f64", pack_array(lut.table(b))},
                      {"count_u64", pack_array(lut.counts(b))},
                      {"flips_u64", pack_array(lut.flip_counts(b))}});
  }
  return j.dump(1);
}

ErrorLut lut_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    if (j.at("format") != "gav-lut" || j.at("version") != 1) throw IoError("not a version-1 gav-lut file");
    ErrorLut lut(j.at("C").get<unsigned>(), j.at("n_nei").get<int>(), j.at("p_bins").get<int>(),
                 j.at("lambda").get<double>());
    if (j.at("S_BITS").get<int>() != lut.s_bits()) throw IoError("LUT S_BITS inconsistent with C");
    lut.set_source_digest(j.value("source_digest", std::string{}));
    const auto& tables = j.at("tables");
    if (tables.size() != static_cast<std::size_t>(lut.s_bits())) throw IoError("LUT must hold one table per output bit");
    for (int b = 0; b < lut.s_bits(); ++b) {
      const auto& t = tables[b];
      if (t.at("bit").get<int>() != b || t.at("conditions").get<int>() != lut.conditions(b)) {
        throw IoError("LUT table header mismatch at bit " + std::to_string(b));
      }
      const std::size_t cells = static_cast<std::size_t>(lut.c() + 1) * lut.p_bins() * lut.conditions(b);
      const auto prob = unpack_array<double>(t.at("prob_f64").get<std::string>(), cells);
      const auto count = unpack_array<std::uint64_t>(t.at("count_u64").get<std::string>(), cells);
      const auto flips = unpack_array<std::uint64_t>(t.at("flips_u64").get<std::string>(), cells);
      lut.restore_table(b, prob, count, flips);
    }
    return lut;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed LUT file: ") + e.what());
  }
}

void write_lut(const std::filesystem::path& path, const ErrorLut& lut) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << lut_to_json(lut) << '\n';
}

ErrorLut read_lut(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return lut_from_json(ss.str());
}

}  // namespace gav
