#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gav/rng.hpp"
#include "gav/trace.hpp"

namespace gav {

inline constexpr int kDefaultNeighbors = 2;
inline constexpr int kDefaultPrevBins = 16;
inline constexpr double kDefaultSmoothing = 0.5;

/// Equal-width bin of a previous iPE output over [0, C].
int prev_bin(unsigned prev_output, unsigned c, int p_bins);

/// Output-indexed undervolting error model.
///
/// Bit b of the iPE output flips with probability tables[b][exact][prev_bin][cond],
/// where cond packs the already-sampled error flags of the next min(n_nei, S_BITS-1-b)
/// higher bits (bit j of cond = error at output bit b+1+j). The MSB table therefore
/// has a single condition and the tables form a ragged list.
class ErrorLut {
 public:
  ErrorLut(unsigned c, int n_nei = kDefaultNeighbors, int p_bins = kDefaultPrevBins, double lambda = 0.0);

  unsigned c() const noexcept { return c_; }
  int s_bits() const noexcept { return s_bits_; }
  int n_nei() const noexcept { return n_nei_; }
  int p_bins() const noexcept { return p_bins_; }
  double lambda() const noexcept { return lambda_; }

  /// Number of neighbor conditions stored for output bit `bit`.
  int conditions(int bit) const;
  /// Dimensions of the equivalent dense table: [S_BITS, C+1, p_bins, 2^n_nei].
  std::array<std::size_t, 4> full_shape() const;

  double prob(int bit, unsigned exact, int pbin, unsigned cond) const { return tables_[bit][index(bit, exact, pbin, cond)]; }
  void set_prob(int bit, unsigned exact, int pbin, unsigned cond, double p);
  /// Replaces one bit's probabilities and diagnostics (file loading).
  void restore_table(int bit, std::span<const double> prob, std::span<const std::uint64_t> counts,
                     std::span<const std::uint64_t> flips);
  /// Sets every cell of one bit's table.
  void fill_bit(int bit, double p);

  std::uint64_t count(int bit, unsigned exact, int pbin, unsigned cond) const { return counts_[bit][index(bit, exact, pbin, cond)]; }
  std::uint64_t flips(int bit, unsigned exact, int pbin, unsigned cond) const { return flips_[bit][index(bit, exact, pbin, cond)]; }

  std::span<const double> table(int bit) const { return tables_.at(bit); }
  std::span<const std::uint64_t> counts(int bit) const { return counts_.at(bit); }
  std::span<const std::uint64_t> flip_counts(int bit) const { return flips_.at(bit); }

  bool is_zero() const;

  const std::string& source_digest() const noexcept { return digest_; }
  void set_source_digest(std::string d) { digest_ = std::move(d); }

  /// One cycle of the sampler: returns exact with the sampled error mask applied.
  /// Bits are visited MSB first so each condition sees already-sampled higher bits.
  unsigned sample(unsigned exact, unsigned prev, Rng& rng) const;

  /// Tallies one observation; probabilities are refreshed by finalize().
  void observe(const TraceRecord& r);
  /// Recomputes every observed cell as (flips + lambda) / (count + 2 lambda);
  /// unobserved cells are 0.
  void finalize();

  bool operator==(const ErrorLut&) const = default;

 private:
  std::size_t index(int bit, unsigned exact, int pbin, unsigned cond) const {
    return (static_cast<std::size_t>(exact) * p_bins_ + pbin) * conds_[bit] + cond;
  }
  void check_cell(int bit, unsigned exact, int pbin, unsigned cond) const;

  unsigned c_;
  int s_bits_;
  int n_nei_;
  int p_bins_;
  double lambda_;
  std::string digest_;
  std::vector<int> conds_;
  std::vector<int> bin_of_;
  std::vector<std::vector<double>> tables_;
  std::vector<std::vector<std::uint64_t>> counts_;
  std::vector<std::vector<std::uint64_t>> flips_;
};

/// Builds a LUT from oracle traces (all traces must share C).
ErrorLut calibrate(std::span<const ErrorTrace> traces, int n_nei = kDefaultNeighbors,
                   int p_bins = kDefaultPrevBins, double lambda = kDefaultSmoothing);

/// Per-cycle error injection over an aligned (exact, previous) sequence.
std::vector<unsigned> sample_errors(std::span<const unsigned> exact_seq, std::span<const unsigned> prev_seq,
                                    const ErrorLut& lut, Rng& rng);

/// Hex digest identifying the trace set a LUT was calibrated from.
std::string trace_digest(std::span<const ErrorTrace> traces);

std::string lut_to_json(const ErrorLut& lut);
ErrorLut lut_from_json(const std::string& text);
void write_lut(const std::filesystem::path& path, const ErrorLut& lut);
ErrorLut read_lut(const std::filesystem::path& path);

}  // namespace gav
