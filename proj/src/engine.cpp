#include "gav/engine.hpp"

#include <algorithm>
#include <bit>
#include <limits>
#include <string>

#include "gav/error.hpp"

namespace gav {

namespace {

constexpr std::size_t words_for(std::size_t bits) { return (bits + 63) / 64; }

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

/// Bit planes regrouped per c-tile so one tile column is a contiguous word run.
/// Layout: [plane][c_tile][vector][word].
class PackedOperand {
 public:
  // `vectors` = L_total for A (columns), K_total for B (rows).
  PackedOperand(const IntMatrix& m, bool columns, std::size_t c_len, std::size_t tile_c)
      : vectors_(columns ? m.cols() : m.rows()),
        c_tiles_(ceil_div(c_len, tile_c)),
        words_(words_for(tile_c)),
        bits_(m.bits()),
        data_(static_cast<std::size_t>(bits_) * c_tiles_ * vectors_ * words_, 0) {
    const std::uint32_t mask = (1u << bits_) - 1u;
    for (std::size_t v = 0; v < vectors_; ++v) {
      for (std::size_t c = 0; c < c_len; ++c) {
        const auto raw = static_cast<std::uint32_t>(columns ? m(c, v) : m(v, c)) & mask;
        if (raw == 0) continue;
        const std::size_t t = c / tile_c;
        const std::size_t off = c % tile_c;
        for (int p = 0; p < bits_; ++p) {
          if ((raw >> p) & 1u) word_ptr(p, t, v)[off / 64] |= std::uint64_t{1} << (off % 64);
        }
      }
    }
  }

  std::uint64_t* word_ptr(int plane, std::size_t tile, std::size_t v) {
    return data_.data() + ((static_cast<std::size_t>(plane) * c_tiles_ + tile) * vectors_ + v) * words_;
  }
  const std::uint64_t* word_ptr(int plane, std::size_t tile, std::size_t v) const {
    return data_.data() + ((static_cast<std::size_t>(plane) * c_tiles_ + tile) * vectors_ + v) * words_;
  }
  std::size_t words() const { return words_; }

 private:
  std::size_t vectors_;
  std::size_t c_tiles_;
  std::size_t words_;
  int bits_;
  std::vector<std::uint64_t> data_;
};

int result_bits(const GemmJob& job) {
  const int log_c = static_cast<int>(std::bit_width(job.a.rows() - 1));
  return std::min(32, job.a.bits() + job.b.bits() + log_c + 1);
}

}  // namespace

void GemmJob::validate() const {
  shape.validate();
  schedule.validate();
  if (a.bits() != schedule.a_bits || b.bits() != schedule.b_bits) {
    throw ArgumentError("operand precisions (" + std::to_string(a.bits()) + "," + std::to_string(b.bits()) +
                        ") do not match the schedule (" + std::to_string(schedule.a_bits) + "," +
                        std::to_string(schedule.b_bits) + ")");
  }
  if (a.rows() != b.cols()) {
    throw ArgumentError("inner dimensions disagree: A has " + std::to_string(a.rows()) + " rows, B has " +
                        std::to_string(b.cols()) + " columns");
  }
  if (a.rows() == 0 || a.cols() == 0 || b.rows() == 0) throw ArgumentError("GEMM operands must be non-empty");
}

std::vector<TileCoord> tile_iterator(std::size_t c_total, std::size_t l_total, std::size_t k_total,
                                     const ArrayShape& shape) {
  shape.validate();
  std::vector<TileCoord> tiles;
  tiles.reserve(ceil_div(c_total, shape.c) * ceil_div(l_total, shape.l) * ceil_div(k_total, shape.k));
  for (std::size_t k0 = 0; k0 < k_total; k0 += shape.k) {
    for (std::size_t l0 = 0; l0 < l_total; l0 += shape.l) {
      for (std::size_t c0 = 0; c0 < c_total; c0 += shape.c) {
        tiles.push_back({k0, l0, c0, std::min(shape.k, k_total - k0), std::min(shape.l, l_total - l0),
                         std::min(shape.c, c_total - c0)});
      }
    }
  }
  return tiles;
}

unsigned ipe_column(std::span<const std::uint8_t> a_bits, std::span<const std::uint8_t> b_bits) {
  if (a_bits.size() != b_bits.size()) throw ArgumentError("iPE input vectors must have equal length");
  unsigned sum = 0;
  for (std::size_t i = 0; i < a_bits.size(); ++i) sum += (a_bits[i] & b_bits[i]) & 1u;
  return sum;
}

double peak_macs_per_cycle(const ArrayShape& shape, int a_bits, int b_bits) {
  return static_cast<double>(shape.l * shape.c * shape.k) / (a_bits * b_bits);
}

GemmResult gemm_exact(const GemmJob& job) { return gemm_injected(job, nullptr); }

GemmResult gemm_gav(const GemmJob& job) {
  if (job.error_model == nullptr) throw ConfigError("GAV execution requires an error model");
  if (job.error_model->c() != job.shape.c) {
    throw ConfigError("error model was calibrated for C=" + std::to_string(job.error_model->c()) +
                      " but the array has C=" + std::to_string(job.shape.c));
  }
  LutInjector injector(*job.error_model, job.seed);
  return gemm_injected(job, &injector);
}

GemmResult gemm_injected(const GemmJob& job, ErrorInjector* injector) {
  job.validate();
  const std::size_t c_total = job.a.rows();
  const std::size_t l_total = job.a.cols();
  const std::size_t k_total = job.b.rows();
  const auto& shape = job.shape;
  const auto& sched = job.schedule;

  const PackedOperand pa(job.a, true, c_total, shape.c);
  const PackedOperand pb(job.b, false, c_total, shape.c);
  const std::size_t words = pa.words();
  const std::vector<std::uint64_t> zeros(words, 0);

  std::vector<std::int64_t> acc(k_total * l_total, 0);
  // Per-iPE state carried across cycles: previous exact output and inputs.
  std::vector<unsigned> prev_exact(shape.l * shape.k, 0);
  std::vector<const std::uint64_t*> prev_a(shape.l * shape.k, zeros.data());
  std::vector<const std::uint64_t*> prev_b(shape.l * shape.k, zeros.data());

  const bool a_signed = job.a.signedness() == Signedness::Signed;
  const bool b_signed = job.b.signedness() == Signedness::Signed;

  GemmResult result;
  const auto tiles = tile_iterator(c_total, l_total, k_total, shape);
  result.tile_count = tiles.size();
  const int approx_passes = sched.approx_passes();
  result.cycles = result.tile_count * static_cast<std::uint64_t>(sched.passes());
  result.approx_cycles = result.tile_count * static_cast<std::uint64_t>(approx_passes);

  IpeCycle cycle;
  cycle.c = shape.c;
  for (const auto& tile : tiles) {
    const std::size_t ct = tile.c0 / shape.c;
    for (int ba = 0; ba < sched.a_bits; ++ba) {
      for (int bb = 0; bb < sched.b_bits; ++bb) {
        const bool approx = injector != nullptr && schedule_mode(sched, ba, bb) == VoltageMode::Approx;
        const bool negative = (a_signed && ba == sched.a_bits - 1) != (b_signed && bb == sched.b_bits - 1);
        const int shift = ba + bb;
        for (std::size_t li = 0; li < shape.l; ++li) {
          for (std::size_t ki = 0; ki < shape.k; ++ki) {
            const std::size_t pos = li * shape.k + ki;
            if (li >= tile.l_len || ki >= tile.k_len) {
              // Padded iPE: zero inputs, zero output.
              prev_exact[pos] = 0;
              prev_a[pos] = zeros.data();
              prev_b[pos] = zeros.data();
              continue;
            }
            const std::size_t l = tile.l0 + li;
            const std::size_t k = tile.k0 + ki;
            const std::uint64_t* aw = pa.word_ptr(ba, ct, l);
            const std::uint64_t* bw = pb.word_ptr(bb, ct, k);
            unsigned exact = 0;
            for (std::size_t w = 0; w < words; ++w) exact += static_cast<unsigned>(std::popcount(aw[w] & bw[w]));
            unsigned value = exact;
            if (approx) {
              cycle.l = li;
              cycle.k = ki;
              cycle.ba = ba;
              cycle.bb = bb;
              cycle.exact = exact;
              cycle.prev_exact = prev_exact[pos];
              cycle.a = {aw, words};
              cycle.b = {bw, words};
              cycle.prev_a = {prev_a[pos], words};
              cycle.prev_b = {prev_b[pos], words};
              value = injector->inject(cycle);
            }
            prev_exact[pos] = exact;
            prev_a[pos] = aw;
            prev_b[pos] = bw;
            if (value != 0) {
              const std::int64_t term = static_cast<std::int64_t>(value) << shift;
              acc[k * l_total + l] += negative ? -term : term;
            }
          }
        }
      }
    }
  }

  const int bits = result_bits(job);
  const auto lo = min_value(bits, Signedness::Signed);
  const auto hi = max_value(bits, Signedness::Signed);
  std::vector<std::int32_t> out(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) {
    if (acc[i] < lo || acc[i] > hi) {
      throw OverflowError("accumulator value " + std::to_string(acc[i]) + " exceeds the " + std::to_string(bits) +
                          "-bit result range");
    }
    out[i] = static_cast<std::int32_t>(acc[i]);
  }
  result.p = IntMatrix(k_total, l_total, bits, Signedness::Signed, std::move(out));
  return result;
}

std::vector<std::int64_t> reference_matmul(const IntMatrix& a, const IntMatrix& b) {
  if (a.rows() != b.cols()) throw ArgumentError("inner dimensions disagree");
  std::vector<std::int64_t> p(b.rows() * a.cols(), 0);
  for (std::size_t k = 0; k < b.rows(); ++k)
    for (std::size_t c = 0; c < a.rows(); ++c) {
      const std::int64_t bv = b(k, c);
      if (bv == 0) continue;
      for (std::size_t l = 0; l < a.cols(); ++l) p[k * a.cols() + l] += bv * a(c, l);
    }
  return p;
}

}  // namespace gav
