#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "gav/errmodel.hpp"
#include "gav/error.hpp"
#include "gav/oracle.hpp"

using namespace gav;

namespace {

ErrorTrace oracle_trace(std::size_t cycles, std::uint64_t seed) {
  const auto net = build_ipe(32);
  TimingConfig cfg;
  cfg.delay_scale = 1.0625;  // first carry-stress step at C=32, about 2% bit errors
  GemmStreamInputs in(32, 4, 4, seed);
  return generate_traces(net, cfg, in, cycles);
}

}  // namespace

TEST_CASE("previous-value bins") {
  CHECK(prev_bin(0, 576, 16) == 0);
  CHECK(prev_bin(576, 576, 16) == 15);
  CHECK(prev_bin(36, 576, 16) == 0);
  CHECK(prev_bin(37, 576, 16) == 1);
  CHECK(prev_bin(32, 32, 16) == 15);
  CHECK_THROWS_AS(prev_bin(33, 32, 16), ArgumentError);
  // equal-width: floor(prev * p / (C + 1))
  for (unsigned prev = 0; prev <= 100; ++prev) CHECK(prev_bin(prev, 100, 7) == static_cast<int>(prev * 7 / 101));
}

TEST_CASE("ragged table layout") {
  const ErrorLut lut(32);
  CHECK(lut.s_bits() == 6);
  CHECK(lut.n_nei() == 2);
  CHECK(lut.p_bins() == 16);
  for (int b = 0; b < 4; ++b) CHECK(lut.conditions(b) == 4);
  CHECK(lut.conditions(4) == 2);
  CHECK(lut.conditions(5) == 1);  // the MSB has no neighbor condition
  CHECK(lut.full_shape() == std::array<std::size_t, 4>{6, 33, 16, 4});
  CHECK(lut.table(0).size() == 33u * 16 * 4);
  CHECK(lut.table(5).size() == 33u * 16);
  CHECK(lut.is_zero());
}

TEST_CASE("cell frequency with and without smoothing") {
  ErrorTrace t{32, 6, {}};
  for (int i = 0; i < 10; ++i) t.records.push_back({5, 0, static_cast<std::uint16_t>(i < 3 ? 5 ^ 1 : 5)});
  const auto raw = calibrate(std::span(&t, 1), 2, 16, 0.0);
  CHECK(raw.count(0, 5, 0, 0) == 10);
  CHECK(raw.flips(0, 5, 0, 0) == 3);
  CHECK(raw.prob(0, 5, 0, 0) == doctest::Approx(0.3));
  CHECK(raw.prob(1, 5, 0, 0) == 0.0);
  CHECK(raw.prob(0, 6, 0, 0) == 0.0);  // unobserved
  const auto smooth = calibrate(std::span(&t, 1), 2, 16, 0.5);
  CHECK(smooth.prob(0, 5, 0, 0) == doctest::Approx(3.5 / 11.0));
  CHECK(smooth.prob(1, 5, 0, 0) == doctest::Approx(0.5 / 11.0));
  CHECK(smooth.prob(0, 6, 0, 0) == 0.0);
}

TEST_CASE("conditions use the error flags of higher bits") {
  // exact 0; errors at bits 5 and 4 together, or at bit 4 alone.
  ErrorTrace t{32, 6, {}};
  for (int i = 0; i < 4; ++i) t.records.push_back({0, 0, 0x30});
  for (int i = 0; i < 6; ++i) t.records.push_back({0, 0, 0x10});
  const auto lut = calibrate(std::span(&t, 1), 2, 16, 0.0);
  CHECK(lut.count(5, 0, 0, 0) == 10);
  CHECK(lut.flips(5, 0, 0, 0) == 4);
  CHECK(lut.count(4, 0, 0, 1) == 4);  // bit 5 wrong
  CHECK(lut.prob(4, 0, 0, 1) == 1.0);
  CHECK(lut.count(4, 0, 0, 0) == 6);
  CHECK(lut.prob(4, 0, 0, 0) == 1.0);
  // bit 3 sees (bit 4, bit 5) errors as cond bits 0 and 1
  CHECK(lut.count(3, 0, 0, 3) == 4);
  CHECK(lut.count(3, 0, 0, 1) == 6);
}

TEST_CASE("calibration errors") {
  std::vector<ErrorTrace> none;
  CHECK_THROWS_AS(calibrate(none), CalibrationError);
  std::vector<ErrorTrace> empty{ErrorTrace{32, 6, {}}};
  CHECK_THROWS_AS(calibrate(empty), CalibrationError);
  std::vector<ErrorTrace> mixed{ErrorTrace{32, 6, {{1, 0, 1}}}, ErrorTrace{16, 5, {{1, 0, 1}}}};
  CHECK_THROWS_AS(calibrate(mixed), CalibrationError);
  std::vector<ErrorTrace> clean{ErrorTrace{32, 6, {{1, 0, 1}, {7, 1, 7}}}};
  CHECK(calibrate(clean, 2, 16, 0.0).is_zero());
}

TEST_CASE("sampling identities") {
  std::vector<unsigned> exact, prev;
  Rng g(3);
  for (int i = 0; i < 1000; ++i) {
    exact.push_back(static_cast<unsigned>(g.below(33)));
    prev.push_back(i == 0 ? 0 : exact[i - 1]);
  }
  const ErrorLut zero(32);
  Rng r(1);
  CHECK(sample_errors(exact, prev, zero, r) == exact);

  ErrorLut flip2(32);
  flip2.fill_bit(2, 1.0);
  const auto out = sample_errors(exact, prev, flip2, r);
  for (std::size_t i = 0; i < exact.size(); ++i) REQUIRE(out[i] == (exact[i] ^ 4u));

  std::vector<unsigned> big{40}, p0{0};
  CHECK_THROWS_AS(sample_errors(big, p0, zero, r), ConfigError);
  CHECK_THROWS_AS(flip2.set_prob(0, 0, 0, 0, 1.5), RangeError);
}

TEST_CASE("bits are sampled from the MSB down") {
  // Bit 4 flips with probability 1/2; bit 3 flips exactly when bit 4 did.
  ErrorLut lut(32);
  for (unsigned e = 0; e <= 32; ++e)
    for (int pb = 0; pb < 16; ++pb) {
      lut.set_prob(4, e, pb, 0, 0.5);
      for (unsigned cond = 0; cond < 4; ++cond) lut.set_prob(3, e, pb, cond, (cond & 1u) ? 1.0 : 0.0);
    }
  Rng r(8);
  int flips = 0;
  for (int i = 0; i < 2000; ++i) {
    const unsigned v = lut.sample(3, 0, r);
    const unsigned m = v ^ 3u;
    REQUIRE(((m >> 3) & 1u) == ((m >> 4) & 1u));
    flips += (m >> 4) & 1u;
  }
  CHECK(flips > 800);
  CHECK(flips < 1200);
}

TEST_CASE("resampled flip frequencies converge to the table") {
  ErrorLut lut(16, 2, 4);
  Rng setup(4);
  for (int b = 0; b < lut.s_bits(); ++b)
    for (unsigned e = 0; e <= 16; ++e)
      for (int pb = 0; pb < 4; ++pb)
        for (int cond = 0; cond < lut.conditions(b); ++cond) lut.set_prob(b, e, pb, cond, 0.3 * setup.uniform());
  // (bit, cond) tallies for a fixed exact value and previous bin
  const unsigned exact = 11, prev = 2;
  std::map<std::pair<int, unsigned>, std::pair<double, double>> seen;  // n, flips
  Rng r(10);
  for (int i = 0; i < 100000; ++i) {
    const unsigned m = lut.sample(exact, prev, r) ^ exact;
    for (int b = 0; b < lut.s_bits(); ++b) {
      unsigned cond = 0;
      const int nb = std::min(2, lut.s_bits() - 1 - b);
      for (int j = 0; j < nb; ++j) cond |= ((m >> (b + 1 + j)) & 1u) << j;
      auto& s = seen[{b, cond}];
      s.first += 1;
      s.second += (m >> b) & 1u;
    }
  }
  for (const auto& [key, s] : seen) {
    if (s.first < 500) continue;
    const double p = lut.prob(key.first, exact, prev_bin(prev, 16, 4), key.second);
    const double se = std::sqrt(std::max(p * (1 - p), 1e-9) / s.first);
    CHECK(std::abs(s.second / s.first - p) <= 3 * se + 1e-12);
  }
}

TEST_CASE("calibrate then resample reproduces per-bit error rates") {
  const auto trace = oracle_trace(60000, 21);
  const auto lut = calibrate(std::span(&trace, 1));
  std::vector<double> tr(lut.s_bits(), 0), md(lut.s_bits(), 0);
  Rng r(2);
  for (const auto& rec : trace.records) {
    const unsigned m = lut.sample(rec.exact, rec.prev, r) ^ rec.exact;
    for (int b = 0; b < lut.s_bits(); ++b) {
      tr[b] += (rec.error_mask() >> b) & 1u;
      md[b] += (m >> b) & 1u;
    }
  }
  int checked = 0;
  for (int b = 0; b < lut.s_bits(); ++b) {
    if (tr[b] < 1000) continue;  // only well-observed bits
    CHECK(md[b] == doctest::Approx(tr[b]).epsilon(0.10));
    ++checked;
  }
  CHECK(checked >= 1);
}

TEST_CASE("LUT file round trip") {
  const auto trace = oracle_trace(5000, 3);
  const auto lut = calibrate(std::span(&trace, 1), 2, 8, 0.5);
  CHECK_FALSE(lut.source_digest().empty());
  CHECK(lut.source_digest() == trace_digest(std::span(&trace, 1)));
  const auto text = lut_to_json(lut);
  CHECK(lut_from_json(text) == lut);
  const auto path = std::filesystem::temp_directory_path() / "gav_test_lut.json";
  write_lut(path, lut);
  CHECK(read_lut(path) == lut);
  CHECK_THROWS_AS(lut_from_json("{\"format\":\"something-else\"}"), IoError);
  CHECK_THROWS_AS(lut_from_json("not json"), IoError);
}
