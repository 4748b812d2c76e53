#include <doctest.h>

#include <filesystem>
#include <random>

#include "gav/error.hpp"
#include "gav/rng.hpp"
#include "gav/tensor_io.hpp"
#include "gav/trace.hpp"
#include "oracles.hpp"

using namespace gav;
namespace fs = std::filesystem;

namespace {
fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "gav_test_tensor_io";
  fs::create_directories(dir);
  return dir / name;
}
}  // namespace

TEST_CASE("GVT1 byte layout") {
  Tensor t{{2, 3}, 4, Signedness::Signed, {-8, -1, 0, 1, 2, 7}};
  const auto bytes = encode_tensor(t);
  REQUIRE(bytes.size() == 4 + 5 * 4 + 2 * 4 + 6 * 4);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "GVT1");
  CHECK(get_u32(bytes, 4) == 1);   // version
  CHECK(get_u32(bytes, 8) == 0);   // dtype
  CHECK(get_u32(bytes, 12) == 1);  // signed
  CHECK(get_u32(bytes, 16) == 4);  // bits
  CHECK(get_u32(bytes, 20) == 2);  // ndim
  CHECK(get_u32(bytes, 24) == 2);
  CHECK(get_u32(bytes, 28) == 3);
  CHECK(static_cast<std::int32_t>(get_u32(bytes, 32)) == -8);
  CHECK(decode_tensor(bytes) == t);
}

TEST_CASE("GVT1 file round trip and matrix conversion") {
  std::mt19937_64 g(11);
  IntMatrix m(5, 7, 6, Signedness::Unsigned, oracle::random_values(g, 35, 6, false));
  const auto path = scratch("m.gvt");
  write_tensor(path, to_tensor(m));
  const auto back = to_matrix(read_tensor(path));
  CHECK(back == m);
}

TEST_CASE("GVT1 rejects malformed input") {
  Tensor t{{2}, 3, Signedness::Unsigned, {1, 7}};
  auto bytes = encode_tensor(t);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_tensor(bad_magic), IoError);
  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS_AS(decode_tensor(truncated), IoError);
  auto out_of_range = bytes;
  out_of_range[bytes.size() - 4] = 9;  // 9 does not fit 3 unsigned bits
  CHECK_THROWS_AS(decode_tensor(out_of_range), RangeError);
  CHECK_THROWS_AS(read_tensor(scratch("missing.gvt")), IoError);
  CHECK_THROWS_AS(to_matrix(Tensor{{2, 1, 1}, 4, Signedness::Signed, {0, 0}}), ArgumentError);
}

TEST_CASE("CSV matrix import") {
  const auto m = parse_csv_matrix("1,-2,3\n4,5,-6\n", 4, Signedness::Signed);
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m(1, 2) == -6);
  CHECK_THROWS_AS(parse_csv_matrix("1,2\n3\n", 4, Signedness::Signed), IoError);
  CHECK_THROWS_AS(parse_csv_matrix("1,x\n", 4, Signedness::Signed), IoError);
  CHECK_THROWS_AS(parse_csv_matrix("1,8\n", 4, Signedness::Signed), RangeError);
}

TEST_CASE("GVTR trace round trip") {
  ErrorTrace t{32, 6, {}};
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const auto e = static_cast<std::uint16_t>(rng.below(33));
    t.records.push_back({e, static_cast<std::uint16_t>(rng.below(33)), static_cast<std::uint16_t>(e ^ rng.below(64))});
  }
  const auto bytes = encode_trace(t);
  CHECK(bytes.size() == 16 + 6 * 100);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "GVTR");
  CHECK(decode_trace(bytes) == t);
  const auto path = scratch("t.gvtr");
  write_trace(path, t);
  CHECK(read_trace(path) == t);

  auto bad = bytes;
  bad.resize(bad.size() - 1);
  CHECK_THROWS_AS(decode_trace(bad), IoError);
  ErrorTrace wrong_width{32, 5, {}};
  CHECK_THROWS_AS(wrong_width.validate(), ArgumentError);
  ErrorTrace too_big{32, 6, {{33, 0, 33}}};
  CHECK_THROWS_AS(too_big.validate(), RangeError);
}

TEST_CASE("trace bit-error rate") {
  ErrorTrace t{2, 2, {{1, 0, 1}, {2, 1, 1}}};  // second record: both bits wrong
  CHECK(t.bit_error_rate() == doctest::Approx(0.5));
}

TEST_CASE("seed derivation is stable and stream-separated") {
  CHECK(derive_seed(1, "a") == derive_seed(1, "a"));
  CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
  CHECK(derive_seed(1, "a", 0) != derive_seed(1, "a", 1));
  CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
  // FNV-1a 64 reference values
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  Rng x(9), y(9);
  for (int i = 0; i < 10; ++i) CHECK(x.next() == y.next());
}

TEST_CASE("Rng helpers stay in range") {
  Rng r(1);
  double sum = 0;
  for (int i = 0; i < 20000; ++i) {
    const double u = r.uniform();
    CHECK((u >= 0.0 && u < 1.0));
    CHECK(r.below(7) < 7);
    sum += r.gamma(0.5);
  }
  CHECK(sum / 20000 == doctest::Approx(0.5).epsilon(0.05));  // Gamma(k, 1) has mean k
}
