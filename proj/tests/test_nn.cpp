#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "gav/error.hpp"
#include "gav/nn.hpp"
#include "oracles.hpp"

using namespace gav;

namespace {

const std::filesystem::path kData = GAV_DATA_DIR;

const NetworkModel& desk() {
  static const NetworkModel m = load_network(kData / "desk_cnn" / "desk_cnn_a4w4.json");
  return m;
}

const Dataset& test_set() {
  static const Dataset d = load_dataset(kData / "desk_cnn" / "test.gvt", kData / "desk_cnn" / "test_labels.csv");
  return d;
}

const ErrorLut& shipped_lut() {
  static const ErrorLut l = read_lut(kData / "luts" / "ipe_c32.json");
  return l;
}

Layer conv_layer(int cin, int cout, int k, int stride, int pad, std::mt19937_64& g) {
  Layer l;
  l.name = "c";
  l.kind = LayerKind::Conv2d;
  l.in_channels = cin;
  l.out_channels = cout;
  l.kernel = k;
  l.stride = stride;
  l.padding = pad;
  l.input_spec = {4, 1.0, Signedness::Signed};
  l.weight_spec = {4, 1.0, Signedness::Signed};
  l.weight_q = oracle::random_values(g, static_cast<std::size_t>(cout) * cin * k * k, 4, true);
  for (auto& w : l.weight_q) w = std::max(w, -7);
  l.bias.assign(cout, 0.0);
  return l;
}

Activation int_activation(int c, int h, int w, std::mt19937_64& g) {
  const auto q = oracle::random_values(g, static_cast<std::size_t>(c) * h * w, 4, true);
  Activation a{c, h, w, {}};
  for (auto v : q) a.v.push_back(std::max(v, -7));
  return a;
}

std::int32_t ref_quantize(double x, const QuantSpec& s) {
  const double r = x / s.scale;
  const double q = r < 0 ? -std::floor(-r + 0.5) : std::floor(r + 0.5);
  const double lo = s.signedness == Signedness::Signed ? -((1 << (s.bits - 1)) - 1) : 0;
  const double hi = s.signedness == Signedness::Signed ? (1 << (s.bits - 1)) - 1 : (1 << s.bits) - 1;
  return static_cast<std::int32_t>(std::clamp(q, lo, hi));
}

// Straightforward integer executor: direct convolution / dot products on codes, then
// rescale and add the bias. Elementwise layers written out by hand.
std::vector<double> reference_forward(const NetworkModel& m, Activation x) {
  for (const auto& l : m.layers) {
    Activation y;
    if (l.has_gemm()) {
      std::vector<std::int32_t> q;
      for (double v : x.v) q.push_back(ref_quantize(v, l.input_spec));
      const double s = l.input_spec.scale * l.weight_spec.scale;
      if (l.kind == LayerKind::Conv2d) {
        int ho = 0, wo = 0;
        const auto p = oracle::conv2d(q, x.c, x.h, x.w, l.weight_q, l.out_channels, l.kernel, l.stride, l.padding, ho, wo);
        y = {l.out_channels, ho, wo, {}};
        for (std::size_t i = 0; i < p.size(); ++i) y.v.push_back(p[i] * s + l.bias[i / (ho * wo)]);
      } else {
        const auto p = oracle::matmul(q, l.weight_q, static_cast<std::size_t>(l.in_features), 1,
                                      static_cast<std::size_t>(l.out_features));
        y = {l.out_features, 1, 1, {}};
        for (std::size_t i = 0; i < p.size(); ++i) y.v.push_back(p[i] * s + l.bias[i]);
      }
    } else if (l.kind == LayerKind::Relu || l.kind == LayerKind::Flatten) {
      y = x;
      if (l.kind == LayerKind::Relu)
        for (auto& v : y.v) v = std::max(v, 0.0);
      if (l.kind == LayerKind::Flatten) y = {static_cast<int>(x.v.size()), 1, 1, x.v};
    } else {
      const int k = l.kernel;
      y = {x.c, x.h / k, x.w / k, {}};
      for (int c = 0; c < y.c; ++c)
        for (int oy = 0; oy < y.h; ++oy)
          for (int ox = 0; ox < y.w; ++ox) {
            double mx = -std::numeric_limits<double>::infinity(), sum = 0;
            for (int dy = 0; dy < k; ++dy)
              for (int dx = 0; dx < k; ++dx) {
                const double v = x.v[(static_cast<std::size_t>(c) * x.h + oy * k + dy) * x.w + ox * k + dx];
                mx = std::max(mx, v);
                sum += v;
              }
            y.v.push_back(l.kind == LayerKind::MaxPool ? mx : sum / (k * k));
          }
    }
    x = std::move(y);
  }
  return x.v;
}

}  // namespace

TEST_CASE("quantizer") {
  const QuantSpec s4{4, 1.0, Signedness::Signed};
  CHECK(quantize_value(0.0, s4) == 0);
  CHECK(quantize_value(9.4, s4) == 7);
  CHECK(quantize_value(-9.4, s4) == -7);  // symmetric range
  CHECK(quantize_value(2.5, s4) == 3);
  CHECK(quantize_value(-2.5, s4) == -3);
  const QuantSpec u4{4, 0.5, Signedness::Unsigned};
  CHECK(quantize_value(-1.0, u4) == 0);
  CHECK(quantize_value(7.4, u4) == 15);
  CHECK(QuantSpec::fit(3.5, 4, Signedness::Signed).scale == doctest::Approx(0.5));
  CHECK(QuantSpec::fit(0.0, 4, Signedness::Signed).scale == 1.0);
  CHECK_THROWS_AS((QuantSpec{4, 0.0, Signedness::Signed}.validate()), ArgumentError);

  std::mt19937_64 g(5);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int bits : {2, 3, 4, 8}) {
    const auto s = QuantSpec::fit(3.0, bits, Signedness::Signed);
    for (int i = 0; i < 2000; ++i) {
      const double x = u(g);
      const auto q = quantize_value(x, s);
      REQUIRE(q == ref_quantize(x, s));
      CHECK(std::abs(dequantize(q, s) - x) <= s.scale / 2 + 1e-12);
    }
  }
}

TEST_CASE("1x1 convolution lowers to a plain matrix product") {
  std::mt19937_64 g(1);
  const auto l = conv_layer(3, 2, 1, 1, 0, g);
  const auto x = int_activation(3, 4, 5, g);
  const auto lo = lower_to_gemm(l, x, 4);
  CHECK(lo.a.rows() == 3);
  CHECK(lo.a.cols() == 20);
  CHECK(lo.b.rows() == 2);
  CHECK(lo.b.cols() == 3);
  for (std::size_t i = 0; i < x.v.size(); ++i) CHECK(lo.a.data()[i] == static_cast<std::int32_t>(x.v[i]));
  std::vector<std::int32_t> xq(x.v.begin(), x.v.end());
  CHECK(reference_matmul(lo.a, lo.b) == oracle::matmul(xq, l.weight_q, 3, 20, 2));
}

TEST_CASE("im2col lowering matches direct convolution") {
  std::mt19937_64 g(2);
  {
    const auto l = conv_layer(4, 3, 3, 1, 1, g);
    const auto lo = lower_to_gemm(l, int_activation(4, 6, 6, g), 4);
    CHECK(lo.a.rows() == 36);
    CHECK(lo.b.cols() == 36);
  }
  for (int t = 0; t < 30; ++t) {
    const int cin = 1 + g() % 4, cout = 1 + g() % 5, k = 1 + 2 * (g() % 3), stride = 1 + g() % 2;
    const int pad = g() % (k / 2 + 1), h = k + g() % 6, w = k + g() % 6;
    const auto l = conv_layer(cin, cout, k, stride, pad, g);
    const auto x = int_activation(cin, h, w, g);
    const auto lo = lower_to_gemm(l, x, 4);
    std::vector<std::int32_t> xq(x.v.begin(), x.v.end());
    int ho = 0, wo = 0;
    const auto ref = oracle::conv2d(xq, cin, h, w, l.weight_q, cout, k, stride, pad, ho, wo);
    CHECK(lo.out_h == ho);
    CHECK(lo.out_w == wo);
    CHECK(reference_matmul(lo.a, lo.b) == ref);
  }
  std::mt19937_64 g2(3);
  const auto l = conv_layer(2, 2, 3, 1, 1, g2);
  CHECK_THROWS_AS(lower_to_gemm(l, int_activation(2, 4, 4, g2), 8), ArgumentError);
  Layer relu;
  CHECK_THROWS_AS(lower_to_gemm(relu, int_activation(2, 4, 4, g2), 4), ArgumentError);
}

TEST_CASE("guarded engine inference equals the integer reference") {
  const auto& m = desk();
  const auto& d = test_set();
  const auto plan = GavPlan::guarded(m);
  const ErrorLut zero(32);
  for (std::size_t i = 0; i < 20; ++i) {
    const auto x = make_input(m, d.images[i]);
    const auto ref = reference_forward(m, x);
    InferenceOptions o;
    o.seed = i;
    const auto r = infer(m, plan, x, o);
    REQUIRE(r.logits.size() == ref.size());
    for (std::size_t j = 0; j < ref.size(); ++j) CHECK(r.logits[j] == doctest::Approx(ref[j]).epsilon(1e-12));
    // an all-zero error model reproduces exact arithmetic at every G
    o.lut = &zero;
    const auto z = infer(m, GavPlan::uniform(m, 0), x, o);
    for (std::size_t j = 0; j < ref.size(); ++j) CHECK(z.logits[j] == doctest::Approx(ref[j]).epsilon(1e-12));
  }
}

TEST_CASE("inference bookkeeping and seeding") {
  const auto& m = desk();
  const auto x = make_input(m, test_set().images[0]);
  const auto power = default_calibration();
  InferenceOptions o;
  o.power = &power;
  o.seed = 9;
  const auto guarded = infer(m, GavPlan::guarded(m), x, o);
  REQUIRE(guarded.layers.size() == m.gemm_layers().size());
  std::uint64_t cycles = 0;
  double energy = 0;
  for (const auto& s : guarded.layers) {
    CHECK(s.cycles == s.tiles * 16);
    CHECK(s.approx_cycles == 0);
    CHECK(s.energy_j == doctest::Approx(energy_joules(power, GavSchedule::fully_guarded(4, 4), s.cycles)));
    cycles += s.cycles;
    energy += s.energy_j;
  }
  CHECK(guarded.cycles == cycles);
  CHECK(guarded.energy_j == doctest::Approx(energy));
  CHECK(guarded.layers[0].macs == 8u * 64 * 25);

  CHECK_THROWS_AS(infer(m, GavPlan::uniform(m, 3), x, o), ConfigError);  // no error model
  o.lut = &shipped_lut();
  const auto a = infer(m, GavPlan::uniform(m, 0), x, o);
  const auto b = infer(m, GavPlan::uniform(m, 0), x, o);
  CHECK(a.logits == b.logits);
  CHECK(a.energy_j < guarded.energy_j);
  CHECK(a.cycles == guarded.cycles);
  bool differs = false;
  for (std::uint64_t s = 10; s < 20 && !differs; ++s) {
    o.seed = s;
    differs = infer(m, GavPlan::uniform(m, 0), x, o).logits != a.logits;
  }
  CHECK(differs);

  GavPlan short_plan = GavPlan::guarded(m);
  short_plan.schedules.pop_back();
  CHECK_THROWS_AS(infer(m, short_plan, x, o), ConfigError);
  GavPlan wrong = GavPlan::guarded(m);
  wrong.schedules[0] = GavSchedule::fully_guarded(8, 8);
  CHECK_THROWS_AS(infer(m, wrong, x, o), ConfigError);
}

TEST_CASE("partial execution resumes from a recorded GEMM input") {
  const auto& m = desk();
  const auto x = make_input(m, test_set().images[3]);
  InferenceOptions o;
  std::vector<Activation> rec;
  const auto full = infer_from(m, GavPlan::guarded(m), 0, x, o, &rec);
  const auto idx = m.gemm_layers();
  REQUIRE(rec.size() == idx.size());
  for (std::size_t gi = 0; gi < idx.size(); ++gi) {
    const auto part = infer_from(m, GavPlan::guarded(m), idx[gi], rec[gi], o);
    CHECK(part.logits == full.logits);
  }
}

TEST_CASE("network manifest and plan round trips") {
  const auto& m = desk();
  const auto dir = std::filesystem::temp_directory_path() / "gav_test_nn";
  std::filesystem::create_directories(dir);
  save_network(m, dir / "net.json");
  const auto back = load_network(dir / "net.json");
  CHECK(back.name == m.name);
  CHECK(back.a_bits == 4);
  CHECK(back.input_offset == m.input_offset);
  REQUIRE(back.layers.size() == m.layers.size());
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    CHECK(back.layers[i].name == m.layers[i].name);
    CHECK(back.layers[i].weight_q == m.layers[i].weight_q);
    CHECK(back.layers[i].bias == m.layers[i].bias);
    CHECK(back.layers[i].input_spec.scale == m.layers[i].input_spec.scale);
  }

  const auto plan = GavPlan::from_assignment(m, {7, 4, 2, 6});
  const auto p2 = plan_from_json(m, plan_to_json(m, plan));
  REQUIRE(p2.schedules.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(p2.schedules[i].protection == plan.schedules[i].protection);
  CHECK_THROWS_AS(GavPlan::from_assignment(m, {1, 2}), ConfigError);
  CHECK_THROWS_AS(plan_from_json(m, "{\"format\":\"gav-plan\",\"version\":1,\"a_bits\":4,\"b_bits\":4,"
                                    "\"layers\":[{\"id\":\"nope\",\"G\":1}]}"),
                  ConfigError);
}

TEST_CASE("dataset fixture") {
  const auto& d = test_set();
  CHECK(d.images.size() == d.labels.size());
  CHECK(d.image_dims == std::vector<std::uint32_t>{1, 8, 8});
  for (int lab : d.labels) CHECK((lab >= 0 && lab < 10));
  const auto x = make_input(desk(), d.images[0]);
  CHECK(x.c == 1);
  CHECK(x.h == 8);
  CHECK(x.v[5] == doctest::Approx((d.images[0][5] - desk().input_offset) * desk().input_scale));
}

TEST_CASE("per-layer profiling") {
  const auto& m = desk();
  std::vector<Activation> batch;
  for (std::size_t i = 0; i < 4; ++i) batch.push_back(make_input(m, test_set().images[i]));
  ProfileOptions po;
  po.g_candidates = {0, 4, 7};
  po.n_rep = 2;
  po.seed = 3;
  const auto prof = profile_layers(m, shipped_lut(), batch, po);
  REQUIRE(prof.size() == 4);
  for (const auto& p : prof) {
    CHECK(p.mse_raw.at(7) == 0.0);  // fully guarded
    CHECK(p.mse_raw.at(0) > 0.0);
    CHECK(p.mse_by_g.at(0) >= p.mse_by_g.at(4));
  }
  CHECK(prof[0].id == "conv1");
  CHECK(prof[0].ops == 8u * 64 * 25);
  const auto again = profile_layers(m, shipped_lut(), batch, po);
  CHECK(again[2].mse_raw == prof[2].mse_raw);

  const ErrorLut zero(32);
  for (const auto& p : profile_layers(m, zero, batch, po))
    for (const auto& [g, v] : p.mse_raw) CHECK(v == 0.0);
  CHECK_THROWS_AS(profile_layers(m, zero, {}, po), ArgumentError);
}
