#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gav/allocator.hpp"
#include "gav/core.hpp"
#include "gav/engine.hpp"
#include "gav/errmodel.hpp"
#include "gav/power.hpp"

namespace gav {

/// Uniform symmetric quantizer. Signed codes span +-(2^(bits-1)-1); unsigned codes
/// (post-ReLU activations) span [0, 2^bits-1].
struct QuantSpec {
  int bits = 8;
  double scale = 1.0;
  Signedness signedness = Signedness::Signed;

  std::int32_t qmin() const noexcept;
  std::int32_t qmax() const noexcept;
  void validate() const;
  /// Scale mapping `absmax` onto the largest code (1 when absmax is zero).
  static QuantSpec fit(double absmax, int bits, Signedness signedness);
};

/// round-half-away-from-zero(x / scale), clamped to the code range.
std::int32_t quantize_value(double x, const QuantSpec& spec);
std::vector<std::int32_t> quantize(std::span<const double> x, const QuantSpec& spec);
IntMatrix quantize(std::span<const double> x, std::size_t rows, std::size_t cols, const QuantSpec& spec);
inline double dequantize(std::int32_t q, const QuantSpec& spec) { return q * spec.scale; }

/// Feature map in channel-major [C, H, W] order (linear layers use H = W = 1).
struct Activation {
  int c = 0;
  int h = 1;
  int w = 1;
  std::vector<double> v;

  std::size_t size() const noexcept { return v.size(); }
};

enum class LayerKind { Conv2d, Linear, Relu, MaxPool, AvgPool, Flatten, ResidualAdd };

struct Layer {
  std::string name;
  LayerKind kind = LayerKind::Relu;
  // conv2d
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;  // also the pooling window (stride = window)
  int stride = 1;
  int padding = 0;
  // linear
  int in_features = 0;
  int out_features = 0;
  // residual-add: index of the earlier layer whose output is added
  int add_from = -1;

  std::vector<double> weight;  // float weights, PyTorch layout [out, in, kh, kw] / [out, in]
  std::vector<double> bias;
  // Set on quantized networks only.
  QuantSpec weight_spec;
  QuantSpec input_spec;
  std::vector<std::int32_t> weight_q;

  bool has_gemm() const noexcept { return kind == LayerKind::Conv2d || kind == LayerKind::Linear; }
  std::uint64_t macs(const Activation& input) const;
};

struct NetworkModel {
  std::string name;
  int in_c = 1;
  int in_h = 1;
  int in_w = 1;
  // float input = (raw pixel - input_offset) * input_scale
  double input_offset = 0.0;
  double input_scale = 1.0;
  int classes = 0;
  std::vector<Layer> layers;
  // Zero on float networks.
  int a_bits = 0;
  int b_bits = 0;

  bool quantized() const noexcept { return a_bits != 0; }
  /// Indices into `layers` of GEMM-bearing layers, in execution order.
  std::vector<std::size_t> gemm_layers() const;
  /// Checks shapes end to end and, when quantized, weight code ranges.
  void validate() const;
};

NetworkModel load_float_network(const std::filesystem::path& path);
/// Manifest JSON plus a GVT1 weight blob written beside it.
void save_network(const NetworkModel& model, const std::filesystem::path& manifest);
NetworkModel load_network(const std::filesystem::path& manifest);

Activation make_input(const NetworkModel& model, std::span<const std::int32_t> raw_pixels);

struct Dataset {
  std::vector<std::vector<std::int32_t>> images;  // raw pixels, one vector per image
  std::vector<int> labels;
  std::vector<std::uint32_t> image_dims;  // [C, H, W]
};
/// GVT1 tensor [N, C, H, W] plus a CSV of `index,label`.
Dataset load_dataset(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Float forward pass (the provenance reference for a trained model).
std::vector<double> forward_float(const NetworkModel& model, const Activation& input);

/// Weight specs from each layer's absmax; activation specs from the absmax of each GEMM
/// layer's float input over the calibration batch (unsigned when never negative).
NetworkModel quantize_network(const NetworkModel& float_model, int a_bits, int b_bits,
                              const std::vector<Activation>& calibration);

/// Operands of one GEMM layer: A = im2col(input) [Cin*k*k, Hout*Wout] (or [in, 1]),
/// B = weights [out, Cin*k*k]. Throws ArgumentError on shape mismatch.
struct LoweredGemm {
  IntMatrix a;
  IntMatrix b;
  int out_h = 1;
  int out_w = 1;
};
LoweredGemm lower_to_gemm(const Layer& layer, const Activation& input, int a_bits);

/// One schedule per GEMM layer.
struct GavPlan {
  std::vector<GavSchedule> schedules;

  static GavPlan uniform(const NetworkModel& model, int protection);
  static GavPlan guarded(const NetworkModel& model);
  static GavPlan from_assignment(const NetworkModel& model, const std::vector<int>& g);
};

std::string plan_to_json(const NetworkModel& model, const GavPlan& plan);
GavPlan plan_from_json(const NetworkModel& model, const std::string& text);

struct InferenceOptions {
  ArrayShape shape{32, 8, 16};
  const ErrorLut* lut = nullptr;
  const PowerModel* power = nullptr;  // energy stays 0 without one
  std::uint64_t seed = 0;
};

struct LayerStats {
  std::string name;
  std::uint64_t macs = 0;
  std::uint64_t cycles = 0;
  std::uint64_t approx_cycles = 0;
  std::uint64_t tiles = 0;
  double energy_j = 0.0;
};

struct InferenceResult {
  std::vector<double> logits;
  std::vector<LayerStats> layers;  // GEMM layers only
  std::uint64_t cycles = 0;
  double energy_j = 0.0;
};

/// Quantized forward pass with every GEMM on the engine under the plan's schedules.
/// Each GEMM layer draws from derive_seed(opts.seed, "layer", gemm index).
InferenceResult infer(const NetworkModel& model, const GavPlan& plan, const Activation& input,
                      const InferenceOptions& opts);

/// Runs layers [first, end) starting from `input`; with `record`, stores the input seen
/// by every GEMM layer (indexed by GEMM position).
InferenceResult infer_from(const NetworkModel& model, const GavPlan& plan, std::size_t first_layer,
                           const Activation& input, const InferenceOptions& opts,
                           std::vector<Activation>* record = nullptr);

struct EvalSummary {
  double accuracy = 0.0;
  double energy_j = 0.0;  // mean per inference
  std::uint64_t cycles = 0;  // per inference
  std::vector<int> predictions;
};

/// Image i uses seed derive_seed(seed, "image", i).
EvalSummary evaluate(const NetworkModel& model, const GavPlan& plan, const Dataset& data, std::size_t limit,
                     const InferenceOptions& opts);

struct ProfileOptions {
  std::vector<int> g_candidates;  // empty: all of [0, a_bits+b_bits-1]
  int n_rep = 5;
  std::uint64_t seed = 0;
  ArrayShape shape{32, 8, 16};
};

/// Per GEMM layer and candidate G: mean squared logit difference against exact inference
/// when only that layer runs undervolted, averaged over the batch and n_rep seeded repeats.
std::vector<LayerProfile> profile_layers(const NetworkModel& model, const ErrorLut& lut,
                                         const std::vector<Activation>& batch, const ProfileOptions& opts);

int argmax(std::span<const double> v);

}  // namespace gav
