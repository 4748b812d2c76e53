#include "gav/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <sstream>

#include "gav/error.hpp"
#include "gav/rng.hpp"
#include "gav/tensor_io.hpp"

namespace gav {

namespace {

using nlohmann::json;

struct Shape {
  int c, h, w;
};

int conv_out(int n, const Layer& l) { return (n + 2 * l.padding - l.kernel) / l.stride + 1; }

Shape out_shape(const Layer& l, const Shape& in) {
  switch (l.kind) {
    case LayerKind::Conv2d:
      if (in.c != l.in_channels) {
        throw ArgumentError("layer '" + l.name + "' expects " + std::to_string(l.in_channels) + " channels, got " +
                            std::to_string(in.c));
      }
      if (in.h + 2 * l.padding < l.kernel || in.w + 2 * l.padding < l.kernel) {
        throw ArgumentError("layer '" + l.name + "' kernel larger than its padded input");
      }
      return {l.out_channels, conv_out(in.h, l), conv_out(in.w, l)};
    case LayerKind::Linear:
      if (in.c * in.h * in.w != l.in_features) {
        throw ArgumentError("layer '" + l.name + "' expects " + std::to_string(l.in_features) + " features, got " +
                            std::to_string(in.c * in.h * in.w));
      }
      return {l.out_features, 1, 1};
    case LayerKind::MaxPool:
    case LayerKind::AvgPool:
      if (in.h < l.kernel || in.w < l.kernel) throw ArgumentError("layer '" + l.name + "' window exceeds its input");
      return {in.c, in.h / l.kernel, in.w / l.kernel};
    case LayerKind::Flatten:
      return {in.c * in.h * in.w, 1, 1};
    case LayerKind::Relu:
    case LayerKind::ResidualAdd:
      return in;
  }
  return in;
}

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::Linear: return "linear";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::AvgPool: return "avgpool";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::ResidualAdd: return "residual-add";
  }
  return "?";
}

LayerKind kind_from(const std::string& s) {
  for (auto k : {LayerKind::Conv2d, LayerKind::Linear, LayerKind::Relu, LayerKind::MaxPool, LayerKind::AvgPool,
                 LayerKind::Flatten, LayerKind::ResidualAdd}) {
    if (s == kind_name(k)) return k;
  }
  throw ConfigError("unknown layer kind '" + s + "'");
}

std::size_t weight_count(const Layer& l) {
  if (l.kind == LayerKind::Conv2d) return static_cast<std::size_t>(l.out_channels) * l.in_channels * l.kernel * l.kernel;
  if (l.kind == LayerKind::Linear) return static_cast<std::size_t>(l.out_features) * l.in_features;
  return 0;
}

std::size_t out_units(const Layer& l) { return l.kind == LayerKind::Conv2d ? l.out_channels : l.out_features; }

// Layer-local parsing shared by the float and quantized file formats.
Layer parse_layer(const json& j, const std::vector<Layer>& earlier) {
  Layer l;
  l.name = j.at("name").get<std::string>();
  l.kind = kind_from(j.at("kind").get<std::string>());
  switch (l.kind) {
    case LayerKind::Conv2d:
      l.in_channels = j.at("in_channels").get<int>();
      l.out_channels = j.at("out_channels").get<int>();
      l.kernel = j.at("kernel").get<int>();
      l.stride = j.value("stride", 1);
      l.padding = j.value("padding", 0);
      if (l.in_channels < 1 || l.out_channels < 1 || l.kernel < 1 || l.stride < 1 || l.padding < 0) {
        throw ConfigError("layer '" + l.name + "' has invalid convolution parameters");
      }
      break;
    case LayerKind::Linear:
      l.in_features = j.at("in_features").get<int>();
      l.out_features = j.at("out_features").get<int>();
      if (l.in_features < 1 || l.out_features < 1) throw ConfigError("layer '" + l.name + "' has invalid sizes");
      break;
    case LayerKind::MaxPool:
    case LayerKind::AvgPool:
      l.kernel = j.at("kernel").get<int>();
      if (l.kernel < 1) throw ConfigError("layer '" + l.name + "' has an invalid window");
      break;
    case LayerKind::ResidualAdd: {
      const auto from = j.at("from").get<std::string>();
      for (std::size_t i = 0; i < earlier.size(); ++i) {
        if (earlier[i].name == from) l.add_from = static_cast<int>(i);
      }
      if (l.add_from < 0) throw ConfigError("residual source '" + from + "' not found before '" + l.name + "'");
      break;
    }
    default:
      break;
  }
  if (l.has_gemm()) {
    l.bias = j.at("bias").get<std::vector<double>>();
    if (l.bias.size() != out_units(l)) throw ConfigError("layer '" + l.name + "' bias length mismatch");
  }
  return l;
}

json layer_header(const Layer& l, const std::vector<Layer>& layers) {
  json j{{"name", l.name}, {"kind", kind_name(l.kind)}};
  switch (l.kind) {
    case LayerKind::Conv2d:
      j["in_channels"] = l.in_channels;
      j["out_channels"] = l.out_channels;
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      j["padding"] = l.padding;
      break;
    case LayerKind::Linear:
      j["in_features"] = l.in_features;
      j["out_features"] = l.out_features;
      break;
    case LayerKind::MaxPool:
    case LayerKind::AvgPool:
      j["kernel"] = l.kernel;
      break;
    case LayerKind::ResidualAdd:
      j["from"] = layers.at(l.add_from).name;
      break;
    default:
      break;
  }
  if (l.has_gemm()) j["bias"] = l.bias;
  return j;
}

json spec_json(const QuantSpec& s) {
  return {{"bits", s.bits}, {"scale", s.scale}, {"signed", s.signedness == Signedness::Signed}};
}

QuantSpec spec_from(const json& j) {
  QuantSpec s{j.at("bits").get<int>(), j.at("scale").get<double>(),
              j.at("signed").get<bool>() ? Signedness::Signed : Signedness::Unsigned};
  s.validate();
  return s;
}

std::string read_text(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

Activation apply_simple(const Layer& l, const Activation& x, const std::vector<Activation>& outputs) {
  const Shape s = out_shape(l, {x.c, x.h, x.w});
  Activation y{s.c, s.h, s.w, {}};
  switch (l.kind) {
    case LayerKind::Relu:
      y.v = x.v;
      for (auto& v : y.v) v = std::max(v, 0.0);
      break;
    case LayerKind::Flatten:
      y.v = x.v;
      break;
    case LayerKind::MaxPool:
    case LayerKind::AvgPool: {
      y.v.assign(static_cast<std::size_t>(s.c) * s.h * s.w, 0.0);
      const int k = l.kernel;
      for (int c = 0; c < s.c; ++c)
        for (int oy = 0; oy < s.h; ++oy)
          for (int ox = 0; ox < s.w; ++ox) {
            double acc = l.kind == LayerKind::MaxPool ? -std::numeric_limits<double>::infinity() : 0.0;
            for (int dy = 0; dy < k; ++dy)
              for (int dx = 0; dx < k; ++dx) {
                const double v = x.v[(static_cast<std::size_t>(c) * x.h + oy * k + dy) * x.w + ox * k + dx];
                acc = l.kind == LayerKind::MaxPool ? std::max(acc, v) : acc + v;
              }
            y.v[(static_cast<std::size_t>(c) * s.h + oy) * s.w + ox] = l.kind == LayerKind::MaxPool ? acc : acc / (k * k);
          }
      break;
    }
    case LayerKind::ResidualAdd: {
      const auto& other = outputs.at(l.add_from);
      if (other.v.size() != x.v.size()) throw ArgumentError("residual operands of '" + l.name + "' differ in size");
      y.v = x.v;
      for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] += other.v[i];
      break;
    }
    default:
      throw std::logic_error("GEMM layer routed to the elementwise path");
  }
  return y;
}

Activation float_gemm_layer(const Layer& l, const Activation& x) {
  const Shape s = out_shape(l, {x.c, x.h, x.w});
  Activation y{s.c, s.h, s.w, std::vector<double>(static_cast<std::size_t>(s.c) * s.h * s.w)};
  if (l.kind == LayerKind::Linear) {
    for (int o = 0; o < l.out_features; ++o) {
      double acc = l.bias[o];
      for (int i = 0; i < l.in_features; ++i) acc += l.weight[static_cast<std::size_t>(o) * l.in_features + i] * x.v[i];
      y.v[o] = acc;
    }
    return y;
  }
  const int k = l.kernel;
  for (int o = 0; o < s.c; ++o)
    for (int oy = 0; oy < s.h; ++oy)
      for (int ox = 0; ox < s.w; ++ox) {
        double acc = l.bias[o];
        for (int ci = 0; ci < l.in_channels; ++ci)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = oy * l.stride + ky - l.padding;
              const int ix = ox * l.stride + kx - l.padding;
              if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
              acc += l.weight[((static_cast<std::size_t>(o) * l.in_channels + ci) * k + ky) * k + kx] *
                     x.v[(static_cast<std::size_t>(ci) * x.h + iy) * x.w + ix];
            }
        y.v[(static_cast<std::size_t>(o) * s.h + oy) * s.w + ox] = acc;
      }
  return y;
}

}  // namespace

std::int32_t QuantSpec::qmin() const noexcept {
  return signedness == Signedness::Signed ? -((std::int32_t{1} << (bits - 1)) - 1) : 0;
}

std::int32_t QuantSpec::qmax() const noexcept {
  return signedness == Signedness::Signed ? (std::int32_t{1} << (bits - 1)) - 1 : (std::int32_t{1} << bits) - 1;
}

void QuantSpec::validate() const {
  if (bits < 2 || bits > 8) throw ArgumentError("quantizer precision must be 2..8 bits");
  if (!(scale > 0) || !std::isfinite(scale)) throw ArgumentError("quantizer scale must be positive");
}

QuantSpec QuantSpec::fit(double absmax, int bits, Signedness signedness) {
  QuantSpec s{bits, 1.0, signedness};
  if (absmax > 0) s.scale = absmax / s.qmax();
  s.validate();
  return s;
}

std::int32_t quantize_value(double x, const QuantSpec& spec) {
  const double r = std::round(x / spec.scale);
  return static_cast<std::int32_t>(std::clamp(r, static_cast<double>(spec.qmin()), static_cast<double>(spec.qmax())));
}

std::vector<std::int32_t> quantize(std::span<const double> x, const QuantSpec& spec) {
  spec.validate();
  std::vector<std::int32_t> q(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) q[i] = quantize_value(x[i], spec);
  return q;
}

IntMatrix quantize(std::span<const double> x, std::size_t rows, std::size_t cols, const QuantSpec& spec) {
  if (rows * cols != x.size()) throw ArgumentError("quantize: shape does not match the value count");
  return IntMatrix(rows, cols, spec.bits, spec.signedness, quantize(x, spec));
}

std::uint64_t Layer::macs(const Activation& input) const {
  if (kind == LayerKind::Linear) return static_cast<std::uint64_t>(in_features) * out_features;
  if (kind != LayerKind::Conv2d) return 0;
  const Shape s = out_shape(*this, {input.c, input.h, input.w});
  return static_cast<std::uint64_t>(s.c) * s.h * s.w * in_channels * kernel * kernel;
}

std::vector<std::size_t> NetworkModel::gemm_layers() const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].has_gemm()) idx.push_back(i);
  }
  return idx;
}

void NetworkModel::validate() const {
  if (in_c < 1 || in_h < 1 || in_w < 1) throw ConfigError("network input shape must be positive");
  if (layers.empty()) throw ConfigError("network has no layers");
  Shape s{in_c, in_h, in_w};
  std::vector<Shape> shapes;
  for (const auto& l : layers) {
    if (l.has_gemm()) {
      if (l.weight.size() != weight_count(l)) throw ConfigError("layer '" + l.name + "' weight count mismatch");
      if (quantized()) {
        if (l.weight_q.size() != weight_count(l)) throw ConfigError("layer '" + l.name + "' quantized weights missing");
        l.weight_spec.validate();
        l.input_spec.validate();
        if (l.weight_spec.bits != b_bits || l.input_spec.bits != a_bits) {
          throw ConfigError("layer '" + l.name + "' precision differs from the network's a" + std::to_string(a_bits) +
                            "w" + std::to_string(b_bits));
        }
        if (l.weight_spec.signedness != Signedness::Signed) throw ConfigError("weights must be signed");
        for (auto q : l.weight_q) {
          if (q < l.weight_spec.qmin() || q > l.weight_spec.qmax()) {
            throw ConfigError("layer '" + l.name + "' weight code outside its quantizer range");
          }
        }
      }
    }
    if (l.kind == LayerKind::ResidualAdd) {
      const auto& o = shapes.at(l.add_from);
      if (o.c != s.c || o.h != s.h || o.w != s.w) throw ConfigError("residual '" + l.name + "' shape mismatch");
    }
    try {
      s = out_shape(l, s);
    } catch (const ArgumentError& e) {
      throw ConfigError(e.what());
    }
    shapes.push_back(s);
  }
  if (s.c * s.h * s.w != classes) throw ConfigError("network output size does not equal its class count");
}

NetworkModel load_float_network(const std::filesystem::path& path) {
  try {
    const auto j = json::parse(read_text(path));
    if (j.at("format") != "gav-float-network" || j.at("version") != 1) {
      throw ConfigError(path.string() + " is not a version-1 float network");
    }
    NetworkModel m;
    m.name = j.value("name", std::string{});
    const auto shape = j.at("input_shape").get<std::vector<int>>();
    if (shape.size() != 3) throw ConfigError("input_shape must be [C, H, W]");
    m.in_c = shape[0];
    m.in_h = shape[1];
    m.in_w = shape[2];
    m.input_offset = j.value("input_offset", 0.0);
    m.input_scale = j.at("input_scale").get<double>();
    m.classes = j.at("classes").get<int>();
    for (const auto& lj : j.at("layers")) {
      Layer l = parse_layer(lj, m.layers);
      if (l.has_gemm()) l.weight = lj.at("weight").get<std::vector<double>>();
      m.layers.push_back(std::move(l));
    }
    m.validate();
    return m;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void save_network(const NetworkModel& model, const std::filesystem::path& manifest) {
  if (!model.quantized()) throw ArgumentError("only quantized networks have a manifest form");
  model.validate();
  const auto blob_name = manifest.stem().string() + ".weights.gvt";
  json j;
  j["format"] = "gav-network";
  j["version"] = 1;
  j["name"] = model.name;
  j["input_shape"] = {model.in_c, model.in_h, model.in_w};
  j["input_offset"] = model.input_offset;
  j["input_scale"] = model.input_scale;
  j["classes"] = model.classes;
  j["a_bits"] = model.a_bits;
  j["b_bits"] = model.b_bits;
  j["blob"] = blob_name;
  Tensor blob;
  blob.bits = model.b_bits;
  blob.signedness = Signedness::Signed;
  auto& layers = j["layers"] = json::array();
  for (const auto& l : model.layers) {
    json lj = layer_header(l, model.layers);
    if (l.has_gemm()) {
      lj["weight_spec"] = spec_json(l.weight_spec);
      lj["input_spec"] = spec_json(l.input_spec);
      lj["weight_offset"] = blob.data.size();
      lj["weight_count"] = l.weight_q.size();
      lj["weight_float"] = l.weight;
      blob.data.insert(blob.data.end(), l.weight_q.begin(), l.weight_q.end());
    }
    layers.push_back(std::move(lj));
  }
  blob.dims = {static_cast<std::uint32_t>(blob.data.size())};
  write_tensor(manifest.parent_path() / blob_name, blob);
  const auto text = j.dump(1) + "\n";
  write_file_bytes(manifest, std::vector<std::uint8_t>(text.begin(), text.end()));
}

NetworkModel load_network(const std::filesystem::path& manifest) {
  try {
    const auto j = json::parse(read_text(manifest));
    if (j.at("format") != "gav-network" || j.at("version") != 1) {
      throw ConfigError(manifest.string() + " is not a version-1 network manifest");
    }
    NetworkModel m;
    m.name = j.value("name", std::string{});
    const auto shape = j.at("input_shape").get<std::vector<int>>();
    if (shape.size() != 3) throw ConfigError("input_shape must be [C, H, W]");
    m.in_c = shape[0];
    m.in_h = shape[1];
    m.in_w = shape[2];
    m.input_offset = j.value("input_offset", 0.0);
    m.input_scale = j.at("input_scale").get<double>();
    m.classes = j.at("classes").get<int>();
    m.a_bits = j.at("a_bits").get<int>();
    m.b_bits = j.at("b_bits").get<int>();
    const Tensor blob = read_tensor(manifest.parent_path() / j.at("blob").get<std::string>());
    if (blob.dims.size() != 1) throw ConfigError("weight blob must be one-dimensional");
    for (const auto& lj : j.at("layers")) {
      Layer l = parse_layer(lj, m.layers);
      if (l.has_gemm()) {
        l.weight_spec = spec_from(lj.at("weight_spec"));
        l.input_spec = spec_from(lj.at("input_spec"));
        const auto off = lj.at("weight_offset").get<std::size_t>();
        const auto count = lj.at("weight_count").get<std::size_t>();
        if (off + count > blob.data.size()) throw ConfigError("layer '" + l.name + "' weights run past the blob");
        l.weight_q.assign(blob.data.begin() + static_cast<std::ptrdiff_t>(off),
                          blob.data.begin() + static_cast<std::ptrdiff_t>(off + count));
        if (lj.contains("weight_float")) {
          l.weight = lj["weight_float"].get<std::vector<double>>();
        } else {
          l.weight.resize(l.weight_q.size());
          for (std::size_t i = 0; i < l.weight.size(); ++i) l.weight[i] = dequantize(l.weight_q[i], l.weight_spec);
        }
      }
      m.layers.push_back(std::move(l));
    }
    m.validate();
    return m;
  } catch (const json::exception& e) {
    throw ConfigError(manifest.string() + ": " + e.what());
  }
}

Activation make_input(const NetworkModel& model, std::span<const std::int32_t> raw_pixels) {
  const std::size_t n = static_cast<std::size_t>(model.in_c) * model.in_h * model.in_w;
  if (raw_pixels.size() != n) throw ArgumentError("input image size does not match the network");
  Activation a{model.in_c, model.in_h, model.in_w, std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) a.v[i] = (raw_pixels[i] - model.input_offset) * model.input_scale;
  return a;
}

Dataset load_dataset(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const Tensor t = read_tensor(images);
  if (t.dims.size() != 4) throw ConfigError("dataset tensor must be [N, C, H, W]");
  Dataset d;
  d.image_dims = {t.dims[1], t.dims[2], t.dims[3]};
  const std::size_t per = static_cast<std::size_t>(t.dims[1]) * t.dims[2] * t.dims[3];
  for (std::size_t i = 0; i < t.dims[0]; ++i) {
    d.images.emplace_back(t.data.begin() + static_cast<std::ptrdiff_t>(i * per),
                          t.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
  }
  std::istringstream in(read_text(labels));
  std::string line;
  std::getline(in, line);
  if (line != "index,label") throw ConfigError(labels.string() + ": expected an 'index,label' header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ConfigError(labels.string() + ": malformed line '" + line + "'");
    const auto idx = std::stoul(line.substr(0, comma));
    if (idx != d.labels.size()) throw ConfigError(labels.string() + ": labels out of order");
    d.labels.push_back(std::stoi(line.substr(comma + 1)));
  }
  if (d.labels.size() != d.images.size()) throw ConfigError("label count does not match the image count");
  return d;
}

std::vector<double> forward_float(const NetworkModel& model, const Activation& input) {
  std::vector<Activation> outputs;
  Activation x = input;
  for (const auto& l : model.layers) {
    x = l.has_gemm() ? float_gemm_layer(l, x) : apply_simple(l, x, outputs);
    outputs.push_back(x);
  }
  return x.v;
}

NetworkModel quantize_network(const NetworkModel& float_model, int a_bits, int b_bits,
                              const std::vector<Activation>& calibration) {
  if (calibration.empty()) throw ArgumentError("activation calibration needs at least one input");
  float_model.validate();
  NetworkModel m = float_model;
  m.a_bits = a_bits;
  m.b_bits = b_bits;
  std::vector<double> absmax(m.layers.size(), 0.0);
  std::vector<bool> negative(m.layers.size(), false);
  for (const auto& input : calibration) {
    std::vector<Activation> outputs;
    Activation x = input;
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
      const auto& l = m.layers[i];
      if (l.has_gemm()) {
        for (double v : x.v) {
          absmax[i] = std::max(absmax[i], std::abs(v));
          if (v < 0) negative[i] = true;
        }
      }
      x = l.has_gemm() ? float_gemm_layer(l, x) : apply_simple(l, x, outputs);
      outputs.push_back(x);
    }
  }
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    auto& l = m.layers[i];
    if (!l.has_gemm()) continue;
    double wmax = 0.0;
    for (double w : l.weight) wmax = std::max(wmax, std::abs(w));
    l.weight_spec = QuantSpec::fit(wmax, b_bits, Signedness::Signed);
    l.weight_q = quantize(l.weight, l.weight_spec);
    l.input_spec = QuantSpec::fit(absmax[i], a_bits, negative[i] ? Signedness::Signed : Signedness::Unsigned);
  }
  m.validate();
  return m;
}

LoweredGemm lower_to_gemm(const Layer& layer, const Activation& input, int a_bits) {
  if (!layer.has_gemm()) throw ArgumentError("layer '" + layer.name + "' has no GEMM");
  if (layer.input_spec.bits != a_bits) throw ArgumentError("activation precision differs from the layer's input spec");
  const Shape s = out_shape(layer, {input.c, input.h, input.w});
  const auto q = quantize(input.v, layer.input_spec);
  const auto& spec = layer.input_spec;
  LoweredGemm g{IntMatrix(), IntMatrix(), s.h, s.w};
  if (layer.kind == LayerKind::Linear) {
    g.a = IntMatrix(static_cast<std::size_t>(layer.in_features), 1, spec.bits, spec.signedness, q);
    g.b = IntMatrix(layer.out_features, layer.in_features, layer.weight_spec.bits, Signedness::Signed, layer.weight_q);
    return g;
  }
  const int k = layer.kernel;
  const std::size_t rows = static_cast<std::size_t>(layer.in_channels) * k * k;
  const std::size_t cols = static_cast<std::size_t>(s.h) * s.w;
  std::vector<std::int32_t> a(rows * cols, 0);
  for (int ci = 0; ci < layer.in_channels; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const std::size_t r = (static_cast<std::size_t>(ci) * k + ky) * k + kx;
        for (int oy = 0; oy < s.h; ++oy)
          for (int ox = 0; ox < s.w; ++ox) {
            const int iy = oy * layer.stride + ky - layer.padding;
            const int ix = ox * layer.stride + kx - layer.padding;
            if (iy < 0 || iy >= input.h || ix < 0 || ix >= input.w) continue;
            a[r * cols + static_cast<std::size_t>(oy) * s.w + ox] =
                q[(static_cast<std::size_t>(ci) * input.h + iy) * input.w + ix];
          }
      }
  g.a = IntMatrix(rows, cols, spec.bits, spec.signedness, std::move(a));
  g.b = IntMatrix(layer.out_channels, rows, layer.weight_spec.bits, Signedness::Signed, layer.weight_q);
  return g;
}

GavPlan GavPlan::uniform(const NetworkModel& model, int protection) {
  if (!model.quantized()) throw ConfigError("plans apply to quantized networks");
  GavPlan p;
  p.schedules.assign(model.gemm_layers().size(), GavSchedule::make(model.a_bits, model.b_bits, protection));
  return p;
}

GavPlan GavPlan::guarded(const NetworkModel& model) { return uniform(model, model.a_bits + model.b_bits - 1); }

GavPlan GavPlan::from_assignment(const NetworkModel& model, const std::vector<int>& g) {
  if (g.size() != model.gemm_layers().size()) throw ConfigError("assignment length does not match the GEMM layers");
  GavPlan p;
  for (int v : g) p.schedules.push_back(GavSchedule::make(model.a_bits, model.b_bits, v));
  return p;
}

std::string plan_to_json(const NetworkModel& model, const GavPlan& plan) {
  const auto idx = model.gemm_layers();
  if (plan.schedules.size() != idx.size()) throw ConfigError("plan length does not match the GEMM layers");
  json j;
  j["format"] = "gav-plan";
  j["version"] = 1;
  j["a_bits"] = model.a_bits;
  j["b_bits"] = model.b_bits;
  auto& layers = j["layers"] = json::array();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    layers.push_back({{"id", model.layers[idx[i]].name}, {"G", plan.schedules[i].protection}});
  }
  return j.dump(1);
}

GavPlan plan_from_json(const NetworkModel& model, const std::string& text) {
  try {
    const auto j = json::parse(text);
    if (j.at("format") != "gav-plan" || j.at("version") != 1) throw ConfigError("not a version-1 gav-plan file");
    if (j.at("a_bits").get<int>() != model.a_bits || j.at("b_bits").get<int>() != model.b_bits) {
      throw ConfigError("plan precision does not match the network");
    }
    const auto idx = model.gemm_layers();
    const auto& layers = j.at("layers");
    if (layers.size() != idx.size()) throw ConfigError("plan length does not match the GEMM layers");
    std::vector<int> g;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (layers[i].at("id").get<std::string>() != model.layers[idx[i]].name) {
        throw ConfigError("plan layer " + std::to_string(i) + " is not '" + model.layers[idx[i]].name + "'");
      }
      g.push_back(layers[i].at("G").get<int>());
    }
    return GavPlan::from_assignment(model, g);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed plan: ") + e.what());
  }
}

InferenceResult infer_from(const NetworkModel& model, const GavPlan& plan, std::size_t first_layer,
                           const Activation& input, const InferenceOptions& opts, std::vector<Activation>* record) {
  if (!model.quantized()) throw ConfigError("engine inference needs a quantized network");
  const auto gemm_idx = model.gemm_layers();
  if (plan.schedules.size() != gemm_idx.size()) throw ConfigError("plan length does not match the GEMM layers");
  if (first_layer > model.layers.size()) throw ArgumentError("start layer beyond the network");
  for (const auto& s : plan.schedules) {
    if (s.a_bits != model.a_bits || s.b_bits != model.b_bits) throw ConfigError("plan precision does not match the network");
    if (s.approx_passes() > 0 && opts.lut == nullptr) {
      throw ConfigError("plan has undervolted passes but no error model was supplied");
    }
  }
  const bool residual = std::any_of(model.layers.begin(), model.layers.end(),
                                    [](const Layer& l) { return l.kind == LayerKind::ResidualAdd; });
  if (residual && first_layer != 0) throw ArgumentError("partial execution is unsupported for residual networks");

  InferenceResult res;
  std::vector<Activation> outputs;
  if (record) record->assign(gemm_idx.size(), Activation{});
  std::size_t gi = static_cast<std::size_t>(std::lower_bound(gemm_idx.begin(), gemm_idx.end(), first_layer) - gemm_idx.begin());
  Activation x = input;
  for (std::size_t li = first_layer; li < model.layers.size(); ++li) {
    const auto& l = model.layers[li];
    if (!l.has_gemm()) {
      x = apply_simple(l, x, outputs);
    } else {
      if (record) (*record)[gi] = x;
      const auto lowered = lower_to_gemm(l, x, model.a_bits);
      const auto& sched = plan.schedules[gi];
      GemmJob job{lowered.a, lowered.b, opts.shape, sched, opts.lut, derive_seed(opts.seed, "layer", gi)};
      const GemmResult r = sched.approx_passes() > 0 ? gemm_gav(job) : gemm_exact(job);
      const double scale = l.input_spec.scale * l.weight_spec.scale;
      Activation y{static_cast<int>(out_units(l)), lowered.out_h, lowered.out_w, {}};
      y.v.resize(r.p.rows() * r.p.cols());
      for (std::size_t o = 0; o < r.p.rows(); ++o)
        for (std::size_t p = 0; p < r.p.cols(); ++p) y.v[o * r.p.cols() + p] = r.p(o, p) * scale + l.bias[o];
      LayerStats st{l.name, l.macs(x), r.cycles, r.approx_cycles, r.tile_count, 0.0};
      if (opts.power) st.energy_j = energy_joules(*opts.power, sched, r.cycles);
      res.cycles += st.cycles;
      res.energy_j += st.energy_j;
      res.layers.push_back(std::move(st));
      x = std::move(y);
      ++gi;
    }
    if (residual) outputs.push_back(x);
  }
  res.logits = std::move(x.v);
  return res;
}

InferenceResult infer(const NetworkModel& model, const GavPlan& plan, const Activation& input,
                      const InferenceOptions& opts) {
  return infer_from(model, plan, 0, input, opts);
}

int argmax(std::span<const double> v) {
  if (v.empty()) throw ArgumentError("argmax of an empty vector");
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

EvalSummary evaluate(const NetworkModel& model, const GavPlan& plan, const Dataset& data, std::size_t limit,
                     const InferenceOptions& opts) {
  const std::size_t n = limit == 0 ? data.images.size() : std::min(limit, data.images.size());
  if (n == 0) throw ArgumentError("evaluation set is empty");
  EvalSummary s;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    InferenceOptions o = opts;
    o.seed = derive_seed(opts.seed, "image", i);
    const auto r = infer(model, plan, make_input(model, data.images[i]), o);
    const int pred = argmax(r.logits);
    s.predictions.push_back(pred);
    correct += pred == data.labels[i];
    s.energy_j += r.energy_j;
    s.cycles = r.cycles;
  }
  s.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  s.energy_j /= static_cast<double>(n);
  return s;
}

std::vector<LayerProfile> profile_layers(const NetworkModel& model, const ErrorLut& lut,
                                         const std::vector<Activation>& batch, const ProfileOptions& opts) {
  if (batch.empty()) throw ArgumentError("profiling needs a non-empty batch");
  if (opts.n_rep < 1) throw ArgumentError("profiling needs at least one repetition");
  const int gmax = model.a_bits + model.b_bits - 1;
  std::vector<int> cands = opts.g_candidates;
  if (cands.empty()) {
    for (int g = 0; g <= gmax; ++g) cands.push_back(g);
  }
  for (int g : cands) {
    if (g < 0 || g > gmax) throw ArgumentError("G candidate " + std::to_string(g) + " out of range");
  }
  const auto gemm_idx = model.gemm_layers();
  const GavPlan guarded = GavPlan::guarded(model);
  InferenceOptions exact_opts;
  exact_opts.shape = opts.shape;

  std::vector<std::vector<double>> exact_logits;
  std::vector<std::vector<Activation>> inputs;
  for (const auto& x : batch) {
    std::vector<Activation> rec;
    exact_logits.push_back(infer_from(model, guarded, 0, x, exact_opts, &rec).logits);
    inputs.push_back(std::move(rec));
  }

  std::vector<LayerProfile> profiles;
  for (std::size_t gi = 0; gi < gemm_idx.size(); ++gi) {
    LayerProfile p;
    p.id = model.layers[gemm_idx[gi]].name;
    p.ops = model.layers[gemm_idx[gi]].macs(inputs.front()[gi]);
    for (int g : cands) {
      GavPlan plan = guarded;
      plan.schedules[gi] = GavSchedule::make(model.a_bits, model.b_bits, g);
      double sum = 0.0;
      if (plan.schedules[gi].approx_passes() > 0) {
        InferenceOptions o;
        o.shape = opts.shape;
        o.lut = &lut;
        for (int r = 0; r < opts.n_rep; ++r) {
          for (std::size_t b = 0; b < batch.size(); ++b) {
            o.seed = derive_seed(derive_seed(opts.seed, "profile", gi * 256 + static_cast<std::size_t>(g)), "item",
                                 static_cast<std::uint64_t>(r) * batch.size() + b);
            const auto out = infer_from(model, plan, gemm_idx[gi], inputs[b][gi], o).logits;
            double se = 0.0;
            for (std::size_t i = 0; i < out.size(); ++i) se += (out[i] - exact_logits[b][i]) * (out[i] - exact_logits[b][i]);
            sum += se / static_cast<double>(out.size());
          }
        }
        sum /= static_cast<double>(opts.n_rep) * static_cast<double>(batch.size());
      }
      p.mse_raw[g] = sum;
    }
    p.clean();
    profiles.push_back(std::move(p));
  }
  return profiles;
}

}  // namespace gav
