#include "gav/cli.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdio>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "gav/allocator.hpp"
#include "gav/engine.hpp"
#include "gav/errmodel.hpp"
#include "gav/error.hpp"
#include "gav/metrics.hpp"
#include "gav/nn.hpp"
#include "gav/oracle.hpp"
#include "gav/power.hpp"
#include "gav/rng.hpp"
#include "gav/tensor_io.hpp"
#include "gav/trace.hpp"

#ifndef GAV_DATA_DIR
#define GAV_DATA_DIR "data"
#endif

namespace gav {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kDataDir = GAV_DATA_DIR;

std::string num(double v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string read_text(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

fs::path sidecar(const fs::path& out, const std::string& suffix) { return fs::path(out.string() + suffix); }

/// Resolved option values of one subcommand, as written beside its outputs.
json resolved_config(const CLI::App& sc) {
  json j;
  j["command"] = sc.get_name();
  for (const CLI::Option* opt : sc.get_options()) {
    if (opt->get_lnames().empty()) continue;
    const auto& name = opt->get_lnames().front();
    if (name == "help" || name == "config") continue;
    if (opt->count() > 0) {
      const auto& res = opt->results();
      if (opt->get_expected_max() > 1) {
        j[name] = res;
      } else {
        j[name] = res.empty() ? std::string("true") : res.front();
      }
    } else {
      j[name] = opt->get_default_str();
    }
  }
  return j;
}

struct RunInfo {
  json config;
  std::string hash;
};

RunInfo snapshot(const CLI::App& sc, const fs::path& out) {
  RunInfo info;
  info.config = resolved_config(sc);
  json hashed = info.config;
  hashed.erase("out");
  hashed.erase("threads");  // results do not depend on the worker count
  info.hash = hex64(fnv1a64(hashed.dump()));
  json snap = info.config;
  snap["config_hash"] = info.hash;
  write_text(sidecar(out, ".config.json"), snap.dump(1) + "\n");
  return info;
}

std::string csv_header(const std::string& kind, const RunInfo& info) {
  return "# gav-" + kind + " v1 config_hash=" + info.hash + "\n";
}

ArrayShape make_shape(std::size_t c, std::size_t l, std::size_t k) {
  ArrayShape s{c, l, k};
  try {
    s.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return s;
}

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

std::vector<ErrorTrace> load_traces(const std::vector<std::string>& paths) {
  std::vector<ErrorTrace> traces;
  for (const auto& p : paths) traces.push_back(read_trace(p));
  return traces;
}

struct OracleSetup {
  IpeNetlist net;
  TimingConfig timing;
};

OracleSetup oracle_from_sidecar(const fs::path& trace_path) {
  const auto meta_path = sidecar(trace_path, ".json");
  if (!fs::exists(meta_path)) throw ConfigError("trace metadata " + meta_path.string() + " not found");
  try {
    const auto j = json::parse(read_text(meta_path));
    if (j.at("format") != "gav-trace-meta" || j.at("version") != 1) throw ConfigError("not a gav-trace-meta file");
    const auto& t = j.at("timing");
    TimingConfig cfg;
    cfg.clock_period = t.at("clock_period").get<double>();
    cfg.delay_scale = t.at("delay_scale").get<double>();
    cfg.jitter_sigma = t.at("jitter_sigma").get<double>();
    cfg.seed = t.at("seed").get<std::uint64_t>();
    return {build_ipe(j.at("C").get<unsigned>(), j.at("netlist_seed").get<std::uint64_t>()), cfg};
  } catch (const json::exception& e) {
    throw ConfigError(meta_path.string() + ": " + e.what());
  }
}

std::vector<int> all_g(int a_bits, int b_bits) {
  std::vector<int> g;
  for (int i = 0; i < a_bits + b_bits; ++i) g.push_back(i);
  return g;
}

void check_dims(const std::vector<std::size_t>& dims) {
  if (dims.size() != 3 || dims[0] == 0 || dims[1] == 0 || dims[2] == 0) {
    throw ConfigError("--dims expects three positive sizes: C_total L_total K_total");
  }
}

// CSV rows of `report`: comment lines skipped, first remaining line is the header.
std::vector<std::map<std::string, std::string>> read_csv_rows(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  std::vector<std::string> header;
  std::vector<std::map<std::string, std::string>> rows;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
  };
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split(line);
    if (header.empty()) {
      header = cells;
      continue;
    }
    if (cells.size() != header.size()) throw ConfigError(path.string() + ": row width differs from header");
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < cells.size(); ++i) row[header[i]] = cells[i];
    rows.push_back(std::move(row));
  }
  return rows;
}

double to_double(const std::string& s, const std::string& what) {
  double v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError("cannot parse " + what + " '" + s + "'");
  return v;
}

void emit_error(const std::string& command, std::string_view kind, const std::string& message) {
  json e{{"error", {{"kind", kind}, {"message", message}, {"command", command}}}};
  std::cerr << e.dump() << std::endl;
}

}  // namespace

std::pair<int, int> parse_precision(const std::string& text) {
  int a = 0, b = 0;
  char tail = 0;
  if (std::sscanf(text.c_str(), "a%dw%d%c", &a, &b, &tail) != 2 || a < 2 || a > 8 || b < 2 || b > 8) {
    throw ConfigError("precision must look like a4w4 with 2..8 bits, got '" + text + "'");
  }
  return {a, b};
}

std::vector<std::string> merge_config_args(const std::vector<std::string>& args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config file " + path + " must hold a JSON object");
  auto present = [&](const std::string& flag) {
    return std::any_of(args.begin(), args.end(),
                       [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
  };
  auto scalar = [](const json& v) -> std::string {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
    if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
    if (v.is_number()) return num(v.get<double>());
    throw ConfigError("config values must be strings, numbers, booleans or arrays of those");
  };
  std::vector<std::string> out = args;
  for (const auto& [key, value] : j.items()) {
    const std::string flag = "--" + key;
    if (key == "config" || present(flag)) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) out.push_back(flag);
    } else if (value.is_array()) {
      out.push_back(flag);
      for (const auto& v : value) out.push_back(scalar(v));
    } else {
      out.push_back(flag);
      out.push_back(scalar(value));
    }
  }
  return out;
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::string command = args.empty() ? std::string{} : args.front();
  try {
    args = merge_config_args(args);
  } catch (const Error& e) {
    emit_error(command, to_string(e.kind()), e.what());
    return exit_code(e.kind());
  }

  CLI::App app{"Bit-serial GEMM simulator with significance-gated undervolting"};
  app.name("gav");
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  std::string config_path;
  auto add_common = [&](CLI::App* sc) { sc->add_option("--config", config_path, "JSON file of option defaults"); };

  // gemm
  struct {
    std::string a, b, lut, out;
    std::size_t c = 32, l = 8, k = 16;
    int g = -1;
    std::uint64_t seed = 0;
  } gm;
  auto* gemm = app.add_subcommand("gemm", "Exact or undervolted GEMM of two GVT1 operand tensors");
  add_common(gemm);
  gemm->add_option("--a", gm.a, "Activation operand [C_total, L_total]")->required()->check(CLI::ExistingFile);
  gemm->add_option("--b", gm.b, "Weight operand [K_total, C_total]")->required()->check(CLI::ExistingFile);
  gemm->add_option("--C", gm.c, "Array inner-product length");
  gemm->add_option("--L", gm.l, "Array columns");
  gemm->add_option("--K", gm.k, "Array rows");
  gemm->add_option("--G", gm.g, "Protection level (-1: fully guarded)");
  gemm->add_option("--lut", gm.lut, "Error model JSON (required when G leaves passes undervolted)");
  gemm->add_option("--seed", gm.seed, "Sampling seed");
  gemm->add_option("--out", gm.out, "Result tensor path")->required();

  // oracle-trace
  struct {
    unsigned c = 32;
    std::size_t cycles = 100000;
    double target_ber = 0.02, min_ber = 0.005, max_ber = 0.05, jitter = 0.0, delay_scale = 0.0;
    std::size_t probe_cycles = 20000;
    std::string precision = "a4w4", inputs = "gemm", out;
    std::uint64_t netlist_seed = 0, seed = 0;
  } ot;
  auto* otrace = app.add_subcommand("oracle-trace", "Generate error traces from the gate-level timing model");
  add_common(otrace);
  otrace->add_option("--c", ot.c, "iPE inputs");
  otrace->add_option("--cycles", ot.cycles, "Cycles to record");
  otrace->add_option("--target-ber", ot.target_ber, "Mean bit-error rate the delay multiplier is tuned to");
  otrace->add_option("--min-ber", ot.min_ber, "Lower edge of the accepted error-rate band");
  otrace->add_option("--max-ber", ot.max_ber, "Upper edge of the accepted error-rate band");
  otrace->add_option("--probe-cycles", ot.probe_cycles, "Cycles per tuning probe");
  otrace->add_option("--delay-scale", ot.delay_scale, "Fixed delay multiplier (0: tune)");
  otrace->add_option("--jitter", ot.jitter, "Per-gate relative delay sigma");
  otrace->add_option("--precision", ot.precision, "Operand precisions of the GEMM input stream");
  otrace->add_option("--inputs", ot.inputs, "Input stream: gemm or density")->check(CLI::IsMember({"gemm", "density"}));
  otrace->add_option("--netlist-seed", ot.netlist_seed, "Adder-tree wiring permutation");
  otrace->add_option("--seed", ot.seed, "Master seed")->required();
  otrace->add_option("--out", ot.out, "Trace file (GVTR)")->required();

  // calibrate
  struct {
    std::vector<std::string> traces;
    int n_nei = kDefaultNeighbors, p_bins = kDefaultPrevBins;
    double lambda = kDefaultSmoothing;
    std::string out;
  } cal;
  auto* calib = app.add_subcommand("calibrate", "Build an error-model LUT from oracle traces");
  add_common(calib);
  calib->add_option("--traces", cal.traces, "Trace files")->required()->check(CLI::ExistingFile);
  calib->add_option("--n-nei", cal.n_nei, "Neighbor bits in the condition");
  calib->add_option("--p-bins", cal.p_bins, "Previous-value bins");
  calib->add_option("--lambda", cal.lambda, "Laplace smoothing of observed cells");
  calib->add_option("--out", cal.out, "LUT JSON")->required();

  // validate-model
  struct {
    std::string lut, precision = "a4w4", out;
    std::vector<std::string> traces;
    std::vector<int> g{0};
    std::vector<std::size_t> dims{576, 16, 16};
    std::size_t l = 8, k = 16;
    int seeds = 5;
    std::uint64_t seed = 0;
  } vm;
  auto* validate = app.add_subcommand("validate-model", "Compare LUT-injected and oracle-injected GEMM error");
  add_common(validate);
  validate->add_option("--lut", vm.lut, "LUT JSON")->required()->check(CLI::ExistingFile);
  validate->add_option("--traces", vm.traces, "Calibration traces (the first one's metadata selects the oracle)")
      ->required()
      ->check(CLI::ExistingFile);
  validate->add_option("--precision", vm.precision, "Operand precisions");
  validate->add_option("--g", vm.g, "Protection levels to compare");
  validate->add_option("--dims", vm.dims, "Held-out GEMM size C_total L_total K_total")->expected(3);
  validate->add_option("--L", vm.l, "Array columns");
  validate->add_option("--K", vm.k, "Array rows");
  validate->add_option("--seeds", vm.seeds, "Held-out GEMMs per G");
  validate->add_option("--seed", vm.seed, "Master seed")->required();
  validate->add_option("--out", vm.out, "CSV report")->required();

  // sweep
  struct {
    std::string lut, power, out;
    bool zero_lut = false;
    std::vector<std::string> precisions{"a4w4", "a8w8"};
    std::vector<int> g;
    std::vector<std::size_t> dims{576, 16, 16};
    std::size_t c = 32, l = 8, k = 16;
    int seeds = 20, threads = 1;
    std::uint64_t seed = 0;
  } sw;
  auto* sweep = app.add_subcommand("sweep", "Precision x G grid of VAR_NED, power and efficiency");
  add_common(sweep);
  sweep->add_option("--lut", sw.lut, "LUT JSON")->check(CLI::ExistingFile);
  sweep->add_flag("--zero-lut", sw.zero_lut, "Use an error-free LUT of width --C");
  sweep->add_option("--power", sw.power, "Power calibration JSON (default: built-in)")->check(CLI::ExistingFile);
  sweep->add_option("--precisions", sw.precisions, "Precisions such as a4w4");
  sweep->add_option("--g", sw.g, "Protection levels (default: all)");
  sweep->add_option("--dims", sw.dims, "Characterization GEMM size C_total L_total K_total")->expected(3);
  sweep->add_option("--C", sw.c, "Array inner-product length (zero LUT only)");
  sweep->add_option("--L", sw.l, "Array columns");
  sweep->add_option("--K", sw.k, "Array rows");
  sweep->add_option("--seeds", sw.seeds, "Operand draws per grid point");
  sweep->add_option("--threads", sw.threads, "Worker threads");
  sweep->add_option("--seed", sw.seed, "Master seed")->required();
  sweep->add_option("--out", sw.out, "CSV output")->required();

  // quantize-model
  struct {
    std::string float_model = (kDataDir / "desk_cnn" / "float_model.json").string();
    std::string images = (kDataDir / "desk_cnn" / "train.gvt").string();
    std::string labels = (kDataDir / "desk_cnn" / "train_labels.csv").string();
    std::string precision = "a4w4", out;
    std::size_t calib = 128;
  } qm;
  auto* quant = app.add_subcommand("quantize-model", "Quantize a float network into a manifest + weight blob");
  add_common(quant);
  quant->add_option("--float-model", qm.float_model, "Float network JSON")->check(CLI::ExistingFile);
  quant->add_option("--images", qm.images, "Calibration images (GVT1)")->check(CLI::ExistingFile);
  quant->add_option("--labels", qm.labels, "Calibration labels CSV")->check(CLI::ExistingFile);
  quant->add_option("--calib", qm.calib, "Calibration images used for activation scales");
  quant->add_option("--precision", qm.precision, "Target precision");
  quant->add_option("--out", qm.out, "Manifest JSON")->required();

  const std::string default_model = (kDataDir / "desk_cnn" / "desk_cnn_a4w4.json").string();

  // profile
  struct {
    std::string model, lut, out;
    std::string images = (kDataDir / "desk_cnn" / "train.gvt").string();
    std::string labels = (kDataDir / "desk_cnn" / "train_labels.csv").string();
    std::size_t batch = 64, offset = 200, l = 8, k = 16;
    int n_rep = 5;
    std::vector<int> g;
    std::uint64_t seed = 0;
  } pf;
  pf.model = default_model;
  auto* profile = app.add_subcommand("profile", "Per-layer logit MSE as a function of G");
  add_common(profile);
  profile->add_option("--model", pf.model, "Network manifest")->check(CLI::ExistingFile);
  profile->add_option("--lut", pf.lut, "LUT JSON")->required()->check(CLI::ExistingFile);
  profile->add_option("--images", pf.images, "Profiling images (GVT1)")->check(CLI::ExistingFile);
  profile->add_option("--labels", pf.labels, "Profiling labels CSV")->check(CLI::ExistingFile);
  profile->add_option("--batch", pf.batch, "Images in the profiling batch");
  profile->add_option("--offset", pf.offset, "Index of the first profiling image");
  profile->add_option("--n-rep", pf.n_rep, "Seeded repetitions per (layer, G)");
  profile->add_option("--g", pf.g, "G candidates (default: all)");
  profile->add_option("--L", pf.l, "Array columns");
  profile->add_option("--K", pf.k, "Array rows");
  profile->add_option("--seed", pf.seed, "Master seed")->required();
  profile->add_option("--out", pf.out, "Profiles JSON")->required();

  // allocate
  struct {
    std::string profiles, g_target, out;
  } al;
  auto* allocate = app.add_subcommand("allocate", "Exact per-layer G allocation under a weighted-average budget");
  add_common(allocate);
  allocate->add_option("--profiles", al.profiles, "Profiles JSON")->required()->check(CLI::ExistingFile);
  allocate->add_option("--g-target", al.g_target, "Budget on the MAC-weighted average G (e.g. 4.5 or 9/2)")->required();
  allocate->add_option("--out", al.out, "Assignment JSON")->required();

  // infer
  struct {
    std::string model, plan, lut, power, name, out;
    std::string images = (kDataDir / "desk_cnn" / "test.gvt").string();
    std::string labels = (kDataDir / "desk_cnn" / "test_labels.csv").string();
    int g = -1;
    std::size_t limit = 0, l = 8, k = 16;
    std::uint64_t seed = 0;
  } in;
  in.model = default_model;
  auto* infer_cmd = app.add_subcommand("infer", "Quantized inference with per-layer GAV schedules");
  add_common(infer_cmd);
  infer_cmd->add_option("--model", in.model, "Network manifest")->check(CLI::ExistingFile);
  infer_cmd->add_option("--plan", in.plan, "Plan or assignment JSON")->check(CLI::ExistingFile);
  infer_cmd->add_option("--G", in.g, "Uniform protection level when no plan is given (-1: fully guarded)");
  infer_cmd->add_option("--lut", in.lut, "LUT JSON")->check(CLI::ExistingFile);
  infer_cmd->add_option("--power", in.power, "Power calibration JSON (default: built-in)")->check(CLI::ExistingFile);
  infer_cmd->add_option("--images", in.images, "Evaluation images (GVT1)")->check(CLI::ExistingFile);
  infer_cmd->add_option("--labels", in.labels, "Evaluation labels CSV")->check(CLI::ExistingFile);
  infer_cmd->add_option("--limit", in.limit, "Evaluate only the first N images (0: all)");
  infer_cmd->add_option("--L", in.l, "Array columns");
  infer_cmd->add_option("--K", in.k, "Array rows");
  infer_cmd->add_option("--name", in.name, "Row label in the summary CSV");
  infer_cmd->add_option("--seed", in.seed, "Master seed")->required();
  infer_cmd->add_option("--out", in.out, "Summary CSV")->required();

  // report
  struct {
    std::vector<std::string> inputs;
    std::string out;
  } rp;
  auto* report = app.add_subcommand("report", "Merge inference summaries into an efficiency/accuracy Pareto table");
  add_common(report);
  report->add_option("--inputs", rp.inputs, "Summary CSVs from infer")->required()->check(CLI::ExistingFile);
  report->add_option("--out", rp.out, "Pareto CSV")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    emit_error(command, "argument", e.what());
    return 2;
  }

  try {
    if (gemm->parsed()) {
      const auto info = snapshot(*gemm, gm.out);
      const IntMatrix a = to_matrix(read_tensor(gm.a));
      const IntMatrix b = to_matrix(read_tensor(gm.b));
      GemmJob job{a, b, make_shape(gm.c, gm.l, gm.k), {}, nullptr, gm.seed};
      const int gmax = a.bits() + b.bits() - 1;
      job.schedule = GavSchedule::make(a.bits(), b.bits(), gm.g < 0 ? gmax : gm.g);
      std::optional<ErrorLut> lut;
      if (!gm.lut.empty()) lut = read_lut(gm.lut);
      if (lut) job.error_model = &*lut;
      const GemmResult exact = gemm_exact(job);
      const GemmResult res = job.schedule.approx_passes() > 0 ? gemm_gav(job) : exact;
      write_tensor(gm.out, to_tensor(res.p));
      json stats{{"cycles", res.cycles}, {"approx_cycles", res.approx_cycles}, {"tiles", res.tile_count},
                 {"G", job.schedule.protection}, {"config_hash", info.hash}};
      if (job.schedule.approx_passes() > 0) {
        bool nonzero = false;
        for (auto v : exact.p.data()) nonzero = nonzero || v != 0;
        if (nonzero) {
          const auto st = var_ned(exact.p, res.p);
          stats["var_ned"] = st.var_ned;
          stats["mse"] = st.mse;
        }
      }
      write_text(sidecar(gm.out, ".stats.json"), stats.dump(1) + "\n");
    } else if (otrace->parsed()) {
      const auto info = snapshot(*otrace, ot.out);
      const auto [ab, bb] = parse_precision(ot.precision);
      const IpeNetlist net = build_ipe(ot.c, ot.netlist_seed);
      TimingConfig cfg;
      cfg.jitter_sigma = ot.jitter;
      cfg.seed = derive_seed(ot.seed, "timing");
      auto make_inputs = [&, ab = ab, bb = bb](std::uint64_t s) -> std::unique_ptr<InputGenerator> {
        if (ot.inputs == "density") return std::make_unique<DensityInputs>(ot.c, s);
        return std::make_unique<GemmStreamInputs>(ot.c, ab, bb, s);
      };
      if (ot.delay_scale > 0) {
        cfg.delay_scale = ot.delay_scale;
      } else {
        StressTuning tuning{ot.target_ber, ot.min_ber, ot.max_ber, ot.probe_cycles, 40};
        cfg = tune_delay_scale(net, cfg, [&] { return make_inputs(derive_seed(ot.seed, "trace-probe")); }, tuning);
      }
      auto inputs = make_inputs(derive_seed(ot.seed, "trace-inputs"));
      const ErrorTrace trace = generate_traces(net, cfg, *inputs, ot.cycles);
      write_trace(ot.out, trace);
      const auto rates = per_bit_error_rates(trace);
      const IpeSimulator sim(net, cfg);
      json meta{{"format", "gav-trace-meta"},
                {"version", 1},
                {"C", ot.c},
                {"S_BITS", net.s_bits()},
                {"cycles", ot.cycles},
                {"netlist_seed", ot.netlist_seed},
                {"inputs", ot.inputs},
                {"precision", ot.precision},
                {"timing",
                 {{"clock_period", cfg.clock_period},
                  {"resolved_clock_period", sim.clock_period()},
                  {"critical_path", net.critical_path()},
                  {"delay_scale", cfg.delay_scale},
                  {"jitter_sigma", cfg.jitter_sigma},
                  {"seed", cfg.seed}}},
                {"bit_error_rate", trace.bit_error_rate()},
                {"per_bit_error_rate", rates},
                {"digest", trace_digest(std::span<const ErrorTrace>(&trace, 1))},
                {"config_hash", info.hash}};
      write_text(sidecar(ot.out, ".json"), meta.dump(1) + "\n");
      std::string csv = csv_header("trace-bits", info) + "bit,error_rate\n";
      for (std::size_t b = 0; b < rates.size(); ++b) csv += std::to_string(b) + "," + num(rates[b]) + "\n";
      write_text(sidecar(ot.out, ".bits.csv"), csv);
    } else if (calib->parsed()) {
      snapshot(*calib, cal.out);
      const auto traces = load_traces(cal.traces);
      write_lut(cal.out, calibrate(traces, cal.n_nei, cal.p_bins, cal.lambda));
    } else if (validate->parsed()) {
      const auto info = snapshot(*validate, vm.out);
      check_dims(vm.dims);
      const auto [ab, bb] = parse_precision(vm.precision);
      const ErrorLut lut = read_lut(vm.lut);
      const auto traces = load_traces(vm.traces);
      const OracleSetup oracle = oracle_from_sidecar(vm.traces.front());
      if (oracle.net.c() != lut.c()) throw ConfigError("trace netlist width differs from the LUT's C");
      const ArrayShape shape = make_shape(lut.c(), vm.l, vm.k);
      if (vm.seeds < 1) throw ConfigError("--seeds must be positive");
      std::string csv = csv_header("validate", info) + "precision,G,seeds,var_ned_oracle,var_ned_model,rel_gap\n";
      json summary{{"config_hash", info.hash}, {"rows", json::array()}};
      for (int g : vm.g) {
        double vo = 0, vmod = 0;
        for (int s = 0; s < vm.seeds; ++s) {
          const auto ops = gen_characterization_matrices(vm.dims[0], vm.dims[1], vm.dims[2], ab, bb,
                                                         derive_seed(vm.seed, "validate-operands", s));
          GemmJob job{ops.a, ops.b, shape, GavSchedule::make(ab, bb, g), &lut,
                      derive_seed(vm.seed, "validate-sampling", static_cast<std::uint64_t>(g) * 1000 + s)};
          const auto exact = gemm_exact(job);
          OracleInjector injector(oracle.net, oracle.timing);
          vo += var_ned(exact.p, gemm_injected(job, &injector).p).var_ned;
          vmod += var_ned(exact.p, gemm_gav(job).p).var_ned;
        }
        vo /= vm.seeds;
        vmod /= vm.seeds;
        const double gap = vo > 0 ? vmod / vo - 1.0 : (vmod > 0 ? 1.0 : 0.0);
        csv += vm.precision + "," + std::to_string(g) + "," + std::to_string(vm.seeds) + "," + num(vo) + "," +
               num(vmod) + "," + num(gap) + "\n";
        summary["rows"].push_back({{"G", g}, {"var_ned_oracle", vo}, {"var_ned_model", vmod}, {"rel_gap", gap}});
      }
      // Resampling self-consistency on the calibration traces themselves.
      std::vector<double> trace_rate(lut.s_bits(), 0), model_rate(lut.s_bits(), 0);
      Rng rng(derive_seed(vm.seed, "validate-resample"));
      std::size_t n = 0;
      for (const auto& t : traces) {
        for (const auto& r : t.records) {
          const unsigned sampled = lut.sample(r.exact, r.prev, rng);
          for (int b = 0; b < lut.s_bits(); ++b) {
            trace_rate[b] += (r.error_mask() >> b) & 1u;
            model_rate[b] += ((sampled ^ r.exact) >> b) & 1u;
          }
          ++n;
        }
      }
      for (int b = 0; b < lut.s_bits(); ++b) {
        trace_rate[b] /= static_cast<double>(n);
        model_rate[b] /= static_cast<double>(n);
      }
      summary["per_bit_trace_rate"] = trace_rate;
      summary["per_bit_model_rate"] = model_rate;
      write_text(vm.out, csv);
      write_text(sidecar(vm.out, ".json"), summary.dump(1) + "\n");
    } else if (sweep->parsed()) {
      const auto info = snapshot(*sweep, sw.out);
      check_dims(sw.dims);
      if (sw.lut.empty() == !sw.zero_lut) throw ConfigError("sweep needs exactly one of --lut or --zero-lut");
      const ErrorLut lut = sw.zero_lut ? ErrorLut(static_cast<unsigned>(sw.c)) : read_lut(sw.lut);
      const ArrayShape shape = make_shape(lut.c(), sw.l, sw.k);
      const PowerModel power = sw.power.empty() ? default_calibration() : read_power(sw.power);
      if (sw.seeds < 1) throw ConfigError("--seeds must be positive");
      struct Point {
        std::string precision;
        int a, b, g;
      };
      std::vector<Point> points;
      for (const auto& p : sw.precisions) {
        const auto [a, b] = parse_precision(p);
        for (int g : sw.g.empty() ? all_g(a, b) : sw.g) {
          if (g < 0 || g > a + b - 1) throw ConfigError("G=" + std::to_string(g) + " out of range for " + p);
          points.push_back({p, a, b, g});
        }
      }
      const std::size_t n_seeds = static_cast<std::size_t>(sw.seeds);
      std::vector<double> var(points.size() * n_seeds, 0.0);
      parallel_for(var.size(), sw.threads, [&](std::size_t idx) {
        const auto& pt = points[idx / n_seeds];
        const std::size_t s = idx % n_seeds;
        const auto ops = gen_characterization_matrices(
            sw.dims[0], sw.dims[1], sw.dims[2], pt.a, pt.b,
            derive_seed(sw.seed, "sweep-operands", static_cast<std::uint64_t>(pt.a * 16 + pt.b) * 1000003 + s));
        GemmJob job{ops.a, ops.b, shape, GavSchedule::make(pt.a, pt.b, pt.g), &lut,
                    derive_seed(sw.seed, "sweep-sampling", idx)};
        const auto exact = gemm_exact(job);
        const auto approx = job.schedule.approx_passes() > 0 ? gemm_gav(job) : exact;
        var[idx] = var_ned(exact.p, approx.p).var_ned;
      });
      std::string csv = csv_header("sweep", info) + "precision,G,f,VAR_NED,mW,TOPs,TOPsW\n";
      for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& pt = points[i];
        double mean = 0.0;
        for (std::size_t s = 0; s < n_seeds; ++s) mean += var[i * n_seeds + s];
        mean /= static_cast<double>(n_seeds);
        const auto sched = GavSchedule::make(pt.a, pt.b, pt.g);
        csv += pt.precision + "," + std::to_string(pt.g) + "," + num(sched.approx_fraction()) + "," + num(mean) + "," +
               num(average_power_mw(power, sched)) + "," + num(throughput_tops(power, pt.a, pt.b)) + "," +
               num(efficiency_tops_per_w(power, sched)) + "\n";
      }
      write_text(sw.out, csv);
    } else if (quant->parsed()) {
      snapshot(*quant, qm.out);
      const auto [ab, bb] = parse_precision(qm.precision);
      const NetworkModel fnet = load_float_network(qm.float_model);
      const Dataset data = load_dataset(qm.images, qm.labels);
      std::vector<Activation> batch;
      for (std::size_t i = 0; i < std::min(qm.calib, data.images.size()); ++i) {
        batch.push_back(make_input(fnet, data.images[i]));
      }
      save_network(quantize_network(fnet, ab, bb, batch), qm.out);
    } else if (profile->parsed()) {
      const auto info = snapshot(*profile, pf.out);
      const NetworkModel model = load_network(pf.model);
      const ErrorLut lut = read_lut(pf.lut);
      const Dataset data = load_dataset(pf.images, pf.labels);
      if (pf.batch == 0 || pf.offset + pf.batch > data.images.size()) {
        throw ConfigError("profiling batch runs past the end of the image set");
      }
      std::vector<Activation> batch;
      for (std::size_t i = pf.offset; i < pf.offset + pf.batch; ++i) batch.push_back(make_input(model, data.images[i]));
      ProfileOptions po{pf.g, pf.n_rep, derive_seed(pf.seed, "profiling"), make_shape(lut.c(), pf.l, pf.k)};
      const auto profiles = profile_layers(model, lut, batch, po);
      const auto cands = pf.g.empty() ? all_g(model.a_bits, model.b_bits) : pf.g;
      write_text(pf.out, profiles_to_json(profiles, cands, model.a_bits, model.b_bits) + "\n");
      std::string csv = csv_header("profile", info) + "layer,ops,G,mse_raw,mse\n";
      for (const auto& p : profiles) {
        for (int g : cands) {
          csv += p.id + "," + std::to_string(p.ops) + "," + std::to_string(g) + "," + num(p.mse_raw.at(g)) + "," +
                 num(p.mse_by_g.at(g)) + "\n";
        }
      }
      write_text(sidecar(pf.out, ".csv"), csv);
    } else if (allocate->parsed()) {
      const auto info = snapshot(*allocate, al.out);
      const ProfileSet set = profiles_from_json(read_text(al.profiles));
      AllocationProblem problem{set.profiles, set.g_candidates, Rational::parse(al.g_target)};
      const Allocation a = solve_allocation(problem);
      json j{{"format", "gav-plan"},
             {"version", 1},
             {"a_bits", set.a_bits},
             {"b_bits", set.b_bits},
             {"g_target", problem.g_target.str()},
             {"weighted_average", a.weighted_average.str()},
             {"objective", a.objective},
             {"nodes", a.nodes},
             {"config_hash", info.hash},
             {"layers", json::array()}};
      for (std::size_t i = 0; i < a.g.size(); ++i) j["layers"].push_back({{"id", set.profiles[i].id}, {"G", a.g[i]}});
      write_text(al.out, j.dump(1) + "\n");
    } else if (infer_cmd->parsed()) {
      const auto info = snapshot(*infer_cmd, in.out);
      const NetworkModel model = load_network(in.model);
      const Dataset data = load_dataset(in.images, in.labels);
      std::optional<ErrorLut> lut;
      if (!in.lut.empty()) lut = read_lut(in.lut);
      const PowerModel power = in.power.empty() ? default_calibration() : read_power(in.power);
      const GavPlan plan = !in.plan.empty() ? plan_from_json(model, read_text(in.plan))
                           : in.g < 0       ? GavPlan::guarded(model)
                                            : GavPlan::uniform(model, in.g);
      InferenceOptions opts;
      opts.shape = make_shape(lut ? lut->c() : 32, in.l, in.k);
      opts.lut = lut ? &*lut : nullptr;
      opts.power = &power;
      opts.seed = derive_seed(in.seed, "inference");
      const EvalSummary ev = evaluate(model, plan, data, in.limit, opts);
      // Guarded reference energy: same cycles, every pass at V_guard.
      InferenceOptions ref = opts;
      ref.lut = nullptr;
      const auto guarded = infer(model, GavPlan::guarded(model), make_input(model, data.images.front()), ref);
      // Energy does not depend on pixel values; accumulate as evaluate() does so a guarded
      // plan reports a saving of exactly zero.
      double guarded_j = 0.0;
      for (std::size_t i = 0; i < ev.predictions.size(); ++i) guarded_j += guarded.energy_j;
      guarded_j /= static_cast<double>(ev.predictions.size());
      std::vector<int> g;
      for (const auto& s : plan.schedules) g.push_back(s.protection);
      std::vector<LayerProfile> ops_only;
      for (const auto& st : guarded.layers) ops_only.push_back({st.name, st.macs, {}, {}});
      const Rational wavg = weighted_average(ops_only, g);
      std::string name = in.name;
      if (name.empty()) name = !in.plan.empty() ? fs::path(in.plan).stem().string() : "G" + std::to_string(plan.schedules.front().protection);
      std::string csv = csv_header("infer", info) +
                        "name,weighted_G,accuracy,energy_j,guarded_energy_j,energy_saving,images\n";
      const std::size_t n = ev.predictions.size();
      csv += name + "," + num(wavg.to_double()) + "," + num(ev.accuracy) + "," + num(ev.energy_j) + "," +
             num(guarded_j) + "," + num(1.0 - ev.energy_j / guarded_j) + "," + std::to_string(n) + "\n";
      write_text(in.out, csv);
      std::string pred = csv_header("predictions", info) + "index,label,prediction\n";
      for (std::size_t i = 0; i < n; ++i) {
        pred += std::to_string(i) + "," + std::to_string(data.labels[i]) + "," + std::to_string(ev.predictions[i]) + "\n";
      }
      write_text(sidecar(in.out, ".predictions.csv"), pred);
    } else if (report->parsed()) {
      const auto info = snapshot(*report, rp.out);
      struct Row {
        std::string name;
        double wg, acc, saving;
      };
      std::vector<Row> rows;
      for (const auto& path : rp.inputs) {
        for (auto& r : read_csv_rows(path)) {
          if (!r.contains("name") || !r.contains("accuracy") || !r.contains("energy_saving")) {
            throw ConfigError(path + " is not an infer summary");
          }
          rows.push_back({r["name"], to_double(r["weighted_G"], "weighted_G"), to_double(r["accuracy"], "accuracy"),
                          to_double(r["energy_saving"], "energy_saving")});
        }
      }
      std::sort(rows.begin(), rows.end(), [](const Row& x, const Row& y) {
        return x.saving != y.saving ? x.saving > y.saving : x.name < y.name;
      });
      std::string csv = csv_header("report", info) + "name,weighted_G,accuracy,energy_saving,pareto\n";
      for (const auto& r : rows) {
        const bool dominated = std::any_of(rows.begin(), rows.end(), [&](const Row& o) {
          return o.acc >= r.acc && o.saving >= r.saving && (o.acc > r.acc || o.saving > r.saving);
        });
        csv += r.name + "," + num(r.wg) + "," + num(r.acc) + "," + num(r.saving) + "," + (dominated ? "0" : "1") + "\n";
      }
      write_text(rp.out, csv);
    }
  } catch (const Error& e) {
    emit_error(command, to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    emit_error(command, "internal", e.what());
    return 1;
  }
  return 0;
}

}  // namespace gav
