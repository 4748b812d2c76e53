#include "gav/power.hpp"

#include <algorithm>
#include <json.hpp>
#include <string>

#include "gav/error.hpp"
#include "gav/tensor_io.hpp"

namespace gav {

namespace {

struct TableRow {
  int a_bits;
  int b_bits;
  double tops;       // reported throughput
  double tops_w_lo;  // all passes guarded
  double tops_w_hi;  // all passes approximate
};

// Reported throughput and efficiency bounds of the reference accelerator.
constexpr TableRow kReference[] = {
    {8, 8, 0.111, 3.56, 6.52},
    {4, 4, 0.443, 12.52, 23.78},
    {3, 3, 0.776, 19.37, 38.13},
    {2, 2, 1.774, 45.87, 89.32},
};

std::string precision_name(int a, int b) { return "a" + std::to_string(a) + "w" + std::to_string(b); }

}  // namespace

void PowerModel::validate() const {
  if (!(frequency_hz > 0)) throw ConfigError("clock frequency must be positive");
  if (!(utilization > 0 && utilization <= 1)) throw ConfigError("utilization must lie in (0, 1]");
  if (!(region_ratio > 1)) throw ConfigError("region reduction ratio must exceed 1");
  array.validate();
  if (table.empty()) throw ConfigError("power model has no calibrated precisions");
  for (const auto& p : table) {
    if (p.a_bits < 2 || p.a_bits > 8 || p.b_bits < 2 || p.b_bits > 8) {
      throw ConfigError("calibrated precision " + precision_name(p.a_bits, p.b_bits) + " outside 2..8 bits");
    }
    if (!(p.p_approx_mw > 0 && p.p_approx_mw < p.p_guard_mw)) {
      throw ConfigError("approximate power must be positive and below guarded power at " +
                        precision_name(p.a_bits, p.b_bits));
    }
  }
}

PrecisionPower PowerModel::precision(int a_bits, int b_bits) const {
  if (a_bits < 2 || a_bits > 8 || b_bits < 2 || b_bits > 8) {
    throw ConfigError("no power calibration for " + precision_name(a_bits, b_bits));
  }
  for (const auto& p : table) {
    if (p.a_bits == a_bits && p.b_bits == b_bits) return p;
  }
  const int x = a_bits * b_bits;
  const PrecisionPower* lo = nullptr;
  const PrecisionPower* hi = nullptr;
  for (const auto& p : table) {
    const int px = p.a_bits * p.b_bits;
    if (px <= x && (!lo || px > lo->a_bits * lo->b_bits)) lo = &p;
    if (px >= x && (!hi || px < hi->a_bits * hi->b_bits)) hi = &p;
  }
  if (!lo || !hi) throw ConfigError("precision " + precision_name(a_bits, b_bits) + " is outside the calibrated range");
  PrecisionPower out{a_bits, b_bits, lo->p_guard_mw, lo->p_approx_mw};
  const int x0 = lo->a_bits * lo->b_bits;
  const int x1 = hi->a_bits * hi->b_bits;
  if (x1 != x0) {
    const double t = static_cast<double>(x - x0) / (x1 - x0);
    out.p_guard_mw = lo->p_guard_mw + t * (hi->p_guard_mw - lo->p_guard_mw);
    out.p_approx_mw = lo->p_approx_mw + t * (hi->p_approx_mw - lo->p_approx_mw);
  }
  return out;
}

DomainSplit PowerModel::domains(int a_bits, int b_bits) const {
  const auto p = precision(a_bits, b_bits);
  // region_guard - region_guard / ratio == p_guard - p_approx
  DomainSplit d;
  d.region_guard_mw = (p.p_guard_mw - p.p_approx_mw) * region_ratio / (region_ratio - 1.0);
  d.region_aprox_mw = d.region_guard_mw / region_ratio;
  d.rest_mw = p.p_guard_mw - d.region_guard_mw;
  return d;
}

PowerModel default_calibration() {
  PowerModel m;
  const double ideal_a8w8 = 2.0 * static_cast<double>(m.array.c * m.array.l * m.array.k) * m.frequency_hz / 64.0 / 1e12;
  m.utilization = kReference[0].tops / ideal_a8w8;
  for (const auto& r : kReference) {
    m.table.push_back({r.a_bits, r.b_bits, r.tops / r.tops_w_lo * 1e3, r.tops / r.tops_w_hi * 1e3});
  }
  return m;
}

double average_power_mw(const PowerModel& model, int a_bits, int b_bits, double approx_fraction) {
  if (!(approx_fraction >= 0 && approx_fraction <= 1)) throw ArgumentError("approximate fraction must lie in [0, 1]");
  const auto p = model.precision(a_bits, b_bits);
  if (approx_fraction == 0.0) return p.p_guard_mw;
  if (approx_fraction == 1.0) return p.p_approx_mw;
  const auto d = model.domains(a_bits, b_bits);
  return d.rest_mw + d.region_guard_mw * (1.0 - approx_fraction) + d.region_aprox_mw * approx_fraction;
}

double average_power_mw(const PowerModel& model, const GavSchedule& schedule) {
  schedule.validate();
  return average_power_mw(model, schedule.a_bits, schedule.b_bits, schedule.approx_fraction());
}

double throughput_tops(const PowerModel& model, int a_bits, int b_bits) {
  if (a_bits < 1 || b_bits < 1) throw ArgumentError("precisions must be positive");
  const double ops = 2.0 * static_cast<double>(model.array.c * model.array.l * model.array.k);
  return ops * model.frequency_hz * model.utilization / (a_bits * b_bits) / 1e12;
}

double efficiency_tops_per_w(const PowerModel& model, const GavSchedule& schedule) {
  return throughput_tops(model, schedule.a_bits, schedule.b_bits) / (average_power_mw(model, schedule) * 1e-3);
}

double energy_joules(const PowerModel& model, const GavSchedule& schedule, std::uint64_t cycles) {
  return average_power_mw(model, schedule) * 1e-3 * static_cast<double>(cycles) / model.frequency_hz;
}

std::string power_to_json(const PowerModel& model) {
  nlohmann::json j;
  j["format"] = "gav-power";
  j["version"] = 1;
  j["frequency_hz"] = model.frequency_hz;
  j["array"] = {{"C", model.array.c}, {"L", model.array.l}, {"K", model.array.k}};
  j["utilization"] = model.utilization;
  j["region_ratio"] = model.region_ratio;
  j["voltages"] = {{"v_mem", model.v_mem}, {"v_guard", model.v_guard}, {"v_aprox", model.v_aprox}};
  auto& rows = j["precisions"] = nlohmann::json::array();
  for (const auto& p : model.table) {
    rows.push_back({{"a_bits", p.a_bits}, {"b_bits", p.b_bits}, {"p_guard_mw", p.p_guard_mw},
                    {"p_approx_mw", p.p_approx_mw}});
  }
  return j.dump(1);
}

PowerModel power_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "gav-power" || j.at("version") != 1) throw ConfigError("not a version-1 gav-power file");
    PowerModel m;
    m.frequency_hz = j.at("frequency_hz").get<double>();
    m.array = {j.at("array").at("C").get<std::size_t>(), j.at("array").at("L").get<std::size_t>(),
               j.at("array").at("K").get<std::size_t>()};
    m.utilization = j.at("utilization").get<double>();
    m.region_ratio = j.at("region_ratio").get<double>();
    if (j.contains("voltages")) {
      const auto& v = j["voltages"];
      m.v_mem = v.value("v_mem", m.v_mem);
      m.v_guard = v.value("v_guard", m.v_guard);
      m.v_aprox = v.value("v_aprox", m.v_aprox);
    }
    for (const auto& r : j.at("precisions")) {
      m.table.push_back({r.at("a_bits").get<int>(), r.at("b_bits").get<int>(), r.at("p_guard_mw").get<double>(),
                         r.at("p_approx_mw").get<double>()});
    }
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed power calibration: ") + e.what());
  }
}

void write_power(const std::filesystem::path& path, const PowerModel& model) {
  const auto text = power_to_json(model) + "\n";
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

PowerModel read_power(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return power_from_json(std::string(bytes.begin(), bytes.end()));
}

}  // namespace gav
