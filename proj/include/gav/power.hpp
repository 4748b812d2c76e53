#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gav/core.hpp"

namespace gav {

/// Accelerator-level average power at one precision, both voltage corners.
struct PrecisionPower {
  int a_bits = 0;
  int b_bits = 0;
  double p_guard_mw = 0.0;   // every pass at V_guard
  double p_approx_mw = 0.0;  // every pass at V_aprox
};

/// Three-domain split of the guarded power: memories and always-guarded logic (`rest`),
/// plus the undervoltable compute region at V_guard or at V_aprox.
struct DomainSplit {
  double rest_mw = 0.0;
  double region_guard_mw = 0.0;
  double region_aprox_mw = 0.0;
};

struct PowerModel {
  double frequency_hz = 50e6;
  ArrayShape array{576, 8, 16};
  double utilization = 1.0;
  /// Power reduction of the undervolted region between V_guard and V_aprox.
  double region_ratio = 3.5;
  double v_mem = 0.40;
  double v_guard = 0.55;
  double v_aprox = 0.35;
  /// Calibrated precisions; anything else interpolates linearly in a_bits*b_bits.
  std::vector<PrecisionPower> table;

  void validate() const;
  /// Endpoint powers for a precision pair (exact for calibrated entries).
  PrecisionPower precision(int a_bits, int b_bits) const;
  /// Domain decomposition at a precision, consistent with its endpoints and region_ratio.
  DomainSplit domains(int a_bits, int b_bits) const;
};

/// Built-in calibration: endpoint powers are published throughput divided by published
/// efficiency at a8w8/a4w4/a3w3/a2w2; utilization is the a8w8 reported/ideal throughput ratio.
PowerModel default_calibration();

/// Linear mix of the endpoints in the approximate-pass fraction f.
double average_power_mw(const PowerModel& model, int a_bits, int b_bits, double approx_fraction);
double average_power_mw(const PowerModel& model, const GavSchedule& schedule);

/// 2 * L * C * K * f_clk * u / (a_bits * b_bits), in TOP/s.
double throughput_tops(const PowerModel& model, int a_bits, int b_bits);
double efficiency_tops_per_w(const PowerModel& model, const GavSchedule& schedule);

/// Energy of `cycles` clock cycles under one schedule, in joules.
double energy_joules(const PowerModel& model, const GavSchedule& schedule, std::uint64_t cycles);

std::string power_to_json(const PowerModel& model);
PowerModel power_from_json(const std::string& text);
void write_power(const std::filesystem::path& path, const PowerModel& model);
PowerModel read_power(const std::filesystem::path& path);

}  // namespace gav
