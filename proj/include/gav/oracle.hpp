#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "gav/engine.hpp"
#include "gav/rng.hpp"
#include "gav/trace.hpp"

namespace gav {

enum class GateKind : std::uint8_t { And2, Xor2, Xor3, Maj3 };

struct Gate {
  GateKind kind;
  std::array<std::int32_t, 3> in;  // unused inputs are -1
  std::int32_t out;
};

/// Gate-level model of one inner-product element: C AND gates feeding a balanced
/// binary tree of ripple-carry adders. Full adders are a sum (XOR3) and a carry
/// (MAJ3) gate, half adders an XOR2 and an AND2; every gate has unit nominal delay.
///
/// Nets 0..C-1 are the A inputs, C..2C-1 the B inputs. Gates are stored in
/// topological order.
class IpeNetlist {
 public:
  unsigned c() const noexcept { return c_; }
  int s_bits() const noexcept { return static_cast<int>(outputs_.size()); }
  std::size_t net_count() const noexcept { return fanout_.size(); }
  std::span<const Gate> gates() const noexcept { return gates_; }
  /// Output nets, LSB first.
  std::span<const std::int32_t> outputs() const noexcept { return outputs_; }
  std::span<const std::int32_t> fanout(std::int32_t net) const { return fanout_[net]; }

  /// Longest input-to-output path in nominal delay units.
  int critical_path() const noexcept { return critical_path_; }
  /// Nominal arrival time of each output bit.
  std::span<const int> output_arrival() const noexcept { return output_arrival_; }

  /// Zero-delay evaluation.
  unsigned evaluate(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) const;

 private:
  friend IpeNetlist build_ipe(unsigned c, std::uint64_t seed);

  unsigned c_ = 0;
  std::vector<Gate> gates_;
  std::vector<std::int32_t> outputs_;
  std::vector<std::vector<std::int32_t>> fanout_;
  int critical_path_ = 0;
  std::vector<int> output_arrival_;
};

/// `seed` permutes which AND outputs share a first-level adder.
IpeNetlist build_ipe(unsigned c, std::uint64_t seed = 0);

struct TimingConfig {
  /// Sampling instant after the inputs switch. Non-positive means the guarded
  /// critical path (with jitter applied), i.e. the sign-off clock.
  double clock_period = 0.0;
  /// Delay multiplier at the approximate voltage; 1 is the guarded corner.
  double delay_scale = 1.0;
  /// Relative sigma of a static per-gate Gaussian delay multiplier.
  double jitter_sigma = 0.0;
  std::uint64_t seed = 0;
};

struct Transition {
  double time;
  bool value;
};

/// Logic value at `t` of a signal starting at `initial`; transitions at or before t count.
bool sample_at(bool initial, std::span<const Transition> transitions, double t);

struct CycleOutcome {
  unsigned sampled = 0;
  unsigned settled = 0;
  double last_transition = 0.0;
};

/// Event-driven transport-delay simulation of one netlist under one timing corner.
/// Each cycle starts from the steady state of the previous inputs.
class IpeSimulator {
 public:
  IpeSimulator(const IpeNetlist& net, const TimingConfig& cfg);

  double clock_period() const noexcept { return period_; }
  const IpeNetlist& netlist() const noexcept { return net_; }

  /// Packed inputs: bit i of word w is element 64*w + i.
  CycleOutcome run(std::span<const std::uint64_t> prev_a, std::span<const std::uint64_t> prev_b,
                   std::span<const std::uint64_t> new_a, std::span<const std::uint64_t> new_b);

  /// Output-bit waveforms of the most recent run, LSB first.
  std::span<const Transition> transitions(int bit) const { return out_events_[bit]; }

 private:
  struct Event {
    std::int64_t time;
    std::uint64_t seq;
    std::int32_t net;
    std::uint8_t value;
  };

  void settle(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b);
  std::uint8_t eval_gate(const Gate& g) const;
  void push(const Event& e);
  Event pop();

  const IpeNetlist& net_;
  std::vector<std::int64_t> delay_ticks_;
  std::int64_t period_ticks_ = 0;
  double period_ = 0.0;
  std::vector<std::uint8_t> value_;
  std::vector<std::uint8_t> projected_;
  std::vector<std::int32_t> gate_of_net_;
  std::vector<std::uint32_t> stamp_;
  std::uint32_t epoch_ = 0;
  std::vector<Event> heap_;
  std::uint64_t seq_ = 0;
  std::vector<std::int32_t> out_bit_of_net_;
  std::vector<std::vector<Transition>> out_events_;
  std::vector<std::int32_t> touched_;
};

/// Convenience wrapper over IpeSimulator with unpacked 0/1 inputs.
unsigned simulate_cycle(const IpeNetlist& net, const TimingConfig& cfg, std::span<const std::uint8_t> prev_a,
                        std::span<const std::uint8_t> prev_b, std::span<const std::uint8_t> new_a,
                        std::span<const std::uint8_t> new_b);

std::vector<std::uint64_t> pack_bits(std::span<const std::uint8_t> bits);

/// Source of per-cycle iPE input vectors (packed, C valid bits).
class InputGenerator {
 public:
  virtual ~InputGenerator() = default;
  virtual unsigned c() const = 0;
  virtual void next(std::span<std::uint64_t> a, std::span<std::uint64_t> b) = 0;
};

/// Independent cycles; each draws an (A, B) density pair whose product is uniform,
/// so exact outputs spread over [0, C].
class DensityInputs final : public InputGenerator {
 public:
  DensityInputs(unsigned c, std::uint64_t seed) : c_(c), rng_(seed) {}
  unsigned c() const override { return c_; }
  void next(std::span<std::uint64_t> a, std::span<std::uint64_t> b) override;

 private:
  unsigned c_;
  Rng rng_;
};

/// The cycle sequence one iPE sees while a bit-serial GEMM walks characterization
/// operands: a fresh activation column and weight row every a_bits*b_bits cycles,
/// then their plane pairs with ba outer and bb inner.
class GemmStreamInputs final : public InputGenerator {
 public:
  GemmStreamInputs(unsigned c, int a_bits, int b_bits, std::uint64_t seed);
  unsigned c() const override { return c_; }
  void next(std::span<std::uint64_t> a, std::span<std::uint64_t> b) override;

 private:
  void refill();

  unsigned c_;
  int a_bits_;
  int b_bits_;
  Rng rng_;
  std::vector<std::int32_t> col_;
  std::vector<std::int32_t> row_;
  int ba_ = 0;
  int bb_ = 0;
  bool fresh_ = true;
};

/// Runs n_cycles through the simulator, recording (exact, previous exact, sampled).
/// The first cycle starts from all-zero inputs.
ErrorTrace generate_traces(const IpeNetlist& net, const TimingConfig& cfg, InputGenerator& inputs,
                           std::size_t n_cycles);

/// Per-output-bit error frequency of a trace, LSB first.
std::vector<double> per_bit_error_rates(const ErrorTrace& trace);

struct StressTuning {
  double target_ber = 0.02;
  double min_ber = 0.005;
  double max_ber = 0.05;
  std::size_t probe_cycles = 20000;
  int max_iterations = 40;
};

/// Bisects the delay multiplier until a probe trace's mean bit-error rate reaches
/// the target; the probe replays the same input stream at every step.
/// Throws CalibrationError if no multiplier lands inside the band.
TimingConfig tune_delay_scale(const IpeNetlist& net, TimingConfig base,
                              const std::function<std::unique_ptr<InputGenerator>()>& make_inputs,
                              const StressTuning& tuning);

/// Injector that replays every approximate iPE output through the gate-level model,
/// optionally logging the cycles as a trace.
class OracleInjector final : public ErrorInjector {
 public:
  OracleInjector(const IpeNetlist& net, const TimingConfig& cfg, ErrorTrace* record = nullptr);
  unsigned inject(const IpeCycle& cycle) override;

 private:
  IpeSimulator sim_;
  ErrorTrace* record_;
};

}  // namespace gav
