#include "gav/oracle.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>

#include "gav/error.hpp"
#include "gav/metrics.hpp"

namespace gav {

namespace {

// Simulation time resolution: 1/1024 of a nominal gate delay.
constexpr double kTicksPerUnit = 1024.0;

struct Operand {
  std::vector<std::int32_t> bits;  // LSB first
  unsigned max = 0;
};

inline bool input_bit(std::span<const std::uint64_t> words, std::size_t i) {
  return (words[i / 64] >> (i % 64)) & 1u;
}

}  // namespace

IpeNetlist build_ipe(unsigned c, std::uint64_t seed) {
  if (c < 2) throw ArgumentError("an iPE needs at least two inputs");
  if (c > 0xFFFF) throw ArgumentError("iPE width must be below 65536");
  IpeNetlist net;
  net.c_ = c;
  std::int32_t next_net = static_cast<std::int32_t>(2 * c);
  auto add_gate = [&](GateKind kind, std::int32_t x, std::int32_t y, std::int32_t z) {
    net.gates_.push_back({kind, {x, y, z}, next_net});
    return next_net++;
  };

  std::vector<Operand> level;
  level.reserve(c);
  for (unsigned i = 0; i < c; ++i) {
    level.push_back({{add_gate(GateKind::And2, static_cast<std::int32_t>(i), static_cast<std::int32_t>(c + i), -1)}, 1});
  }
  if (seed != 0) {
    Rng rng(seed);
    for (std::size_t i = level.size() - 1; i > 0; --i) std::swap(level[i], level[rng.below(i + 1)]);
  }

  auto add = [&](const Operand& x, const Operand& y) {
    Operand out;
    out.max = x.max + y.max;
    const int width = static_cast<int>(std::bit_width(out.max));
    std::int32_t carry = -1;
    for (int i = 0; i < width; ++i) {
      std::array<std::int32_t, 3> in{-1, -1, -1};
      int n = 0;
      if (i < static_cast<int>(x.bits.size())) in[n++] = x.bits[i];
      if (i < static_cast<int>(y.bits.size())) in[n++] = y.bits[i];
      if (carry >= 0) in[n++] = carry;
      const bool last = i == width - 1;
      switch (n) {
        case 1:
          out.bits.push_back(in[0]);
          carry = -1;
          break;
        case 2:
          out.bits.push_back(add_gate(GateKind::Xor2, in[0], in[1], -1));
          carry = last ? -1 : add_gate(GateKind::And2, in[0], in[1], -1);
          break;
        case 3:
          out.bits.push_back(add_gate(GateKind::Xor3, in[0], in[1], in[2]));
          carry = last ? -1 : add_gate(GateKind::Maj3, in[0], in[1], in[2]);
          break;
        default:
          throw std::logic_error("adder bit without inputs");
      }
    }
    return out;
  };

  while (level.size() > 1) {
    std::vector<Operand> next;
    next.reserve((level.size() + 1) / 2);
    for (std::size_t i = 0; i < level.size(); i += 2) {
      next.push_back(i + 1 < level.size() ? add(level[i], level[i + 1]) : std::move(level[i]));
    }
    level = std::move(next);
  }
  net.outputs_ = level.front().bits;

  net.fanout_.assign(next_net, {});
  for (std::size_t g = 0; g < net.gates_.size(); ++g) {
    for (auto in : net.gates_[g].in) {
      if (in >= 0) net.fanout_[in].push_back(static_cast<std::int32_t>(g));
    }
  }
  std::vector<int> arrival(next_net, 0);
  for (const auto& g : net.gates_) {
    int t = 0;
    for (auto in : g.in) {
      if (in >= 0) t = std::max(t, arrival[in]);
    }
    arrival[g.out] = t + 1;
  }
  for (auto o : net.outputs_) {
    net.output_arrival_.push_back(arrival[o]);
    net.critical_path_ = std::max(net.critical_path_, arrival[o]);
  }
  return net;
}

unsigned IpeNetlist::evaluate(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) const {
  if (a.size() != c_ || b.size() != c_) throw ArgumentError("iPE input vectors must have length C");
  std::vector<std::uint8_t> v(net_count(), 0);
  for (unsigned i = 0; i < c_; ++i) {
    v[i] = a[i] & 1u;
    v[c_ + i] = b[i] & 1u;
  }
  for (const auto& g : gates_) {
    switch (g.kind) {
      case GateKind::And2: v[g.out] = v[g.in[0]] & v[g.in[1]]; break;
      case GateKind::Xor2: v[g.out] = v[g.in[0]] ^ v[g.in[1]]; break;
      case GateKind::Xor3: v[g.out] = v[g.in[0]] ^ v[g.in[1]] ^ v[g.in[2]]; break;
      case GateKind::Maj3:
        v[g.out] = (v[g.in[0]] & v[g.in[1]]) | (v[g.in[0]] & v[g.in[2]]) | (v[g.in[1]] & v[g.in[2]]);
        break;
    }
  }
  unsigned out = 0;
  for (std::size_t i = 0; i < outputs_.size(); ++i) out |= static_cast<unsigned>(v[outputs_[i]]) << i;
  return out;
}

bool sample_at(bool initial, std::span<const Transition> transitions, double t) {
  bool v = initial;
  for (const auto& tr : transitions) {
    if (tr.time > t) break;
    v = tr.value;
  }
  return v;
}

IpeSimulator::IpeSimulator(const IpeNetlist& net, const TimingConfig& cfg) : net_(net) {
  if (cfg.delay_scale <= 0.0) throw ArgumentError("delay scale must be positive");
  if (cfg.jitter_sigma < 0.0) throw ArgumentError("jitter sigma must be non-negative");
  const auto gates = net.gates();
  Rng rng(cfg.seed);
  std::vector<double> multiplier(gates.size(), 1.0);
  if (cfg.jitter_sigma > 0.0) {
    for (auto& m : multiplier) m = std::max(0.05, 1.0 + cfg.jitter_sigma * rng.normal());
  }
  delay_ticks_.resize(gates.size());
  std::vector<std::int64_t> guard_ticks(gates.size());
  for (std::size_t g = 0; g < gates.size(); ++g) {
    guard_ticks[g] = std::max<std::int64_t>(1, std::llround(multiplier[g] * kTicksPerUnit));
    delay_ticks_[g] = std::max<std::int64_t>(1, std::llround(multiplier[g] * cfg.delay_scale * kTicksPerUnit));
  }
  if (cfg.clock_period > 0.0) {
    period_ticks_ = std::llround(cfg.clock_period * kTicksPerUnit);
  } else {
    std::vector<std::int64_t> arrival(net.net_count(), 0);
    for (std::size_t g = 0; g < gates.size(); ++g) {
      std::int64_t t = 0;
      for (auto in : gates[g].in) {
        if (in >= 0) t = std::max(t, arrival[in]);
      }
      arrival[gates[g].out] = t + guard_ticks[g];
    }
    for (auto o : net.outputs()) period_ticks_ = std::max(period_ticks_, arrival[o]);
  }
  period_ = static_cast<double>(period_ticks_) / kTicksPerUnit;

  value_.assign(net.net_count(), 0);
  projected_.assign(net.net_count(), 0);
  stamp_.assign(gates.size(), 0);
  out_bit_of_net_.assign(net.net_count(), -1);
  for (std::size_t i = 0; i < net.outputs().size(); ++i) out_bit_of_net_[net.outputs()[i]] = static_cast<std::int32_t>(i);
  out_events_.resize(net.outputs().size());
}

std::uint8_t IpeSimulator::eval_gate(const Gate& g) const {
  switch (g.kind) {
    case GateKind::And2: return value_[g.in[0]] & value_[g.in[1]];
    case GateKind::Xor2: return value_[g.in[0]] ^ value_[g.in[1]];
    case GateKind::Xor3: return value_[g.in[0]] ^ value_[g.in[1]] ^ value_[g.in[2]];
    case GateKind::Maj3: {
      const auto a = value_[g.in[0]], b = value_[g.in[1]], c = value_[g.in[2]];
      return (a & b) | (a & c) | (b & c);
    }
  }
  return 0;
}

void IpeSimulator::settle(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) {
  const unsigned c = net_.c();
  for (unsigned i = 0; i < c; ++i) {
    value_[i] = input_bit(a, i);
    value_[c + i] = input_bit(b, i);
  }
  for (const auto& g : net_.gates()) value_[g.out] = eval_gate(g);
}

void IpeSimulator::push(const Event& e) {
  heap_.push_back(e);
  std::push_heap(heap_.begin(), heap_.end(), [](const Event& x, const Event& y) {
    return x.time != y.time ? x.time > y.time : x.seq > y.seq;
  });
}

IpeSimulator::Event IpeSimulator::pop() {
  std::pop_heap(heap_.begin(), heap_.end(), [](const Event& x, const Event& y) {
    return x.time != y.time ? x.time > y.time : x.seq > y.seq;
  });
  const Event e = heap_.back();
  heap_.pop_back();
  return e;
}

CycleOutcome IpeSimulator::run(std::span<const std::uint64_t> prev_a, std::span<const std::uint64_t> prev_b,
                               std::span<const std::uint64_t> new_a, std::span<const std::uint64_t> new_b) {
  const unsigned c = net_.c();
  const std::size_t words = (c + 63) / 64;
  if (prev_a.size() < words || prev_b.size() < words || new_a.size() < words || new_b.size() < words) {
    throw ArgumentError("packed iPE inputs are shorter than C");
  }
  settle(prev_a, prev_b);
  projected_ = value_;
  const auto outputs = net_.outputs();
  unsigned initial = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    initial |= static_cast<unsigned>(value_[outputs[i]]) << i;
    out_events_[i].clear();
  }
  heap_.clear();
  seq_ = 0;
  for (unsigned i = 0; i < c; ++i) {
    const std::uint8_t va = input_bit(new_a, i);
    const std::uint8_t vb = input_bit(new_b, i);
    if (va != value_[i]) push({0, seq_++, static_cast<std::int32_t>(i), va});
    if (vb != value_[c + i]) push({0, seq_++, static_cast<std::int32_t>(c + i), vb});
  }

  const auto gates = net_.gates();
  std::int64_t last = 0;
  while (!heap_.empty()) {
    const std::int64_t t = heap_.front().time;
    ++epoch_;
    touched_.clear();
    while (!heap_.empty() && heap_.front().time == t) {
      const Event e = pop();
      if (value_[e.net] == e.value) continue;
      value_[e.net] = e.value;
      if (const auto bit = out_bit_of_net_[e.net]; bit >= 0) {
        out_events_[bit].push_back({static_cast<double>(t) / kTicksPerUnit, e.value != 0});
        last = std::max(last, t);
      }
      for (auto g : net_.fanout(e.net)) {
        if (stamp_[g] != epoch_) {
          stamp_[g] = epoch_;
          touched_.push_back(g);
        }
      }
    }
    std::sort(touched_.begin(), touched_.end());
    for (auto g : touched_) {
      const auto& gate = gates[g];
      const auto v = eval_gate(gate);
      if (v != projected_[gate.out]) {
        projected_[gate.out] = v;
        push({t + delay_ticks_[g], seq_++, gate.out, v});
      }
    }
  }

  CycleOutcome outcome;
  outcome.last_transition = static_cast<double>(last) / kTicksPerUnit;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    outcome.settled |= static_cast<unsigned>(value_[outputs[i]]) << i;
    const bool bit = sample_at((initial >> i) & 1u, out_events_[i], period_);
    outcome.sampled |= static_cast<unsigned>(bit) << i;
  }
  return outcome;
}

std::vector<std::uint64_t> pack_bits(std::span<const std::uint8_t> bits) {
  std::vector<std::uint64_t> words((bits.size() + 63) / 64, 0);
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] & 1u) words[i / 64] |= std::uint64_t{1} << (i % 64);
  }
  return words;
}

unsigned simulate_cycle(const IpeNetlist& net, const TimingConfig& cfg, std::span<const std::uint8_t> prev_a,
                        std::span<const std::uint8_t> prev_b, std::span<const std::uint8_t> new_a,
                        std::span<const std::uint8_t> new_b) {
  const std::size_t c = net.c();
  if (prev_a.size() != c || prev_b.size() != c || new_a.size() != c || new_b.size() != c) {
    throw ArgumentError("iPE input vectors must have length C");
  }
  IpeSimulator sim(net, cfg);
  return sim.run(pack_bits(prev_a), pack_bits(prev_b), pack_bits(new_a), pack_bits(new_b)).sampled;
}

void DensityInputs::next(std::span<std::uint64_t> a, std::span<std::uint64_t> b) {
  std::fill(a.begin(), a.end(), 0);
  std::fill(b.begin(), b.end(), 0);
  const double da = product_uniform_density(rng_);
  const double db = product_uniform_density(rng_);
  for (unsigned i = 0; i < c_; ++i) {
    if (rng_.bernoulli(da)) a[i / 64] |= std::uint64_t{1} << (i % 64);
    if (rng_.bernoulli(db)) b[i / 64] |= std::uint64_t{1} << (i % 64);
  }
}

GemmStreamInputs::GemmStreamInputs(unsigned c, int a_bits, int b_bits, std::uint64_t seed)
    : c_(c), a_bits_(a_bits), b_bits_(b_bits), rng_(seed), col_(c), row_(c) {
  GavSchedule::make(a_bits, b_bits, 0);
}

void GemmStreamInputs::refill() {
  fill_activation_vector(col_, a_bits_, product_uniform_density(rng_), rng_);
  const double d = product_uniform_density(rng_);
  fill_weight_vector(row_, b_bits_, d, rng_.bernoulli(0.5), rng_);
}

void GemmStreamInputs::next(std::span<std::uint64_t> a, std::span<std::uint64_t> b) {
  if (fresh_) {
    refill();
    fresh_ = false;
  }
  std::fill(a.begin(), a.end(), 0);
  std::fill(b.begin(), b.end(), 0);
  const std::uint32_t bmask = (1u << b_bits_) - 1u;
  for (unsigned i = 0; i < c_; ++i) {
    if ((static_cast<std::uint32_t>(col_[i]) >> ba_) & 1u) a[i / 64] |= std::uint64_t{1} << (i % 64);
    if (((static_cast<std::uint32_t>(row_[i]) & bmask) >> bb_) & 1u) b[i / 64] |= std::uint64_t{1} << (i % 64);
  }
  if (++bb_ == b_bits_) {
    bb_ = 0;
    if (++ba_ == a_bits_) {
      ba_ = 0;
      fresh_ = true;
    }
  }
}

ErrorTrace generate_traces(const IpeNetlist& net, const TimingConfig& cfg, InputGenerator& inputs,
                           std::size_t n_cycles) {
  if (n_cycles < 1) throw ArgumentError("trace generation needs at least one cycle");
  if (inputs.c() != net.c()) throw ConfigError("input generator width does not match the netlist");
  if (n_cycles > std::numeric_limits<std::uint32_t>::max()) throw ArgumentError("too many cycles for a trace file");
  IpeSimulator sim(net, cfg);
  const std::size_t words = (net.c() + 63) / 64;
  std::vector<std::uint64_t> pa(words, 0), pb(words, 0), na(words), nb(words);
  ErrorTrace trace;
  trace.c = net.c();
  trace.s_bits = static_cast<std::uint32_t>(net.s_bits());
  trace.records.reserve(n_cycles);
  unsigned prev_exact = 0;
  for (std::size_t i = 0; i < n_cycles; ++i) {
    inputs.next(na, nb);
    const auto out = sim.run(pa, pb, na, nb);
    trace.records.push_back({static_cast<std::uint16_t>(out.settled), static_cast<std::uint16_t>(prev_exact),
                             static_cast<std::uint16_t>(out.sampled)});
    prev_exact = out.settled;
    std::swap(pa, na);
    std::swap(pb, nb);
  }
  return trace;
}

std::vector<double> per_bit_error_rates(const ErrorTrace& trace) {
  std::vector<double> rates(trace.s_bits, 0.0);
  if (trace.records.empty()) return rates;
  for (const auto& r : trace.records) {
    const unsigned e = r.error_mask();
    for (std::uint32_t b = 0; b < trace.s_bits; ++b) rates[b] += (e >> b) & 1u;
  }
  for (auto& r : rates) r /= static_cast<double>(trace.records.size());
  return rates;
}

TimingConfig tune_delay_scale(const IpeNetlist& net, TimingConfig base,
                              const std::function<std::unique_ptr<InputGenerator>()>& make_inputs,
                              const StressTuning& tuning) {
  if (!(tuning.min_ber <= tuning.target_ber && tuning.target_ber <= tuning.max_ber && tuning.target_ber > 0)) {
    throw ArgumentError("target bit-error rate must lie inside its band");
  }
  auto ber_at = [&](double alpha) {
    TimingConfig cfg = base;
    cfg.delay_scale = alpha;
    auto inputs = make_inputs();
    return generate_traces(net, cfg, *inputs, tuning.probe_cycles).bit_error_rate();
  };
  double best_alpha = 0.0;
  double best_gap = std::numeric_limits<double>::infinity();
  auto consider = [&](double alpha, double ber) {
    if (ber < tuning.min_ber || ber > tuning.max_ber) return;
    const double gap = std::abs(std::log(ber / tuning.target_ber));
    if (gap < best_gap) {
      best_gap = gap;
      best_alpha = alpha;
    }
  };

  double lo = 1.0;
  double hi = 1.25;
  double ber_hi = ber_at(hi);
  consider(hi, ber_hi);
  while (ber_hi < tuning.target_ber) {
    lo = hi;
    hi *= 1.5;
    if (hi > 64.0) throw CalibrationError("no delay multiplier up to 64 reaches the target error rate");
    ber_hi = ber_at(hi);
    consider(hi, ber_hi);
  }
  for (int it = 0; it < tuning.max_iterations && best_gap > 0.02; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double ber = ber_at(mid);
    consider(mid, ber);
    (ber < tuning.target_ber ? lo : hi) = mid;
  }
  if (best_alpha == 0.0) {
    // Without jitter every path scales together, so the error rate is a staircase in alpha.
    throw CalibrationError("stress tuning could not land inside the target error-rate band"
                           " (a small per-gate jitter smooths the rate curve)");
  }
  base.delay_scale = best_alpha;
  return base;
}

OracleInjector::OracleInjector(const IpeNetlist& net, const TimingConfig& cfg, ErrorTrace* record)
    : sim_(net, cfg), record_(record) {
  if (record_) {
    record_->c = net.c();
    record_->s_bits = static_cast<std::uint32_t>(net.s_bits());
  }
}

unsigned OracleInjector::inject(const IpeCycle& cycle) {
  if (cycle.c != sim_.netlist().c()) throw ConfigError("oracle netlist width does not match the array's C");
  const auto out = sim_.run(cycle.prev_a, cycle.prev_b, cycle.a, cycle.b);
  if (record_) {
    record_->records.push_back({static_cast<std::uint16_t>(cycle.exact), static_cast<std::uint16_t>(cycle.prev_exact),
                                static_cast<std::uint16_t>(out.sampled)});
  }
  return out.sampled;
}

}  // namespace gav
