#include "gav/allocator.hpp"

#include <algorithm>
#include <cctype>
#include <json.hpp>
#include <limits>
#include <numeric>

#include "gav/error.hpp"

namespace gav {

namespace {

using i128 = __int128;

std::int64_t parse_digits(const std::string& s, const std::string& whole) {
  if (s.empty() || s.size() > 17 || !std::all_of(s.begin(), s.end(), [](unsigned char ch) { return std::isdigit(ch); })) {
    throw ArgumentError("cannot parse '" + whole + "' as a non-negative rational");
  }
  return std::stoll(s);
}

}  // namespace

Rational Rational::make(std::int64_t num, std::int64_t den) {
  if (den <= 0 || num < 0) throw ArgumentError("rational needs a non-negative numerator and positive denominator");
  const auto g = std::gcd(num, den);
  return {num / g, den / g};
}

Rational Rational::parse(const std::string& text) {
  if (const auto slash = text.find('/'); slash != std::string::npos) {
    return make(parse_digits(text.substr(0, slash), text), parse_digits(text.substr(slash + 1), text));
  }
  if (const auto dot = text.find('.'); dot != std::string::npos) {
    const std::string ip = text.substr(0, dot);
    const std::string fp = text.substr(dot + 1);
    if (fp.empty() || fp.size() > 12) throw ArgumentError("cannot parse '" + text + "' as a non-negative rational");
    std::int64_t den = 1;
    for (std::size_t i = 0; i < fp.size(); ++i) den *= 10;
    const std::int64_t whole = ip.empty() ? 0 : parse_digits(ip, text);
    if (whole > std::numeric_limits<std::int64_t>::max() / den - 1) throw ArgumentError("rational '" + text + "' too large");
    return make(whole * den + parse_digits(fp, text), den);
  }
  return make(parse_digits(text, text), 1);
}

std::string Rational::str() const { return den == 1 ? std::to_string(num) : std::to_string(num) + "/" + std::to_string(den); }

std::vector<double> isotonic_nonincreasing(const std::vector<double>& values) {
  struct Block {
    double sum;
    std::size_t n;
  };
  std::vector<Block> blocks;
  for (double v : values) {
    blocks.push_back({v, 1});
    // Non-increasing fit: merge while a later block's mean exceeds the earlier one's.
    while (blocks.size() > 1) {
      const auto& b = blocks[blocks.size() - 1];
      const auto& a = blocks[blocks.size() - 2];
      if (b.sum * static_cast<double>(a.n) <= a.sum * static_cast<double>(b.n)) break;
      blocks[blocks.size() - 2] = {a.sum + b.sum, a.n + b.n};
      blocks.pop_back();
    }
  }
  std::vector<double> out;
  out.reserve(values.size());
  for (const auto& b : blocks) out.insert(out.end(), b.n, b.sum / static_cast<double>(b.n));
  return out;
}

void LayerProfile::clean() {
  std::vector<double> raw;
  raw.reserve(mse_raw.size());
  for (const auto& [g, v] : mse_raw) raw.push_back(v);
  const auto fit = isotonic_nonincreasing(raw);
  mse_by_g.clear();
  std::size_t i = 0;
  for (const auto& [g, v] : mse_raw) mse_by_g[g] = fit[i++];
}

void AllocationProblem::validate() const {
  if (profiles.empty()) throw ArgumentError("allocation needs at least one layer");
  if (g_candidates.empty()) throw ArgumentError("allocation needs at least one G candidate");
  if (!std::is_sorted(g_candidates.begin(), g_candidates.end()) ||
      std::adjacent_find(g_candidates.begin(), g_candidates.end()) != g_candidates.end() || g_candidates.front() < 0) {
    throw ArgumentError("G candidates must be distinct, non-negative and ascending");
  }
  if (g_target.den <= 0 || g_target.num < 0) throw ArgumentError("G target must be a non-negative rational");
  for (const auto& p : profiles) {
    if (p.ops == 0) throw ArgumentError("layer '" + p.id + "' has zero operations");
    for (int g : g_candidates) {
      if (!p.mse_by_g.contains(g)) {
        throw ArgumentError("layer '" + p.id + "' has no MSE for G=" + std::to_string(g));
      }
    }
  }
}

Rational weighted_average(const std::vector<LayerProfile>& profiles, const std::vector<int>& g) {
  if (g.size() != profiles.size()) throw ArgumentError("assignment length does not match the layer count");
  i128 num = 0;
  i128 den = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    num += static_cast<i128>(profiles[i].ops) * g[i];
    den += profiles[i].ops;
  }
  if (den == 0) throw ArgumentError("layers have no operations");
  i128 a = num, b = den;
  while (b != 0) {
    const i128 t = a % b;
    a = b;
    b = t;
  }
  const i128 gcd = a == 0 ? 1 : a;
  num /= gcd;
  den /= gcd;
  if (num > std::numeric_limits<std::int64_t>::max() || den > std::numeric_limits<std::int64_t>::max()) {
    throw OverflowError("weighted average does not fit a 64-bit fraction");
  }
  return {static_cast<std::int64_t>(num), static_cast<std::int64_t>(den)};
}

bool within_budget(const std::vector<LayerProfile>& profiles, const std::vector<int>& g, const Rational& target) {
  if (g.size() != profiles.size()) throw ArgumentError("assignment length does not match the layer count");
  i128 used = 0;
  i128 total = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    used += static_cast<i128>(profiles[i].ops) * g[i];
    total += profiles[i].ops;
  }
  return used * target.den <= static_cast<i128>(target.num) * total;
}

namespace {

class BranchAndBound {
 public:
  explicit BranchAndBound(const AllocationProblem& p) : p_(p), n_(p.profiles.size()) {
    const auto& cand = p.g_candidates;
    gmin_ = cand.front();
    i128 total = 0;
    for (const auto& l : p.profiles) total += l.ops;
    // Work in units of 1/den: budget_ = num * total, each layer spends den * ops * G.
    budget_ = static_cast<i128>(p.g_target.num) * total;
    weight_.resize(n_);
    cost_.assign(n_, std::vector<double>(cand.size()));
    for (std::size_t i = 0; i < n_; ++i) {
      weight_[i] = static_cast<i128>(p.profiles[i].ops) * p.g_target.den;
      for (std::size_t j = 0; j < cand.size(); ++j) cost_[i][j] = p.profiles[i].mse_by_g.at(cand[j]);
    }
    min_tail_.assign(n_ + 1, 0);
    for (std::size_t i = n_; i-- > 0;) min_tail_[i] = min_tail_[i + 1] + weight_[i] * gmin_;
    current_.assign(n_, 0);
  }

  Allocation run() {
    if (min_tail_[0] > budget_) {
      throw InfeasibleError("G target " + p_.g_target.str() + " is below the smallest candidate " +
                            std::to_string(gmin_));
    }
    dfs(0, 0, 0.0);
    Allocation out;
    out.g.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) out.g[i] = p_.g_candidates[best_[i]];
    out.objective = best_cost_;
    out.weighted_average = weighted_average(p_.profiles, out.g);
    out.nodes = nodes_;
    return out;
  }

 private:
  // Each remaining layer's cheapest candidate that fits if all other remaining layers take gmin.
  double bound(std::size_t from, i128 used) const {
    const i128 slack = budget_ - used - min_tail_[from];
    double b = 0.0;
    for (std::size_t i = from; i < n_; ++i) {
      double m = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < p_.g_candidates.size(); ++j) {
        if (weight_[i] * (p_.g_candidates[j] - gmin_) <= slack) m = std::min(m, cost_[i][j]);
      }
      b += m;
    }
    return b;
  }

  void dfs(std::size_t layer, i128 used, double cost) {
    ++nodes_;
    if (layer == n_) {
      if (cost < best_cost_) {
        best_cost_ = cost;
        best_ = current_;
      }
      return;
    }
    const double lower = cost + bound(layer, used);
    if (lower > best_cost_ + 1e-12 * std::abs(best_cost_)) return;
    for (std::size_t j = p_.g_candidates.size(); j-- > 0;) {
      const i128 spend = used + weight_[layer] * p_.g_candidates[j];
      if (spend + min_tail_[layer + 1] > budget_) continue;
      current_[layer] = j;
      dfs(layer + 1, spend, cost + cost_[layer][j]);
    }
  }

  const AllocationProblem& p_;
  std::size_t n_;
  int gmin_ = 0;
  i128 budget_ = 0;
  std::vector<i128> weight_;
  std::vector<std::vector<double>> cost_;
  std::vector<i128> min_tail_;
  std::vector<std::size_t> current_;
  std::vector<std::size_t> best_;
  double best_cost_ = std::numeric_limits<double>::infinity();
  std::uint64_t nodes_ = 0;
};

}  // namespace

Allocation solve_allocation(const AllocationProblem& problem) {
  problem.validate();
  return BranchAndBound(problem).run();
}

std::string profiles_to_json(const std::vector<LayerProfile>& profiles, const std::vector<int>& g_candidates,
                             int a_bits, int b_bits) {
  nlohmann::json j;
  j["format"] = "gav-profiles";
  j["version"] = 1;
  j["a_bits"] = a_bits;
  j["b_bits"] = b_bits;
  j["g_candidates"] = g_candidates;
  auto& layers = j["layers"] = nlohmann::json::array();
  for (const auto& p : profiles) {
    nlohmann::json raw = nlohmann::json::array(), clean = nlohmann::json::array();
    for (int g : g_candidates) {
      raw.push_back(p.mse_raw.at(g));
      clean.push_back(p.mse_by_g.at(g));
    }
    layers.push_back({{"id", p.id}, {"ops", p.ops}, {"mse_raw", raw}, {"mse", clean}});
  }
  return j.dump(1);
}

ProfileSet profiles_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "gav-profiles" || j.at("version") != 1) throw ConfigError("not a version-1 gav-profiles file");
    ProfileSet s;
    s.a_bits = j.at("a_bits").get<int>();
    s.b_bits = j.at("b_bits").get<int>();
    s.g_candidates = j.at("g_candidates").get<std::vector<int>>();
    for (const auto& l : j.at("layers")) {
      LayerProfile p;
      p.id = l.at("id").get<std::string>();
      p.ops = l.at("ops").get<std::uint64_t>();
      const auto raw = l.at("mse_raw").get<std::vector<double>>();
      if (raw.size() != s.g_candidates.size()) throw ConfigError("layer '" + p.id + "' MSE list length mismatch");
      for (std::size_t i = 0; i < raw.size(); ++i) p.mse_raw[s.g_candidates[i]] = raw[i];
      if (l.contains("mse")) {
        const auto clean = l.at("mse").get<std::vector<double>>();
        if (clean.size() != raw.size()) throw ConfigError("layer '" + p.id + "' MSE list length mismatch");
        for (std::size_t i = 0; i < clean.size(); ++i) p.mse_by_g[s.g_candidates[i]] = clean[i];
      } else {
        p.clean();
      }
      s.profiles.push_back(std::move(p));
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed profile file: ") + e.what());
  }
}

}  // namespace gav
