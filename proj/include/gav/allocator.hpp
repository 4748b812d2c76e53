#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace gav {

/// Non-negative exact fraction, kept reduced.
struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  static Rational make(std::int64_t num, std::int64_t den);
  /// Accepts "3", "0.75" or "3/4".
  static Rational parse(const std::string& text);
  double to_double() const noexcept { return static_cast<double>(num) / static_cast<double>(den); }
  std::string str() const;
  bool operator==(const Rational&) const = default;
};

/// Pool-adjacent-violators fit of a non-increasing sequence (least squares, equal weights).
std::vector<double> isotonic_nonincreasing(const std::vector<double>& values);

struct LayerProfile {
  std::string id;
  std::uint64_t ops = 0;  // MACs per inference
  std::map<int, double> mse_raw;
  std::map<int, double> mse_by_g;  // isotonic in G

  /// Refreshes mse_by_g from mse_raw.
  void clean();
};

struct AllocationProblem {
  std::vector<LayerProfile> profiles;
  std::vector<int> g_candidates;  // ascending
  Rational g_target;

  void validate() const;
};

struct Allocation {
  std::vector<int> g;  // one entry per profile, same order
  double objective = 0.0;
  Rational weighted_average;
  std::uint64_t nodes = 0;  // search nodes expanded
};

/// True when sum(ops_l * G_l) <= target * sum(ops_l), evaluated exactly.
bool within_budget(const std::vector<LayerProfile>& profiles, const std::vector<int>& g, const Rational& target);
Rational weighted_average(const std::vector<LayerProfile>& profiles, const std::vector<int>& g);

/// Exact minimum of sum_l mse_by_g[l][G_l] under the weighted-average budget.
/// Depth-first branch and bound over layers in order, candidates tried from the largest G,
/// so among equal objectives the lexicographically largest assignment wins.
/// Throws InfeasibleError when even the smallest candidate everywhere exceeds the budget.
Allocation solve_allocation(const AllocationProblem& problem);

std::string profiles_to_json(const std::vector<LayerProfile>& profiles, const std::vector<int>& g_candidates,
                             int a_bits, int b_bits);
struct ProfileSet {
  std::vector<LayerProfile> profiles;
  std::vector<int> g_candidates;
  int a_bits = 0;
  int b_bits = 0;
};
ProfileSet profiles_from_json(const std::string& text);

}  // namespace gav
