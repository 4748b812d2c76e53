#include <doctest.h>

#include <random>

#include "gav/allocator.hpp"
#include "gav/error.hpp"
#include "oracles.hpp"

using namespace gav;

namespace {

LayerProfile profile(const std::string& id, std::uint64_t ops, std::map<int, double> mse) {
  LayerProfile p{id, ops, mse, {}};
  p.clean();
  return p;
}

struct Instance {
  AllocationProblem problem;
  std::vector<std::uint64_t> ops;
  std::vector<std::map<int, double>> mse;
};

Instance random_instance(std::mt19937_64& g) {
  Instance in;
  const std::size_t layers = 1 + g() % 6;
  const std::size_t ncand = 1 + g() % 5;
  std::vector<int> cands;
  int v = static_cast<int>(g() % 3);
  for (std::size_t i = 0; i < ncand; ++i) {
    cands.push_back(v);
    v += 1 + static_cast<int>(g() % 3);
  }
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (std::size_t l = 0; l < layers; ++l) {
    const std::uint64_t ops = 1 + g() % 100000;
    std::map<int, double> m;
    double cur = u(g) + 1;
    for (auto it = cands.begin(); it != cands.end(); ++it) {
      m[*it] = cur;
      cur *= (g() % 4 == 0) ? 1.0 : u(g) / 10.0;  // ties appear now and then
    }
    // quantize values so equal objectives actually occur
    for (auto& [k, x] : m) x = std::round(x * 4) / 4;
    auto p = profile("l" + std::to_string(l), ops, m);
    in.ops.push_back(ops);
    in.mse.push_back(p.mse_by_g);
    in.problem.profiles.push_back(p);
  }
  in.problem.g_candidates = cands;
  // budget between the smallest and the largest candidate, as a reduced fraction
  const std::int64_t den = 1 + static_cast<std::int64_t>(g() % 12);
  const std::int64_t num = cands.front() * den + static_cast<std::int64_t>(g() % ((cands.back() - cands.front()) * den + 1));
  in.problem.g_target = Rational::make(num, den);
  return in;
}

}  // namespace

TEST_CASE("rational parsing") {
  CHECK(Rational::parse("3") == Rational::make(3, 1));
  CHECK(Rational::parse("0.75") == Rational::make(3, 4));
  CHECK(Rational::parse("9/2") == Rational::make(9, 2));
  CHECK(Rational::make(6, 4) == Rational{3, 2});
  CHECK(Rational::make(6, 4).str() == "3/2");
  CHECK(Rational::parse("4.50").str() == "9/2");
  CHECK_THROWS_AS(Rational::parse("x"), ArgumentError);
  CHECK_THROWS_AS(Rational::parse("1/0"), ArgumentError);
  CHECK_THROWS_AS(Rational::parse("-1"), ArgumentError);
}

TEST_CASE("isotonic clean-up") {
  CHECK(isotonic_nonincreasing({5, 3, 4, 1}) == std::vector<double>{5, 3.5, 3.5, 1});
  CHECK(isotonic_nonincreasing({1, 2, 3}) == std::vector<double>{2, 2, 2});
  CHECK(isotonic_nonincreasing({3, 2, 1}) == std::vector<double>{3, 2, 1});
  const auto p = profile("x", 1, {{0, 1.0}, {1, 2.0}, {2, 0.0}});
  CHECK(p.mse_raw.at(1) == 2.0);
  CHECK(p.mse_by_g.at(0) == 1.5);
  CHECK(p.mse_by_g.at(1) == 1.5);
  CHECK(p.mse_by_g.at(2) == 0.0);
}

TEST_CASE("two-layer toy problem") {
  AllocationProblem pr;
  pr.profiles = {profile("L1", 10, {{0, 100}, {2, 1}}), profile("L2", 10, {{0, 4}, {2, 1}})};
  pr.g_candidates = {0, 2};
  pr.g_target = Rational::make(1, 1);
  const auto a = solve_allocation(pr);
  CHECK(a.g == std::vector<int>{2, 0});
  CHECK(a.objective == 5.0);
  CHECK(a.weighted_average == Rational::make(1, 1));

  pr.g_target = Rational::make(2, 1);
  const auto free = solve_allocation(pr);
  CHECK(free.g == std::vector<int>{2, 2});
  CHECK(free.objective == 2.0);
}

TEST_CASE("budget at or above the largest candidate guards every layer") {
  AllocationProblem pr;
  pr.profiles = {profile("a", 3, {{0, 9}, {3, 2}, {7, 0}}), profile("b", 5, {{0, 4}, {3, 1}, {7, 0}})};
  pr.g_candidates = {0, 3, 7};
  for (auto t : {Rational::make(7, 1), Rational::make(9, 1)}) {
    pr.g_target = t;
    const auto a = solve_allocation(pr);
    CHECK(a.g == std::vector<int>{7, 7});
    CHECK(a.objective == 0.0);
  }
}

TEST_CASE("infeasible and malformed problems") {
  AllocationProblem pr;
  pr.profiles = {profile("a", 3, {{2, 1}, {4, 0}})};
  pr.g_candidates = {2, 4};
  pr.g_target = Rational::make(1, 1);
  CHECK_THROWS_AS(solve_allocation(pr), InfeasibleError);
  pr.g_target = Rational::make(2, 1);  // boundary is feasible (<=)
  CHECK(solve_allocation(pr).g == std::vector<int>{2});
  pr.g_candidates = {4, 2};
  CHECK_THROWS_AS(solve_allocation(pr), ArgumentError);
  pr.g_candidates = {2, 3};  // no profile value at 3
  CHECK_THROWS_AS(solve_allocation(pr), ArgumentError);
  pr.g_candidates = {2, 4};
  pr.profiles.clear();
  CHECK_THROWS_AS(solve_allocation(pr), ArgumentError);
}

TEST_CASE("exact budget arithmetic") {
  // 1/3 of the ops at G=1 and 2/3 at G=0 averages to exactly 1/3.
  const std::vector<LayerProfile> ps{profile("a", 1, {{0, 1}, {1, 0}}), profile("b", 2, {{0, 1}, {1, 0}})};
  CHECK(weighted_average(ps, {1, 0}) == Rational::make(1, 3));
  CHECK(within_budget(ps, {1, 0}, Rational::make(1, 3)));
  CHECK_FALSE(within_budget(ps, {1, 0}, Rational::make(333333, 1000000)));
  // large op counts do not overflow the comparison
  const std::vector<LayerProfile> big{profile("a", 4'000'000'000'000ULL, {{0, 1}, {15, 0}}),
                                      profile("b", 3'000'000'000'000ULL, {{0, 1}, {15, 0}})};
  CHECK(within_budget(big, {15, 0}, Rational::make(60, 7)));
  CHECK_FALSE(within_budget(big, {15, 0}, Rational::make(59, 7)));
}

TEST_CASE("branch and bound equals exhaustive search") {
  std::mt19937_64 g(2024);
  for (int t = 0; t < 300; ++t) {
    const auto in = random_instance(g);
    const auto ex = oracle::allocate(in.ops, in.mse, in.problem.g_candidates, in.problem.g_target.num,
                                     in.problem.g_target.den);
    REQUIRE(ex.feasible);
    const auto a = solve_allocation(in.problem);
    CHECK(a.objective == doctest::Approx(ex.objective).epsilon(1e-12));
    CHECK(a.g == ex.g);  // same tie-break: lexicographically largest
    CHECK(within_budget(in.problem.profiles, a.g, in.problem.g_target));
  }
}

TEST_CASE("objective is non-increasing as the budget relaxes") {
  std::mt19937_64 g(77);
  for (int t = 0; t < 50; ++t) {
    auto in = random_instance(g);
    const auto& c = in.problem.g_candidates;
    double prev = 1e300;
    for (std::int64_t num = c.front() * 4; num <= c.back() * 4; ++num) {
      in.problem.g_target = Rational::make(num, 4);
      const double obj = solve_allocation(in.problem).objective;
      CHECK(obj <= prev + 1e-12);
      prev = obj;
    }
  }
}

TEST_CASE("profile file round trip") {
  const std::vector<LayerProfile> ps{profile("conv1", 12800, {{0, 3.5}, {1, 4.0}, {2, 0.0}}),
                                     profile("fc", 640, {{0, 1.0}, {1, 0.5}, {2, 0.0}})};
  const auto back = profiles_from_json(profiles_to_json(ps, {0, 1, 2}, 4, 4));
  CHECK(back.a_bits == 4);
  CHECK(back.g_candidates == std::vector<int>{0, 1, 2});
  REQUIRE(back.profiles.size() == 2);
  CHECK(back.profiles[0].id == "conv1");
  CHECK(back.profiles[0].ops == 12800);
  CHECK(back.profiles[0].mse_raw == ps[0].mse_raw);
  CHECK(back.profiles[0].mse_by_g == ps[0].mse_by_g);
  CHECK_THROWS_AS(profiles_from_json("{}"), ConfigError);
}
