#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <random>
#include <regex>
#include <sstream>

#include "gav/allocator.hpp"
#include "gav/cli.hpp"
#include "gav/engine.hpp"
#include "gav/error.hpp"
#include "gav/tensor_io.hpp"
#include "oracles.hpp"

using namespace gav;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const fs::path& work() {
  static const fs::path dir = [] {
    const auto d = fs::temp_directory_path() / "gav_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string p(const std::string& name) { return (work() / name).string(); }

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& path, const std::string& text) { std::ofstream(path, std::ios::binary) << text; }

struct Run {
  int code = -1;
  std::string err;
};

Run run_gav(const std::string& args) {
  const char* bin = std::getenv("GAV_BIN");
  REQUIRE_MESSAGE(bin != nullptr, "GAV_BIN must point at the gav executable");
  const auto errf = work() / "stderr.txt";
  const std::string cmd = std::string(bin) + " " + args + " 2> " + errf.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(errf)};
}

// CSV text without its leading comment header.
std::string body(const std::string& csv) {
  return csv.rfind("#", 0) == 0 ? csv.substr(csv.find('\n') + 1) : csv;
}

std::vector<std::vector<std::string>> rows(const std::string& csv) {
  std::vector<std::vector<std::string>> out;
  std::istringstream in(body(csv));
  std::string line;
  std::getline(in, line);  // column names
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    out.push_back(cells);
  }
  return out;
}

json error_record(const Run& r) { return json::parse(r.err.substr(0, r.err.find('\n'))); }

LayerProfile prof(const std::string& id, std::uint64_t ops, std::map<int, double> mse) {
  LayerProfile l{id, ops, mse, {}};
  l.clean();
  return l;
}

const std::string kSweepArgs = "--zero-lut --precisions a2w2 a4w4 --dims 64 16 32 --seed 11 --seeds ";

}  // namespace

TEST_CASE("precision strings") {
  CHECK(parse_precision("a4w4") == std::pair{4, 4});
  CHECK(parse_precision("a2w8") == std::pair{2, 8});
  CHECK_THROWS_AS(parse_precision("a1w4"), ConfigError);
  CHECK_THROWS_AS(parse_precision("a4w9"), ConfigError);
  CHECK_THROWS_AS(parse_precision("a4w4x"), ConfigError);
  CHECK_THROWS_AS(parse_precision("4x4"), ConfigError);
}

TEST_CASE("config files merge under explicit flags") {
  spit(work() / "cfg.json", R"({"seed": 5, "precisions": ["a2w2", "a3w3"], "zero-lut": true, "verbose": false})");
  const std::vector<std::string> args{"gav", "sweep", "--seed", "9", "--config", p("cfg.json")};
  const auto m = merge_config_args(args);
  const std::vector<std::string> want{"gav", "sweep", "--seed", "9", "--config", p("cfg.json"),
                                      "--precisions", "a2w2", "a3w3", "--zero-lut"};
  CHECK(m == want);
  CHECK(merge_config_args({"gav", "sweep"}) == std::vector<std::string>{"gav", "sweep"});
  spit(work() / "bad.json", "[1, 2]");
  CHECK_THROWS_AS(merge_config_args({"gav", "--config", p("bad.json")}), ConfigError);
}

TEST_CASE("gemm subcommand agrees with the reference product") {
  std::mt19937_64 g(4);
  const IntMatrix a(40, 12, 4, Signedness::Unsigned, oracle::random_values(g, 40 * 12, 4, false));
  const IntMatrix b(20, 40, 4, Signedness::Signed, oracle::random_values(g, 20 * 40, 4, true));
  write_tensor(p("a.gvt"), to_tensor(a));
  write_tensor(p("b.gvt"), to_tensor(b));
  const auto r = run_gav("gemm --a " + p("a.gvt") + " --b " + p("b.gvt") + " --out " + p("p.gvt"));
  REQUIRE(r.code == 0);
  const auto out = to_matrix(read_tensor(p("p.gvt")));
  const auto ref = reference_matmul(a, b);
  REQUIRE(out.data().size() == ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(out.data()[i] == ref[i]);
  const auto stats = json::parse(slurp(p("p.gvt.stats.json")));
  CHECK(stats.contains("cycles"));
  CHECK(fs::exists(p("p.gvt.config.json")));

  // undervolted passes with no error model
  const auto bad = run_gav("gemm --a " + p("a.gvt") + " --b " + p("b.gvt") + " --G 0 --out " + p("q.gvt"));
  CHECK(bad.code == 2);
  CHECK(error_record(bad)["error"]["kind"] == "config");
  CHECK(error_record(bad)["error"]["command"] == "gemm");
}

TEST_CASE("usage errors") {
  CHECK(run_gav("").code == 2);
  CHECK(run_gav("sweep --zero-lut --out " + p("x.csv")).code == 2);  // --seed is required
  CHECK(run_gav("--help").code == 0);
  const auto r = run_gav("sweep --zero-lut --precisions a9w9 --seed 1 --out " + p("x.csv"));
  CHECK(r.code == 2);
  CHECK(error_record(r)["error"]["kind"] == "config");
}

TEST_CASE("zero-error sweep") {
  REQUIRE(run_gav("sweep " + kSweepArgs + "2 --out " + p("s1.csv")).code == 0);
  const auto text = slurp(p("s1.csv"));
  CHECK(std::regex_search(text, std::regex("^# gav-sweep v1 config_hash=[0-9a-f]{16}\n")));
  CHECK(body(text).rfind("precision,G,f,VAR_NED,mW,TOPs,TOPsW\n", 0) == 0);
  const auto rs = rows(text);
  CHECK(rs.size() == 4 + 8);
  bool seen = false;
  for (const auto& r : rs) {
    CHECK(std::stod(r[3]) == 0.0);
    if (r[0] == "a2w2" && r[1] == "0") {
      seen = true;
      CHECK(std::stod(r[6]) == doctest::Approx(89.32).epsilon(0.02));
    }
  }
  CHECK(seen);

  // reruns and thread counts reproduce the file; only --out differs so the hash matches too
  REQUIRE(run_gav("sweep " + kSweepArgs + "2 --threads 3 --out " + p("s2.csv")).code == 0);
  CHECK(slurp(p("s2.csv")) == text);
  REQUIRE(run_gav("sweep " + kSweepArgs + "3 --out " + p("s3.csv")).code == 0);
  CHECK(slurp(p("s3.csv")) != text);
}

TEST_CASE("config file reproduces explicit flags") {
  spit(work() / "sweep.json",
       R"({"zero-lut": true, "precisions": ["a2w2", "a4w4"], "dims": [64, 16, 32], "seeds": 2, "seed": 11})");
  REQUIRE(run_gav("sweep --config " + p("sweep.json") + " --out " + p("s4.csv")).code == 0);
  REQUIRE(run_gav("sweep " + kSweepArgs + "2 --out " + p("s5.csv")).code == 0);
  CHECK(slurp(p("s4.csv")) == slurp(p("s5.csv")));
  const auto snap = json::parse(slurp(p("s4.csv.config.json")));
  CHECK(snap["seed"] == "11");
  CHECK(snap["config_hash"].get<std::string>().size() == 16);
}

TEST_CASE("allocate toy problem and infeasible budget") {
  spit(work() / "toy.json",
       profiles_to_json({prof("L1", 10, {{0, 100}, {2, 1}}), prof("L2", 10, {{0, 4}, {2, 1}})}, {0, 2}, 4, 4));
  REQUIRE(run_gav("allocate --profiles " + p("toy.json") + " --g-target 1 --out " + p("plan.json")).code == 0);
  const auto plan = json::parse(slurp(p("plan.json")));
  CHECK(plan["format"] == "gav-plan");
  REQUIRE(plan["layers"].size() == 2);
  CHECK(plan["layers"][0]["id"] == "L1");
  CHECK(plan["layers"][0]["G"] == 2);
  CHECK(plan["layers"][1]["G"] == 0);
  CHECK(plan["objective"].get<double>() == 5.0);

  spit(work() / "tight.json", profiles_to_json({prof("L1", 10, {{2, 1}, {4, 0}})}, {2, 4}, 4, 4));
  const auto r = run_gav("allocate --profiles " + p("tight.json") + " --g-target 1 --out " + p("none.json"));
  CHECK(r.code == 3);
  CHECK(error_record(r)["error"]["kind"] == "infeasible");
  CHECK_FALSE(fs::exists(p("none.json")));
}

TEST_CASE("guarded inference reports no saving") {
  REQUIRE(run_gav("infer --G -1 --limit 20 --seed 1 --name g --out " + p("inf.csv")).code == 0);
  const auto rs = rows(slurp(p("inf.csv")));
  REQUIRE(rs.size() == 1);
  CHECK(rs[0][0] == "g");
  CHECK(rs[0][1] == "7");
  CHECK(std::stod(rs[0][5]) == 0.0);
  CHECK(rs[0][6] == "20");
  CHECK(rows(slurp(p("inf.csv.predictions.csv"))).size() == 20);
  // approximate passes need an error model
  CHECK(run_gav("infer --G 3 --limit 2 --seed 1 --out " + p("inf2.csv")).code == 2);
}

TEST_CASE("report matches the golden Pareto table") {
  const std::string head = "# gav-infer v1 config_hash=0000000000000000\n"
                           "name,weighted_G,accuracy,energy_j,guarded_energy_j,energy_saving,images\n";
  spit(work() / "r1.csv", head + "guarded,7,0.97,1e-06,1e-06,0,100\n");
  spit(work() / "r2.csv", head + "u4,4,0.95,8e-07,1e-06,0.2,100\nmix,4.5,0.96,8.5e-07,1e-06,0.15,100\n"
                                 "bad,3,0.9,9e-07,1e-06,0.1,100\n");
  REQUIRE(run_gav("report --inputs " + p("r1.csv") + " " + p("r2.csv") + " --out " + p("rep.csv")).code == 0);
  const auto text = slurp(p("rep.csv"));
  CHECK(std::regex_search(text, std::regex("^# gav-report v1 config_hash=[0-9a-f]{16}\n")));
  CHECK(body(text) == slurp(fs::path(GAV_TEST_DIR) / "golden" / "report_pareto.csv"));

  spit(work() / "junk.csv", "a,b\n1,2\n");
  const auto r = run_gav("report --inputs " + p("junk.csv") + " --out " + p("rep2.csv"));
  CHECK(r.code == 2);
}
