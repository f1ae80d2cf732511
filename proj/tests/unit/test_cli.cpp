#include "stochlq/cli.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("stochlq_cli_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string scenario(const std::string& name) {
  return std::string(STOCHLQ_SCENARIO_DIR) + "/" + name + ".json";
}

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "stochlq");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = stochlq::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST(Cli, VerifyScalarBenchmarkPasses) {
  const fs::path out = scratch("verify");
  const Result r = run({"verify", scenario("scalar_finite"), "--out", out.string(), "--json"});
  EXPECT_EQ(r.code, 0) << r.err;
  const auto doc = nlohmann::json::parse(r.out);
  EXPECT_TRUE(doc["result"]["pass"].get<bool>());
  EXPECT_TRUE(fs::exists(out / "manifest.json"));
}

TEST(Cli, NegativeSExitsTwoNamingTheKey) {
  const Result r = run({"validate", scenario("negative_s"), "--out", scratch("neg").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("model.S"), std::string::npos) << r.err;
}

TEST(Cli, MalformedConfigExitsTwo) {
  const fs::path dir = scratch("malformed");
  fs::create_directories(dir);
  std::ofstream(dir / "bad.json") << "{\"dims\": {\"n\": 1, \"k\": 1, \"d\": 1},\n \"model\": [";
  const Result r = run({"validate", (dir / "bad.json").string(), "--out", dir.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("line"), std::string::npos) << r.err;
}

TEST(Cli, UnstableWithoutOverrideExitsThree) {
  const Result r = run({"riccati-infinite", scenario("unstable_uncontrolled"), "--out",
                        scratch("unstable").string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("NotStabilizable"), std::string::npos);
}

TEST(Cli, ToleranceBreachExitsFour) {
  // the implicit law is not exactly optimal for the lattice problem, so the
  // DP comparison at a 1e-12 tolerance must fail
  const fs::path dir = scratch("breach");
  fs::create_directories(dir);
  auto doc = nlohmann::json::parse(slurp(scenario("scalar_finite")));
  doc["tolerances"] = {{"dp", 1e-12}};
  doc["lattice"]["scheme"] = "implicit";
  std::ofstream(dir / "s.json") << doc.dump();
  const Result r = run({"verify", (dir / "s.json").string(), "--out", dir.string()});
  EXPECT_EQ(r.code, 4);
}

TEST(Cli, OutputDirectoryFromEnvironment) {
  const fs::path dir = scratch("env");
  ::setenv("STOCHLQ_OUT_DIR", dir.string().c_str(), 1);
  const Result r = run({"riccati-finite", scenario("matrix_2x2")});
  ::unsetenv("STOCHLQ_OUT_DIR");
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "riccati.csv"));
  EXPECT_TRUE(fs::exists(dir / "summary.json"));
}

TEST(Cli, SummariesReproduceAcrossWorkers) {
  std::vector<std::string> summaries;
  for (const char* w : {"1", "3"}) {
    const fs::path out = scratch(std::string("repro") + w);
    const Result r = run({"simulate", scenario("factor_scalar"), "--policy", "feedback", "--paths",
                          "500", "--seed", "17", "--workers", w, "--out", out.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    summaries.push_back(slurp(out / "summary.json"));
  }
  EXPECT_EQ(summaries[0], summaries[1]);
}

TEST(Cli, ErgodicWritesTable) {
  const fs::path out = scratch("ergodic");
  const Result r = run({"ergodic", scenario("ergodic_persistent"), "--alphas", "0.4,0.2,0.1",
                        "--out", out.string(), "--json"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto doc = nlohmann::json::parse(r.out);
  EXPECT_EQ(doc["result"]["report"]["rows"].size(), 3u);
  EXPECT_TRUE(fs::exists(out / "ergodic.csv"));
}

TEST(Cli, UnknownSubcommandIsUsageError) {
  EXPECT_EQ(run({"frobnicate"}).code, 2);
}
