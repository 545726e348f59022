#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "nisim/serialization.hpp"

using namespace nisim;
using nisim::io::json;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("nisim_cli_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                        "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string file(const std::string& name, const std::string& text) {
    const auto p = (dir_ / name).string();
    std::ofstream(p) << text;
    return p;
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string triple_point() {
    return file("tp.json", R"({"alphabet_x": 2, "alphabet_y": 2,
      "mass": [[0.3333333333333333, 0.3333333333333333], [0.3333333333333334, 0.0]]})");
  }
  std::string uniform_target() { return file("u.json", "[[0.25, 0.25], [0.25, 0.25]]"); }
  std::string copy_target() { return file("copy.json", "[[0.5, 0.0], [0.0, 0.5]]"); }

  fs::path dir_;
};

json error_json(const Result& r) {
  EXPECT_FALSE(r.err.empty());
  const auto j = json::parse(r.err);
  EXPECT_TRUE(j.contains("code"));
  EXPECT_TRUE(j.contains("message"));
  EXPECT_TRUE(j.contains("context"));
  return j;
}

}  // namespace

TEST_F(CliTest, MaxcorrOfTriplePoint) {
  const auto r = invoke({"maxcorr", triple_point()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NEAR(json::parse(r.out)["rho_m"].get<double>(), 0.5, 1e-10);
}

TEST_F(CliTest, BorellBoundsUnderIndependence) {
  const auto r = invoke({"borell-bounds", "--a", "0.5", "--b", "0.5", "--rho", "0"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  EXPECT_EQ(j["c_lo"].get<double>(), 0.25);
  EXPECT_EQ(j["c_hi"].get<double>(), 0.25);
}

TEST_F(CliTest, EpsilonAtLeastRhoIsUsageError) {
  const auto r = invoke({"decide-gaussian", uniform_target(), "--rho", "0.3", "--epsilon", "0.3"});
  EXPECT_EQ(r.code, 64);
  const auto j = error_json(r);
  EXPECT_EQ(j["code"], "usage");
  EXPECT_NE(j["message"].get<std::string>().find("0<ε<|ρ|"), std::string::npos);
  EXPECT_TRUE(r.out.empty());
}

TEST_F(CliTest, VerdictExitCodes) {
  const auto ok = invoke({"decide-gaussian", uniform_target(), "--rho", "0.5", "--epsilon", "0.1", "--dim", "1"});
  EXPECT_EQ(ok.code, 0) << ok.err;
  EXPECT_EQ(json::parse(ok.out)["verdict"], "SIMULATABLE");

  const std::vector<std::string> copy = {"decide-gaussian", copy_target(), "--rho", "0.1", "--epsilon", "0.02",
                                         "--dim", "1", "--grid-cells", "1", "--net-epsilon", "1.0"};
  const auto no = invoke(copy);
  EXPECT_EQ(no.code, 1) << no.err;
  EXPECT_EQ(json::parse(no.out)["verdict"], "NOT-SIMULATABLE-AT-RESOLUTION");

  const auto maybe = invoke({"decide-gaussian", copy_target(), "--rho", "0.1", "--epsilon", "0.02", "--dim", "1",
                             "--grid-cells", "4", "--budget", "500"});
  EXPECT_EQ(maybe.code, 2) << maybe.err;
  EXPECT_EQ(json::parse(maybe.out)["verdict"], "INDETERMINATE");
}

TEST_F(CliTest, DataErrors) {
  const auto bad = file("bad.json", "{oops");
  const auto r1 = invoke({"maxcorr", bad});
  EXPECT_EQ(r1.code, 65);
  EXPECT_EQ(error_json(r1)["code"], "data_format");

  const auto r2 = invoke({"maxcorr", path("missing.json")});
  EXPECT_EQ(r2.code, 65);

  const auto notstochastic = file("ns.json", "[[0.5, 0.5], [0.5, 0.5]]");
  const auto r3 = invoke({"decide-gaussian", notstochastic, "--rho", "0.5", "--epsilon", "0.1"});
  EXPECT_EQ(r3.code, 65);
  EXPECT_NE(error_json(r3)["context"].get<std::string>().find("ns.json"), std::string::npos);

  const auto r4 = invoke({"decide-gaussian", uniform_target(), "--rho", "0.5", "--epsilon", "0.1", "--m", "3"});
  EXPECT_EQ(r4.code, 65);
}

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(invoke({}).code, 64);
  EXPECT_EQ(invoke({"frobnicate"}).code, 64);
  EXPECT_EQ(invoke({"borell-bounds", "--a", "0.5"}).code, 64);
  EXPECT_EQ(invoke({"borell-bounds", "--a", "0.5", "--b", "0.5", "--rho", "1.5"}).code, 64);
  EXPECT_EQ(invoke({"decide-gaussian", uniform_target(), "--rho", "0.5", "--budget", "-3"}).code, 64);
  EXPECT_EQ(invoke({"borell-bounds", "--a", "0", "--b", "0.5", "--rho", "0.2"}).code, 64);
  EXPECT_EQ(invoke({"maxcorr"}).code, 64);
  const auto h = invoke({"--help"});
  EXPECT_EQ(h.code, 0);
  EXPECT_NE(h.out.find("decide-gaussian"), std::string::npos);
}

TEST_F(CliTest, DecisionRoundTrip) {
  const auto r = invoke({"decide-gaussian", uniform_target(), "--rho", "0.5", "--epsilon", "0.1", "--dim", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  EXPECT_EQ(j["config"]["rho"].get<double>(), 0.5);
  const auto d = io::from_json<Decision>(j);
  EXPECT_EQ(io::dump(io::to_json(d, j["config"])), r.out);
}

TEST_F(CliTest, EmittedObjectsRoundTrip) {
  const auto rp = invoke({"reduction-params", triple_point(), "--epsilon", "0.1"});
  ASSERT_EQ(rp.code, 0) << rp.err;
  EXPECT_EQ(io::dump(io::to_json(io::from_json<ReductionParams>(json::parse(rp.out)))), rp.out);

  const auto f = file("f.json", io::dump(io::to_json(CellFunction::from_labels(CellGrid(1, 4.0, 2), 2,
                                                                            std::vector<int>{0, 0, 1, 1}))));
  for (const char* method : {"exact", "hermite"}) {
    const auto c = invoke({"crho", f, f, "--rho", "0.4", "--method", method});
    ASSERT_EQ(c.code, 0) << c.err;
    EXPECT_EQ(io::dump(io::to_json(io::from_json<DistributionMatrix>(json::parse(c.out)))), c.out);
  }
  const auto mc = invoke({"crho", f, f, "--rho", "0.4", "--method", "montecarlo", "--mc-samples", "20000"});
  ASSERT_EQ(mc.code, 0) << mc.err;
  EXPECT_EQ(io::dump(io::to_json(io::from_json<MonteCarloEstimate>(json::parse(mc.out)))), mc.out);

  const auto exact = json::parse(invoke({"crho", f, f, "--rho", "0.4"}).out);
  EXPECT_NEAR(exact[0][0].get<double>(), 0.25 + std::asin(0.4) / (2.0 * std::acos(-1.0)), 1e-12);

  const auto obj = file("obj.json", R"({"m": 2, "weights": [[1, 1], [1, 1]], "targets": [[0.4, 0.1], [0.1, 0.4]]})");
  const auto vv = invoke({"verify-variational", obj, "--rho", "0.6", "--grid-cells", "16"});
  ASSERT_EQ(vv.code, 0) << vv.err;
  const auto j = json::parse(vv.out);
  EXPECT_EQ(io::to_json(io::from_json<PartitionGrid>(j["partition"])), j["partition"]);
  EXPECT_EQ(io::to_json(io::from_json<FirstVariationReport>(j["first_variation"])), j["first_variation"]);
  EXPECT_EQ(io::to_json(io::from_json<IntervalPair>(j["refined"]["parts"])), j["refined"]["parts"]);

  const auto part = file("part.json", j["partition"].dump());
  const auto again = invoke({"verify-variational", obj, "--rho", "0.6", "--partition", part});
  ASSERT_EQ(again.code, 0) << again.err;
  EXPECT_EQ(again.out, vv.out);
}

TEST_F(CliTest, SeedFixesOutputAcrossThreadCounts) {
  const std::vector<std::string> base = {"decide-gaussian", copy_target(), "--rho", "0.4", "--epsilon", "0.1",
                                         "--dim", "2", "--grid-cells", "4", "--budget", "20000", "--seed", "11"};
  auto one = base, four = base;
  one.insert(one.end(), {"--threads", "1"});
  four.insert(four.end(), {"--threads", "4"});
  const auto a = invoke(one), b = invoke(four), c = invoke(one);
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(a.out, c.out);

  const auto f = file("f.json", io::dump(io::to_json(CellFunction::from_labels(CellGrid(1, 4.0, 2), 2,
                                                                            std::vector<int>{0, 1, 0, 1}))));
  const std::vector<std::string> mc = {"crho", f, f, "--rho", "0.3", "--method", "montecarlo", "--mc-samples",
                                       "200000", "--seed", "5"};
  auto m1 = mc, m3 = mc;
  m1.insert(m1.end(), {"--threads", "1"});
  m3.insert(m3.end(), {"--threads", "3"});
  EXPECT_EQ(invoke(m1).out, invoke(m3).out);
}

TEST_F(CliTest, OutFlagAndThreadEnvironment) {
  const auto out = path("result.json");
  const auto r = invoke({"maxcorr", triple_point(), "--out", out});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(r.out.empty());
  std::ifstream in(out);
  const auto j = json::parse(in);
  EXPECT_NEAR(j["rho_m"].get<double>(), 0.5, 1e-10);

  const std::vector<std::string> dd = {"decide-discrete", uniform_target(), triple_point(), "--epsilon", "0.05",
                                       "--net-epsilon", "0.5"};
  const auto plain = invoke(dd);
  ASSERT_EQ(plain.code, 0) << plain.err;
  ::setenv("NISIM_THREADS", "3", 1);
  const auto env = invoke(dd);
  ::unsetenv("NISIM_THREADS");
  EXPECT_EQ(plain.out, env.out);
  const auto d = io::from_json<Decision>(json::parse(plain.out));
  ASSERT_TRUE(d.discrete_witness.has_value());
}
