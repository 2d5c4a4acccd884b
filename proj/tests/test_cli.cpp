#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "bilinsim/checkpoint_io.hpp"
#include "bilinsim/cli.hpp"
#include "bilinsim/simkit.hpp"
#include "gtest/gtest.h"
#include "json.hpp"
#include "test_support.hpp"

namespace bilinsim {
namespace {

namespace fs = std::filesystem;

struct CliResult {
  int code;
  std::string out, err;
};

CliResult run(std::vector<std::string> args) {
  args.insert(args.begin(), "bilinsim");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("bilinsim_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    unsetenv("BILINSIM_THREADS");
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path save(const ModelStack& s, const std::string& stage, long step, const fs::path& sub = {}) {
    const fs::path d = sub.empty() ? dir_ : dir_ / sub;
    fs::create_directories(d);
    Checkpoint c{s, {"test", stage, step, 0}};
    const fs::path p = d / checkpoint_filename(c.meta);
    save_checkpoint(p, c);
    return p;
  }

  fs::path dir_;
};

ModelStack poly_x2() { return make_stack({Matrix{{0, 1}}, Matrix{{0, 1}}, Matrix{{1}}, true}); }

ModelStack random_layer(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return make_stack(testing::random_bilinear(rng, 3, 3, 2, true));
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

TEST_F(Cli, HelpAndParseErrors) {
  EXPECT_EQ(run({"--help"}).code, kExitOk);
  EXPECT_EQ(run({}).code, kExitConfig);
  EXPECT_EQ(run({"sim"}).code, kExitConfig);
  EXPECT_EQ(run({"delta", "--matrix", "m.csv"}).code, kExitConfig);
  EXPECT_EQ(run({"frobnicate"}).code, kExitConfig);
  EXPECT_EQ(run({"oracle", "--mode", "bogus"}).code, kExitConfig);
}

TEST_F(Cli, TrainWritesManifestCheckpointsAndMetrics) {
  const fs::path cfg = dir_ / "cfg.json";
  write_text(cfg, R"({"task": "modadd", "data": {"modulus": 5}, "model": {"rank": 4},
                      "batch_size": 8, "steps": 12, "eval_interval": 4, "checkpoints": {"steps": [0, 6, 12]}})");
  const fs::path out = dir_ / "run";
  CliResult r = run({"train", "--config", cfg.string(), "--out", out.string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  auto printed = lines(r.out);
  ASSERT_EQ(printed.size(), 3u);
  EXPECT_EQ(fs::path(printed[1]).filename(), "ckpt_train_00000006.json");
  for (const auto& p : printed) EXPECT_TRUE(fs::exists(p));
  EXPECT_TRUE(fs::exists(out / "metrics.csv"));
  std::ifstream mf(out / "manifest.json");
  const auto manifest = nlohmann::json::parse(mf);
  EXPECT_EQ(manifest.at("command"), "train");
  EXPECT_EQ(manifest.at("config").at("task"), "modadd");
  EXPECT_TRUE(manifest.contains("started_at"));
}

TEST_F(Cli, TrainConfigErrorsExitTwoNamingField) {
  const fs::path cfg = dir_ / "bad.json";
  write_text(cfg, R"({"task": "second-argmax", "steps": 5, "data": {"distribution": "cauchy"}})");
  CliResult r = run({"train", "--config", cfg.string(), "--out", (dir_ / "o").string()});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.err.find("data.distribution"), std::string::npos) << r.err;
  EXPECT_EQ(run({"train", "--config", (dir_ / "missing.json").string(), "--out", dir_.string()}).code, kExitIo);
}

TEST_F(Cli, TrainDivergenceExitsThree) {
  const fs::path cfg = dir_ / "div.json";
  write_text(cfg, R"({"task": "modadd", "data": {"modulus": 5}, "model": {"rank": 4, "init_scale": 1e150},
                      "batch_size": 8, "steps": 12})");
  CliResult r = run({"train", "--config", cfg.string(), "--out", (dir_ / "o").string()});
  EXPECT_EQ(r.code, kExitDivergence);
  EXPECT_NE(r.err.find("step"), std::string::npos);
}

TEST_F(Cli, SimOfIdenticalCheckpointsIsAllOnes) {
  for (long step : {0, 1, 2}) save(random_layer(1), "s", step);
  for (const char* metric : {"sym-frobenius", "gaussian-lifted", "gaussian-homogeneous"}) {
    CliResult r = run({"sim", "--ckpts", dir_.string(), "--metric", metric});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    auto rows = lines(r.out);
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_EQ(rows[0], "id,s_00000000,s_00000001,s_00000002");
    EXPECT_EQ(rows[2], "s_00000001,1,1,1");
  }
}

TEST_F(Cli, SimComparatorsAndOutputFile) {
  for (long step : {0, 1, 2}) save(random_layer(10 + static_cast<std::uint64_t>(step)), "s", step);
  const std::string d = dir_.string();
  EXPECT_EQ(run({"sim", "--ckpts", d, "--comparator", "slice", "--slice", "1"}).code, kExitOk);
  EXPECT_EQ(run({"sim", "--ckpts", d, "--comparator", "matrix-cosine"}).code, kExitOk);
  EXPECT_EQ(run({"sim", "--ckpts", d, "--comparator", "behavioural"}).code, kExitConfig);
  EXPECT_EQ(run({"sim", "--ckpts", d, "--comparator", "slice"}).code, kExitConfig);
  EXPECT_EQ(run({"sim", "--ckpts", d, "--comparator", "nope"}).code, kExitConfig);
  EXPECT_EQ(run({"sim", "--ckpts", d, "--metric", "nope"}).code, kExitConfig);

  const fs::path csv = dir_ / "behav.csv";
  CliResult r =
      run({"sim", "--ckpts", d, "--comparator", "behavioural", "--samples", "2000", "--seed", "4", "--out", csv.string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  std::ifstream f(csv);
  std::stringstream ss;
  ss << f.rdbuf();
  const SimilarityMatrix m = parse_similarity_csv(ss.str());
  EXPECT_EQ(m.size(), 3u);
  EXPECT_NEAR(m.values(1, 1), 1.0, 1e-12);

  const fs::path inputs = dir_ / "x.csv";
  write_text(inputs, "1,0,0\n0,1,0\n0,0,1\n1,2,3\n");
  EXPECT_EQ(run({"sim", "--ckpts", d, "--comparator", "cka", "--inputs", inputs.string()}).code, kExitOk);
}

TEST_F(Cli, SimThreadsMatchSerial) {
  for (long step : {0, 1, 2, 3}) save(random_layer(20 + static_cast<std::uint64_t>(step)), "s", step);
  const std::string serial = run({"sim", "--ckpts", dir_.string()}).out;
  setenv("BILINSIM_THREADS", "0", 1);
  EXPECT_EQ(run({"sim", "--ckpts", dir_.string()}).out, serial);
  setenv("BILINSIM_THREADS", "3", 1);
  EXPECT_EQ(run({"sim", "--ckpts", dir_.string()}).out, serial);
  setenv("BILINSIM_THREADS", "x", 1);
  EXPECT_EQ(run({"sim", "--ckpts", dir_.string()}).code, kExitConfig);
}

TEST_F(Cli, SimErrorCodes) {
  EXPECT_EQ(run({"sim", "--ckpts", (dir_ / "none").string()}).code, kExitIo);
  save(random_layer(1), "s", 0);
  EXPECT_EQ(run({"sim", "--ckpts", dir_.string()}).code, kExitConfig);  // only one checkpoint

  std::mt19937_64 rng(3);
  save(make_stack(testing::random_bilinear(rng, 4, 3, 2, true)), "s", 1);
  EXPECT_EQ(run({"sim", "--ckpts", dir_.string()}).code, kExitIncompatible);

  ModelStack deep(3, {testing::random_bilinear(rng, 3, 2, 3, true), testing::random_bilinear(rng, 3, 2, 2, false)});
  save(deep, "d", 0, "deep");
  save(deep, "d", 1, "deep");
  EXPECT_EQ(run({"sim", "--ckpts", (dir_ / "deep").string(), "--metric", "gaussian-lifted"}).code, kExitUnsupported);
  EXPECT_EQ(run({"sim", "--ckpts", (dir_ / "deep").string(), "--metric", "sym-frobenius"}).code, kExitOk);

  fs::create_directories(dir_ / "broken");
  write_text(dir_ / "broken" / "ckpt_x_00000000.json", "{not json");
  write_text(dir_ / "broken" / "ckpt_x_00000001.json", "{not json");
  EXPECT_EQ(run({"sim", "--ckpts", (dir_ / "broken").string()}).code, kExitConfig);
}

TEST_F(Cli, DiffPrintsValueAndFlagsDegenerate) {
  const fs::path a = save(random_layer(1), "a", 0), b = save(random_layer(2), "b", 0);
  CliResult r = run({"diff", "--a", a.string(), "--b", a.string(), "--c", b.string(), "--metric", "sym-frobenius"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const double v = std::stod(r.out);
  EXPECT_GE(v, -1.0);
  EXPECT_LE(v, 1.0);
  EXPECT_EQ(run({"diff", "--a", a.string(), "--b", b.string(), "--c", b.string()}).code, kExitDegenerate);
}

TEST_F(Cli, DeltaExamples) {
  const fs::path m = dir_ / "m.csv";
  write_text(m, "1,0.9,0.1,0.1\n0.9,1,0.1,0.1\n0.1,0.1,1,0.9\n0.1,0.1,0.9,1\n");
  CliResult r = run({"delta", "--matrix", m.string(), "--split", "2"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(r.out, "0.8\n");
  EXPECT_EQ(run({"delta", "--matrix", m.string(), "--split", "0"}).code, kExitConfig);
  EXPECT_EQ(run({"delta", "--matrix", m.string(), "--split", "4"}).code, kExitConfig);
  write_text(m, "1,2\n3\n");
  EXPECT_EQ(run({"delta", "--matrix", m.string(), "--split", "1"}).code, kExitConfig);
  EXPECT_EQ(run({"delta", "--matrix", (dir_ / "absent.csv").string(), "--split", "1"}).code, kExitIo);
}

TEST_F(Cli, OracleMonteCarloOnSquare) {
  const fs::path p = save(poly_x2(), "p", 0);
  CliResult r = run({"oracle", "--mode", "mc", "--a", p.string(), "--samples", "200000", "--seed", "1"});
  ASSERT_EQ(r.code, kExitOk) << r.out << r.err;
  EXPECT_NE(r.out.find("closed_form 3\n"), std::string::npos) << r.out;
  EXPECT_EQ(lines(r.out).back().substr(0, 4), "PASS");
  EXPECT_EQ(run({"oracle", "--mode", "mc"}).code, kExitConfig);
}

TEST_F(Cli, OracleFullAndMatching) {
  std::mt19937_64 rng(5);
  ModelStack s(3, {testing::random_bilinear(rng, 3, 2, 3, true), testing::random_bilinear(rng, 3, 2, 2, false)});
  const fs::path a = save(s, "a", 0);
  CliResult full = run({"oracle", "--mode", "full", "--a", a.string()});
  ASSERT_EQ(full.code, kExitOk) << full.err;
  EXPECT_EQ(lines(full.out).back().substr(0, 4), "PASS");

  for (const char* order : {"1", "2", "3", "4"}) {
    CliResult m = run({"oracle", "--mode", "matching", "--order", order, "--dim", "2", "--outputs", "2"});
    ASSERT_EQ(m.code, kExitOk) << m.out << m.err;
    EXPECT_EQ(lines(m.out).back().substr(0, 4), "PASS");
  }
  EXPECT_EQ(run({"oracle", "--mode", "matching", "--order", "9"}).code, kExitConfig);
}

TEST_F(Cli, OracleGuardExitsSeven) {
  std::mt19937_64 rng(7);
  ModelStack big(4, {testing::random_bilinear(rng, 4, 2, 5, true), testing::random_bilinear(rng, 5, 2, 5, false),
                     testing::random_bilinear(rng, 5, 2, 4, false)});
  const fs::path p = save(big, "big", 0);
  CliResult r = run({"oracle", "--mode", "full", "--a", p.string()});
  EXPECT_EQ(r.code, kExitGuard);
  EXPECT_FALSE(r.err.empty());
  EXPECT_EQ(run({"oracle", "--mode", "matching", "--order", "6", "--dim", "20", "--outputs", "10"}).code, kExitGuard);
}

}  // namespace
}  // namespace bilinsim
