#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "catmouse/cli.hpp"
#include "catmouse/report.hpp"
#include "json.hpp"
#include "support/tiny.hpp"

namespace {

using namespace catmouse;
namespace fs = std::filesystem;

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("catmouse_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path tiny_config(const fs::path& dir, int max_order) {
  const fs::path p = dir / "tiny.cfg";
  std::ofstream(p) << tiny::config_text(max_order, 1, true);
  return p;
}

TEST(Cli, HelpAndUsageErrors) {
  const Outcome help = run({"--help"});
  EXPECT_EQ(help.code, 0);
  EXPECT_NE(help.out.find("game"), std::string::npos);
  EXPECT_EQ(run({"fly"}).code, 1);
  EXPECT_EQ(run({}).code, 1);
  const Outcome bad = run({"train-detector", "--pi", "1.5"});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("--pi"), std::string::npos);
  EXPECT_EQ(run({"evaluate"}).code, 1);
}

TEST(Cli, MissingCheckpointIsRuntimeFailure) {
  const Outcome r = run({"evaluate", "--model", "/nonexistent/model.cmld"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("/nonexistent/model.cmld"), std::string::npos);
}

TEST(Cli, BadConfigNamesFileAndLine) {
  const fs::path dir = scratch("badcfg");
  std::ofstream(dir / "bad.cfg") << "[game]\npi = 2\n";
  const Outcome r = run({"--config", (dir / "bad.cfg").string(), "game", "--out", (dir / "run").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("bad.cfg:2: pi out of range"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Cli, GenDataWritesImagesAndAnnotations) {
  const fs::path dir = scratch("gen");
  const Outcome r = run({"--out", dir.string(), "gen-data", "--family", "eval", "--count", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "eval" / "annotations.json"));
  EXPECT_FALSE(fs::exists(dir / "detector-train"));
  std::size_t pngs = 0;
  for (const auto& e : fs::directory_iterator(dir / "eval")) pngs += e.path().extension() == ".png";
  EXPECT_EQ(pngs, 3u);
  fs::remove_all(dir);
}

TEST(Cli, GameThenReportIsIdempotent) {
  const fs::path dir = scratch("game");
  const fs::path run_dir = dir / "run";
  const std::string cfg = tiny_config(dir, 1).string();
  const Outcome game = run({"--config", cfg, "--out", run_dir.string(), "game"});
  ASSERT_EQ(game.code, 0) << game.err;
  EXPECT_TRUE(fs::exists(run_dir / "heatmap.svg"));
  EXPECT_TRUE(fs::exists(run_dir / "transfer.svg"));
  EXPECT_EQ(verify_manifest(run_dir), "");
  ASSERT_EQ(run({"report", run_dir.string()}).code, 0);
  const std::string csv = read_text_file(run_dir / "ledger.csv");
  const std::string heat = read_text_file(run_dir / "heatmap.svg");
  ASSERT_EQ(run({"report", run_dir.string()}).code, 0);
  EXPECT_EQ(read_text_file(run_dir / "ledger.csv"), csv);
  EXPECT_EQ(read_text_file(run_dir / "heatmap.svg"), heat);
  EXPECT_EQ(verify_manifest(run_dir), "");
  EXPECT_EQ(run({"report", (dir / "absent").string()}).code, 2);
  fs::remove_all(dir);
}

TEST(Cli, SingleStepCommandsChain) {
  const fs::path dir = scratch("steps");
  const std::string cfg = tiny_config(dir, 1).string();
  ASSERT_EQ(run({"--config", cfg, "--out", (dir / "m0").string(), "train-detector", "--variant", "3"}).code, 0);
  const fs::path model = dir / "m0" / "model.cmld";
  ASSERT_TRUE(fs::exists(model));
  ASSERT_EQ(run({"--config", cfg, "--out", (dir / "p1").string(), "optimize-patch", "--model", model.string()}).code,
            0);
  const fs::path patch = dir / "p1" / "patch.cmpt";
  ASSERT_TRUE(fs::exists(patch));
  EXPECT_TRUE(fs::exists(dir / "p1" / "patch.png"));
  ASSERT_EQ(run({"--config", cfg, "--out", (dir / "m1").string(), "harden", "--pool", patch.string()}).code, 0);
  const Outcome e = run({"--config", cfg, "evaluate", "--model", (dir / "m1" / "model.cmld").string(), "--patch",
                         patch.string()});
  ASSERT_EQ(e.code, 0) << e.err;
  const auto j = nlohmann::json::parse(e.out);
  EXPECT_GE(j["ap"].get<double>(), 0.0);
  EXPECT_LE(j["ap"].get<double>(), 1.0);
  EXPECT_EQ(j["per_threshold"].size(), 10u);
  fs::remove_all(dir);
}

}  // namespace
