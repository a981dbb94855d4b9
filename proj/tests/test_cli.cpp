#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gipad/cli.hpp"
#include "gipad/config.hpp"
#include "gipad/error.hpp"
#include "gipad/metrics.hpp"

using namespace gipad;
namespace fs = std::filesystem;

namespace {

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "gipad");
  std::vector<char*> argv;
  for (std::string& a : args) argv.push_back(a.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

// One small synthetic set and one trained model shared by the tests.
class CliFixture : public ::testing::Test {
 protected:
  static fs::path root;

  static void SetUpTestSuite() {
    root = fs::temp_directory_path() / "gipad_cli_test";
    fs::remove_all(root);
    ASSERT_EQ(cli({"synth", "--seed", "3", "--train", "24", "--dev", "12", "--test", "12", "--size",
                   "32", "--outdir", (root / "data").string()}),
              kExitOk);
    ASSERT_EQ(cli(train_args(root / "run")), kExitOk);
  }

  static std::vector<std::string> train_args(const fs::path& out) {
    return {"train", "--manifest", (root / "data" / "manifest.csv").string(), "--width", "0.25",
            "--input-size", "32", "--epochs", "2", "--batch-size", "8", "--lr", "0.001",
            "--threads", "1", "--seed", "5", "--outdir", out.string()};
  }

  static std::string manifest() { return (root / "data" / "manifest.csv").string(); }
  static std::string ckpt() { return (root / "run" / "model.ckpt").string(); }
};

fs::path CliFixture::root;

}  // namespace

TEST_F(CliFixture, SynthIsReproducible) {
  ASSERT_EQ(cli({"synth", "--seed", "3", "--train", "24", "--dev", "12", "--test", "12", "--size",
                 "32", "--outdir", (root / "data2").string()}),
            kExitOk);
  const std::string a = slurp(root / "data" / "manifest.csv");
  EXPECT_EQ(a, slurp(root / "data2" / "manifest.csv"));
  for (const auto& e : fs::directory_iterator(root / "data")) {
    if (!e.is_regular_file() || e.path().filename() == "config.resolved") continue;
    EXPECT_EQ(slurp(e.path()), slurp(root / "data2" / e.path().filename())) << e.path();
  }
}

TEST_F(CliFixture, BadGroupCountIsConfigExit) {
  std::vector<std::string> args = train_args(root / "bad_groups");
  args.insert(args.end(), {"--groups", "7"});
  EXPECT_EQ(cli(args), kExitConfig);
}

TEST_F(CliFixture, UnknownFlagIsConfigExit) {
  EXPECT_EQ(cli({"train", "--no-such-flag", "1"}), kExitConfig);
}

TEST_F(CliFixture, MissingCheckpointIsDataExit) {
  EXPECT_EQ(cli({"eval", "--checkpoint", (root / "nope.ckpt").string(), "--manifest", manifest(),
                 "--outdir", (root / "missing").string()}),
            kExitData);
}

TEST_F(CliFixture, ResolvedConfigReproducesTraining) {
  const fs::path resolved = root / "run" / "config.resolved";
  ASSERT_TRUE(fs::exists(resolved));
  const std::string text = slurp(resolved);
  EXPECT_NE(text.find("width_multiplier"), std::string::npos);
  EXPECT_NE(text.find("lr"), std::string::npos);
  ASSERT_EQ(cli({"train", "--config", resolved.string(), "--outdir", (root / "rerun").string()}), kExitOk);
  EXPECT_EQ(slurp(root / "run" / "history.csv"), slurp(root / "rerun" / "history.csv"));
  EXPECT_EQ(slurp(root / "run" / "model.ckpt"), slurp(root / "rerun" / "model.ckpt"));
}

TEST_F(CliFixture, HistoryHasOneRowPerEpoch) {
  const auto rows = read_csv(root / "run" / "history.csv");
  ASSERT_GE(rows.size(), 2u);
  EXPECT_LE(rows.size(), 3u);
}

TEST_F(CliFixture, EvalScoresMatchReport) {
  const fs::path out = root / "eval";
  ASSERT_EQ(cli({"eval", "--checkpoint", ckpt(), "--manifest", manifest(), "--outdir", out.string()}),
            kExitOk);
  const auto records = read_scores(out / "scores.csv");
  EXPECT_EQ(records.size(), 12u);
  const auto dev = read_scores(out / "dev_scores.csv");
  EXPECT_EQ(dev.size(), 12u);

  const OperatingPoint op = dev_eer_operating_point(select(dev, Split::Dev));
  const MetricReport want = evaluate(select(records, Split::Test), op);
  const auto j = nlohmann::json::parse(slurp(out / "metrics.json"));
  EXPECT_EQ(j["threshold_source"], "dev_eer");
  EXPECT_EQ(j["threshold"].get<double>(), want.threshold);
  EXPECT_EQ(j["accuracy"].get<double>(), want.accuracy);
  EXPECT_EQ(j["hter"].get<double>(), want.hter);
  EXPECT_EQ(j["auc"].get<double>(), want.auc);
  EXPECT_EQ(j["eer"].get<double>(), want.eer);
}

TEST_F(CliFixture, FixedThresholdEval) {
  const fs::path out = root / "eval_fixed";
  ASSERT_EQ(cli({"eval", "--checkpoint", ckpt(), "--manifest", manifest(), "--threshold", "fixed",
                 "--fixed-threshold", "0.5", "--outdir", out.string()}),
            kExitOk);
  const auto j = nlohmann::json::parse(slurp(out / "metrics.json"));
  EXPECT_EQ(j["threshold_source"], "fixed");
  EXPECT_EQ(j["threshold"].get<double>(), 0.5);
  EXPECT_FALSE(fs::exists(out / "dev_scores.csv"));
}

TEST_F(CliFixture, AuditReportsEveryIndicator) {
  const fs::path out = root / "audit";
  ASSERT_EQ(cli({"audit", "--checkpoint", ckpt(), "--manifest", manifest(), "--max-samples", "10",
                 "--export-fields", "true", "--outdir", out.string()}),
            kExitOk);
  const auto j = nlohmann::json::parse(slurp(out / "audit.json"));
  EXPECT_EQ(j["n_samples"], 10);
  for (const char* ind : {"hf_lf", "anisotropy", "dc_offset", "position_variance"}) {
    EXPECT_TRUE(j["cohens_d"].contains(ind)) << ind;
    EXPECT_TRUE(fs::exists(out / (std::string("hist_") + ind + ".csv"))) << ind;
  }
  EXPECT_TRUE(fs::exists(out / "fields.t4d"));
  EXPECT_TRUE(fs::exists(out / "fields.t4d.hdr"));
}

TEST_F(CliFixture, GradcamIsDeterministic) {
  const auto rows = read_csv(manifest());
  ASSERT_GE(rows.size(), 2u);
  const fs::path image = root / "data" / rows[1][0];
  for (const char* dir : {"cam1", "cam2"}) {
    ASSERT_EQ(cli({"gradcam", "--checkpoint", ckpt(), "--image", image.string(), "--outdir",
                   (root / dir).string()}),
              kExitOk);
  }
  const Tensor4 cam = load_tensor(root / "cam1" / "heatmap.t4d");
  EXPECT_EQ(cam.h(), 32);
  EXPECT_EQ(cam.w(), 32);
  for (double v : cam.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_EQ(slurp(root / "cam1" / "heatmap.t4d"), slurp(root / "cam2" / "heatmap.t4d"));
  EXPECT_TRUE(fs::exists(root / "cam1" / "overlay.ppm"));
}

TEST(CliFlops, GridTrends) {
  const fs::path out = fs::temp_directory_path() / "gipad_cli_flops";
  fs::remove_all(out);
  ASSERT_EQ(cli({"flops", "--groups", "16,60,120,240", "--reduce", "1,4,8", "--input-size",
                 "128,256", "--outdir", out.string()}),
            kExitOk);
  const auto rows = read_csv(out / "flops.csv");
  ASSERT_EQ(rows.size(), 1u + 4 * 3 * 2);
  // params indexed by (groups, reduce); flops ratio column in [3.7, 4].
  std::map<std::pair<int, int>, long long> params;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    ASSERT_GE(r.size(), 12u) << i;
    EXPECT_EQ(r[11], "ok");
    const double ratio = std::stod(r[6]);
    EXPECT_GE(ratio, 3.7);
    EXPECT_LE(ratio, 4.0);
    params[{std::stoi(r[0]), std::stoi(r[1])}] = std::stoll(r[4]);
  }
  const auto at = [&](int g, int r) { return params[std::make_pair(g, r)]; };
  for (int g : {16, 60, 120, 240}) {
    EXPECT_GT(at(g, 1), at(g, 4));
    EXPECT_GT(at(g, 4), at(g, 8));
  }
  for (int r : {1, 4, 8}) {
    EXPECT_LT(at(16, r), at(60, r));
    EXPECT_LT(at(60, r), at(120, r));
    EXPECT_LT(at(120, r), at(240, r));
  }
}

TEST(CliFlops, BadGridEntryIsReportedPerRow) {
  const fs::path out = fs::temp_directory_path() / "gipad_cli_flops_bad";
  fs::remove_all(out);
  ASSERT_EQ(cli({"flops", "--groups", "7,120", "--outdir", out.string()}), kExitOk);
  const auto rows = read_csv(out / "flops.csv");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_NE(rows[1].back().find("error"), std::string::npos);
  EXPECT_EQ(rows[2].back(), "ok");
}

TEST(RunConfigPrecedence, FlagOverFileOverDefault) {
  const fs::path file = fs::temp_directory_path() / "gipad_precedence.cfg";
  std::ofstream(file) << "# comment\nlr = 0.01\nbatch_size = 16\n";
  RunConfig c;
  EXPECT_EQ(c.get("lr"), "0.0001");
  EXPECT_EQ(c.provenance("lr"), Provenance::Default);
  c.load_file(file);
  EXPECT_EQ(c.get_double("lr"), 0.01);
  EXPECT_EQ(c.provenance("batch_size"), Provenance::File);
  c.set("lr", "0.5", Provenance::Flag);
  EXPECT_EQ(c.get_double("lr"), 0.5);
  EXPECT_EQ(c.provenance("lr"), Provenance::Flag);
  EXPECT_EQ(c.train().batch_size, 16);

  RunConfig back;
  const fs::path echoed = fs::temp_directory_path() / "gipad_precedence_echo.cfg";
  std::ofstream(echoed) << c.resolved();
  back.load_file(echoed);
  EXPECT_EQ(back.get("lr"), "0.5");
  EXPECT_EQ(back.get("batch_size"), "16");
  fs::remove(file);
  fs::remove(echoed);
}

TEST(RunConfigPrecedence, UnknownKeyIsConfigError) {
  const fs::path file = fs::temp_directory_path() / "gipad_unknown.cfg";
  std::ofstream(file) << "learning_rate = 0.01\n";
  RunConfig c;
  EXPECT_THROW(c.load_file(file), ConfigError);
  fs::remove(file);
}
