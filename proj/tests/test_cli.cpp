#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "bst/cli.hpp"
#include "bst/io.hpp"
#include "oracles.hpp"

using namespace bst;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::path(::testing::TempDir()) / "bst_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Run {
  int code;
  std::string out;
  std::string err;
};

// Runs the installed binary so exit codes and streams are observed end to end.
Run run_binary(const std::string& args, const fs::path& dir) {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string(BST_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(out), read_file(err)};
}

Run run_inline(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST(Cli, HelpExitsZeroWithUsage) {
  const auto dir = scratch("help");
  const auto r = run_binary("--help", dir);
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("Usage"), std::string::npos);
  for (const char* sub : {"clip", "ingest", "synth", "train", "eval", "plot-cm"})
    EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
}

TEST(Cli, UnknownFlagPrintsUsageToStderrAndExitsTwo) {
  const auto dir = scratch("unknown");
  const auto r = run_binary("synth --out " + dir.string() + " --frobnicate 3", dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_TRUE(r.out.empty());
  EXPECT_FALSE(fs::exists(dir / "train"));
  EXPECT_EQ(run_binary("", dir).code, 2);
}

TEST(Cli, VersionNamesToolkitAndFormats) {
  const auto dir = scratch("version");
  const auto r = run_binary("--version", dir);
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, cli::version_text() + "\n");
  EXPECT_NE(r.out.find(cli::kToolkitVersion), std::string::npos);
  EXPECT_NE(r.out.find("checkpoint format " + std::to_string(kCheckpointVersion)), std::string::npos);
}

TEST(Cli, ClipMatchesAdaptiveOracleGolden) {
  const auto dir = scratch("clip");
  write_file(dir / "hits.csv", "match_id,frame,label\nm,100,clear\nm,160,drop\nm,230,smash\n");
  write_file(dir / "c.txt", "hits=hits.csv\nfps=30\ntotal_frames=1000\n");
  const auto r = run_binary("clip --config " + (dir / "c.txt").string() + " --out " + (dir / "o").string(), dir);
  ASSERT_EQ(r.code, 0) << r.err;

  const std::vector<int> rally{100, 160, 230};
  const std::vector<std::string> labels{"clear", "drop", "smash"};
  std::string golden = std::string(kManifestHeader) + "\n";
  for (int j = 1; j <= 3; ++j) {
    const auto w = oracle::adaptive_clip(rally, j, 15, 7, 1.5, 30.0, 1000);
    golden += "m,0," + std::to_string(j) + "," + std::to_string(rally[static_cast<std::size_t>(j - 1)]) + "," +
              std::to_string(w.start) + "," + std::to_string(w.end) + "," + labels[static_cast<std::size_t>(j - 1)] +
              "\n";
  }
  EXPECT_EQ(read_file(dir / "o" / "manifest.csv"), golden);
}

TEST(Cli, EvalOnPerfectPredictionsReportsAccuracyOne) {
  const auto dir = scratch("eval_perfect");
  write_file(dir / "p.csv", "label,p_0,p_1,p_2\n0,0.9,0.05,0.05\n1,0.1,0.8,0.1\n2,0.2,0.2,0.6\n1,0,1,0\n");
  const auto r = run_binary("eval --predictions " + (dir / "p.csv").string() + " --out " + dir.string(), dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = report_from_json(read_json_file(dir / "report.json"));
  EXPECT_EQ(report.accuracy, 1.0);
  EXPECT_EQ(report.macro_f1, 1.0);
  EXPECT_EQ(report.min_f1, 1.0);
}

TEST(Cli, ValidationFailuresExitTwoWithoutOutputs) {
  const auto dir = scratch("invalid");
  write_file(dir / "bad.txt", "n_epoch=3\n");
  auto r = run_binary("synth --config " + (dir / "bad.txt").string() + " --out " + (dir / "o").string(), dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("n_epoch"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "o"));

  r = run_binary("clip --hits " + (dir / "missing.csv").string() + " --out " + (dir / "o").string(), dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(fs::exists(dir / "o"));

  write_file(dir / "p.csv", "label,p_0,p_1\n5,0.5,0.5\n");
  r = run_binary("eval --predictions " + (dir / "p.csv").string() + " --out " + (dir / "o").string(), dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(fs::exists(dir / "o" / "report.json"));
}

TEST(Cli, ConfigErrorsExitTwo) {
  const auto dir = scratch("config_error");
  write_file(dir / "c.txt", "synth_samples_per_class=2\nn_classes=5\n");
  const auto r = run_inline({"synth", "--config", (dir / "c.txt").string(), "--out", (dir / "o").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(r.err.empty());
  EXPECT_FALSE(fs::exists(dir / "o" / "train"));
}

TEST(Cli, UnreadableDatasetIsRuntimeFailure) {
  const auto dir = scratch("runtime_error");
  const auto r = run_inline({"train", "--data", dir.string(), "--out", (dir / "o").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("cannot read"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "o"));
}

TEST(Cli, SynthTrainEvalPlotIsByteReproducible) {
  const auto dir = scratch("pipeline");
  write_file(dir / "c.txt",
             "seed=3\nsynth_samples_per_class=3\nsynth_val_per_class=2\nsynth_test_per_class=2\n"
             "n_epochs=3\nbatch_size=4\nwarm_up_step=1\nd_model=8\nd_attn=4\nn_heads=2\nvariant=BST-CG-AP\n");
  const std::string config = (dir / "c.txt").string();

  const auto pipeline = [&](const std::string& tag) {
    const auto root = dir / tag;
    const auto data = root / "data", model = root / "model", report = root / "report";
    ASSERT_EQ(run_inline({"synth", "--config", config, "--out", data.string()}).code, 0);
    const auto t = run_inline({"train", "--config", config, "--data", data.string(), "--out", model.string()});
    ASSERT_EQ(t.code, 0) << t.err;
    const auto e = run_inline({"eval", "--data", (data / "test").string(), "--checkpoint",
                               (model / "checkpoint.json").string(), "--out", report.string()});
    ASSERT_EQ(e.code, 0) << e.err;
    const auto p = run_inline({"plot-cm", "--report", (report / "report.json").string(), "--classes",
                               (data / "classes.csv").string(), "--out", report.string()});
    ASSERT_EQ(p.code, 0) << p.err;
  };
  pipeline("a");
  pipeline("b");
  for (const auto* rel : {"data/train/hits.csv", "data/classes.csv", "model/history.csv", "model/checkpoint.json",
                          "report/report.json", "report/confusion.svg", "report/confusion.csv"}) {
    const auto a = read_file(dir / "a" / rel);
    EXPECT_FALSE(a.empty()) << rel;
    EXPECT_EQ(a, read_file(dir / "b" / rel)) << rel;
  }
  EXPECT_NE(read_file(dir / "a/report/confusion.svg").find("<svg"), std::string::npos);

  // a different seed changes the outcome
  const auto other = dir / "c";
  ASSERT_EQ(run_inline({"synth", "--config", config, "--seed", "4", "--out", other.string()}).code, 0);
  EXPECT_NE(read_file(other / "train/hits.csv"), read_file(dir / "a/data/train/hits.csv"));
}

TEST(Cli, IngestBuildsSamplesFromManifestAndDetections) {
  const auto dir = scratch("ingest");
  write_file(dir / "m.csv", std::string(kManifestHeader) + "\nm,0,1,100,95,104,clear\nm,0,2,110,105,114,drop\n");
  write_file(dir / "classes.csv", format_class_map({"clear", "drop"}));
  const std::vector<std::string> base{"ingest", "--manifest", (dir / "m.csv").string(), "--detections",
                                      dir.string(), "--classes", (dir / "classes.csv").string(), "--out",
                                      (dir / "o").string()};

  RawClip raw;
  raw.width = 640;
  raw.height = 720;
  raw.court.corners = {{{100, 100}, {500, 100}, {600, 700}, {0, 700}}};
  raw.court.net_y = 400.0;
  Skeleton top, bottom;
  for (std::size_t j = 0; j < kJoints; ++j) {
    top[j] = {300.0 + static_cast<double>(j), 250.0 - 5.0 * static_cast<double>(kJoints - j), 0.9};
    bottom[j] = {300.0 + static_cast<double>(j), 650.0 - 5.0 * static_cast<double>(kJoints - j), 0.9};
  }
  for (int f = 0; f < 10; ++f) raw.frames.push_back({{top, bottom}, Point2{320.0 + f, 100.0}});
  fs::create_directories(dir / "features" / "m");
  write_json_file(dir / "features/m/0_1.json", raw_clip_to_json(raw));

  // second detection file is absent, so nothing is written
  auto r = run_inline(base);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("missing detection file"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "o"));

  write_json_file(dir / "features/m/0_2.json", raw_clip_to_json(raw));
  r = run_inline(base);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto data = load_dataset(dir / "o");
  ASSERT_EQ(data.samples.size(), 2u);
  EXPECT_EQ(data.samples[0].label, 0);
  EXPECT_EQ(data.samples[1].label, 1);
  EXPECT_EQ(data.samples[0].seq_len, 100);
  EXPECT_EQ(data.samples[0].valid_frames(), 10);
  EXPECT_DOUBLE_EQ(data.samples[1].shuttle[data.samples[1].shuttle_index(0, 0)], 320.0 / 640.0);
}
