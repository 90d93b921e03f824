#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "camtrap/pipeline.hpp"
#include "support/stub_server.hpp"
#include "support/synthetic.hpp"
#include "support/temp_dir.hpp"

using namespace camtrap;
using testing_support::TempDir;
namespace fs = std::filesystem;

namespace {

void write(const fs::path& p, const std::string& s) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << s;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CAMTRAP_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct Outcome {
  ExitCode code;
  std::string out;
  std::string err;
};

template <typename Fn>
Outcome run(Fn fn, const PipelineConfig& c) {
  std::ostringstream out, err;
  const auto code = fn(c, out, err);
  return {code, out.str(), err.str()};
}

// Raw download-style data: manifest plus media files under `dir`.
void raw_dataset(const fs::path& dir) {
  auto records = testing_support::single_label_records({"Fox", "Boar", "Rare"}, {12, 8, 2});
  records[0].annotations.push_back({"Boar", {2000, 1500, 2600, 2100}});
  Manifest m;
  for (auto& r : records) {
    write(dir / r.source_uri, "media " + r.image_id);
    m.images.push_back(r);
  }
  write_manifest(dir / "manifest.json", m);
}

std::string epoch_log() {
  std::string s = std::string(kEpochLogHeader) + "\n";
  for (int e = 0; e <= 60; ++e) {
    const double f1 = e <= 51 ? 0.2 + 0.6 * e / 51.0 : 0.8 * (1.0 + ((e % 2) ? 0.003 : -0.003));
    const double loss = e <= 51 ? 0.3 - 0.004 * e : 0.096;
    s += std::to_string(e) + "," + detail::format_fixed(loss / 2, 6) + "," + detail::format_fixed(loss / 4, 6) +
         "," + detail::format_fixed(loss / 4, 6) + ",0.8,0.7," + detail::format_fixed(f1, 6) + ",0.6,0.4\n";
  }
  return s;
}

class PipelineTest : public ::testing::Test {
 protected:
  void SetUp() override {
    raw_dataset(tmp.path() / "raw");
    PipelineConfig c;
    c.manifest = tmp / "raw/manifest.json";
    c.out_dir = tmp / "prepared";
    c.min_count = 5;
    const auto r = run(cmd_prepare, c);
    ASSERT_EQ(r.code, ExitCode::kOk) << r.err;
  }

  // Writes one predictions file per fold holding perfect detections for
  // the fold's validation images.
  std::vector<fs::path> perfect_predictions(const SplitPlan& plan) {
    const auto m = read_manifest(tmp / "prepared/manifest.json");
    const auto catalog = ClassCatalog::from_names(m.classes);
    std::vector<fs::path> out;
    for (std::size_t f = 0; f < plan.k; ++f) {
      std::vector<Detection> dets;
      for (const auto& g : ground_truths(m.images, catalog)) {
        if (plan.assignment.at(g.image_id) == f) dets.push_back({g.image_id, g.class_index, 0.9, g.box});
      }
      out.push_back(tmp / ("preds_" + std::to_string(f) + ".jsonl"));
      write(out.back(), format_predictions(dets));
    }
    return out;
  }

  TempDir tmp;
};

}  // namespace

TEST_F(PipelineTest, PrepareWritesCatalogAndStatistics) {
  const auto m = read_manifest(tmp / "prepared/manifest.json");
  EXPECT_EQ(m.classes, (std::vector<std::string>{"Fox", "Boar"}));
  EXPECT_EQ(m.images.size(), 20u);
  for (const auto& r : m.images) EXPECT_TRUE(fs::exists(media_path(tmp / "prepared", r))) << r.source_uri;
  EXPECT_EQ(detail::read_file(tmp / "prepared/classes.txt"), "Fox\nBoar\n");
  EXPECT_EQ(detail::read_file(tmp / "prepared/class_stats.csv"),
            "index,class,images,targets\n0,Fox,12,12\n1,Boar,9,9\n");
  EXPECT_EQ(detail::read_file(tmp / "prepared/image_sizes.csv"), "megapixels,images\n12,20\n");
  EXPECT_EQ(detail::read_file(tmp / "prepared/resolutions.csv"), "width,height,images\n4000,3000,20\n");
}

TEST_F(PipelineTest, PrepareRefusesInPlaceAndEmptyResults) {
  PipelineConfig c;
  c.manifest = tmp / "raw/manifest.json";
  c.out_dir = tmp / "raw/.";
  EXPECT_EQ(run(cmd_prepare, c).code, ExitCode::kInvalidInput);
  c.out_dir = tmp / "empty";
  c.min_count = 100;
  EXPECT_EQ(run(cmd_prepare, c).code, ExitCode::kInvalidInput);
  c.manifest = tmp / "missing.json";
  EXPECT_EQ(run(cmd_prepare, c).code, ExitCode::kIo);
}

TEST_F(PipelineTest, SplitEvaluateReport) {
  PipelineConfig c;
  c.manifest = tmp / "prepared/manifest.json";
  c.out_dir = tmp / "folds";
  c.k = 4;
  c.seed = 3;
  auto r = run(cmd_split, c);
  ASSERT_EQ(r.code, ExitCode::kOk) << r.err;
  const auto plan = parse_plan(detail::read_file(tmp / "folds/plan.json"));
  EXPECT_EQ(plan.fold_sizes(), (std::vector<std::size_t>{5, 5, 5, 5}));
  for (int f = 0; f < 4; ++f) {
    const auto d = tmp / ("folds/fold_" + std::to_string(f));
    EXPECT_TRUE(fs::exists(d / "dataset.yaml"));
    EXPECT_EQ(detail::lines_of(detail::read_file(d / "val.txt")).size(), 5u);
  }
  EXPECT_TRUE(fs::exists(tmp / "folds/stratification.csv"));

  PipelineConfig e;
  e.manifest = c.manifest;
  e.predictions = perfect_predictions(plan);
  e.plan = tmp / "folds/plan.json";
  e.out_dir = tmp / "eval";
  r = run(cmd_evaluate, e);
  ASSERT_EQ(r.code, ExitCode::kOk) << r.err;
  EXPECT_EQ(detail::read_file(tmp / "eval/metrics.csv"),
            "class,targets,f1,precision,recall,map50,map50_95\n"
            "all,21,1.000000,1.000000,1.000000,1.000000,1.000000\n"
            "Fox,12,1.000000,1.000000,1.000000,1.000000,1.000000\n"
            "Boar,9,1.000000,1.000000,1.000000,1.000000,1.000000\n");
  EXPECT_EQ(detail::read_file(tmp / "eval/confusion.csv"),
            "predicted,Fox,Boar,background\nFox,12,0,0\nBoar,0,9,0\nbackground,0,0,0\n");
  EXPECT_TRUE(fs::exists(tmp / "eval/confusion_normalized.csv"));
  EXPECT_TRUE(fs::exists(tmp / "eval/evaluation.json"));

  e.mode = PoolMode::kPerFoldMean;
  e.out_dir = tmp / "eval_mean";
  EXPECT_EQ(run(cmd_evaluate, e).code, ExitCode::kOk);

  write(tmp / "epochs.csv", epoch_log());
  PipelineConfig rep;
  rep.epoch_log = tmp / "epochs.csv";
  rep.metrics = tmp / "eval/metrics.csv";
  rep.out_dir = tmp / "report";
  r = run(cmd_report, rep);
  ASSERT_EQ(r.code, ExitCode::kOk) << r.err;
  const auto md = detail::read_file(tmp / "report/summary.md");
  EXPECT_NE(md.find("- F1 plateau epoch: 51\n"), std::string::npos) << md;
  EXPECT_NE(md.find("| Fox | 12 | 1.000 |"), std::string::npos);
  const auto losses = detail::lines_of(detail::read_file(tmp / "report/losses.csv"));
  EXPECT_EQ(losses.size(), 62u);
  EXPECT_EQ(losses[0], "epoch,box_loss,cls_loss,obj_loss,total_loss");
  EXPECT_EQ(detail::lines_of(detail::read_file(tmp / "report/validation.csv"))[0],
            "epoch,f1,precision,recall,map50,map50_95");
}

TEST_F(PipelineTest, EvaluateRejectsInconsistentInputs) {
  PipelineConfig c;
  c.manifest = tmp / "prepared/manifest.json";
  c.out_dir = tmp / "eval";
  write(tmp / "ghost.jsonl", R"({"image_id":"ghost","class":0,"conf":0.5,"box":[0.5,0.5,0.2,0.2]})" "\n");
  c.predictions = {tmp / "ghost.jsonl"};
  auto r = run(cmd_evaluate, c);
  EXPECT_EQ(r.code, ExitCode::kInvalidInput);
  EXPECT_NE(r.err.find("ghost"), std::string::npos);

  write(tmp / "badclass.jsonl", R"({"image_id":"Fox_0","class":7,"conf":0.5,"box":[0.5,0.5,0.2,0.2]})" "\n");
  c.predictions = {tmp / "badclass.jsonl"};
  EXPECT_EQ(run(cmd_evaluate, c).code, ExitCode::kInvalidInput);

  write(tmp / "empty.jsonl", "");
  c.predictions = {tmp / "empty.jsonl"};
  r = run(cmd_evaluate, c);
  EXPECT_EQ(r.code, ExitCode::kOk);
  EXPECT_NE(r.err.find("no detections"), std::string::npos);

  write(tmp / "plan.json", R"({"k": 2, "seed": 0, "assignment": {}})");
  c.plan = tmp / "plan.json";
  EXPECT_EQ(run(cmd_evaluate, c).code, ExitCode::kInvalidInput);

  PipelineConfig raw = c;
  raw.plan.reset();
  raw.manifest = tmp / "raw/manifest.json";
  r = run(cmd_evaluate, raw);
  EXPECT_EQ(r.code, ExitCode::kInvalidInput);
  EXPECT_NE(r.err.find("prepare"), std::string::npos);
}

TEST_F(PipelineTest, ReportRejectsEmptyMetrics) {
  write(tmp / "epochs.csv", epoch_log());
  write(tmp / "metrics.csv", "");
  PipelineConfig c;
  c.epoch_log = tmp / "epochs.csv";
  c.metrics = tmp / "metrics.csv";
  c.out_dir = tmp / "report";
  EXPECT_EQ(run(cmd_report, c).code, ExitCode::kInvalidInput);
}

TEST(FetchCommand, TokenSourcesAndExitCodes) {
  testing_support::StubServer s;
  s.add_file("a.png", testing_support::png_bytes(64, 48, "a"));
  s.set_pages({nlohmann::json::array({{{"id", 1},
                                       {"media_url", "/files/a.png"},
                                       {"annotations",
                                        {{{"class", "Fox"},
                                          {"box", {{"x_min", 1}, {"y_min", 1}, {"x_max", 9}, {"y_max", 9}}}}}}}})});
  TempDir tmp;
  write(tmp / "token", "secret\n");
  PipelineConfig c;
  c.endpoint = s.endpoint();
  c.out_dir = tmp / "data";
  c.token_file = tmp / "token";
  c.initial_backoff = std::chrono::milliseconds(1);
  auto r = run(cmd_fetch, c);
  EXPECT_EQ(r.code, ExitCode::kOk) << r.err;
  EXPECT_NE(r.out.find("listed 1, downloaded 1"), std::string::npos);

  write(tmp / "token", "nope");
  EXPECT_EQ(run(cmd_fetch, c).code, ExitCode::kAuth);

  c.token_file.reset();
  ::setenv(kTokenEnvVar, "secret", 1);
  r = run(cmd_fetch, c);
  ::unsetenv(kTokenEnvVar);
  EXPECT_EQ(r.code, ExitCode::kOk) << r.err;
  EXPECT_NE(r.out.find("reused 1"), std::string::npos);

  s.fail_next("a.png", 100);
  c.out_dir = tmp / "other";
  c.max_attempts = 2;
  ::setenv(kTokenEnvVar, "secret", 1);
  r = run(cmd_fetch, c);
  ::unsetenv(kTokenEnvVar);
  EXPECT_EQ(r.code, ExitCode::kRemote);
  EXPECT_FALSE(fs::exists(tmp / "other/manifest.json"));
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run_cli(""), 1);
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("split --help"), 0);
  EXPECT_EQ(run_cli("bogus"), 1);
  EXPECT_EQ(run_cli("split --manifest /nonexistent/manifest.json --out /tmp/x"), 1);
  EXPECT_EQ(run_cli("fetch --out /tmp/x"), 1);
  EXPECT_EQ(run_cli("fetch --endpoint http://h --out /tmp/x --token secret"), 1);
}

TEST(Cli, InvalidInputAndConfigFile) {
  TempDir tmp;
  write(tmp / "bad.json", "{not json");
  EXPECT_EQ(run_cli("split --manifest " + (tmp / "bad.json").string() + " --out " + (tmp / "o").string()), 2);

  raw_dataset(tmp.path() / "raw");
  ASSERT_EQ(run_cli("prepare --manifest " + (tmp / "raw/manifest.json").string() + " --out " +
                    (tmp / "prep").string() + " --min-count 5 --other Rare"),
            0);
  EXPECT_EQ(read_manifest(tmp / "prep/manifest.json").classes,
            (std::vector<std::string>{"Fox", "Boar", "Other"}));
  write(tmp / "cfg.toml", "[split]\nk = 3\nseed = 11\nlink = \"copy\"\n");
  ASSERT_EQ(run_cli("--config " + (tmp / "cfg.toml").string() + " split --manifest " +
                    (tmp / "prep/manifest.json").string() + " --out " + (tmp / "folds").string()),
            0);
  const auto plan = parse_plan(detail::read_file(tmp / "folds/plan.json"));
  EXPECT_EQ(plan.k, 3u);
  EXPECT_EQ(plan.seed, 11u);
  EXPECT_FALSE(fs::is_symlink(tmp / "folds/fold_0/images/Fox_0.jpg"));
}
