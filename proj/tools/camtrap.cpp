// camtrap: camera-trap detection pipeline toolkit.
//
//   camtrap fetch    --endpoint URL --out DIR [--project ID] [--token-file FILE]
//   camtrap prepare  --manifest FILE --out DIR [--min-count 40] [--other NAME[,NAME...]]
//   camtrap split    --manifest FILE --out DIR [--k 5] [--seed N]
//   camtrap evaluate --manifest FILE --preds FILE[,FILE...] --out DIR [--iou 0.5]
//   camtrap report   --epoch-log FILE --metrics FILE --out DIR
//
// Options may also come from a TOML/INI file given with --config; flags on
// the command line take precedence. The API token is read from
// --token-file or the CAMTRAP_API_TOKEN environment variable, never from a flag.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "camtrap/pipeline.hpp"

namespace {

using camtrap::ExitCode;
using camtrap::PipelineConfig;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Camera-trap detection pipeline: ingest, prepare, split, evaluate, report"};
  app.set_config("--config", "", "Read options from a TOML/INI configuration file");
  app.require_subcommand(1);

  PipelineConfig cfg;
  std::vector<std::string> other_names;
  std::vector<std::string> preds;
  std::string mode = "pooled";
  std::string link = "symlink";
  std::string token_file;
  std::string plan;
  int backoff_ms = 250;

  auto* fetch = app.add_subcommand("fetch", "Download annotated media and write a manifest");
  fetch->add_option("--endpoint", cfg.endpoint, "Base URL of the media API")->required();
  fetch->add_option("--out", cfg.out_dir, "Data directory")->required();
  fetch->add_option("--project", cfg.project, "Restrict the listing to one project");
  fetch->add_option("--token-file", token_file, "File holding the API token");
  fetch->add_option("--workers", cfg.workers, "Parallel downloads")->capture_default_str()
      ->check(CLI::Range(1, 64));
  fetch->add_option("--retries", cfg.max_attempts, "Attempts per request")->capture_default_str()
      ->check(CLI::Range(1, 20));
  fetch->add_option("--backoff-ms", backoff_ms, "Initial retry delay")->capture_default_str()
      ->check(CLI::NonNegativeNumber);

  auto* prepare = app.add_subcommand("prepare", "Filter rare species and write dataset statistics");
  prepare->add_option("--manifest", cfg.manifest, "Input manifest")->required()
      ->check(CLI::ExistingFile);
  prepare->add_option("--out", cfg.out_dir, "Output directory")->required();
  prepare->add_option("--min-count", cfg.min_count, "Minimum images per species")
      ->capture_default_str();
  prepare->add_option("--other", other_names, "Species folded into the Other class")
      ->delimiter(',');

  auto* split = app.add_subcommand("split", "Stratified k-fold split and per-fold layouts");
  split->add_option("--manifest", cfg.manifest, "Prepared manifest")->required()
      ->check(CLI::ExistingFile);
  split->add_option("--out", cfg.out_dir, "Output directory")->required();
  split->add_option("--k", cfg.k, "Number of folds")->capture_default_str()
      ->check(CLI::Range(2, 1000));
  split->add_option("--seed", cfg.seed, "Shuffle seed")->capture_default_str();
  split->add_option("--link", link, "How media enter the layout")
      ->check(CLI::IsMember({"symlink", "copy"}))->capture_default_str();

  auto* evaluate = app.add_subcommand("evaluate", "Score pooled cross-validation predictions");
  evaluate->add_option("--manifest", cfg.manifest, "Prepared manifest")->required()
      ->check(CLI::ExistingFile);
  evaluate->add_option("--preds", preds, "Predictions JSONL, one file per fold")->required()
      ->delimiter(',');
  evaluate->add_option("--out", cfg.out_dir, "Output directory")->required();
  evaluate->add_option("--iou", cfg.iou, "Matching IoU for P/R/F1 and the confusion matrix")
      ->capture_default_str()->check(CLI::Range(0.0, 1.0));
  evaluate->add_option("--conf", cfg.confusion_conf, "Confidence floor for the confusion matrix")
      ->capture_default_str()->check(CLI::Range(0.0, 1.0));
  evaluate->add_option("--plan", plan, "Split plan assigning validation images to folds")
      ->check(CLI::ExistingFile);
  evaluate->add_option("--mode", mode, "pooled or per-fold-mean")
      ->check(CLI::IsMember({"pooled", "per-fold-mean"}))->capture_default_str();

  auto* report = app.add_subcommand("report", "Plot-ready training curves and a summary");
  report->add_option("--epoch-log", cfg.epoch_log, "Per-epoch CSV log")->required()
      ->check(CLI::ExistingFile);
  report->add_option("--metrics", cfg.metrics, "metrics.csv from evaluate")->required()
      ->check(CLI::ExistingFile);
  report->add_option("--out", cfg.out_dir, "Output directory")->required();
  report->add_option("--window", cfg.plateau_window, "Plateau window in epochs")
      ->capture_default_str()->check(CLI::Range(1, 100000));
  report->add_option("--epsilon", cfg.plateau_epsilon, "Plateau relative-change tolerance")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::kUsage);
  }

  cfg.other_names.insert(other_names.begin(), other_names.end());
  for (const auto& p : preds) cfg.predictions.emplace_back(p);
  if (!token_file.empty()) cfg.token_file = token_file;
  if (!plan.empty()) cfg.plan = plan;
  cfg.mode = mode == "pooled" ? camtrap::PoolMode::kPooled : camtrap::PoolMode::kPerFoldMean;
  cfg.link = link == "copy" ? camtrap::MediaLink::kCopy : camtrap::MediaLink::kSymlink;
  cfg.initial_backoff = std::chrono::milliseconds(backoff_ms);

  ExitCode rc = ExitCode::kUsage;
  if (*fetch) rc = camtrap::cmd_fetch(cfg, std::cout, std::cerr);
  if (*prepare) rc = camtrap::cmd_prepare(cfg, std::cout, std::cerr);
  if (*split) rc = camtrap::cmd_split(cfg, std::cout, std::cerr);
  if (*evaluate) rc = camtrap::cmd_evaluate(cfg, std::cout, std::cerr);
  if (*report) rc = camtrap::cmd_report(cfg, std::cout, std::cerr);
  return static_cast<int>(rc);
}
