#pragma once

// End-to-end pipeline commands behind the `camtrap` CLI. Each command
// reads its inputs, writes only under its output directory, and returns
// a process exit code; errors are reported on `err`.

#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "camtrap/dataset.hpp"
#include "camtrap/detail/fs.hpp"
#include "camtrap/detail/text.hpp"
#include "camtrap/diagnostics.hpp"
#include "camtrap/error.hpp"
#include "camtrap/evaluator.hpp"
#include "camtrap/fetch.hpp"
#include "camtrap/formats.hpp"
#include "camtrap/splitter.hpp"

namespace camtrap {

enum class PoolMode { kPooled, kPerFoldMean };

struct PipelineConfig {
  // fetch
  std::string endpoint;
  std::optional<std::filesystem::path> token_file;
  std::optional<std::string> project;
  std::size_t workers = 4;
  std::size_t max_attempts = 5;
  std::chrono::milliseconds initial_backoff{250};

  // shared
  std::filesystem::path manifest;
  std::filesystem::path out_dir;

  // prepare
  std::size_t min_count = kDefaultMinCount;
  std::set<std::string> other_names;

  // split
  std::size_t k = kDefaultFolds;
  std::uint64_t seed = 0;
  MediaLink link = MediaLink::kSymlink;

  // evaluate
  std::vector<std::filesystem::path> predictions;
  std::optional<std::filesystem::path> plan;
  double iou = kDefaultMatchIou;
  double confusion_conf = kDefaultConfusionConfidence;
  PoolMode mode = PoolMode::kPooled;

  // report
  std::filesystem::path epoch_log;
  std::filesystem::path metrics;
  std::size_t plateau_window = kDefaultPlateauWindow;
  double plateau_epsilon = kDefaultPlateauEpsilon;
};

inline void validate(const PipelineConfig& c) {
  if (c.k < 2) throw InvalidInput("k must be at least 2");
  for (double t : {c.iou, c.confusion_conf}) {
    if (!(t >= 0.0 && t <= 1.0)) throw InvalidInput("thresholds must lie in [0,1]");
  }
  if (!(c.plateau_epsilon > 0.0)) throw InvalidInput("plateau epsilon must be positive");
}

// Runs `body`, mapping exceptions onto the documented exit codes.
inline ExitCode run_guarded(std::ostream& err, const std::function<ExitCode()>& body) {
  try {
    return body();
  } catch (const AuthError& e) {
    err << "error: " << e.what() << "\n";
    return ExitCode::kAuth;
  } catch (const RemoteError& e) {
    err << "error: " << e.what() << "\n";
    return ExitCode::kRemote;
  } catch (const InvalidInput& e) {
    err << "error: " << e.what() << "\n";
    return ExitCode::kInvalidInput;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return ExitCode::kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return ExitCode::kIo;
  }
}

namespace detail {

inline std::filesystem::path normalized_dir(const std::filesystem::path& p) {
  return std::filesystem::weakly_canonical(std::filesystem::absolute(p));
}

inline void require_out_dir(const PipelineConfig& c) {
  if (c.out_dir.empty()) throw InvalidInput("an output directory is required (--out)");
}

// Token lookup: token file from flags/config first, then the environment.
inline std::string resolve_token(const PipelineConfig& c) {
  if (c.token_file) {
    return std::string(trim(read_file(*c.token_file)));
  }
  if (const char* env = std::getenv(kTokenEnvVar)) return env;
  return {};
}

inline ClassCatalog catalog_of(const Manifest& m) {
  if (m.classes.empty()) {
    throw InvalidInput("manifest has no class list; run `prepare` first");
  }
  return ClassCatalog::from_names(m.classes);
}

}  // namespace detail

// ---------------------------------------------------------------------------

inline ExitCode cmd_fetch(const PipelineConfig& c, std::ostream& out, std::ostream& err) {
  return run_guarded(err, [&] {
    detail::require_out_dir(c);
    FetchOptions opt;
    opt.endpoint = c.endpoint;
    opt.token = detail::resolve_token(c);
    opt.project = c.project;
    opt.out_dir = c.out_dir;
    opt.workers = c.workers;
    opt.max_attempts = c.max_attempts;
    opt.initial_backoff = c.initial_backoff;
    opt.log = [&](const std::string& m) { err << m << "\n"; };
    const auto s = fetch_package(opt);
    for (const auto& w : s.warnings) err << "warning: " << w << "\n";
    out << "listed " << s.listed << ", downloaded " << s.downloaded << ", reused " << s.reused
        << ", malformed " << s.malformed << ", empty " << s.empty << ", failed "
        << s.failures.size() << "\n";
    if (!s.complete()) {
      for (const auto& f : s.failures) err << "failed: " << f.image_id << ": " << f.reason << "\n";
      return ExitCode::kRemote;
    }
    return ExitCode::kOk;
  });
}

inline ExitCode cmd_prepare(const PipelineConfig& c, std::ostream& out, std::ostream& err) {
  namespace fs = std::filesystem;
  return run_guarded(err, [&] {
    detail::require_out_dir(c);
    const fs::path in_dir = detail::normalized_dir(c.manifest.parent_path().empty()
                                                       ? fs::path(".")
                                                       : c.manifest.parent_path());
    const fs::path out_dir = detail::normalized_dir(c.out_dir);
    if (in_dir == out_dir) {
      throw InvalidInput("prepare must write to a directory other than the input manifest's");
    }
    const Manifest input = read_manifest(c.manifest);
    auto result = build_catalog(input.images, c.min_count, c.other_names);
    if (result.records.empty()) {
      err << "error: no images left after dropping species seen in fewer than " << c.min_count
          << " images\n";
      return ExitCode::kInvalidInput;
    }
    const auto stats = dataset_stats(result.records, result.catalog);

    Manifest prepared;
    prepared.classes = result.catalog.names;
    for (auto& rec : result.records) {
      rec.source_uri = media_path(in_dir, rec).lexically_normal().lexically_relative(out_dir).generic_string();
      prepared.images.push_back(std::move(rec));
    }
    detail::ensure_dir(out_dir);
    write_manifest(out_dir / "manifest.json", prepared);

    std::string classes;
    for (const auto& n : result.catalog.names) classes += n + "\n";
    detail::write_file_atomic(out_dir / "classes.txt", classes);

    std::string class_csv = "index,class,images,targets\n";
    for (std::size_t i = 0; i < result.catalog.size(); ++i) {
      class_csv += std::to_string(i) + "," + detail::csv_field(result.catalog.names[i]) + "," +
                   std::to_string(stats.class_images[i]) + "," +
                   std::to_string(stats.class_targets[i]) + "\n";
    }
    detail::write_file_atomic(out_dir / "class_stats.csv", class_csv);

    std::string mp_csv = "megapixels,images\n";
    for (const auto& [mp, n] : stats.megapixel_buckets) {
      mp_csv += std::to_string(mp) + "," + std::to_string(n) + "\n";
    }
    detail::write_file_atomic(out_dir / "image_sizes.csv", mp_csv);

    std::string res_csv = "width,height,images\n";
    for (const auto& [wh, n] : stats.resolutions) {
      res_csv += std::to_string(wh.first) + "," + std::to_string(wh.second) + "," +
                 std::to_string(n) + "\n";
    }
    detail::write_file_atomic(out_dir / "resolutions.csv", res_csv);

    out << "kept " << prepared.images.size() << " of " << input.images.size() << " images, "
        << stats.total_annotations << " annotations in " << result.catalog.size()
        << " classes\n";
    return ExitCode::kOk;
  });
}

inline ExitCode cmd_split(const PipelineConfig& c, std::ostream& out, std::ostream& err) {
  namespace fs = std::filesystem;
  return run_guarded(err, [&] {
    detail::require_out_dir(c);
    validate(c);
    const Manifest m = read_manifest(c.manifest);
    const auto catalog = detail::catalog_of(m);
    const fs::path manifest_dir = c.manifest.parent_path().empty() ? fs::path(".")
                                                                   : c.manifest.parent_path();
    const auto plan = stratified_kfold(m.images, catalog, c.k, c.seed);
    const auto report = verify_stratification(plan, m.images, catalog);

    ExportOptions opt{manifest_dir, c.link};
    for (std::size_t f = 0; f < c.k; ++f) {
      export_split(plan, f, m.images, catalog, c.out_dir / ("fold_" + std::to_string(f)), opt);
    }
    detail::write_file_atomic(c.out_dir / "plan.json", serialize_plan(plan));
    detail::write_file_atomic(c.out_dir / "stratification.csv", stratification_csv(report));

    const auto sizes = plan.fold_sizes();
    out << "split " << m.images.size() << " images into " << c.k << " folds (sizes";
    for (auto s : sizes) out << " " << s;
    out << "), max per-class count deviation " << detail::format_fixed(report.max_count_deviation, 3)
        << "\n";
    for (auto cls : report.flagged_classes) {
      err << "warning: class " << catalog.names[cls] << " deviates by more than one image\n";
    }
    return ExitCode::kOk;
  });
}

inline ExitCode cmd_evaluate(const PipelineConfig& c, std::ostream& out, std::ostream& err) {
  return run_guarded(err, [&] {
    detail::require_out_dir(c);
    validate(c);
    if (c.predictions.empty()) throw InvalidInput("at least one predictions file is required");
    const Manifest m = read_manifest(c.manifest);
    const auto catalog = detail::catalog_of(m);
    const auto gts = ground_truths(m.images, catalog);

    std::optional<SplitPlan> plan;
    if (c.plan) {
      plan = parse_plan(detail::read_file(*c.plan));
      if (plan->k != c.predictions.size()) {
        throw InvalidInput("plan has " + std::to_string(plan->k) + " folds but " +
                           std::to_string(c.predictions.size()) + " predictions files were given");
      }
    }

    std::set<std::string> known;
    for (const auto& rec : m.images) known.insert(rec.image_id);
    std::vector<FoldPredictions> folds;
    std::set<std::string> unknown;
    std::size_t total = 0;
    for (std::size_t f = 0; f < c.predictions.size(); ++f) {
      FoldPredictions fold;
      try {
        fold.detections = parse_predictions(detail::read_file(c.predictions[f]));
      } catch (const InvalidInput& e) {
        throw InvalidInput(c.predictions[f].string() + ": " + e.what());
      }
      for (const auto& d : fold.detections) {
        if (!known.contains(d.image_id)) unknown.insert(d.image_id);
        validate(d, catalog.size());
      }
      if (plan) {
        const auto ids = plan->fold_images(f);
        fold.val_images = std::set<std::string>(ids.begin(), ids.end());
      }
      total += fold.detections.size();
      folds.push_back(std::move(fold));
    }
    if (!unknown.empty()) {
      std::string msg = "predictions reference images missing from the manifest:";
      for (const auto& id : unknown) msg += " " + id;
      throw InvalidInput(msg);
    }
    if (total == 0) err << "warning: no detections in the predictions files\n";

    EvaluationConfig ec;
    ec.match_iou = c.iou;
    ec.confusion_conf = c.confusion_conf;
    ec.confusion_iou = c.iou;
    Evaluation ev;
    if (c.mode == PoolMode::kPooled) {
      const auto pooled = pool_cv(folds);
      ev = evaluate(pooled, gts, catalog.names, ec);
    } else {
      ev = evaluate_per_fold_mean(folds, gts, catalog.names, ec);
    }

    detail::ensure_dir(c.out_dir);
    detail::write_file_atomic(c.out_dir / "metrics.csv", metrics_csv(ev));
    detail::write_file_atomic(c.out_dir / "confusion.csv", confusion_csv(ev.confusion, catalog.names));
    detail::write_file_atomic(c.out_dir / "confusion_normalized.csv",
                              confusion_normalized_csv(ev.confusion, catalog.names));
    nlohmann::ordered_json summary;
    summary["mode"] = c.mode == PoolMode::kPooled ? "pooled" : "per-fold-mean";
    summary["match_iou"] = c.iou;
    summary["confusion_conf"] = c.confusion_conf;
    summary["operating_threshold"] = ev.operating_threshold;
    summary["detections"] = total;
    summary["targets"] = ev.all.targets;
    detail::write_file_atomic(c.out_dir / "evaluation.json", summary.dump(2) + "\n");

    out << "all: targets " << ev.all.targets << ", F1 " << detail::format_fixed(ev.all.f1, 3)
        << ", P " << detail::format_fixed(ev.all.precision, 3) << ", R "
        << detail::format_fixed(ev.all.recall, 3) << ", mAP@.5 "
        << detail::format_fixed(ev.all.ap50, 3) << ", mAP@.5:.95 "
        << detail::format_fixed(ev.all.ap50_95, 3) << " (confidence threshold "
        << detail::format_fixed(ev.operating_threshold, 4) << ")\n";
    return ExitCode::kOk;
  });
}

// ---------------------------------------------------------------------------
// Report

namespace detail {

inline std::string plateau_line(const std::string& label, const std::vector<double>& series,
                                const PipelineConfig& c) {
  if (series.size() < c.plateau_window + 1) {
    return "- " + label + " plateau epoch: n/a (fewer than " +
           std::to_string(c.plateau_window + 1) + " epochs)\n";
  }
  const auto e = detect_plateau(series, c.plateau_window, c.plateau_epsilon);
  return "- " + label + " plateau epoch: " + (e ? std::to_string(*e) : std::string("none")) + "\n";
}

inline std::string markdown_metrics(const std::vector<ClassMetrics>& rows) {
  std::string out =
      "| Class | Targets | F1 | P | R | mAP@.5 | mAP@.5:.95 |\n"
      "|---|---:|---:|---:|---:|---:|---:|\n";
  for (const auto& r : rows) {
    out += "| " + r.name + " | " + std::to_string(r.targets) + " | " + format_fixed(r.f1, 3) +
           " | " + format_fixed(r.precision, 3) + " | " + format_fixed(r.recall, 3) + " | " +
           format_fixed(r.ap50, 3) + " | " + format_fixed(r.ap50_95, 3) + " |\n";
  }
  return out;
}

}  // namespace detail

inline ExitCode cmd_report(const PipelineConfig& c, std::ostream& out, std::ostream& err) {
  return run_guarded(err, [&] {
    detail::require_out_dir(c);
    validate(c);
    const auto log = parse_training_log(detail::read_file(c.epoch_log));
    const auto metrics = parse_metrics_csv(detail::read_file(c.metrics));

    const bool has_p = !log.empty() && log.front().precision.has_value();
    const bool has_r = !log.empty() && log.front().recall.has_value();
    const bool has_m50 = !log.empty() && log.front().val_map50.has_value();
    const bool has_m95 = !log.empty() && log.front().val_map50_95.has_value();

    std::string losses = "epoch,box_loss,cls_loss,obj_loss,total_loss\n";
    std::string val = "epoch,f1";
    if (has_p) val += ",precision";
    if (has_r) val += ",recall";
    if (has_m50) val += ",map50";
    if (has_m95) val += ",map50_95";
    val += "\n";
    std::vector<double> box, cls, obj, total, f1, m50, m95;
    auto f6 = [](double v) { return detail::format_fixed(v, 6); };
    for (const auto& e : log) {
      losses += std::to_string(e.epoch) + "," + f6(e.box_loss) + "," + f6(e.cls_loss) + "," +
                f6(e.obj_loss) + "," + f6(e.total_loss()) + "\n";
      val += std::to_string(e.epoch) + "," + f6(e.val_f1);
      if (has_p) val += "," + f6(e.precision.value_or(0.0));
      if (has_r) val += "," + f6(e.recall.value_or(0.0));
      if (has_m50) val += "," + f6(e.val_map50.value_or(0.0));
      if (has_m95) val += "," + f6(e.val_map50_95.value_or(0.0));
      val += "\n";
      box.push_back(e.box_loss);
      cls.push_back(e.cls_loss);
      obj.push_back(e.obj_loss);
      total.push_back(e.total_loss());
      f1.push_back(e.val_f1);
      m50.push_back(e.val_map50.value_or(0.0));
      m95.push_back(e.val_map50_95.value_or(0.0));
    }

    std::string md = "# Training and evaluation summary\n\n## Training curves\n\n";
    if (log.empty()) {
      md += "- Epochs logged: 0\n";
    } else {
      md += "- Epochs logged: " + std::to_string(log.size()) + " (" +
            std::to_string(log.front().epoch) + " to " + std::to_string(log.back().epoch) + ")\n";
      md += "- Plateau criterion: relative change below " +
            detail::format_fixed(c.plateau_epsilon, 4) + " for " +
            std::to_string(c.plateau_window) + " consecutive epochs\n";
      md += detail::plateau_line("F1", f1, c);
      md += detail::plateau_line("Total loss", total, c);
      md += detail::plateau_line("Box loss", box, c);
      md += detail::plateau_line("Classification loss", cls, c);
      md += detail::plateau_line("Objectness loss", obj, c);
      if (has_m50) md += detail::plateau_line("mAP@.5", m50, c);
      if (has_m95) md += detail::plateau_line("mAP@.5:.95", m95, c);
      md += "- Final F1: " + detail::format_fixed(log.back().val_f1, 3) + "\n";
    }
    md += "\n## Detection metrics\n\n" + detail::markdown_metrics(metrics);

    detail::ensure_dir(c.out_dir);
    detail::write_file_atomic(c.out_dir / "losses.csv", losses);
    detail::write_file_atomic(c.out_dir / "validation.csv", val);
    detail::write_file_atomic(c.out_dir / "summary.md", md);
    out << "wrote report for " << log.size() << " epochs and " << metrics.size()
        << " metric rows to " << c.out_dir.string() << "\n";
    return ExitCode::kOk;
  });
}

}  // namespace camtrap
