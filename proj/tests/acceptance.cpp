// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "camtrap/pipeline.hpp"
#include "oracle/brute_force.hpp"
#include "support/stub_server.hpp"
#include "support/synthetic.hpp"
#include "support/temp_dir.hpp"

using namespace camtrap;
namespace fs = std::filesystem;

namespace {

// Tolerances.
constexpr double kTableF1Slack = 0.02;
constexpr double kOracleTolerance = 1e-9;
constexpr double kGeometryTolerance = 1e-9;
constexpr double kNormalizedSumTolerance = 1e-9;
constexpr double kCrossEntropyTolerance = 1e-6;
constexpr double kClosedFormTolerance = 1e-12;

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

struct Result {
  bool pass = true;
  std::string detail;
};

struct Check {
  std::string name;
  std::function<Result()> run;
};

// ---------------------------------------------------------------------------

Result table_f1_consistency() {
  struct Row {
    const char* name;
    double f1, p, r;
  };
  // Class, F1, P, R as published.
  const Row rows[] = {
      {"all", 0.85, 0.88, 0.82},
      {"Wild Boar", 0.89, 0.92, 0.86},
      {"Red Deer", 0.86, 0.88, 0.85},
      {"Red Fox", 0.94, 0.93, 0.94},
      {"Raccoon Dog", 0.94, 0.93, 0.95},
      {"European Bison", 0.81, 0.89, 0.76},
      {"Eurasian Elk", 0.85, 0.89, 0.81},
      {"Roe Deer", 0.58, 0.67, 0.53},
      {"Eurasian Red Squirrel", 0.89, 0.93, 0.84},
      {"Wolf", 0.87, 0.89, 0.85},
      {"European Badger", 0.89, 0.93, 0.86},
      {"European Pine Marten", 0.76, 0.83, 0.72},
  };
  Result res;
  double worst = 0;
  std::string worst_name;
  for (const auto& r : rows) {
    const double d = std::abs(f1_score(r.p, r.r) - r.f1);
    if (d > worst) {
      worst = d;
      worst_name = r.name;
    }
    if (d > kTableF1Slack) {
      res.pass = false;
      res.detail += std::string(r.name) + " off by " + detail::format_fixed(d, 4) + "; ";
    }
  }
  res.detail += std::to_string(std::size(rows)) + " rows, max |diff| " + detail::format_fixed(worst, 4) +
                " (" + worst_name + ")";
  return res;
}

Result map_oracle_equivalence() {
  std::mt19937_64 rng(1234);
  std::vector<double> ladder;
  for (int i = 0; i < 10; ++i) ladder.push_back((50 + 5 * i) / 100.0);
  const int instances = 1000;
  double worst50 = 0, worst95 = 0;
  int failures = 0;
  std::size_t total_dets = 0;
  for (int i = 0; i < instances; ++i) {
    const auto inst = testing_support::random_instance(rng, 10, 5, 20);
    total_dets += inst.dets.size();
    const auto r = map_at(inst.dets, inst.gts, inst.classes, std::span<const double>(ladder));
    const auto o = oracle::map(inst.dets, inst.gts, inst.classes, ladder);
    const double d50 = std::abs(r.mean_ap_per_threshold[0] - o.map50);
    const double d95 = std::abs(r.mean_ap - o.map_mean);
    worst50 = std::max(worst50, d50);
    worst95 = std::max(worst95, d95);
    if (d50 > kOracleTolerance || d95 > kOracleTolerance) ++failures;
  }
  return {failures == 0, std::to_string(instances) + " instances (" + std::to_string(total_dets) +
                             " detections), max diff mAP@.5 " + sci(worst50) +
                             ", mAP@.5:.95 " + sci(worst95) + ", mismatches " +
                             std::to_string(failures)};
}

Result geometry_properties() {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> dim(1, 10000);
  const int boxes = 5000;
  int failures = 0;
  double worst_rt = 0;
  for (int i = 0; i < boxes; ++i) {
    const ImageSize s{dim(rng), dim(rng)};
    const auto a = testing_support::random_box(rng);
    const auto b = testing_support::random_box(rng);
    const double ab = iou(a, b), ba = iou(b, a), aa = iou(a, a);
    bool ok = ab == ba && std::abs(aa - 1.0) <= kClosedFormTolerance && ab >= 0.0 && ab <= 1.0;
    // normalized -> pixel -> normalized
    const auto n = to_normalized(to_pixel(a, s), s);
    const double rt = std::max({std::abs(n.cx - a.cx), std::abs(n.cy - a.cy), std::abs(n.w - a.w),
                                std::abs(n.h - a.h)});
    worst_rt = std::max(worst_rt, rt);
    ok = ok && rt <= kGeometryTolerance;
    // pixel -> normalized -> pixel, relative to a one-pixel floor
    const auto pb = to_pixel(b, s);
    const auto p = to_pixel(to_normalized(pb, s), s);
    for (auto [x, y] : {std::pair{p.x_min, pb.x_min}, {p.y_min, pb.y_min}, {p.x_max, pb.x_max}, {p.y_max, pb.y_max}}) {
      ok = ok && std::abs(x - y) <= kGeometryTolerance * std::max(1.0, std::abs(y));
    }
    failures += ok ? 0 : 1;
  }
  return {failures == 0, std::to_string(boxes) + " random box pairs, max normalized round-trip error " +
                             sci(worst_rt) + ", violations " + std::to_string(failures)};
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    const auto rel = fs::relative(e.path(), dir).generic_string();
    if (e.is_symlink()) {
      out[rel] = "-> " + fs::read_symlink(e.path()).string();
    } else if (e.is_regular_file()) {
      out[rel] = detail::read_file(e.path());
    }
  }
  return out;
}

Result stratified_split() {
  const std::vector<std::string> names{"Wild Boar", "Red Deer", "Red Fox", "Raccoon Dog",
                                       "European Bison", "Eurasian Elk", "Roe Deer",
                                       "Eurasian Red Squirrel", "Wolf", "European Badger",
                                       "European Pine Marten", "Other"};
  const std::vector<std::size_t> table{1070, 872, 356, 193, 176, 103, 97, 84, 71, 63, 58, 60};
  std::vector<std::size_t> scaled;  // same skew, 4804 images
  for (auto v : table) scaled.push_back(v * 3 / 2);

  int violations = 0;
  int configurations = 0;
  std::string notes;
  for (const auto* counts : std::vector<const std::vector<std::size_t>*>{&table, &scaled}) {
    auto records = testing_support::single_label_records(names, *counts);
    const auto catalog = build_catalog(records, 1).catalog;
    for (std::size_t k : {2, 3, 5, 7, 10}) {
      for (std::uint64_t seed : {0ull, 1ull, 2024ull}) {
        ++configurations;
        const auto plan = stratified_kfold(records, catalog, k, seed);
        const auto rep = verify_stratification(plan, records, catalog);
        const auto [mn, mx] = std::minmax_element(rep.fold_sizes.begin(), rep.fold_sizes.end());
        if (*mx - *mn > 1) ++violations;
        for (std::size_t c = 0; c < catalog.size(); ++c) {
          const std::size_t n_c = catalog.image_counts[c];
          for (std::size_t f = 0; f < k; ++f) {
            const auto v = rep.counts[f][c];
            if (v != n_c / k && v != (n_c + k - 1) / k) {
              ++violations;
              notes = " e.g. k=" + std::to_string(k) + " class " + catalog.names[c];
            }
          }
        }
        // Input order must not matter.
        auto shuffled = records;
        std::mt19937_64 rng(seed + 7);
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        if (serialize_plan(stratified_kfold(shuffled, catalog, k, seed)) != serialize_plan(plan)) ++violations;
      }
    }
  }

  // Byte-identical exports for identical seeds.
  testing_support::TempDir tmp("camtrap_accept_split");
  auto records = testing_support::single_label_records(names, table);
  for (const auto& r : records) {
    fs::create_directories((tmp.path() / "data" / r.source_uri).parent_path());
    std::ofstream(tmp.path() / "data" / r.source_uri) << r.image_id;
  }
  const auto catalog = build_catalog(records, 1).catalog;
  const ExportOptions opt{tmp.path() / "data", MediaLink::kSymlink};
  auto export_all = [&](const SplitPlan& plan) {
    fs::remove_all(tmp.path() / "out");
    for (std::size_t f = 0; f < plan.k; ++f) {
      export_split(plan, f, records, catalog, tmp.path() / "out" / ("fold_" + std::to_string(f)), opt);
    }
    return snapshot(tmp.path() / "out");
  };
  const auto first = export_all(stratified_kfold(records, catalog, 5, 42));
  std::reverse(records.begin(), records.end());
  const auto second = export_all(stratified_kfold(records, catalog, 5, 42));
  const bool identical = first == second;
  if (!identical) ++violations;

  return {violations == 0, std::to_string(configurations) + " (dataset, k, seed) configurations up to " +
                               std::to_string(std::accumulate(scaled.begin(), scaled.end(), std::size_t{0})) +
                               " images, 12 classes; violations " + std::to_string(violations) + notes +
                               "; re-export of " + std::to_string(first.size()) + " files " +
                               (identical ? "byte-identical" : "DIFFERS")};
}

Result confusion_conservation() {
  std::mt19937_64 rng(77);
  const int instances = 1000;
  int violations = 0;
  double worst = 0;
  for (int i = 0; i < instances; ++i) {
    const auto inst = testing_support::random_instance(rng);
    const auto cm = confusion_matrix(inst.dets, inst.gts, inst.classes);
    std::vector<std::uint64_t> per_class(inst.classes, 0);
    for (const auto& g : inst.gts) ++per_class[g.class_index];
    for (std::size_t c = 0; c < inst.classes; ++c) {
      if (cm.column_sum(c) != per_class[c]) ++violations;
    }
    const auto norm = cm.column_normalized();
    for (std::size_t t = 0; t < cm.dim(); ++t) {
      if (cm.column_sum(t) == 0) continue;
      double s = 0;
      for (std::size_t p = 0; p < cm.dim(); ++p) s += norm[p][t];
      worst = std::max(worst, std::abs(s - 1.0));
      if (std::abs(s - 1.0) > kNormalizedSumTolerance) ++violations;
    }
    // Without detections every ground truth lands in the background row.
    const auto missed = confusion_matrix({}, inst.gts, inst.classes);
    for (std::size_t c = 0; c < inst.classes; ++c) {
      if (missed.at(missed.background(), c) != per_class[c]) ++violations;
    }
    // The matcher agrees with the exhaustive reference.
    const auto ref = oracle::confusion(inst.dets, inst.gts, inst.classes, kDefaultConfusionConfidence, kDefaultMatchIou);
    for (std::size_t p = 0; p < cm.dim(); ++p) {
      for (std::size_t t = 0; t < cm.dim(); ++t) violations += cm.at(p, t) == ref[p][t] ? 0 : 1;
    }
  }
  return {violations == 0, std::to_string(instances) + " instances, max |column sum - 1| " +
                               sci(worst) + ", violations " + std::to_string(violations)};
}

Result loss_diagnostics() {
  bool ok = true;
  std::string d;
  const NormalizedBox b{0.4, 0.6, 0.3, 0.2};
  const std::vector<double> one_hot{0.0, 1.0, 0.0};
  ok = ok && bbox_regression_loss(b, b) == 0.0;
  ok = ok && classification_loss(one_hot, 1) == 0.0;
  ok = ok && objectness_loss(1.0, 1) == 0.0 && objectness_loss(0.0, 0) == 0.0;
  const std::vector<double> p{0.7, 0.2, 0.1};
  const double ce = classification_loss(p, 0);
  ok = ok && std::abs(ce - 0.356675) <= kCrossEntropyTolerance;
  d += "CE(0.7) = " + detail::format_fixed(ce, 6);
  double worst = 0;
  for (std::size_t C = 2; C <= 20; ++C) {
    const std::vector<double> uni(C, 1.0 / static_cast<double>(C));
    worst = std::max(worst, std::abs(classification_loss(uni, 0) - std::log(static_cast<double>(C))));
  }
  ok = ok && worst <= kClosedFormTolerance;
  d += ", uniform vs ln C max diff " + sci(worst) + ", zero at perfect prediction " +
       (ok ? "yes" : "no");
  return {ok, d};
}

Result plateau_detection() {
  // Rising F1 to epoch 51, then flat with +-0.4% jitter through epoch 60.
  std::vector<double> f1;
  for (int e = 0; e <= 51; ++e) f1.push_back(0.25 + 0.6 * e / 51.0);
  const double jitter[] = {0.003, -0.002, 0.004, -0.001, 0.002, -0.003, 0.001, 0.0, 0.002};
  for (int e = 52; e <= 60; ++e) f1.push_back(0.85 * (1.0 + jitter[e - 52]));
  // Decaying total loss that settles at the same epoch.
  std::vector<double> loss;
  for (int e = 0; e <= 51; ++e) loss.push_back(0.08 + 0.4 * std::exp(-e / 12.0) + 0.002 * (51 - e));
  for (int e = 52; e <= 60; ++e) loss.push_back(loss[51] * (1.0 - 0.0005 * (e - 51)));
  const auto a = detect_plateau(f1, 9, 0.01);
  const auto b = detect_plateau(loss, 9, 0.01);
  const bool ok = a == std::optional<std::size_t>(51) && b == std::optional<std::size_t>(51);
  auto show = [](const std::optional<std::size_t>& v) { return v ? std::to_string(*v) : std::string("none"); };
  return {ok, "61-point curves (epochs 0..60), window 9, eps 0.01: F1 plateau " + show(a) +
                  ", loss plateau " + show(b) + " (expected 51)"};
}

Result golden_fixture() {
  const fs::path golden(CAMTRAP_GOLDEN_DIR);
  testing_support::TempDir tmp("camtrap_accept_golden");
  PipelineConfig c;
  c.manifest = golden / "manifest.json";
  c.plan = golden / "plan.json";
  for (int f = 0; f < 5; ++f) c.predictions.push_back(golden / ("preds_fold" + std::to_string(f) + ".jsonl"));
  c.out_dir = tmp.path();
  std::ostringstream out, err;
  const auto code = cmd_evaluate(c, out, err);
  if (code != ExitCode::kOk) return {false, "evaluate exited " + std::to_string(static_cast<int>(code)) + ": " + err.str()};
  std::string d;
  bool ok = true;
  for (const char* f : {"metrics.csv", "confusion.csv", "confusion_normalized.csv"}) {
    const bool same = detail::read_file(tmp.path() / f) == detail::read_file(golden / f);
    ok = ok && same;
    d += std::string(f) + (same ? " identical; " : " DIFFERS; ");
  }
  const auto m = read_manifest(golden / "manifest.json");
  return {ok, d + std::to_string(m.images.size()) + " images, " + std::to_string(m.classes.size()) + " classes"};
}

Result ingestion_contract() {
  using nlohmann::json;
  testing_support::StubServer s;
  std::vector<json> pages(3, json::array());
  for (int i = 0; i < 7; ++i) {
    const std::string file = "m" + std::to_string(i) + ".png";
    s.add_file(file, testing_support::png_bytes(640 + i, 480, file));
    json r{{"id", 100 + i},
           {"media_url", "/files/" + file},
           {"location_id", "L" + std::to_string(i % 2)},
           {"annotations",
            json::array({{{"class", i % 3 ? "Red Deer" : "Wild Boar"},
                          {"box", {{"x_min", 5}, {"y_min", 5}, {"x_max", 300}, {"y_max", 200}}}}})}};
    if (i % 2) {
      r["width"] = 640 + i;
      r["height"] = 480;
    }
    pages[static_cast<std::size_t>(i) / 3].push_back(r);
  }
  s.set_pages(pages);
  s.fail_next("m4.png", 3);  // flaky media endpoint

  testing_support::TempDir tmp("camtrap_accept_fetch");
  FetchOptions opt;
  opt.endpoint = s.endpoint();
  opt.out_dir = tmp.path();
  opt.workers = 4;
  opt.max_attempts = 5;
  opt.initial_backoff = std::chrono::milliseconds(5);
  opt.timeout = std::chrono::seconds(5);

  std::string d;
  bool ok = true;
  opt.token = "wrong";
  try {
    fetch_package(opt);
    ok = false;
    d += "bad token accepted; ";
  } catch (const AuthError&) {
    d += "bad token aborts; ";
  }
  ok = ok && !fs::exists(tmp.path() / "manifest.json");

  opt.token = "secret";
  const auto first = fetch_package(opt);
  ok = ok && first.complete() && first.images == 7 && fs::exists(tmp.path() / "manifest.json");
  const auto manifest = detail::read_file(tmp.path() / "manifest.json");
  const int flaky_requests = s.requests_for("m4.png");
  const auto second = fetch_package(opt);
  ok = ok && second.complete() && second.downloaded == 0 && second.reused == 7 &&
       detail::read_file(tmp.path() / "manifest.json") == manifest && s.requests_for("m4.png") == flaky_requests;
  d += "3 pages, 7 records: first run " + std::to_string(first.images) + " images (" +
       std::to_string(flaky_requests) + " requests for the flaky file), re-run downloaded " +
       std::to_string(second.downloaded) + ", reused " + std::to_string(second.reused) +
       ", manifest " + (detail::read_file(tmp.path() / "manifest.json") == manifest ? "identical" : "DIFFERS");
  return {ok, d};
}

}  // namespace

int main() {
  const std::vector<Check> checks{
      {"published-f1-consistency", table_f1_consistency},
      {"map-oracle-equivalence", map_oracle_equivalence},
      {"geometry-properties", geometry_properties},
      {"stratified-split", stratified_split},
      {"confusion-conservation", confusion_conservation},
      {"loss-diagnostics", loss_diagnostics},
      {"plateau-detection", plateau_detection},
      {"golden-pipeline-fixture", golden_fixture},
      {"ingestion-contract", ingestion_contract},
  };
  int failed = 0;
  for (const auto& c : checks) {
    Result r;
    try {
      r = c.run();
    } catch (const std::exception& e) {
      r = {false, std::string("threw: ") + e.what()};
    }
    failed += r.pass ? 0 : 1;
    std::printf("[%s] %s: %s\n", r.pass ? "PASS" : "FAIL", c.name.c_str(), r.detail.c_str());
  }
  std::printf("%zu criteria, %d failed\n", checks.size(), failed);
  return failed == 0 ? 0 : 1;
}
