#pragma once

// Detection evaluation: greedy matching, precision/recall sweeps,
// 101-point interpolated AP, mAP over IoU ladders, the max-F1 operating
// point, the detection confusion matrix with a background class, and
// pooling of cross-validation folds.
//
// Ordering convention used everywhere a detection list is sorted:
// confidence descending, then class index ascending, then input position.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "camtrap/error.hpp"
#include "camtrap/geometry.hpp"

namespace camtrap {

inline constexpr double kDefaultMatchIou = 0.5;
inline constexpr double kDefaultConfusionConfidence = 0.25;
inline constexpr std::size_t kRecallSamples = 101;
inline constexpr std::size_t kConfidenceGridPoints = 1000;

struct Detection {
  std::string image_id;
  std::size_t class_index = 0;
  double confidence = 0.0;
  NormalizedBox box;

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct GroundTruth {
  std::string image_id;
  std::size_t class_index = 0;
  NormalizedBox box;

  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

// IoU thresholds 0.50, 0.55, ..., 0.95.
inline std::vector<double> coco_iou_ladder() {
  std::vector<double> out;
  for (int i = 0; i < 10; ++i) out.push_back((50 + 5 * i) / 100.0);
  return out;
}

inline void validate(const Detection& d, std::size_t num_classes) {
  if (d.class_index >= num_classes) {
    throw InvalidInput("detection on " + d.image_id + " has class " +
                       std::to_string(d.class_index) + " outside the catalog");
  }
  if (!(d.confidence >= 0.0 && d.confidence <= 1.0)) {
    throw InvalidInput("detection on " + d.image_id + " has confidence outside [0,1]");
  }
  validate(d.box);
}

inline void validate(const GroundTruth& g, std::size_t num_classes) {
  if (g.class_index >= num_classes) {
    throw InvalidInput("ground truth on " + g.image_id + " has class " +
                       std::to_string(g.class_index) + " outside the catalog");
  }
  validate(g.box);
}

// Positions of `dets` in evaluation order.
inline std::vector<std::size_t> detection_order(std::span<const Detection> dets) {
  std::vector<std::size_t> idx(dets.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (dets[a].confidence != dets[b].confidence) return dets[a].confidence > dets[b].confidence;
    return dets[a].class_index < dets[b].class_index;
  });
  return idx;
}

// ---------------------------------------------------------------------------
// Matching

struct MatchedPair {
  std::size_t detection = 0;     // position in the detection input
  std::size_t ground_truth = 0;  // position in the ground-truth input
  double iou = 0.0;

  friend bool operator==(const MatchedPair&, const MatchedPair&) = default;
};

struct ImageMatch {
  std::string image_id;
  std::vector<MatchedPair> pairs;
  std::vector<std::size_t> unmatched_detections;
  std::vector<std::size_t> unmatched_ground_truths;
};

namespace detail {

// Class-aware greedy matching over index subsets of the full inputs.
inline ImageMatch match_subset(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                               const std::vector<std::size_t>& det_idx,
                               const std::vector<std::size_t>& gt_idx, double iou_threshold) {
  std::vector<std::size_t> order = det_idx;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (dets[a].confidence != dets[b].confidence) return dets[a].confidence > dets[b].confidence;
    if (dets[a].class_index != dets[b].class_index) return dets[a].class_index < dets[b].class_index;
    return a < b;
  });

  ImageMatch out;
  std::vector<bool> claimed(gt_idx.size(), false);
  for (auto d : order) {
    std::optional<std::size_t> best;
    double best_iou = -1.0;
    for (std::size_t j = 0; j < gt_idx.size(); ++j) {
      const auto& g = gts[gt_idx[j]];
      if (claimed[j] || g.class_index != dets[d].class_index) continue;
      const double v = iou(dets[d].box, g.box);
      if (v >= iou_threshold && v > best_iou) {
        best = j;
        best_iou = v;
      }
    }
    if (best) {
      claimed[*best] = true;
      out.pairs.push_back({d, gt_idx[*best], best_iou});
    } else {
      out.unmatched_detections.push_back(d);
    }
  }
  for (std::size_t j = 0; j < gt_idx.size(); ++j) {
    if (!claimed[j]) out.unmatched_ground_truths.push_back(gt_idx[j]);
  }
  std::sort(out.unmatched_detections.begin(), out.unmatched_detections.end());
  return out;
}

struct ImageIndex {
  std::vector<std::size_t> dets;
  std::vector<std::size_t> gts;
};

inline std::map<std::string, ImageIndex> index_by_image(std::span<const Detection> dets,
                                                        std::span<const GroundTruth> gts) {
  std::map<std::string, ImageIndex> by_image;
  for (std::size_t i = 0; i < dets.size(); ++i) by_image[dets[i].image_id].dets.push_back(i);
  for (std::size_t i = 0; i < gts.size(); ++i) by_image[gts[i].image_id].gts.push_back(i);
  return by_image;
}

}  // namespace detail

// Matches the detections and ground truths of a single image. Each
// detection, in evaluation order, claims the unclaimed same-class ground
// truth with the highest IoU at or above the threshold.
inline ImageMatch match_detections(std::span<const Detection> dets,
                                   std::span<const GroundTruth> gts, double iou_threshold) {
  std::optional<std::string> image;
  auto check = [&](const std::string& id) {
    if (image && *image != id) throw InvalidInput("match_detections given mixed image ids");
    image = id;
  };
  for (const auto& d : dets) check(d.image_id);
  for (const auto& g : gts) check(g.image_id);

  std::vector<std::size_t> di(dets.size()), gi(gts.size());
  std::iota(di.begin(), di.end(), 0);
  std::iota(gi.begin(), gi.end(), 0);
  auto out = detail::match_subset(dets, gts, di, gi, iou_threshold);
  out.image_id = image.value_or("");
  return out;
}

// Per-image matches over a whole dataset, ordered by image id.
inline std::vector<ImageMatch> match_dataset(std::span<const Detection> dets,
                                             std::span<const GroundTruth> gts,
                                             double iou_threshold) {
  std::vector<ImageMatch> out;
  for (const auto& [id, ix] : detail::index_by_image(dets, gts)) {
    auto m = detail::match_subset(dets, gts, ix.dets, ix.gts, iou_threshold);
    m.image_id = id;
    out.push_back(std::move(m));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Precision/recall

struct ScoredDetection {
  double confidence = 0.0;
  bool true_positive = false;
};

// All detections of one class across the dataset, in evaluation order.
struct ClassOutcomes {
  std::size_t targets = 0;
  std::vector<ScoredDetection> detections;

  bool evaluable() const { return targets > 0 || !detections.empty(); }
};

inline std::vector<ClassOutcomes> collect_outcomes(std::span<const Detection> dets,
                                                   std::span<const GroundTruth> gts,
                                                   std::size_t num_classes, double iou_threshold) {
  std::vector<ClassOutcomes> out(num_classes);
  for (const auto& g : gts) {
    validate(g, num_classes);
    ++out[g.class_index].targets;
  }
  for (const auto& d : dets) validate(d, num_classes);

  std::vector<bool> tp(dets.size(), false);
  for (const auto& m : match_dataset(dets, gts, iou_threshold)) {
    for (const auto& p : m.pairs) tp[p.detection] = true;
  }
  for (auto i : detection_order(dets)) {
    out[dets[i].class_index].detections.push_back({dets[i].confidence, tp[i]});
  }
  return out;
}

struct PrPoint {
  double confidence = 0.0;
  double recall = 0.0;
  double precision = 0.0;
};

// Cumulative sweep over detections sorted by descending confidence;
// equal confidences keep their input order.
inline std::vector<PrPoint> pr_curve(std::span<const ScoredDetection> detections,
                                     std::size_t targets) {
  std::vector<ScoredDetection> sorted(detections.begin(), detections.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto& a, const auto& b) { return a.confidence > b.confidence; });
  std::vector<PrPoint> curve;
  curve.reserve(sorted.size());
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (const auto& d : sorted) {
    (d.true_positive ? tp : fp) += 1;
    const double recall = targets > 0 ? static_cast<double>(tp) / static_cast<double>(targets) : 0.0;
    curve.push_back({d.confidence, recall, static_cast<double>(tp) / static_cast<double>(tp + fp)});
  }
  return curve;
}

// 101-point interpolated AP: precision is replaced by its running maximum
// from the right, then read at recall 0.00, 0.01, ..., 1.00 (zero past the
// curve's maximum recall) and averaged.
inline double average_precision(std::span<const PrPoint> curve, std::size_t targets) {
  if (targets == 0 || curve.empty()) return 0.0;
  std::vector<double> envelope(curve.size());
  for (std::size_t i = curve.size(); i-- > 0;) {
    envelope[i] = curve[i].precision;
    if (i + 1 < curve.size()) envelope[i] = std::max(envelope[i], envelope[i + 1]);
  }
  double sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t s = 0; s < kRecallSamples; ++s) {
    const double r = static_cast<double>(s) / static_cast<double>(kRecallSamples - 1);
    while (pos < curve.size() && curve[pos].recall < r) ++pos;
    if (pos == curve.size()) break;
    sum += envelope[pos];
  }
  return sum / static_cast<double>(kRecallSamples);
}

inline double average_precision(const ClassOutcomes& outcomes) {
  const auto curve = pr_curve(outcomes.detections, outcomes.targets);
  return average_precision(curve, outcomes.targets);
}

inline double f1_score(double precision, double recall) {
  const double s = precision + recall;
  return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

// ---------------------------------------------------------------------------
// mAP

struct MapResult {
  std::vector<double> thresholds;
  std::vector<std::vector<double>> ap;  // [class][threshold]
  std::vector<bool> included;           // classes entering the macro means
  std::vector<std::size_t> targets;
  std::vector<double> class_mean_ap;    // per class, mean over thresholds
  std::vector<double> mean_ap_per_threshold;
  double mean_ap = 0.0;                 // mean over classes of class_mean_ap
};

inline MapResult map_at(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                        std::size_t num_classes, std::span<const double> iou_thresholds) {
  if (iou_thresholds.empty()) throw InvalidInput("map_at needs at least one IoU threshold");
  for (double t : iou_thresholds) {
    if (!(t >= 0.0 && t <= 1.0)) throw InvalidInput("IoU threshold outside [0,1]");
  }
  MapResult r;
  r.thresholds.assign(iou_thresholds.begin(), iou_thresholds.end());
  const std::size_t T = r.thresholds.size();
  r.ap.assign(num_classes, std::vector<double>(T, 0.0));
  r.included.assign(num_classes, false);
  r.targets.assign(num_classes, 0);
  r.class_mean_ap.assign(num_classes, 0.0);
  r.mean_ap_per_threshold.assign(T, 0.0);

  for (std::size_t t = 0; t < T; ++t) {
    const auto outcomes = collect_outcomes(dets, gts, num_classes, r.thresholds[t]);
    for (std::size_t c = 0; c < num_classes; ++c) {
      r.targets[c] = outcomes[c].targets;
      r.included[c] = outcomes[c].evaluable();
      r.ap[c][t] = average_precision(outcomes[c]);
    }
  }
  std::size_t n_included = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    r.class_mean_ap[c] = std::accumulate(r.ap[c].begin(), r.ap[c].end(), 0.0) / static_cast<double>(T);
    if (!r.included[c]) continue;
    ++n_included;
    r.mean_ap += r.class_mean_ap[c];
    for (std::size_t t = 0; t < T; ++t) r.mean_ap_per_threshold[t] += r.ap[c][t];
  }
  if (n_included > 0) {
    r.mean_ap /= static_cast<double>(n_included);
    for (auto& v : r.mean_ap_per_threshold) v /= static_cast<double>(n_included);
  }
  return r;
}

inline MapResult map_at(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                        std::size_t num_classes, std::initializer_list<double> iou_thresholds) {
  const std::vector<double> t(iou_thresholds);
  return map_at(dets, gts, num_classes, std::span<const double>(t));
}

// ---------------------------------------------------------------------------
// Operating point

struct ClassPrf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct OperatingPoint {
  double threshold = 0.0;
  double mean_f1 = 0.0;
  std::vector<ClassPrf> per_class;
};

// Precision/recall/F1 of one class when keeping detections with
// confidence >= threshold.
inline ClassPrf prf_at(const ClassOutcomes& c, double threshold) {
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (const auto& d : c.detections) {
    if (d.confidence >= threshold) (d.true_positive ? tp : fp) += 1;
  }
  ClassPrf out;
  out.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  out.recall = c.targets > 0 ? static_cast<double>(tp) / static_cast<double>(c.targets) : 0.0;
  out.f1 = f1_score(out.precision, out.recall);
  return out;
}

// Scans a 1000-point confidence grid over [0,1] and keeps the lowest
// threshold maximizing the mean F1 over evaluable classes.
inline OperatingPoint best_operating_point(std::span<const ClassOutcomes> sweeps) {
  if (sweeps.empty()) throw InvalidInput("best_operating_point needs at least one class");
  OperatingPoint best;
  best.per_class.assign(sweeps.size(), ClassPrf{});
  const bool any_detection = std::any_of(sweeps.begin(), sweeps.end(),
                                         [](const auto& c) { return !c.detections.empty(); });
  if (!any_detection) return best;

  // Cumulative TP/FP counts by descending confidence let each grid point
  // be answered with a binary search.
  struct Sweep {
    std::vector<double> conf;  // descending
    std::vector<std::size_t> tp;
  };
  std::vector<Sweep> prepared(sweeps.size());
  for (std::size_t c = 0; c < sweeps.size(); ++c) {
    auto dets = sweeps[c].detections;
    std::stable_sort(dets.begin(), dets.end(),
                     [](const auto& a, const auto& b) { return a.confidence > b.confidence; });
    std::size_t tp = 0;
    for (const auto& d : dets) {
      tp += d.true_positive ? 1 : 0;
      prepared[c].conf.push_back(d.confidence);
      prepared[c].tp.push_back(tp);
    }
  }

  std::size_t evaluable = 0;
  for (const auto& s : sweeps) evaluable += s.evaluable() ? 1 : 0;

  double best_mean = -1.0;
  for (std::size_t i = 0; i < kConfidenceGridPoints; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(kConfidenceGridPoints - 1);
    std::vector<ClassPrf> row(sweeps.size());
    double sum = 0.0;
    for (std::size_t c = 0; c < sweeps.size(); ++c) {
      const auto& p = prepared[c];
      // Number of detections with confidence >= t.
      const auto kept = static_cast<std::size_t>(
          std::upper_bound(p.conf.begin(), p.conf.end(), t, std::greater<double>()) -
          p.conf.begin());
      const std::size_t tp = kept > 0 ? p.tp[kept - 1] : 0;
      auto& m = row[c];
      m.precision = kept > 0 ? static_cast<double>(tp) / static_cast<double>(kept) : 0.0;
      m.recall = sweeps[c].targets > 0
                     ? static_cast<double>(tp) / static_cast<double>(sweeps[c].targets)
                     : 0.0;
      m.f1 = f1_score(m.precision, m.recall);
      if (sweeps[c].evaluable()) sum += m.f1;
    }
    const double mean = sum / static_cast<double>(evaluable);
    if (mean > best_mean) {
      best_mean = mean;
      best.threshold = t;
      best.mean_f1 = mean;
      best.per_class = std::move(row);
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Confusion matrix

// (C+1) x (C+1) counts; rows are predicted classes, columns true classes,
// index C is background.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t num_classes)
      : num_classes_(num_classes), counts_((num_classes + 1) * (num_classes + 1), 0) {}

  std::size_t num_classes() const { return num_classes_; }
  std::size_t background() const { return num_classes_; }
  std::size_t dim() const { return num_classes_ + 1; }

  std::uint64_t at(std::size_t predicted, std::size_t truth) const {
    return counts_.at(predicted * dim() + truth);
  }
  void add(std::size_t predicted, std::size_t truth, std::uint64_t n = 1) {
    if (predicted == background() && truth == background()) {
      throw InvalidInput("background/background cell is undefined");
    }
    counts_.at(predicted * dim() + truth) += n;
  }

  std::uint64_t column_sum(std::size_t truth) const {
    std::uint64_t s = 0;
    for (std::size_t p = 0; p < dim(); ++p) s += at(p, truth);
    return s;
  }

  // Each column divided by its sum; empty columns stay zero.
  std::vector<std::vector<double>> column_normalized() const {
    std::vector<std::vector<double>> out(dim(), std::vector<double>(dim(), 0.0));
    for (std::size_t t = 0; t < dim(); ++t) {
      const auto s = column_sum(t);
      if (s == 0) continue;
      for (std::size_t p = 0; p < dim(); ++p) {
        out[p][t] = static_cast<double>(at(p, t)) / static_cast<double>(s);
      }
    }
    return out;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& other) {
    if (other.num_classes_ != num_classes_) throw InvalidInput("confusion matrix size mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    return *this;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t num_classes_ = 0;
  std::vector<std::uint64_t> counts_;
};

// Class-agnostic matching: all (detection, ground truth) pairs with IoU at
// or above the threshold are taken greedily by descending IoU, so
// cross-class confusions land off the diagonal. Missed ground truths go
// to the background row, unmatched detections to the background column.
inline ConfusionMatrix confusion_matrix(std::span<const Detection> dets,
                                        std::span<const GroundTruth> gts, std::size_t num_classes,
                                        double conf_threshold = kDefaultConfusionConfidence,
                                        double iou_threshold = kDefaultMatchIou) {
  if (!(conf_threshold >= 0.0 && conf_threshold <= 1.0) ||
      !(iou_threshold >= 0.0 && iou_threshold <= 1.0)) {
    throw InvalidInput("confusion thresholds must lie in [0,1]");
  }
  for (const auto& d : dets) validate(d, num_classes);
  for (const auto& g : gts) validate(g, num_classes);

  ConfusionMatrix cm(num_classes);
  for (const auto& [id, ix] : detail::index_by_image(dets, gts)) {
    std::vector<std::size_t> kept;
    for (auto d : ix.dets) {
      if (dets[d].confidence >= conf_threshold) kept.push_back(d);
    }
    std::stable_sort(kept.begin(), kept.end(), [&](std::size_t a, std::size_t b) {
      if (dets[a].confidence != dets[b].confidence) return dets[a].confidence > dets[b].confidence;
      return dets[a].class_index < dets[b].class_index;
    });

    struct Candidate {
      double iou;
      std::size_t det_rank;
      std::size_t gt_slot;
    };
    std::vector<Candidate> candidates;
    for (std::size_t r = 0; r < kept.size(); ++r) {
      for (std::size_t j = 0; j < ix.gts.size(); ++j) {
        const double v = iou(dets[kept[r]].box, gts[ix.gts[j]].box);
        if (v >= iou_threshold && v > 0.0) candidates.push_back({v, r, j});
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& a, const Candidate& b) { return a.iou > b.iou; });

    std::vector<bool> det_used(kept.size(), false);
    std::vector<bool> gt_used(ix.gts.size(), false);
    for (const auto& c : candidates) {
      if (det_used[c.det_rank] || gt_used[c.gt_slot]) continue;
      det_used[c.det_rank] = true;
      gt_used[c.gt_slot] = true;
      cm.add(dets[kept[c.det_rank]].class_index, gts[ix.gts[c.gt_slot]].class_index);
    }
    for (std::size_t j = 0; j < ix.gts.size(); ++j) {
      if (!gt_used[j]) cm.add(cm.background(), gts[ix.gts[j]].class_index);
    }
    for (std::size_t r = 0; r < kept.size(); ++r) {
      if (!det_used[r]) cm.add(dets[kept[r]].class_index, cm.background());
    }
  }
  return cm;
}

// ---------------------------------------------------------------------------
// Cross-validation pooling

struct FoldPredictions {
  // Validation images of the fold, when known. Without it the fold is
  // taken to cover exactly the images it has detections for.
  std::optional<std::set<std::string>> val_images;
  std::vector<Detection> detections;

  std::set<std::string> images() const {
    if (val_images) return *val_images;
    std::set<std::string> out;
    for (const auto& d : detections) out.insert(d.image_id);
    return out;
  }
};

// Concatenates fold predictions into one dataset-wide detection list.
// Each image may be predicted by at most one fold.
inline std::vector<Detection> pool_cv(std::span<const FoldPredictions> folds) {
  std::map<std::string, std::size_t> owner;
  std::vector<Detection> pooled;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const auto images = folds[f].images();
    for (const auto& d : folds[f].detections) {
      if (!images.contains(d.image_id)) {
        throw InvalidInput("fold " + std::to_string(f) + " predicts image " + d.image_id +
                           " outside its validation set");
      }
    }
    for (const auto& id : images) {
      const auto [it, fresh] = owner.emplace(id, f);
      if (!fresh) {
        throw InvalidInput("image " + id + " is predicted in folds " + std::to_string(it->second) +
                           " and " + std::to_string(f));
      }
    }
    pooled.insert(pooled.end(), folds[f].detections.begin(), folds[f].detections.end());
  }
  return pooled;
}

// ---------------------------------------------------------------------------
// Table-style evaluation

struct ClassMetrics {
  std::string name;
  std::size_t targets = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double ap50 = 0.0;
  double ap50_95 = 0.0;
};

struct EvaluationConfig {
  double match_iou = kDefaultMatchIou;  // PR/F1 matching
  double confusion_conf = kDefaultConfusionConfidence;
  double confusion_iou = kDefaultMatchIou;
};

struct Evaluation {
  ClassMetrics all;
  std::vector<ClassMetrics> classes;
  std::vector<bool> included;
  double operating_threshold = 0.0;
  ConfusionMatrix confusion;
};

// The `all` row carries mean precision and recall over evaluable classes,
// F1 of those means, and the mAP values.
inline Evaluation evaluate(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                           const std::vector<std::string>& class_names,
                           const EvaluationConfig& config = {}) {
  const std::size_t C = class_names.size();
  const auto ladder = coco_iou_ladder();
  const auto maps = map_at(dets, gts, C, std::span<const double>(ladder));
  const auto outcomes = collect_outcomes(dets, gts, C, config.match_iou);
  const auto op = best_operating_point(outcomes);

  Evaluation ev;
  ev.operating_threshold = op.threshold;
  ev.included = maps.included;
  ev.all.name = "all";
  std::size_t n = 0;
  double ap50_sum = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    ClassMetrics m;
    m.name = class_names[c];
    m.targets = outcomes[c].targets;
    m.precision = op.per_class[c].precision;
    m.recall = op.per_class[c].recall;
    m.f1 = op.per_class[c].f1;
    m.ap50 = maps.ap[c][0];
    m.ap50_95 = maps.class_mean_ap[c];
    ev.all.targets += m.targets;
    if (maps.included[c]) {
      ++n;
      ev.all.precision += m.precision;
      ev.all.recall += m.recall;
      ap50_sum += m.ap50;
    }
    ev.classes.push_back(std::move(m));
  }
  if (n > 0) {
    ev.all.precision /= static_cast<double>(n);
    ev.all.recall /= static_cast<double>(n);
    ev.all.ap50 = ap50_sum / static_cast<double>(n);
  }
  ev.all.f1 = f1_score(ev.all.precision, ev.all.recall);
  ev.all.ap50_95 = maps.mean_ap;
  ev.confusion = confusion_matrix(dets, gts, C, config.confusion_conf, config.confusion_iou);
  return ev;
}

// Evaluates every fold on its own validation images and averages the
// metric columns. Targets and confusion counts are summed.
inline Evaluation evaluate_per_fold_mean(std::span<const FoldPredictions> folds,
                                         std::span<const GroundTruth> gts,
                                         const std::vector<std::string>& class_names,
                                         const EvaluationConfig& config = {}) {
  pool_cv(folds);  // overlap checks
  const std::size_t C = class_names.size();
  Evaluation out;
  out.confusion = ConfusionMatrix(C);
  out.all.name = "all";
  out.classes.resize(C);
  out.included.assign(C, false);
  for (std::size_t c = 0; c < C; ++c) out.classes[c].name = class_names[c];
  std::vector<std::size_t> class_folds(C, 0);
  std::size_t n_folds = 0;

  auto accumulate_metrics = [](ClassMetrics& into, const ClassMetrics& m) {
    into.precision += m.precision;
    into.recall += m.recall;
    into.f1 += m.f1;
    into.ap50 += m.ap50;
    into.ap50_95 += m.ap50_95;
  };
  auto divide = [](ClassMetrics& m, double n) {
    m.precision /= n;
    m.recall /= n;
    m.f1 /= n;
    m.ap50 /= n;
    m.ap50_95 /= n;
  };

  for (const auto& fold : folds) {
    const auto images = fold.images();
    std::vector<GroundTruth> fold_gts;
    for (const auto& g : gts) {
      if (images.contains(g.image_id)) fold_gts.push_back(g);
    }
    const auto ev = evaluate(fold.detections, fold_gts, class_names, config);
    ++n_folds;
    accumulate_metrics(out.all, ev.all);
    out.operating_threshold += ev.operating_threshold;
    out.confusion += ev.confusion;
    for (std::size_t c = 0; c < C; ++c) {
      out.classes[c].targets += ev.classes[c].targets;
      if (!ev.included[c]) continue;
      out.included[c] = true;
      ++class_folds[c];
      accumulate_metrics(out.classes[c], ev.classes[c]);
    }
  }
  for (const auto& c : out.classes) out.all.targets += c.targets;
  if (n_folds > 0) {
    divide(out.all, static_cast<double>(n_folds));
    out.operating_threshold /= static_cast<double>(n_folds);
  }
  for (std::size_t c = 0; c < C; ++c) {
    if (class_folds[c] > 0) divide(out.classes[c], static_cast<double>(class_folds[c]));
  }
  return out;
}

}  // namespace camtrap
