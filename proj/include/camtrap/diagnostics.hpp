#pragma once

// Reference loss components (box MSE, cross-entropy, objectness squared
// error), training-log ingestion and plateau detection over epochs.
//
// These are diagnostics with the textbook formulas; they do not reproduce
// the detector's internal training losses.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "camtrap/detail/text.hpp"
#include "camtrap/error.hpp"
#include "camtrap/geometry.hpp"

namespace camtrap {

inline constexpr double kProbabilityFloor = 1e-12;
inline constexpr double kPlateauFloor = 1e-12;
inline constexpr std::size_t kDefaultPlateauWindow = 9;
inline constexpr double kDefaultPlateauEpsilon = 0.01;

// Mean of the squared differences over (cx, cy, w, h).
inline double bbox_regression_loss(const NormalizedBox& pred, const NormalizedBox& target) {
  validate(pred);
  validate(target);
  const double d[] = {pred.cx - target.cx, pred.cy - target.cy, pred.w - target.w,
                      pred.h - target.h};
  double s = 0.0;
  for (double v : d) s += v * v;
  return s / 4.0;
}

inline void validate_distribution(std::span<const double> p) {
  if (p.empty()) throw InvalidInput("class distribution is empty");
  double sum = 0.0;
  for (double v : p) {
    if (!std::isfinite(v) || v < 0.0) throw InvalidInput("class distribution has a negative entry");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw InvalidInput("class distribution does not sum to 1");
}

inline double classification_loss(std::span<const double> pred, std::size_t true_class) {
  validate_distribution(pred);
  if (true_class >= pred.size()) throw InvalidInput("true class outside the distribution");
  return -std::log(std::max(pred[true_class], kProbabilityFloor));
}

inline double objectness_loss(double pred_score, int target) {
  if (!(pred_score >= 0.0 && pred_score <= 1.0)) throw InvalidInput("objectness score outside [0,1]");
  if (target != 0 && target != 1) throw InvalidInput("objectness target must be 0 or 1");
  const double d = pred_score - target;
  return d * d;
}

// Sum of the three component means; an empty component contributes 0.
inline double total_loss(std::span<const double> box_terms, std::span<const double> cls_terms,
                         std::span<const double> obj_terms) {
  if (box_terms.empty() && cls_terms.empty() && obj_terms.empty()) {
    throw InvalidInput("total_loss needs at least one term");
  }
  auto mean = [](std::span<const double> v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  return mean(box_terms) + mean(cls_terms) + mean(obj_terms);
}

// ---------------------------------------------------------------------------
// Epoch logs

struct EpochLog {
  std::size_t epoch = 0;
  double box_loss = 0.0;
  double cls_loss = 0.0;
  double obj_loss = 0.0;
  std::optional<double> precision;
  std::optional<double> recall;
  double val_f1 = 0.0;
  std::optional<double> val_map50;
  std::optional<double> val_map50_95;

  double total_loss() const { return box_loss + cls_loss + obj_loss; }

  friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

inline constexpr const char* kEpochLogHeader =
    "epoch,box_loss,cls_loss,obj_loss,precision,recall,f1,map50,map50_95";

// Columns are located by header name. epoch, the three losses and f1 are
// required; precision, recall, map50 and map50_95 may be absent.
inline std::vector<EpochLog> parse_training_log(std::string_view text) {
  const auto lines = detail::lines_of(text);
  if (lines.empty()) throw InvalidInput("epoch log line 1: missing header");

  std::map<std::string, std::size_t> col;
  const auto header = detail::split(detail::trim(lines[0]), ',');
  for (std::size_t i = 0; i < header.size(); ++i) {
    const std::string name(detail::trim(header[i]));
    if (!col.emplace(name, i).second) {
      throw InvalidInput("epoch log line 1: duplicate column " + name);
    }
  }
  for (const char* required : {"epoch", "box_loss", "cls_loss", "obj_loss", "f1"}) {
    if (!col.contains(required)) {
      throw InvalidInput(std::string("epoch log line 1: missing column ") + required);
    }
  }

  std::vector<EpochLog> out;
  std::map<std::size_t, std::size_t> seen;  // epoch -> line
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const std::size_t line_no = li + 1;
    const std::string where = "epoch log line " + std::to_string(line_no);
    if (detail::trim(lines[li]).empty()) continue;
    const auto fields = detail::split(lines[li], ',');
    if (fields.size() != header.size()) {
      throw InvalidInput(where + ": expected " + std::to_string(header.size()) + " fields");
    }
    auto number = [&](const char* name) -> std::optional<double> {
      const auto it = col.find(name);
      if (it == col.end()) return std::nullopt;
      const auto v = detail::parse_double(fields[it->second]);
      if (!v) throw InvalidInput(where + ": malformed " + name);
      return v;
    };
    auto loss = [&](const char* name) {
      const double v = *number(name);
      if (v < 0.0) throw InvalidInput(where + ": negative " + name);
      return v;
    };
    auto unit = [&](const char* name) -> std::optional<double> {
      auto v = number(name);
      if (v && (*v < 0.0 || *v > 1.0)) throw InvalidInput(where + ": " + name + " outside [0,1]");
      return v;
    };

    const auto epoch = detail::parse_int(fields[col["epoch"]]);
    if (!epoch || *epoch < 0) throw InvalidInput(where + ": malformed epoch");
    EpochLog e;
    e.epoch = static_cast<std::size_t>(*epoch);
    e.box_loss = loss("box_loss");
    e.cls_loss = loss("cls_loss");
    e.obj_loss = loss("obj_loss");
    e.precision = unit("precision");
    e.recall = unit("recall");
    e.val_f1 = *unit("f1");
    e.val_map50 = unit("map50");
    e.val_map50_95 = unit("map50_95");
    if (const auto [it, fresh] = seen.emplace(e.epoch, line_no); !fresh) {
      throw InvalidInput(where + ": duplicate epoch " + std::to_string(e.epoch) +
                         " (first on line " + std::to_string(it->second) + ")");
    }
    out.push_back(e);
  }
  std::sort(out.begin(), out.end(),
            [](const EpochLog& a, const EpochLog& b) { return a.epoch < b.epoch; });
  return out;
}

inline std::string format_training_log(const std::vector<EpochLog>& log) {
  auto opt = [](const std::optional<double>& v) {
    return v ? detail::format_fixed(*v, 6) : std::string();
  };
  std::string out = std::string(kEpochLogHeader) + "\n";
  for (const auto& e : log) {
    out += std::to_string(e.epoch) + "," + detail::format_fixed(e.box_loss, 6) + "," +
           detail::format_fixed(e.cls_loss, 6) + "," + detail::format_fixed(e.obj_loss, 6) + "," +
           opt(e.precision) + "," + opt(e.recall) + "," + detail::format_fixed(e.val_f1, 6) + "," +
           opt(e.val_map50) + "," + opt(e.val_map50_95) + "\n";
  }
  return out;
}

// Smallest index e such that every step t in (e, e + window] changes the
// series by less than `epsilon` relative to the previous value
// (denominator floored at 1e-12). Empty when no such index exists.
inline std::optional<std::size_t> detect_plateau(std::span<const double> series,
                                                 std::size_t window = kDefaultPlateauWindow,
                                                 double epsilon = kDefaultPlateauEpsilon) {
  if (window < 1) throw InvalidInput("plateau window must be at least 1");
  if (series.size() < window + 1) {
    throw InvalidInput("series of length " + std::to_string(series.size()) +
                       " is shorter than window + 1");
  }
  // Length of the run of small steps ending at each index.
  std::size_t run = 0;
  for (std::size_t t = 1; t < series.size(); ++t) {
    const double rel =
        std::abs(series[t] - series[t - 1]) / std::max(std::abs(series[t - 1]), kPlateauFloor);
    run = rel < epsilon ? run + 1 : 0;
    if (run >= window) return t - window;
  }
  return std::nullopt;
}

}  // namespace camtrap
