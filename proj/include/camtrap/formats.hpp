#pragma once

// Interchange formats around the evaluator: predictions JSON Lines, the
// per-class metrics CSV and the confusion-matrix CSVs.

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "camtrap/dataset.hpp"
#include "camtrap/detail/text.hpp"
#include "camtrap/error.hpp"
#include "camtrap/evaluator.hpp"
#include "camtrap/geometry.hpp"

namespace camtrap {

// ---------------------------------------------------------------------------
// Predictions: {"image_id": str, "class": int, "conf": float, "box": [cx, cy, w, h]}

inline std::string format_prediction(const Detection& d) {
  nlohmann::ordered_json j;
  j["image_id"] = d.image_id;
  j["class"] = d.class_index;
  j["conf"] = d.confidence;
  j["box"] = {d.box.cx, d.box.cy, d.box.w, d.box.h};
  return j.dump();
}

inline Detection parse_prediction(std::string_view line, std::size_t line_no) {
  const std::string where = "predictions line " + std::to_string(line_no);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error&) {
    throw InvalidInput(where + ": not valid JSON");
  }
  if (!j.is_object() || !j.contains("image_id") || !j["image_id"].is_string() ||
      !j.contains("class") || !j["class"].is_number_integer() || !j.contains("conf") ||
      !j["conf"].is_number() || !j.contains("box") || !j["box"].is_array() ||
      j["box"].size() != 4) {
    throw InvalidInput(where + ": expected image_id, class, conf and a 4-element box");
  }
  if (j["class"].get<long long>() < 0) throw InvalidInput(where + ": negative class");
  Detection d;
  d.image_id = j["image_id"].get<std::string>();
  d.class_index = j["class"].get<std::size_t>();
  d.confidence = j["conf"].get<double>();
  if (!(d.confidence >= 0.0 && d.confidence <= 1.0)) {
    throw InvalidInput(where + ": conf outside [0,1]");
  }
  double v[4];
  for (int i = 0; i < 4; ++i) {
    if (!j["box"][i].is_number()) throw InvalidInput(where + ": non-numeric box");
    v[i] = j["box"][i].get<double>();
  }
  try {
    d.box = clip_to_unit({v[0], v[1], v[2], v[3]});
  } catch (const InvalidInput& e) {
    throw InvalidInput(where + ": " + e.what());
  }
  return d;
}

inline std::vector<Detection> parse_predictions(std::string_view text) {
  std::vector<Detection> out;
  std::size_t line_no = 0;
  for (const auto& line : detail::lines_of(text)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    out.push_back(parse_prediction(line, line_no));
  }
  return out;
}

inline std::string format_predictions(const std::vector<Detection>& dets) {
  std::string out;
  for (const auto& d : dets) out += format_prediction(d) + "\n";
  return out;
}

// Ground truths of a manifest, classes resolved against `catalog`.
inline std::vector<GroundTruth> ground_truths(const std::vector<ImageRecord>& records,
                                              const ClassCatalog& catalog) {
  std::vector<GroundTruth> out;
  for (const auto& rec : records) {
    for (const auto& a : rec.annotations) {
      out.push_back({rec.image_id, catalog.require_index(a.species_name),
                     to_normalized(a.box, rec.size)});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV helpers

namespace detail {

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  out += '"';
  return out;
}

// Splits one CSV record, honoring double-quoted fields.
inline std::vector<std::string> csv_split(std::string_view line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        out.back() += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.emplace_back();
    } else {
      out.back() += ch;
    }
  }
  if (quoted) throw InvalidInput("unterminated quote in CSV line");
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Metrics CSV

inline constexpr const char* kMetricsHeader = "class,targets,f1,precision,recall,map50,map50_95";
inline constexpr int kMetricsDecimals = 6;

inline std::string metrics_row(const ClassMetrics& m) {
  auto f = [](double v) { return detail::format_fixed(v, kMetricsDecimals); };
  return detail::csv_field(m.name) + "," + std::to_string(m.targets) + "," + f(m.f1) + "," +
         f(m.precision) + "," + f(m.recall) + "," + f(m.ap50) + "," + f(m.ap50_95);
}

inline std::string metrics_csv(const Evaluation& ev) {
  std::string out = std::string(kMetricsHeader) + "\n";
  out += metrics_row(ev.all) + "\n";
  for (const auto& m : ev.classes) out += metrics_row(m) + "\n";
  return out;
}

inline std::vector<ClassMetrics> parse_metrics_csv(std::string_view text) {
  const auto lines = detail::lines_of(text);
  if (lines.empty()) throw InvalidInput("metrics file is empty");
  if (detail::trim(lines[0]) != kMetricsHeader) {
    throw InvalidInput("metrics file header must be '" + std::string(kMetricsHeader) + "'");
  }
  std::vector<ClassMetrics> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (detail::trim(lines[i]).empty()) continue;
    const auto f = detail::csv_split(lines[i]);
    const std::string where = "metrics line " + std::to_string(i + 1);
    if (f.size() != 7) throw InvalidInput(where + ": expected 7 fields");
    ClassMetrics m;
    m.name = f[0];
    const auto targets = detail::parse_int(f[1]);
    if (!targets || *targets < 0) throw InvalidInput(where + ": bad targets");
    m.targets = static_cast<std::size_t>(*targets);
    double* slots[] = {&m.f1, &m.precision, &m.recall, &m.ap50, &m.ap50_95};
    for (int k = 0; k < 5; ++k) {
      const auto v = detail::parse_double(f[2 + k]);
      if (!v || *v < 0.0 || *v > 1.0) throw InvalidInput(where + ": metric outside [0,1]");
      *slots[k] = *v;
    }
    rows.push_back(std::move(m));
  }
  if (rows.empty()) throw InvalidInput("metrics file has no rows");
  return rows;
}

// ---------------------------------------------------------------------------
// Confusion CSVs: first column names the predicted class, remaining
// columns the true class; the last row and column are background.

inline std::string confusion_csv_header(const std::vector<std::string>& names) {
  std::string out = "predicted";
  for (const auto& n : names) out += "," + detail::csv_field(n);
  return out + ",background\n";
}

inline std::string confusion_csv(const ConfusionMatrix& cm, const std::vector<std::string>& names) {
  if (names.size() != cm.num_classes()) throw InvalidInput("class name count mismatch");
  std::string out = confusion_csv_header(names);
  for (std::size_t p = 0; p < cm.dim(); ++p) {
    out += p < names.size() ? detail::csv_field(names[p]) : std::string("background");
    for (std::size_t t = 0; t < cm.dim(); ++t) out += "," + std::to_string(cm.at(p, t));
    out += "\n";
  }
  return out;
}

inline std::string confusion_normalized_csv(const ConfusionMatrix& cm,
                                            const std::vector<std::string>& names) {
  if (names.size() != cm.num_classes()) throw InvalidInput("class name count mismatch");
  const auto norm = cm.column_normalized();
  std::string out = confusion_csv_header(names);
  for (std::size_t p = 0; p < cm.dim(); ++p) {
    out += p < names.size() ? detail::csv_field(names[p]) : std::string("background");
    for (std::size_t t = 0; t < cm.dim(); ++t) out += "," + detail::format_fixed(norm[p][t], 3);
    out += "\n";
  }
  return out;
}

}  // namespace camtrap
