#pragma once

// Camera-trap dataset model: annotated image records, the class catalog
// with its minimum-support filter and "Other" aggregation, dataset
// statistics, and the JSON manifest that persists it all locally.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "camtrap/detail/fs.hpp"
#include "camtrap/error.hpp"
#include "camtrap/geometry.hpp"

namespace camtrap {

inline constexpr const char* kOtherClass = "Other";
inline constexpr int kManifestSchemaVersion = 1;
inline constexpr std::size_t kDefaultMinCount = 40;

struct Annotation {
  std::string species_name;
  PixelBox box;

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct ImageRecord {
  std::string image_id;
  std::string source_uri;  // media path, relative to the manifest directory
  ImageSize size;
  std::optional<std::string> location_id;
  std::vector<Annotation> annotations;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

inline void validate(const ImageRecord& rec) {
  if (rec.image_id.empty()) throw InvalidInput("image record without image_id");
  if (rec.annotations.empty()) {
    throw InvalidInput("image " + rec.image_id + " has no annotations");
  }
  validate(rec.size);
  for (const auto& a : rec.annotations) {
    if (a.species_name.empty()) {
      throw InvalidInput("image " + rec.image_id + " has an annotation without species");
    }
    validate(a.box);
    if (a.box.x_max > rec.size.width || a.box.y_max > rec.size.height) {
      throw InvalidInput("image " + rec.image_id + " has a box outside the image " +
                         to_string(a.box));
    }
  }
}

inline void validate_unique_ids(const std::vector<ImageRecord>& records) {
  std::set<std::string> seen;
  for (const auto& r : records) {
    if (!seen.insert(r.image_id).second) throw InvalidInput("duplicate image_id " + r.image_id);
  }
}

// Ordered class list; index i is the detector's class id.
struct ClassCatalog {
  std::vector<std::string> names;
  std::vector<std::size_t> annotation_counts;
  std::vector<std::size_t> image_counts;

  std::size_t size() const { return names.size(); }
  bool empty() const { return names.empty(); }

  std::optional<std::size_t> index_of(const std::string& name) const {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) return std::nullopt;
    return static_cast<std::size_t>(it - names.begin());
  }

  std::size_t require_index(const std::string& name) const {
    if (auto idx = index_of(name)) return *idx;
    throw InvalidInput("unknown class '" + name + "'");
  }

  // Catalog carrying only names, as read back from a manifest or descriptor.
  static ClassCatalog from_names(std::vector<std::string> names) {
    std::set<std::string> unique(names.begin(), names.end());
    if (unique.size() != names.size()) throw InvalidInput("duplicate class names");
    ClassCatalog c;
    c.annotation_counts.assign(names.size(), 0);
    c.image_counts.assign(names.size(), 0);
    c.names = std::move(names);
    return c;
  }

  friend bool operator==(const ClassCatalog&, const ClassCatalog&) = default;
};

struct CatalogResult {
  ClassCatalog catalog;
  std::vector<ImageRecord> records;
};

// Relabels `other_names` to "Other", drops species seen in fewer than
// `min_count` distinct images ("Other" is exempt), drops images left
// without annotations, and orders classes by descending annotation count
// with ties broken by name.
inline CatalogResult build_catalog(std::vector<ImageRecord> records,
                                   std::size_t min_count = kDefaultMinCount,
                                   const std::set<std::string>& other_names = {}) {
  for (auto& rec : records) {
    for (auto& a : rec.annotations) {
      if (other_names.contains(a.species_name)) a.species_name = kOtherClass;
    }
  }

  std::map<std::string, std::size_t> images_with;
  for (const auto& rec : records) {
    std::set<std::string> present;
    for (const auto& a : rec.annotations) present.insert(a.species_name);
    for (const auto& s : present) ++images_with[s];
  }
  std::set<std::string> keep;
  for (const auto& [name, n] : images_with) {
    if (n >= min_count || name == kOtherClass) keep.insert(name);
  }

  std::vector<ImageRecord> kept_records;
  std::map<std::string, std::size_t> annotations_of;
  for (auto& rec : records) {
    std::erase_if(rec.annotations,
                  [&](const Annotation& a) { return !keep.contains(a.species_name); });
    if (rec.annotations.empty()) continue;
    for (const auto& a : rec.annotations) ++annotations_of[a.species_name];
    kept_records.push_back(std::move(rec));
  }

  std::vector<std::pair<std::string, std::size_t>> order(annotations_of.begin(),
                                                         annotations_of.end());
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  ClassCatalog catalog;
  for (const auto& [name, count] : order) {
    catalog.names.push_back(name);
    catalog.annotation_counts.push_back(count);
    catalog.image_counts.push_back(images_with[name]);
  }
  return {std::move(catalog), std::move(kept_records)};
}

struct DatasetStats {
  std::vector<std::size_t> class_targets;  // annotation instances per catalog index
  std::vector<std::size_t> class_images;   // images containing each class
  std::map<std::int64_t, std::size_t> megapixel_buckets;  // floor(W*H / 1e6) -> images
  std::map<std::pair<int, int>, std::size_t> resolutions;  // (width, height) -> images
  std::size_t total_images = 0;
  std::size_t total_annotations = 0;
};

inline DatasetStats dataset_stats(const std::vector<ImageRecord>& records,
                                  const ClassCatalog& catalog) {
  DatasetStats s;
  s.class_targets.assign(catalog.size(), 0);
  s.class_images.assign(catalog.size(), 0);
  for (const auto& rec : records) {
    std::set<std::size_t> present;
    for (const auto& a : rec.annotations) {
      const auto idx = catalog.require_index(a.species_name);
      ++s.class_targets[idx];
      present.insert(idx);
      ++s.total_annotations;
    }
    for (auto idx : present) ++s.class_images[idx];
    const auto pixels = static_cast<std::int64_t>(rec.size.width) * rec.size.height;
    ++s.megapixel_buckets[pixels / 1'000'000];
    ++s.resolutions[{rec.size.width, rec.size.height}];
    ++s.total_images;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Manifest JSON

struct Manifest {
  int schema_version = kManifestSchemaVersion;
  std::vector<std::string> classes;
  std::vector<ImageRecord> images;

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

inline nlohmann::ordered_json manifest_to_json(const Manifest& m) {
  using nlohmann::ordered_json;
  ordered_json images = ordered_json::array();
  for (const auto& rec : m.images) {
    ordered_json anns = ordered_json::array();
    for (const auto& a : rec.annotations) {
      anns.push_back({{"class", a.species_name},
                      {"box",
                       {{"x_min", a.box.x_min},
                        {"y_min", a.box.y_min},
                        {"x_max", a.box.x_max},
                        {"y_max", a.box.y_max}}},
                      {"coords", "pixel"}});
    }
    images.push_back({{"image_id", rec.image_id},
                      {"path", rec.source_uri},
                      {"width", rec.size.width},
                      {"height", rec.size.height},
                      {"location_id", rec.location_id ? ordered_json(*rec.location_id)
                                                      : ordered_json(nullptr)},
                      {"annotations", std::move(anns)}});
  }
  return {{"schema_version", m.schema_version},
          {"classes", m.classes},
          {"images", std::move(images)}};
}

namespace detail {

inline double require_number(const nlohmann::json& j, const char* key, const std::string& ctx) {
  if (!j.contains(key) || !j[key].is_number()) {
    throw InvalidInput(ctx + ": missing numeric field '" + key + "'");
  }
  return j[key].get<double>();
}

}  // namespace detail

// Converts one annotation object ({class, box, coords}) against a known
// image size. Normalized coords are corner fractions of the image size.
inline Annotation annotation_from_json(const nlohmann::json& a, const ImageSize& size,
                                       const std::string& ctx) {
  if (!a.is_object() || !a.contains("class") || !a["class"].is_string() ||
      !a.contains("box") || !a["box"].is_object()) {
    throw InvalidInput(ctx + ": annotation needs 'class' and 'box'");
  }
  const auto& b = a["box"];
  PixelBox box{detail::require_number(b, "x_min", ctx), detail::require_number(b, "y_min", ctx),
               detail::require_number(b, "x_max", ctx), detail::require_number(b, "y_max", ctx)};
  const std::string coords = a.value("coords", std::string("pixel"));
  if (coords == "normalized") {
    box = {box.x_min * size.width, box.y_min * size.height, box.x_max * size.width,
           box.y_max * size.height};
  } else if (coords != "pixel") {
    throw InvalidInput(ctx + ": coords must be 'pixel' or 'normalized'");
  }
  return {a["class"].get<std::string>(), box};
}

inline Manifest manifest_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InvalidInput("manifest must be a JSON object");
  Manifest m;
  if (!j.contains("schema_version") || !j["schema_version"].is_number_integer()) {
    throw InvalidInput("manifest lacks integer schema_version");
  }
  m.schema_version = j["schema_version"].get<int>();
  if (m.schema_version != kManifestSchemaVersion) {
    throw InvalidInput("unsupported manifest schema_version " + std::to_string(m.schema_version));
  }
  if (j.contains("classes")) {
    for (const auto& c : j["classes"]) {
      if (!c.is_string()) throw InvalidInput("manifest classes must be strings");
      m.classes.push_back(c.get<std::string>());
    }
  }
  if (!j.contains("images") || !j["images"].is_array()) {
    throw InvalidInput("manifest lacks an images array");
  }
  for (const auto& im : j["images"]) {
    ImageRecord rec;
    if (!im.contains("image_id") || !im["image_id"].is_string()) {
      throw InvalidInput("manifest image without string image_id");
    }
    rec.image_id = im["image_id"].get<std::string>();
    const std::string ctx = "image " + rec.image_id;
    rec.source_uri = im.value("path", std::string());
    rec.size = {static_cast<int>(detail::require_number(im, "width", ctx)),
                static_cast<int>(detail::require_number(im, "height", ctx))};
    if (im.contains("location_id") && !im["location_id"].is_null()) {
      const auto& loc = im["location_id"];
      rec.location_id = loc.is_string() ? loc.get<std::string>() : loc.dump();
    }
    if (!im.contains("annotations") || !im["annotations"].is_array()) {
      throw InvalidInput(ctx + ": missing annotations array");
    }
    validate(rec.size);
    for (const auto& a : im["annotations"]) {
      rec.annotations.push_back(annotation_from_json(a, rec.size, ctx));
    }
    validate(rec);
    m.images.push_back(std::move(rec));
  }
  validate_unique_ids(m.images);
  if (!m.classes.empty()) ClassCatalog::from_names(m.classes);
  return m;
}

inline std::string serialize_manifest(const Manifest& m) {
  return manifest_to_json(m).dump(2) + "\n";
}

inline Manifest parse_manifest(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidInput(std::string("manifest is not valid JSON: ") + e.what());
  }
  return manifest_from_json(j);
}

inline Manifest read_manifest(const std::filesystem::path& path) {
  return parse_manifest(detail::read_file(path));
}

inline void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  detail::write_file_atomic(path, serialize_manifest(m));
}

// Absolute location of a record's media given the manifest's directory.
inline std::filesystem::path media_path(const std::filesystem::path& manifest_dir,
                                        const ImageRecord& rec) {
  const std::filesystem::path p(rec.source_uri);
  return p.is_absolute() ? p : manifest_dir / p;
}

}  // namespace camtrap
