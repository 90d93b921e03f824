#pragma once

// Deterministic stratified k-fold assignment and export of per-fold
// training layouts in the detector's label format.
//
// Stratification is by image presence: an image with three boars counts
// once for "boar". Images are placed greedily, rarest contained class
// first, each into the fold currently holding the fewest images of that
// class. Fold capacity is capped so that final fold sizes differ by at
// most one. The only randomness is a seeded shuffle of images that share
// the same priority, driven by std::mt19937_64 (whose output sequence is
// fixed by the standard) and an in-house Fisher-Yates with rejection
// sampling, so plans are identical across standard libraries.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "camtrap/dataset.hpp"
#include "camtrap/detail/fs.hpp"
#include "camtrap/detail/text.hpp"
#include "camtrap/error.hpp"
#include "camtrap/geometry.hpp"

namespace camtrap {

inline constexpr std::size_t kDefaultFolds = 5;

struct SplitPlan {
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::map<std::string, std::size_t> assignment;  // image_id -> fold

  std::vector<std::string> fold_images(std::size_t fold) const {
    std::vector<std::string> out;
    for (const auto& [id, f] : assignment) {
      if (f == fold) out.push_back(id);
    }
    return out;
  }

  std::vector<std::size_t> fold_sizes() const {
    std::vector<std::size_t> sizes(k, 0);
    for (const auto& [id, f] : assignment) ++sizes.at(f);
    return sizes;
  }

  friend bool operator==(const SplitPlan&, const SplitPlan&) = default;
};

namespace detail {

// Uniform integer in [0, bound) by rejection; independent of the
// standard library's distribution implementations.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % bound;
}

template <typename T>
void seeded_shuffle(std::vector<T>& items, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_below(rng, i));
    std::swap(items[i - 1], items[j]);
  }
}

// Class indices present in each record, records taken in image_id order.
struct LabelSets {
  std::vector<std::string> ids;
  std::vector<std::vector<std::size_t>> classes;
};

inline LabelSets label_sets(const std::vector<ImageRecord>& records, const ClassCatalog& catalog) {
  std::vector<const ImageRecord*> sorted;
  for (const auto& r : records) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(),
            [](const ImageRecord* a, const ImageRecord* b) { return a->image_id < b->image_id; });
  LabelSets out;
  for (const auto* r : sorted) {
    std::set<std::size_t> present;
    for (const auto& a : r->annotations) present.insert(catalog.require_index(a.species_name));
    if (!out.ids.empty() && out.ids.back() == r->image_id) {
      throw InvalidInput("duplicate image_id " + r->image_id);
    }
    out.ids.push_back(r->image_id);
    out.classes.emplace_back(present.begin(), present.end());
  }
  return out;
}

}  // namespace detail

inline SplitPlan stratified_kfold(const std::vector<ImageRecord>& records,
                                  const ClassCatalog& catalog, std::size_t k,
                                  std::uint64_t seed) {
  if (k < 2) throw InvalidInput("k must be at least 2");
  if (records.size() < k) {
    throw InvalidInput("cannot split " + std::to_string(records.size()) + " images into " +
                       std::to_string(k) + " folds");
  }
  const auto sets = detail::label_sets(records, catalog);
  const std::size_t n = sets.ids.size();
  const std::size_t num_classes = catalog.size();

  std::vector<std::size_t> class_freq(num_classes, 0);
  for (const auto& cs : sets.classes) {
    for (auto c : cs) ++class_freq[c];
  }

  // Priority: the rarest class an image contains (by image frequency,
  // then class index). Images without any class go last.
  struct Item {
    std::size_t image;
    std::size_t rarest;
    std::size_t freq;
  };
  std::vector<Item> items;
  items.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Item it{i, num_classes, std::numeric_limits<std::size_t>::max()};
    for (auto c : sets.classes[i]) {
      if (class_freq[c] < it.freq || (class_freq[c] == it.freq && c < it.rarest)) {
        it.rarest = c;
        it.freq = class_freq[c];
      }
    }
    items.push_back(it);
  }
  detail::seeded_shuffle(items, seed);
  std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
    if (a.freq != b.freq) return a.freq < b.freq;
    return a.rarest < b.rarest;
  });

  const std::size_t base = n / k;
  const std::size_t extra = n % k;  // folds allowed to reach base + 1
  std::vector<std::size_t> fold_size(k, 0);
  std::size_t folds_at_ceiling = 0;
  std::vector<std::vector<std::size_t>> fold_class(k, std::vector<std::size_t>(num_classes, 0));

  auto eligible = [&](std::size_t f) {
    if (fold_size[f] < base) return true;
    return fold_size[f] == base && folds_at_ceiling < extra;
  };

  SplitPlan plan{k, seed, {}};
  for (const auto& it : items) {
    std::size_t best = k;
    for (std::size_t f = 0; f < k; ++f) {
      if (!eligible(f)) continue;
      if (best == k) {
        best = f;
        continue;
      }
      // Equal targets n_c / k for every fold, so "most deficient" is the
      // fold holding the fewest images of the class.
      const std::size_t have_f = it.rarest < num_classes ? fold_class[f][it.rarest] : 0;
      const std::size_t have_b = it.rarest < num_classes ? fold_class[best][it.rarest] : 0;
      if (have_f < have_b || (have_f == have_b && fold_size[f] < fold_size[best])) best = f;
    }
    if (fold_size[best] == base) ++folds_at_ceiling;
    ++fold_size[best];
    for (auto c : sets.classes[it.image]) ++fold_class[best][c];
    plan.assignment.emplace(sets.ids[it.image], best);
  }
  return plan;
}

struct StratificationReport {
  std::size_t k = 0;
  std::vector<std::string> class_names;
  std::vector<std::vector<std::size_t>> counts;     // [fold][class] images
  std::vector<std::vector<double>> proportions;     // [fold][class] share of the fold's images
  std::vector<double> global_proportions;           // [class] share of all images
  std::vector<std::size_t> fold_sizes;
  double max_proportion_deviation = 0.0;
  double max_count_deviation = 0.0;    // max |count - n_c / k|
  bool single_label = true;
  std::vector<std::size_t> flagged_classes;  // count deviation > 1 (single-label only)
};

inline StratificationReport verify_stratification(const SplitPlan& plan,
                                                  const std::vector<ImageRecord>& records,
                                                  const ClassCatalog& catalog) {
  const auto sets = detail::label_sets(records, catalog);
  std::set<std::string> known(sets.ids.begin(), sets.ids.end());
  for (const auto& [id, f] : plan.assignment) {
    if (!known.contains(id)) throw InvalidInput("plan references unknown image " + id);
    if (f >= plan.k) throw InvalidInput("plan assigns image " + id + " to an out-of-range fold");
  }
  for (const auto& id : sets.ids) {
    if (!plan.assignment.contains(id)) throw InvalidInput("plan does not cover image " + id);
  }

  const std::size_t C = catalog.size();
  StratificationReport r;
  r.k = plan.k;
  r.class_names = catalog.names;
  r.counts.assign(plan.k, std::vector<std::size_t>(C, 0));
  r.fold_sizes.assign(plan.k, 0);
  std::vector<std::size_t> class_total(C, 0);
  for (std::size_t i = 0; i < sets.ids.size(); ++i) {
    const auto f = plan.assignment.at(sets.ids[i]);
    ++r.fold_sizes[f];
    if (sets.classes[i].size() != 1) r.single_label = false;
    for (auto c : sets.classes[i]) {
      ++r.counts[f][c];
      ++class_total[c];
    }
  }
  const double n = static_cast<double>(sets.ids.size());
  r.global_proportions.resize(C);
  for (std::size_t c = 0; c < C; ++c) r.global_proportions[c] = n > 0 ? class_total[c] / n : 0.0;

  r.proportions.assign(plan.k, std::vector<double>(C, 0.0));
  std::set<std::size_t> flagged;
  for (std::size_t f = 0; f < plan.k; ++f) {
    for (std::size_t c = 0; c < C; ++c) {
      const double p = r.fold_sizes[f] > 0
                           ? static_cast<double>(r.counts[f][c]) / static_cast<double>(r.fold_sizes[f])
                           : 0.0;
      r.proportions[f][c] = p;
      r.max_proportion_deviation =
          std::max(r.max_proportion_deviation, std::abs(p - r.global_proportions[c]));
      const double expected = static_cast<double>(class_total[c]) / static_cast<double>(plan.k);
      const double dev = std::abs(static_cast<double>(r.counts[f][c]) - expected);
      r.max_count_deviation = std::max(r.max_count_deviation, dev);
      if (dev > 1.0) flagged.insert(c);
    }
  }
  if (r.single_label) r.flagged_classes.assign(flagged.begin(), flagged.end());
  return r;
}

inline std::string stratification_csv(const StratificationReport& r) {
  std::string out = "fold,class,images,proportion,global_proportion\n";
  for (std::size_t f = 0; f < r.k; ++f) {
    for (std::size_t c = 0; c < r.class_names.size(); ++c) {
      out += std::to_string(f) + "," + r.class_names[c] + "," + std::to_string(r.counts[f][c]) +
             "," + detail::format_fixed(r.proportions[f][c], 6) + "," +
             detail::format_fixed(r.global_proportions[c], 6) + "\n";
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Plan persistence

inline std::string serialize_plan(const SplitPlan& plan) {
  nlohmann::ordered_json j;
  j["k"] = plan.k;
  j["seed"] = plan.seed;
  nlohmann::ordered_json a = nlohmann::ordered_json::object();
  for (const auto& [id, f] : plan.assignment) a[id] = f;
  j["assignment"] = std::move(a);
  return j.dump(2) + "\n";
}

inline SplitPlan parse_plan(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    SplitPlan plan;
    plan.k = j.at("k").get<std::size_t>();
    plan.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& [id, f] : j.at("assignment").items()) {
      plan.assignment[id] = f.get<std::size_t>();
      if (plan.assignment[id] >= plan.k) throw InvalidInput("fold index out of range for " + id);
    }
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed split plan: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Export

enum class MediaLink { kSymlink, kCopy };

struct ExportOptions {
  std::filesystem::path media_root;  // directory that record paths are relative to
  MediaLink link = MediaLink::kSymlink;
};

// File stem used for an image inside an exported layout.
inline std::string layout_stem(const std::string& image_id) {
  std::string out;
  for (char ch : image_id) {
    const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') ||
                    (ch >= '0' && ch <= '9') || ch == '-' || ch == '_' || ch == '.';
    out += ok ? ch : '_';
  }
  if (out.empty() || out == "." || out == "..") out = "_" + out;
  return out;
}

inline std::string dataset_descriptor(const std::filesystem::path& layout_dir,
                                      const ClassCatalog& catalog) {
  std::string out;
  out += "path: " + layout_dir.string() + "\n";
  out += "train: train.txt\n";
  out += "val: val.txt\n";
  out += "nc: " + std::to_string(catalog.size()) + "\n";
  out += "names: [";
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    std::string quoted;
    for (char ch : catalog.names[i]) {
      quoted += ch;
      if (ch == '\'') quoted += '\'';
    }
    out += (i ? ", '" : "'") + quoted + "'";
  }
  out += "]\n";
  return out;
}

// Writes one fold's training layout:
//   out_dir/images/<stem>.<ext>   link or copy of the media
//   out_dir/labels/<stem>.txt     one label line per annotation
//   out_dir/train.txt, val.txt    relative image paths, val = `fold`
//   out_dir/dataset.yaml          descriptor (nc, names, train, val)
inline void export_split(const SplitPlan& plan, std::size_t fold,
                         const std::vector<ImageRecord>& records, const ClassCatalog& catalog,
                         const std::filesystem::path& out_dir, const ExportOptions& options) {
  namespace fs = std::filesystem;
  if (fold >= plan.k) throw InvalidInput("fold index out of range");

  std::vector<const ImageRecord*> sorted;
  for (const auto& r : records) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(),
            [](const ImageRecord* a, const ImageRecord* b) { return a->image_id < b->image_id; });

  std::vector<std::string> missing;
  std::set<std::string> stems;
  for (const auto* r : sorted) {
    if (!plan.assignment.contains(r->image_id)) {
      throw InvalidInput("plan does not cover image " + r->image_id);
    }
    if (!stems.insert(layout_stem(r->image_id)).second) {
      throw InvalidInput("image ids collide after sanitizing: " + r->image_id);
    }
    for (const auto& a : r->annotations) catalog.require_index(a.species_name);
    if (!fs::is_regular_file(media_path(options.media_root, *r))) missing.push_back(r->image_id);
  }
  if (!missing.empty()) {
    std::string msg = "export aborted, " + std::to_string(missing.size()) + " media file(s) missing:";
    for (const auto& id : missing) msg += " " + id;
    throw IoError(msg);
  }

  const fs::path images_dir = out_dir / "images";
  const fs::path labels_dir = out_dir / "labels";
  detail::ensure_dir(images_dir);
  detail::ensure_dir(labels_dir);

  std::string train_list;
  std::string val_list;
  for (const auto* r : sorted) {
    const auto source = fs::absolute(media_path(options.media_root, *r)).lexically_normal();
    const std::string stem = layout_stem(r->image_id);
    const std::string image_name = stem + source.extension().string();
    const fs::path target = images_dir / image_name;

    std::error_code ec;
    fs::remove(target, ec);
    if (options.link == MediaLink::kSymlink) {
      fs::create_symlink(source, target, ec);
    } else {
      fs::copy_file(source, target, fs::copy_options::overwrite_existing, ec);
    }
    if (ec) throw IoError("cannot place " + target.string() + ": " + ec.message());

    std::string labels;
    for (const auto& a : r->annotations) {
      labels += format_label_line({catalog.require_index(a.species_name), to_normalized(a.box, r->size)});
      labels += '\n';
    }
    detail::write_file_atomic(labels_dir / (stem + ".txt"), labels);

    const std::string rel = "images/" + image_name + "\n";
    (plan.assignment.at(r->image_id) == fold ? val_list : train_list) += rel;
  }
  detail::write_file_atomic(out_dir / "train.txt", train_list);
  detail::write_file_atomic(out_dir / "val.txt", val_list);
  detail::write_file_atomic(out_dir / "dataset.yaml",
                            dataset_descriptor(fs::absolute(out_dir).lexically_normal(), catalog));
}

}  // namespace camtrap
