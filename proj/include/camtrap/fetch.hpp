#pragma once

// Ingestion client for a camera-trap media REST API.
//
// Contract:
//   GET {endpoint}/media/[?project=ID]     paginated listing
//     -> {"results": [record, ...], "next": URL-or-path | null}
//   record:
//     {"id": str|int, "media_url": URL-or-path, "width": int?, "height": int?,
//      "location_id": str|int|null, "sha256": hex?,
//      "annotations": [{"class": str, "box": {x_min, y_min, x_max, y_max},
//                       "coords": "pixel"|"normalized"}]}
//   Every request carries "Authorization: Token <token>".
//
// Media land in {out}/media/<sha256><ext>. Completed downloads are appended
// to {out}/fetch_index.jsonl so an interrupted run resumes where it
// stopped. The manifest {out}/manifest.json is only written when every
// listed record was either stored or rejected as malformed/empty.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstddef>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "camtrap/dataset.hpp"
#include "camtrap/detail/fs.hpp"
#include "camtrap/detail/sha256.hpp"
#include "camtrap/detail/text.hpp"
#include "camtrap/error.hpp"
#include "camtrap/image_probe.hpp"

namespace camtrap {

inline constexpr const char* kTokenEnvVar = "CAMTRAP_API_TOKEN";

struct FetchOptions {
  std::string endpoint;  // e.g. http://host:8000/api
  std::string token;
  std::optional<std::string> project;
  std::filesystem::path out_dir;
  std::size_t workers = 4;
  std::size_t max_attempts = 5;
  std::chrono::milliseconds initial_backoff{250};
  std::chrono::milliseconds max_backoff{8000};
  std::chrono::seconds timeout{60};
  std::function<void(const std::string&)> log;  // optional progress sink
};

struct FetchFailure {
  std::string image_id;
  std::string reason;
};

struct FetchSummary {
  std::size_t listed = 0;
  std::size_t downloaded = 0;
  std::size_t reused = 0;
  std::size_t malformed = 0;
  std::size_t empty = 0;
  std::size_t images = 0;  // records in the written manifest
  std::vector<FetchFailure> failures;
  std::vector<std::string> warnings;
  std::filesystem::path manifest_path;

  bool complete() const { return failures.empty(); }
};

namespace detail {

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string target;  // path plus query, starting with '/'
};

inline Url split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw InvalidInput("not an absolute URL: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

// Resolves absolute URLs, origin-relative paths, and paths relative to
// the endpoint.
inline Url resolve_url(const std::string& endpoint, const std::string& ref) {
  if (ref.find("://") != std::string::npos) return split_url(ref);
  const auto base = split_url(endpoint);
  if (!ref.empty() && ref.front() == '/') return {base.origin, ref};
  std::string path = base.target;
  if (path.empty() || path.back() != '/') path += '/';
  return {base.origin, path + ref};
}

inline std::string url_encode(std::string_view s) {
  std::string out;
  for (unsigned char ch : s) {
    if (std::isalnum(ch) || ch == '-' || ch == '_' || ch == '.' || ch == '~') {
      out += static_cast<char>(ch);
    } else {
      char buf[4];
      std::snprintf(buf, sizeof(buf), "%%%02X", ch);
      out += buf;
    }
  }
  return out;
}

inline std::string media_extension(const std::string& url) {
  std::string path = url.substr(0, url.find_first_of("?#"));
  const auto slash = path.find_last_of('/');
  const auto dot = path.find_last_of('.');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) return ".jpg";
  std::string ext = path.substr(dot);
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext.size() > 6) return ".jpg";
  return ext;
}

enum class HttpOutcome { kOk, kAuth, kTransient, kPermanent };

// Thread-confined HTTP access with per-origin clients and bounded
// exponential backoff.
class HttpSession {
 public:
  explicit HttpSession(const FetchOptions& opt) : opt_(opt) {}

  // Returns the body, or throws AuthError / RemoteError once retries are spent.
  std::string get(const Url& url) {
    std::string last_error;
    auto delay = opt_.initial_backoff;
    for (std::size_t attempt = 1; attempt <= std::max<std::size_t>(1, opt_.max_attempts);
         ++attempt) {
      auto& cli = client(url.origin);
      httplib::Headers headers;
      if (!opt_.token.empty()) headers.emplace("Authorization", "Token " + opt_.token);
      const auto res = cli.Get(url.target, headers);
      HttpOutcome outcome;
      if (!res) {
        outcome = HttpOutcome::kTransient;
        last_error = "connection error: " + httplib::to_string(res.error());
      } else if (res->status == 401 || res->status == 403) {
        outcome = HttpOutcome::kAuth;
      } else if (res->status >= 200 && res->status < 300) {
        return res->body;
      } else {
        outcome = (res->status >= 500 || res->status == 408 || res->status == 429)
                      ? HttpOutcome::kTransient
                      : HttpOutcome::kPermanent;
        last_error = "HTTP " + std::to_string(res->status);
      }
      if (outcome == HttpOutcome::kAuth) {
        throw AuthError("credentials rejected by " + url.origin + " (HTTP " +
                        std::to_string(res->status) + ")");
      }
      if (outcome == HttpOutcome::kPermanent) break;
      if (attempt < opt_.max_attempts) {
        std::this_thread::sleep_for(delay);
        delay = std::min(delay * 2, opt_.max_backoff);
      }
    }
    throw RemoteError(url.origin + url.target + ": " + last_error);
  }

 private:
  httplib::Client& client(const std::string& origin) {
    auto it = clients_.find(origin);
    if (it == clients_.end()) {
      auto cli = std::make_unique<httplib::Client>(origin);
      cli->set_connection_timeout(opt_.timeout);
      cli->set_read_timeout(opt_.timeout);
      cli->set_follow_location(true);
      it = clients_.emplace(origin, std::move(cli)).first;
    }
    return *it->second;
  }

  const FetchOptions& opt_;
  std::map<std::string, std::unique_ptr<httplib::Client>> clients_;
};

struct ListedRecord {
  std::string image_id;
  std::string media_url;
  std::optional<int> width;
  std::optional<int> height;
  std::optional<std::string> location_id;
  std::optional<std::string> sha256;
  nlohmann::json annotations;
};

inline std::optional<std::string> id_string(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  return std::nullopt;
}

inline ListedRecord parse_listed(const nlohmann::json& r) {
  if (!r.is_object()) throw InvalidInput("record is not an object");
  ListedRecord out;
  const auto id = r.contains("id") ? id_string(r["id"]) : std::nullopt;
  if (!id || id->empty()) throw InvalidInput("record without id");
  out.image_id = *id;
  if (!r.contains("media_url") || !r["media_url"].is_string()) {
    throw InvalidInput("record " + out.image_id + " without media_url");
  }
  out.media_url = r["media_url"].get<std::string>();
  auto dim = [&](const char* key) -> std::optional<int> {
    if (!r.contains(key) || r[key].is_null()) return std::nullopt;
    if (!r[key].is_number_integer() || r[key].get<long long>() < 1) {
      throw InvalidInput("record " + out.image_id + " has invalid " + key);
    }
    return r[key].get<int>();
  };
  out.width = dim("width");
  out.height = dim("height");
  if (r.contains("location_id") && !r["location_id"].is_null()) {
    out.location_id = id_string(r["location_id"]);
    if (!out.location_id) throw InvalidInput("record " + out.image_id + " has invalid location_id");
  }
  if (r.contains("sha256") && r["sha256"].is_string()) out.sha256 = r["sha256"].get<std::string>();
  if (!r.contains("annotations") || !r["annotations"].is_array()) {
    throw InvalidInput("record " + out.image_id + " without annotations array");
  }
  out.annotations = r["annotations"];
  return out;
}

struct IndexEntry {
  std::string path;
  std::string sha256;
};

inline std::map<std::string, IndexEntry> read_fetch_index(const std::filesystem::path& file) {
  std::map<std::string, IndexEntry> out;
  std::ifstream in(file);
  std::string line;
  while (std::getline(in, line)) {
    // A crash mid-append leaves a torn last line; it is simply ignored.
    try {
      const auto j = nlohmann::json::parse(line);
      out[j.at("image_id").get<std::string>()] = {j.at("path").get<std::string>(),
                                                 j.at("sha256").get<std::string>()};
    } catch (const nlohmann::json::exception&) {
    }
  }
  return out;
}

inline bool file_has_digest(const std::filesystem::path& file, const std::string& sha) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(file, ec)) return false;
  return sha256_hex(read_file(file)) == sha;
}

}  // namespace detail

// Downloads the listing and media into options.out_dir and writes the
// manifest. Throws AuthError on rejected credentials, RemoteError when the
// listing cannot be retrieved; per-media failures are reported in the
// summary and suppress the manifest.
inline FetchSummary fetch_package(const FetchOptions& options) {
  namespace fs = std::filesystem;
  auto log = [&](const std::string& msg) {
    if (options.log) options.log(msg);
  };
  FetchSummary summary;
  if (options.endpoint.empty()) throw InvalidInput("fetch needs an endpoint URL");

  // Listing, fully traversed before anything touches the disk.
  std::vector<detail::ListedRecord> records;
  std::set<std::string> seen_ids;
  {
    detail::HttpSession http(options);
    std::string first = "media/";
    if (options.project) first += "?project=" + detail::url_encode(*options.project);
    std::optional<detail::Url> next = detail::resolve_url(options.endpoint, first);
    std::set<std::string> visited;
    while (next) {
      const std::string key = next->origin + next->target;
      if (!visited.insert(key).second) throw RemoteError("pagination loops back to " + key);
      nlohmann::json page;
      try {
        page = nlohmann::json::parse(http.get(*next));
      } catch (const nlohmann::json::parse_error&) {
        throw RemoteError("listing page is not JSON: " + key);
      }
      if (!page.is_object() || !page.contains("results") || !page["results"].is_array()) {
        throw RemoteError("listing page lacks a results array: " + key);
      }
      for (const auto& r : page["results"]) {
        ++summary.listed;
        try {
          auto rec = detail::parse_listed(r);
          if (!seen_ids.insert(rec.image_id).second) {
            throw InvalidInput("duplicate record id " + rec.image_id);
          }
          if (rec.annotations.empty()) {
            ++summary.empty;
            continue;
          }
          records.push_back(std::move(rec));
        } catch (const InvalidInput& e) {
          ++summary.malformed;
          summary.warnings.push_back(std::string("skipped malformed record: ") + e.what());
        }
      }
      next.reset();
      if (page.contains("next") && page["next"].is_string() &&
          !page["next"].get<std::string>().empty()) {
        next = detail::resolve_url(options.endpoint, page["next"].get<std::string>());
      }
    }
  }
  log("listed " + std::to_string(summary.listed) + " records");

  const fs::path media_dir = options.out_dir / "media";
  detail::ensure_dir(media_dir);
  const fs::path index_file = options.out_dir / "fetch_index.jsonl";
  const auto index = detail::read_fetch_index(index_file);

  struct Outcome {
    std::optional<ImageRecord> record;
    std::optional<std::string> failure;
    std::optional<std::string> malformed;
    std::vector<std::string> warnings;
    bool reused = false;
  };
  std::vector<Outcome> outcomes(records.size());
  std::mutex index_mutex;
  std::atomic<std::size_t> next_item{0};
  std::atomic<bool> abort{false};
  std::exception_ptr auth_failure;
  std::mutex auth_mutex;

  auto process = [&](detail::HttpSession& http, const detail::ListedRecord& rec, Outcome& out) {
    const std::string ext = detail::media_extension(rec.media_url);
    std::optional<std::string> stored;  // path relative to out_dir
    bool indexed = false;

    if (const auto it = index.find(rec.image_id); it != index.end()) {
      const bool listing_agrees = !rec.sha256 || *rec.sha256 == it->second.sha256;
      if (listing_agrees &&
          detail::file_has_digest(options.out_dir / it->second.path, it->second.sha256)) {
        stored = it->second.path;
        indexed = true;
      }
    }
    if (!stored && rec.sha256) {
      const std::string candidate = "media/" + *rec.sha256 + ext;
      if (detail::file_has_digest(options.out_dir / candidate, *rec.sha256)) stored = candidate;
    }
    out.reused = stored.has_value();

    std::string sha;
    if (!stored) {
      std::string body;
      try {
        body = http.get(detail::resolve_url(options.endpoint, rec.media_url));
      } catch (const AuthError&) {
        throw;
      } catch (const RemoteError& e) {
        out.failure = e.what();
        return;
      }
      sha = detail::sha256_hex(body);
      if (rec.sha256 && *rec.sha256 != sha) {
        out.failure = "checksum mismatch (listing " + *rec.sha256 + ", got " + sha + ")";
        return;
      }
      stored = "media/" + sha + ext;
      if (!detail::file_has_digest(options.out_dir / *stored, sha)) {
        detail::write_file_atomic(options.out_dir / *stored, body);
      }
    } else {
      sha = fs::path(*stored).stem().string();
    }
    if (!indexed) {
      std::lock_guard lock(index_mutex);
      std::ofstream idx(index_file, std::ios::app);
      nlohmann::ordered_json line{{"image_id", rec.image_id}, {"path", *stored}, {"sha256", sha}};
      idx << line.dump() << "\n";
      idx.flush();
      if (!idx) throw IoError("cannot append to " + index_file.string());
    }

    // Dimensions: the file header wins over the listing.
    ImageSize size{rec.width.value_or(0), rec.height.value_or(0)};
    const auto probed = probe_image_file(options.out_dir / *stored);
    if (probed) {
      if (rec.width && rec.height && !(*probed == size)) {
        out.warnings.push_back("image " + rec.image_id + ": listing says " +
                               std::to_string(size.width) + "x" + std::to_string(size.height) +
                               ", file says " + std::to_string(probed->width) + "x" +
                               std::to_string(probed->height) + "; using file");
      }
      size = *probed;
    } else if (!rec.width || !rec.height) {
      out.malformed = "image " + rec.image_id + ": no dimensions in listing or media header";
      return;
    }

    try {
      ImageRecord image;
      image.image_id = rec.image_id;
      image.source_uri = *stored;
      image.size = size;
      image.location_id = rec.location_id;
      for (const auto& a : rec.annotations) {
        image.annotations.push_back(annotation_from_json(a, size, "record " + rec.image_id));
      }
      validate(image);
      out.record = std::move(image);
    } catch (const InvalidInput& e) {
      out.malformed = e.what();
    }
  };

  auto worker = [&] {
    detail::HttpSession http(options);
    while (!abort) {
      const std::size_t i = next_item++;
      if (i >= records.size()) return;
      try {
        process(http, records[i], outcomes[i]);
      } catch (const AuthError&) {
        std::lock_guard lock(auth_mutex);
        if (!auth_failure) auth_failure = std::current_exception();
        abort = true;
      } catch (const std::exception& e) {
        outcomes[i].failure = e.what();
      }
    }
  };
  {
    const std::size_t n_workers =
        std::max<std::size_t>(1, std::min(options.workers, std::max<std::size_t>(1, records.size())));
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  }
  if (auth_failure) std::rethrow_exception(auth_failure);

  Manifest manifest;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& o = outcomes[i];
    for (auto& w : o.warnings) summary.warnings.push_back(std::move(w));
    if (o.failure) {
      summary.failures.push_back({records[i].image_id, *o.failure});
    } else if (o.malformed) {
      ++summary.malformed;
      summary.warnings.push_back("skipped malformed record: " + *o.malformed);
    } else if (o.record) {
      (o.reused ? summary.reused : summary.downloaded) += 1;
      manifest.images.push_back(std::move(*o.record));
    }
  }
  std::sort(manifest.images.begin(), manifest.images.end(),
            [](const ImageRecord& a, const ImageRecord& b) { return a.image_id < b.image_id; });

  if (!summary.complete()) {
    log(std::to_string(summary.failures.size()) + " media failed; manifest not written");
    return summary;
  }
  summary.images = manifest.images.size();
  summary.manifest_path = options.out_dir / "manifest.json";
  write_manifest(summary.manifest_path, manifest);
  log("wrote " + summary.manifest_path.string() + " with " + std::to_string(summary.images) +
      " images");
  return summary;
}

}  // namespace camtrap
