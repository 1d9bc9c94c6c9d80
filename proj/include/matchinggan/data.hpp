#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "matchinggan/image_io.hpp"
#include "matchinggan/random.hpp"

// Datasets on disk are laid out as root/<category>/<image>.png. A manifest
// pins the (capped) file list of every category; a split file assigns each
// category to seen, validation-seen or unseen.

namespace mgan {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct CategoryEntry {
  int id = 0;
  std::string name;
  std::vector<std::string> files;  // relative to the manifest root
};

struct DatasetManifest {
  std::string root;
  int image_channels = 1;
  int resolution = 32;
  int sample_cap = 0;  // 0 = uncapped
  std::uint64_t seed = 0;
  std::vector<CategoryEntry> categories;

  std::size_t category_count() const { return categories.size(); }
  const CategoryEntry& category(int id) const {
    if (id < 0 || id >= static_cast<int>(categories.size()) || categories[id].id != id)
      throw DataError("unknown category id " + std::to_string(id));
    return categories[id];
  }
  fs::path path_of(const std::string& rel) const { return fs::path(root) / rel; }
};

struct SplitSpec {
  int seen = 0;
  int validation_seen = 0;
  int unseen = 0;
  int total() const { return seen + validation_seen + unseen; }
};

struct CategorySplit {
  std::vector<int> seen;
  std::vector<int> validation_seen;
  std::vector<int> unseen;
  std::uint64_t seed = 0;
};

struct Episode {
  int category_id = 0;
  int k = 0;
  std::vector<int> indices;  // positions in the category's file list
  std::vector<std::string> paths;
};

// Uniform subset of min(cap, |files|) files, kept in input order.
inline std::vector<std::string> cap_category_samples(const std::vector<std::string>& files, int cap,
                                                     std::uint64_t seed) {
  if (cap < 1) throw ConfigError("sample cap must be >= 1, got " + std::to_string(cap));
  if (files.empty()) throw DataError("cap_category_samples: empty file list");
  if (static_cast<int>(files.size()) <= cap) return files;
  Rng rng = derive_rng(seed, 0x636170);
  auto idx = sample_without_replacement(rng, files.size(), static_cast<std::size_t>(cap));
  std::sort(idx.begin(), idx.end());
  std::vector<std::string> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(files[i]);
  return out;
}

inline bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png";
}

// Scans root/<category>/ directories in name order. Each category's files are
// sorted, capped with a per-category seed, and checked to decode.
inline DatasetManifest build_manifest(const fs::path& root, int image_channels, int resolution, int cap,
                                      std::uint64_t seed) {
  if (!fs::is_directory(root)) throw DataError("dataset root " + root.string() + " is not a readable directory");
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  DatasetManifest m;
  m.root = fs::absolute(root).lexically_normal().string();
  m.image_channels = image_channels;
  m.resolution = resolution;
  m.sample_cap = cap;
  m.seed = seed;
  for (const auto& dir : dirs) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && is_image_file(e.path()))
        files.push_back(fs::relative(e.path(), root).generic_string());
    if (files.empty()) continue;
    std::sort(files.begin(), files.end());
    const int id = static_cast<int>(m.categories.size());
    if (cap > 0) files = cap_category_samples(files, cap, seed ^ (0x9e3779b97f4a7c15ULL * (id + 1)));
    for (const auto& f : files)
      if (!png_decodes(root / f)) throw DataError("image " + (root / f).string() + " does not decode");
    m.categories.push_back({id, dir.filename().string(), std::move(files)});
  }
  if (m.categories.empty()) throw DataError("dataset root " + root.string() + " holds no image categories");
  return m;
}

inline json to_json(const DatasetManifest& m) {
  json cats = json::array();
  for (const auto& c : m.categories) cats.push_back({{"id", c.id}, {"name", c.name}, {"files", c.files}});
  return {{"format", "matchinggan-manifest"}, {"version", 1},          {"root", m.root},
          {"image_channels", m.image_channels}, {"resolution", m.resolution}, {"sample_cap", m.sample_cap},
          {"seed", m.seed},                     {"categories", cats}};
}

inline DatasetManifest manifest_from_json(const json& j) {
  if (j.value("format", "") != "matchinggan-manifest") throw DataError("not a dataset manifest");
  if (j.value("version", 0) != 1) throw DataError("unsupported manifest version");
  DatasetManifest m;
  m.root = j.at("root").get<std::string>();
  m.image_channels = j.at("image_channels").get<int>();
  m.resolution = j.at("resolution").get<int>();
  m.sample_cap = j.at("sample_cap").get<int>();
  m.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& c : j.at("categories")) {
    CategoryEntry e{c.at("id").get<int>(), c.at("name").get<std::string>(),
                    c.at("files").get<std::vector<std::string>>()};
    if (e.id != static_cast<int>(m.categories.size())) throw DataError("manifest category ids must be 0..N-1 in order");
    if (m.sample_cap > 0 && static_cast<int>(e.files.size()) > m.sample_cap)
      throw DataError("category " + e.name + " exceeds the sample cap");
    m.categories.push_back(std::move(e));
  }
  return m;
}

inline json to_json(const CategorySplit& s) {
  return {{"format", "matchinggan-split"},
          {"version", 1},
          {"seed", s.seed},
          {"counts", {{"seen", s.seen.size()}, {"validation_seen", s.validation_seen.size()}, {"unseen", s.unseen.size()}}},
          {"seen", s.seen},
          {"validation_seen", s.validation_seen},
          {"unseen", s.unseen}};
}

inline CategorySplit split_from_json(const json& j) {
  if (j.value("format", "") != "matchinggan-split") throw DataError("not a category split file");
  CategorySplit s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.seen = j.at("seen").get<std::vector<int>>();
  s.validation_seen = j.at("validation_seen").get<std::vector<int>>();
  s.unseen = j.at("unseen").get<std::vector<int>>();
  return s;
}

inline json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("cannot parse " + path.string() + ": " + e.what());
  }
}

// Writes via a temporary file and rename so readers never see partial files.
inline void write_text_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << text;
    if (!out) throw DataError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline void write_json_file(const fs::path& path, const json& j) { write_text_atomic(path, j.dump(2) + "\n"); }

// Seeded random partition of the manifest's categories; each list is sorted.
inline CategorySplit split_categories(const DatasetManifest& manifest, const SplitSpec& spec, std::uint64_t seed) {
  const int n = static_cast<int>(manifest.category_count());
  if (spec.seen < 0 || spec.validation_seen < 0 || spec.unseen < 0)
    throw ConfigError("split counts must be non-negative");
  if (spec.total() != n)
    throw ConfigError("split counts sum to " + std::to_string(spec.total()) + " but the manifest has " +
                      std::to_string(n) + " categories");
  Rng rng = derive_rng(seed, 0x73706c6974);
  auto perm = sample_without_replacement(rng, static_cast<std::size_t>(n), static_cast<std::size_t>(n));
  CategorySplit s;
  s.seed = seed;
  for (int i = 0; i < n; ++i) {
    const int id = static_cast<int>(perm[i]);
    if (i < spec.seen)
      s.seen.push_back(id);
    else if (i < spec.seen + spec.validation_seen)
      s.validation_seen.push_back(id);
    else
      s.unseen.push_back(id);
  }
  for (auto* v : {&s.seen, &s.validation_seen, &s.unseen}) std::sort(v->begin(), v->end());
  return s;
}

// Decoded images of a manifest, normalized to [-1, 1].
class ImageStore {
 public:
  ImageStore() = default;
  explicit ImageStore(const DatasetManifest& m) : manifest_(m) {
    images_.resize(m.categories.size());
    for (const auto& c : m.categories)
      for (const auto& f : c.files) images_[c.id].push_back(load_image(m.path_of(f), m.image_channels, m.resolution));
  }

  // Builds a store directly from tensors; used by tests and synthetic data.
  ImageStore(DatasetManifest m, std::vector<std::vector<Tensor<float>>> images)
      : manifest_(std::move(m)), images_(std::move(images)) {
    if (images_.size() != manifest_.categories.size()) throw DataError("image store: category count mismatch");
  }

  const DatasetManifest& manifest() const { return manifest_; }
  int category_size(int id) const { return static_cast<int>(images_.at(static_cast<std::size_t>(id)).size()); }
  const Tensor<float>& image(int category, int index) const {
    return images_.at(static_cast<std::size_t>(category)).at(static_cast<std::size_t>(index));
  }
  const std::vector<Tensor<float>>& category_images(int id) const { return images_.at(static_cast<std::size_t>(id)); }
  Shape image_shape() const { return {manifest_.image_channels, manifest_.resolution, manifest_.resolution}; }

 private:
  DatasetManifest manifest_;
  std::vector<std::vector<Tensor<float>>> images_;
};

inline void require_episode_support(const DatasetManifest& m, const std::vector<int>& categories, int k) {
  if (k < 1) throw UsageError("episodes need K >= 1, got " + std::to_string(k));
  if (categories.empty()) throw DataError("cannot sample episodes from an empty category set");
  for (int c : categories) {
    const auto& e = m.category(c);
    if (static_cast<int>(e.files.size()) < k)
      throw DataError("category " + std::to_string(c) + " (" + e.name + ") has " + std::to_string(e.files.size()) +
                      " images, fewer than K=" + std::to_string(k));
  }
}

// Uniform category, then K distinct images of it.
inline Episode sample_episode(const DatasetManifest& m, const std::vector<int>& categories, int k, Rng& rng) {
  require_episode_support(m, categories, k);
  Episode ep;
  ep.category_id = categories[uniform_index(rng, categories.size())];
  ep.k = k;
  const auto& entry = m.category(ep.category_id);
  for (auto i : sample_without_replacement(rng, entry.files.size(), static_cast<std::size_t>(k))) {
    ep.indices.push_back(static_cast<int>(i));
    ep.paths.push_back(entry.files[i]);
  }
  return ep;
}

// K distinct images of a fixed category.
inline Episode sample_episode_from(const DatasetManifest& m, int category, int k, Rng& rng) {
  return sample_episode(m, std::vector<int>{category}, k, rng);
}

// Stacks the conditionals of several episodes into [B*K, C, H, W].
inline Tensor<float> episode_batch(const ImageStore& store, const std::vector<Episode>& episodes) {
  std::vector<Tensor<float>> items;
  for (const auto& ep : episodes)
    for (int i : ep.indices) items.push_back(store.image(ep.category_id, i));
  return stack<float>(items);
}

// Position of every category id inside a sorted id list, for class labels.
inline std::map<int, int> label_map(const std::vector<int>& ids) {
  std::map<int, int> out;
  for (std::size_t i = 0; i < ids.size(); ++i) out[ids[i]] = static_cast<int>(i);
  return out;
}

}  // namespace mgan
