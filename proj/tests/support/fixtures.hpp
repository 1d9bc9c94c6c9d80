#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include "matchinggan/data.hpp"
#include "matchinggan/toy_glyphs.hpp"
#include "matchinggan/training.hpp"

namespace fixture {

namespace fs = std::filesystem;

inline fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("mgan_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Toy glyph dataset on disk plus its manifest, loaded into memory.
struct ToyData {
  fs::path root;
  mgan::DatasetManifest manifest;
  mgan::ImageStore store;
};

inline ToyData toy_data(const std::string& name, int categories, int per_category, int resolution,
                        std::uint64_t seed = 1) {
  ToyData d;
  d.root = temp_dir(name);
  mgan::toy::write_dataset(d.root / "images", categories, per_category, resolution, seed);
  d.manifest = mgan::build_manifest(d.root / "images", 1, resolution, 0, seed);
  d.store = mgan::ImageStore(d.manifest);
  return d;
}

// Small enough for unit tests at 16x16.
inline mgan::TrainConfig tiny_config() {
  mgan::TrainConfig c;
  c.k = 3;
  c.noise_dim = 8;
  c.gen_channels = {8, 8, 8, 8};
  c.disc_channels = {8, 8, 8, 8, 8};
  c.batch_episodes = 4;
  c.validation_episodes = 4;
  c.episodes_per_epoch = 8;
  c.epochs = 2;
  c.seed = 5;
  return c;
}

inline std::uint64_t hash_state(const mgan::nn::StateList<float>& state) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& nv : state)
    for (float v : nv.var.value().values()) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      h = (h ^ bits) * 1099511628211ULL;
    }
  return h;
}

}  // namespace fixture
