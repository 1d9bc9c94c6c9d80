#pragma once

#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "matchinggan/backbone.hpp"
#include "matchinggan/training.hpp"

namespace mgan {

// Generated images per target category, with the episode behind each image.
struct ImageBank {
  std::vector<int> categories;
  std::vector<std::vector<Tensor<float>>> images;
  std::vector<std::vector<Episode>> episodes;
  int k2 = 0;
  std::uint64_t seed = 0;

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& v : images) n += v.size();
    return n;
  }
};

struct BankOptions {
  int count = 128;
  int k2 = 3;
  std::uint64_t seed = 0;
  int batch = 32;
};

// `count` images per category; each image gets a fresh z and a fresh K2-image
// episode drawn from the category's pool (all of its images when no pool is
// given).
inline ImageBank generate_bank(const MatchingGenerator<float>& gen, const ImageStore& store,
                               const std::vector<int>& categories, const BankOptions& opt,
                               const std::map<int, std::vector<int>>* pools = nullptr) {
  if (opt.count < 0) throw UsageError("generate_bank: count must be >= 0");
  if (opt.k2 < 1) throw UsageError("generate_bank: K2 must be >= 1");
  ImageBank bank;
  bank.k2 = opt.k2;
  bank.seed = opt.seed;
  Rng episode_rng = derive_rng(opt.seed, 11);
  Rng noise_rng = derive_rng(opt.seed, 12);
  Rng coef_rng = derive_rng(opt.seed, 13);
  const auto& m = store.manifest();
  const int dz = gen.config().noise_dim;
  for (int c : categories) {
    const auto& entry = m.category(c);
    std::vector<int> pool;
    if (pools) {
      pool = pools->at(c);
    } else {
      pool.resize(entry.files.size());
      std::iota(pool.begin(), pool.end(), 0);
    }
    if (static_cast<int>(pool.size()) < opt.k2)
      throw DataError("category " + std::to_string(c) + " (" + entry.name + ") offers " + std::to_string(pool.size()) +
                      " conditionals, fewer than K2=" + std::to_string(opt.k2));
    bank.categories.push_back(c);
    auto& imgs = bank.images.emplace_back();
    auto& eps = bank.episodes.emplace_back();
    for (int i = 0; i < opt.count; ++i) {
      Episode ep;
      ep.category_id = c;
      ep.k = opt.k2;
      for (auto j : sample_without_replacement(episode_rng, pool.size(), static_cast<std::size_t>(opt.k2))) {
        ep.indices.push_back(pool[j]);
        ep.paths.push_back(entry.files[static_cast<std::size_t>(pool[j])]);
      }
      eps.push_back(std::move(ep));
    }
    for (int start = 0; start < opt.count; start += opt.batch) {
      const int b = std::min(opt.batch, opt.count - start);
      std::vector<Episode> chunk(eps.begin() + start, eps.begin() + start + b);
      const auto z = normal_tensor<float>({b, dz}, noise_rng);
      ag::NoGradGuard ng;
      nn::ForwardContext ctx{ops::NormMode::Inference, &coef_rng};
      const auto out = gen.generate(episode_batch(store, chunk), opt.k2, z, ctx).images.value();
      for (int i = 0; i < b; ++i) imgs.push_back(unstack_item(out, i));
    }
  }
  return bank;
}

// Writes dir/<category name>/NNNN.png.
inline void save_bank(const ImageBank& bank, const DatasetManifest& m, const fs::path& dir) {
  for (std::size_t c = 0; c < bank.categories.size(); ++c) {
    const auto sub = dir / m.category(bank.categories[c]).name;
    for (std::size_t i = 0; i < bank.images[c].size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "%04zu.png", i);
      write_png(sub / name, from_tensor(bank.images[c][i]));
    }
  }
}

// One row per `per_row` generations: the conditionals of the row's first
// episode, then the generations.
inline RawImage bank_contact_sheet(const ImageBank& bank, const ImageStore& store, std::size_t category_slot,
                                   int per_row) {
  if (per_row < 1) throw UsageError("contact sheet: per_row must be >= 1");
  std::vector<Tensor<float>> tiles;
  const auto& imgs = bank.images.at(category_slot);
  const auto& eps = bank.episodes.at(category_slot);
  if (imgs.empty()) throw UsageError("contact sheet: empty category");
  for (std::size_t start = 0; start < imgs.size(); start += static_cast<std::size_t>(per_row)) {
    for (int idx : eps[start].indices) tiles.push_back(store.image(eps[start].category_id, idx));
    for (int i = 0; i < per_row; ++i) {
      const auto at = start + static_cast<std::size_t>(i);
      tiles.push_back(at < imgs.size() ? imgs[at] : Tensor<float>(imgs[0].shape(), -1.0f));
    }
  }
  return contact_sheet(tiles, bank.k2 + per_row);
}

// ---------------------------------------------------------------------------
// Backbone preparation

struct BackboneSetup {
  BackboneConfig config;
  BackboneTraining training;
};

// Trains the evaluation backbone on every image of the given categories.
inline EvalBackbone pretrain_backbone(const ImageStore& store, const std::vector<int>& categories,
                                      const BackboneSetup& setup, std::uint64_t seed) {
  if (categories.empty()) throw DataError("backbone pretraining needs at least one category");
  BackboneConfig cfg = setup.config;
  cfg.image_channels = store.manifest().image_channels;
  cfg.resolution = store.manifest().resolution;
  cfg.num_classes = static_cast<int>(categories.size());
  Rng init = derive_rng(seed, 21);
  EvalBackbone net(cfg, init);
  std::vector<Tensor<float>> imgs;
  std::vector<int> labels;
  for (std::size_t i = 0; i < categories.size(); ++i)
    for (const auto& t : store.category_images(categories[i])) {
      imgs.push_back(t);
      labels.push_back(static_cast<int>(i));
    }
  Rng train_rng = derive_rng(seed, 22);
  train_backbone(net, gather_labelled(imgs, labels), setup.training, train_rng);
  return net;
}

inline void save_backbone(const EvalBackbone& net, const json& meta, const fs::path& path) {
  CheckpointData d;
  d.meta = meta;
  d.meta["backbone_channels"] = net.config().channels;
  d.meta["backbone_classes"] = net.num_classes();
  d.meta["image_channels"] = net.config().image_channels;
  d.meta["resolution"] = net.config().resolution;
  put_state(d, "backbone", net.state());
  save_checkpoint(d, path);
}

inline EvalBackbone load_backbone(const fs::path& path) {
  const auto d = load_checkpoint(path);
  BackboneConfig cfg;
  try {
    cfg.channels = d.meta.at("backbone_channels").get<std::vector<int>>();
    cfg.num_classes = d.meta.at("backbone_classes").get<int>();
    cfg.image_channels = d.meta.at("image_channels").get<int>();
    cfg.resolution = d.meta.at("resolution").get<int>();
  } catch (const json::exception& e) {
    throw CheckpointError("backbone checkpoint " + path.string() + " lacks metadata: " + e.what());
  }
  Rng init(0);
  EvalBackbone net(cfg, init);
  auto st = net.state();
  get_state(d, "backbone", st);
  return net;
}

// ---------------------------------------------------------------------------
// Reports

struct MetricReport {
  std::string run_id;
  std::string metric;
  double value = 0;
  json protocol = json::object();
  std::string error;  // set when the cell failed

  bool failed() const { return !error.empty(); }
};

inline json to_json(const MetricReport& r) {
  json j = {{"run_id", r.run_id}, {"metric", r.metric}, {"protocol", r.protocol}};
  if (r.failed()) {
    j["value"] = nullptr;
    j["error"] = r.error;
  } else {
    j["value"] = r.value;
  }
  return j;
}

inline void append_reports(const fs::path& path, const std::vector<MetricReport>& reports) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : reports) out << to_json(r).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Protocols

struct FidIsResult {
  double fid = 0;
  double inception_score = 0;
  int real_images = 0;
  int generated_images = 0;
};

// FID between real and generated images of the target categories on backbone
// features; IS from a head fitted to the real images of those categories.
inline FidIsResult fid_is_protocol(const MatchingGenerator<float>& gen, const ImageStore& store,
                                   const std::vector<int>& categories, const EvalBackbone& backbone,
                                   const BankOptions& bank_opt, const HeadTraining& head_opt) {
  if (categories.empty()) throw ProtocolError("fid-is: no target categories");
  std::vector<Tensor<float>> real;
  std::vector<int> labels;
  for (std::size_t i = 0; i < categories.size(); ++i)
    for (const auto& t : store.category_images(categories[i])) {
      real.push_back(t);
      labels.push_back(static_cast<int>(i));
    }
  const auto bank = generate_bank(gen, store, categories, bank_opt);
  std::vector<Tensor<float>> fake;
  for (const auto& v : bank.images) fake.insert(fake.end(), v.begin(), v.end());
  if (fake.empty()) throw ProtocolError("fid-is: empty bank");
  const auto real_f = backbone.features(stack<float>(real));
  const auto fake_f = backbone.features(stack<float>(fake));
  EvalBackbone net = backbone;
  Rng head_rng = derive_rng(bank_opt.seed, 31);
  fit_head(net, real_f, labels, static_cast<int>(categories.size()), head_opt, head_rng);
  FidIsResult r;
  r.fid = fid_from_features(real_f, fake_f);
  r.inception_score = inception_score(net.posteriors_from_features(fake_f));
  r.real_images = static_cast<int>(real.size());
  r.generated_images = static_cast<int>(fake.size());
  return r;
}

struct LowDataOptions {
  int shots = 10;
  bool augment = false;
  int generated_per_category = 512;
  int k2 = 3;
  std::uint64_t seed = 0;
  HeadTraining head;
};

struct LowDataResult {
  double accuracy = 0;
  int train_real = 0;
  int train_generated = 0;
  int test_images = 0;
};

// Few real images per category for training, the rest for testing; the
// augmented variant adds generated images conditioned on the training shots.
inline LowDataResult lowdata_protocol(const MatchingGenerator<float>* gen, const ImageStore& store,
                                      const std::vector<int>& categories, const EvalBackbone& backbone,
                                      const LowDataOptions& opt) {
  if (categories.empty()) throw ProtocolError("low-data protocol: no categories");
  if (opt.shots < 1) throw UsageError("low-data protocol: shots must be >= 1");
  if (opt.augment && !gen) throw UsageError("low-data protocol: augmentation needs a generator");
  Rng split_rng = derive_rng(opt.seed, 41);
  std::map<int, std::vector<int>> train_idx;
  std::vector<Tensor<float>> train, test;
  std::vector<int> train_y, test_y;
  for (std::size_t i = 0; i < categories.size(); ++i) {
    const int c = categories[i];
    const int n = store.category_size(c);
    if (n < opt.shots)
      throw DataError("category " + std::to_string(c) + " has " + std::to_string(n) + " images, fewer than " +
                      std::to_string(opt.shots) + " shots");
    auto perm = sample_without_replacement(split_rng, static_cast<std::size_t>(n), static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
      const int idx = static_cast<int>(perm[static_cast<std::size_t>(j)]);
      if (j < opt.shots) {
        train_idx[c].push_back(idx);
        train.push_back(store.image(c, idx));
        train_y.push_back(static_cast<int>(i));
      } else {
        test.push_back(store.image(c, idx));
        test_y.push_back(static_cast<int>(i));
      }
    }
  }
  if (test.empty()) throw ProtocolError("low-data protocol: empty test set");
  LowDataResult r;
  r.train_real = static_cast<int>(train.size());
  r.test_images = static_cast<int>(test.size());
  if (opt.augment && opt.generated_per_category > 0) {
    BankOptions bo{opt.generated_per_category, opt.k2, derive_rng(opt.seed, 42)(), 32};
    const auto bank = generate_bank(*gen, store, categories, bo, &train_idx);
    for (std::size_t i = 0; i < bank.images.size(); ++i)
      for (const auto& t : bank.images[i]) {
        train.push_back(t);
        train_y.push_back(static_cast<int>(i));
      }
    r.train_generated = static_cast<int>(bank.total());
  }
  EvalBackbone net = backbone;
  Rng head_rng = derive_rng(opt.seed, 43);
  fit_head(net, backbone.features(stack<float>(train)), train_y, static_cast<int>(categories.size()), opt.head,
           head_rng);
  const auto pred = net.predict_from_features(backbone.features(stack<float>(test)));
  r.accuracy = accuracy(pred, test_y);
  return r;
}

struct FewShotOptions {
  int ways = 5;
  int shots = 5;
  int episodes = 10;
  int generated_per_category = 512;
  int k2 = 3;
  std::uint64_t seed = 0;
  HeadTraining head;
};

struct FewShotResult {
  double mean_accuracy = 0;
  std::vector<double> episode_accuracy;
};

// N-way C-shot episodes over the candidate categories, each augmented with
// generated images, averaged.
inline FewShotResult fewshot_protocol(const MatchingGenerator<float>& gen, const ImageStore& store,
                                      const std::vector<int>& candidates, const EvalBackbone& backbone,
                                      const FewShotOptions& opt) {
  if (opt.ways < 1 || opt.shots < 1 || opt.episodes < 1) throw UsageError("few-shot: N, C and episodes must be >= 1");
  std::vector<int> eligible;
  for (int c : candidates)
    if (store.category_size(c) > opt.shots) eligible.push_back(c);
  if (static_cast<int>(eligible.size()) < opt.ways)
    throw DataError("few-shot: " + std::to_string(eligible.size()) + " categories have more than " +
                    std::to_string(opt.shots) + " images, need " + std::to_string(opt.ways));
  Rng rng = derive_rng(opt.seed, 51);
  FewShotResult r;
  for (int e = 0; e < opt.episodes; ++e) {
    std::vector<int> cats;
    for (auto i : sample_without_replacement(rng, eligible.size(), static_cast<std::size_t>(opt.ways)))
      cats.push_back(eligible[i]);
    LowDataOptions lo;
    lo.shots = opt.shots;
    lo.augment = opt.generated_per_category > 0;
    lo.generated_per_category = opt.generated_per_category;
    lo.k2 = opt.k2;
    lo.seed = rng();
    lo.head = opt.head;
    r.episode_accuracy.push_back(lowdata_protocol(&gen, store, cats, backbone, lo).accuracy);
  }
  r.mean_accuracy = std::accumulate(r.episode_accuracy.begin(), r.episode_accuracy.end(), 0.0) /
                    static_cast<double>(r.episode_accuracy.size());
  return r;
}

}  // namespace mgan
