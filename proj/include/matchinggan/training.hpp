#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "matchinggan/checkpoint.hpp"
#include "matchinggan/config.hpp"
#include "matchinggan/data.hpp"
#include "matchinggan/discriminator.hpp"
#include "matchinggan/generator.hpp"
#include "matchinggan/optim.hpp"

namespace mgan {

struct LossBundle {
  double l_d = 0, l_gd = 0, l_1 = 0, l_c_d = 0, l_c_g = 0, l_m = 0;
  double total_g = 0, total_d = 0;

  // (name, value) pairs in log order.
  std::vector<std::pair<std::string, double>> terms() const {
    return {{"l_d", l_d},     {"l_gd", l_gd},   {"l_1", l_1},         {"l_c_d", l_c_d},
            {"l_c_g", l_c_g}, {"l_m", l_m},     {"total_g", total_g}, {"total_d", total_d}};
  }
};

struct EpochRecord {
  int epoch = 0;
  LossBundle mean;
  double validation_l1 = std::numeric_limits<double>::quiet_NaN();
  int d_steps = 0;
  int g_steps = 0;
};

// Line-delimited {"epoch", "term", "value"} records.
class MetricLog {
 public:
  explicit MetricLog(const fs::path& path, bool append = false) : out_(path, append ? std::ios::app : std::ios::trunc) {
    if (!out_) throw DataError("cannot open metric log " + path.string());
  }
  void write(int epoch, const std::string& term, double value) {
    out_ << json{{"epoch", epoch}, {"term", term}, {"value", value}}.dump() << '\n';
    out_.flush();
  }
  void write(const EpochRecord& r) {
    for (const auto& [name, v] : r.mean.terms()) write(r.epoch, name, v);
    if (!std::isnan(r.validation_l1)) write(r.epoch, "val_l1", r.validation_l1);
  }

 private:
  std::ofstream out_;
};

// Adversarial training of a matching generator against a matching
// discriminator on the seen categories of a split.
class Trainer {
 public:
  using Gen = MatchingGenerator<float>;
  using Disc = MatchingDiscriminator<float>;

  Trainer(TrainConfig cfg, const ImageStore& store, CategorySplit split)
      : cfg_(std::move(cfg)), store_(&store), split_(std::move(split)) {
    cfg_.validate();
    const auto& m = store.manifest();
    if (split_.seen.empty()) throw DataError("training needs at least one seen category");
    require_episode_support(m, split_.seen, cfg_.k);
    if (!split_.validation_seen.empty()) require_episode_support(m, split_.validation_seen, cfg_.k);
    labels_ = label_map(split_.seen);

    Rng init = derive_rng(cfg_.seed, 1);
    gen_ = std::make_unique<Gen>(cfg_.generator(m.image_channels, m.resolution), init);
    disc_ = std::make_unique<Disc>(
        cfg_.discriminator(m.image_channels, m.resolution, static_cast<int>(split_.seen.size())), init);
    AdamOptions o{cfg_.learning_rate, cfg_.beta1, cfg_.beta2, 1e-8, cfg_.clip_norm};
    opt_g_ = std::make_unique<Adam<float>>(gen_->parameters(), o);
    opt_d_ = std::make_unique<Adam<float>>(disc_->parameters(), o);
    data_rng_ = derive_rng(cfg_.seed, 2);
    noise_rng_ = derive_rng(cfg_.seed, 3);
    dropout_rng_ = derive_rng(cfg_.seed, 4);

    Rng val = derive_rng(cfg_.seed, 5);
    if (!split_.validation_seen.empty())
      for (int i = 0; i < cfg_.validation_episodes; ++i)
        val_episodes_.push_back(sample_episode(m, split_.validation_seen, cfg_.k, val));
    val_noise_ = normal_tensor<float>({static_cast<int>(val_episodes_.size()), cfg_.noise_dim}, val);
  }

  const TrainConfig& config() const { return cfg_; }
  Gen& generator() { return *gen_; }
  Disc& discriminator() { return *disc_; }
  Adam<float>& generator_optimizer() { return *opt_g_; }
  Adam<float>& discriminator_optimizer() { return *opt_d_; }
  int epoch() const { return epoch_; }
  const CategorySplit& split() const { return split_; }

  int episodes_per_epoch() const {
    if (cfg_.episodes_per_epoch > 0) return cfg_.episodes_per_epoch;
    long long images = 0;
    for (int c : split_.seen) images += store_->category_size(c);
    return static_cast<int>((images + cfg_.k - 1) / cfg_.k);
  }

  std::vector<Episode> sample_batch(int n) {
    std::vector<Episode> eps;
    for (int i = 0; i < n; ++i) eps.push_back(sample_episode(store_->manifest(), split_.seen, cfg_.k, data_rng_));
    return eps;
  }
  Tensor<float> sample_noise(int n) { return normal_tensor<float>({n, cfg_.noise_dim}, noise_rng_); }

  // One update of the discriminator against L_D + L_c^D with the generator
  // run in batch-statistics mode without any state change.
  LossBundle discriminator_step(const std::vector<Episode>& episodes, const Tensor<float>& z) {
    const auto cond = episode_batch(*store_, episodes);
    Tensor<float> fake;
    {
      ag::NoGradGuard ng;
      nn::ForwardContext ctx{ops::NormMode::TrainFrozen, &dropout_rng_};
      fake = gen_->generate(cond, cfg_.k, z, ctx).images.value();
    }
    std::vector<int> labels;
    for (const auto& ep : episodes)
      for (int i = 0; i < ep.k; ++i) labels.push_back(labels_.at(ep.category_id));

    auto real_feat = disc_->extract_features(ag::Var<float>::constant(cond));
    auto fake_feat = disc_->extract_features(ag::Var<float>::constant(std::move(fake)));
    auto l_d = hinge_d_loss(disc_->score_features(fake_feat), disc_->score_features(real_feat));
    auto l_c = classification_loss(disc_->classify_features(real_feat), labels);
    auto total = ops::add(l_d, l_c);

    LossBundle b;
    b.l_d = finite_or_throw("l_d", l_d.item());
    b.l_c_d = finite_or_throw("l_c_d", l_c.item());
    b.total_d = total.item();
    opt_d_->zero_grad();
    ag::backward(total);
    opt_d_->step();
    return b;
  }

  // One update of the generator against
  // L_GD + lambda_r L_1 + L_c^G + lambda_m L_m, discriminator frozen.
  LossBundle generator_step(const std::vector<Episode>& episodes, const Tensor<float>& z) {
    const auto cond = episode_batch(*store_, episodes);
    std::vector<int> labels;
    for (const auto& ep : episodes) labels.push_back(labels_.at(ep.category_id));

    nn::FreezeGuard<float> freeze(disc_->parameters());
    nn::ForwardContext ctx{ops::NormMode::Train, &dropout_rng_};
    auto out = gen_->generate(cond, cfg_.k, z, ctx);
    auto cond_var = ag::Var<float>::constant(cond);
    auto cond_feat = disc_->extract_features(cond_var);
    auto fake_feat = disc_->extract_features(out.images);
    auto l_gd = adv_g_loss(disc_->score_features(fake_feat));
    auto l_c = classification_loss(disc_->classify_features(fake_feat), labels);
    auto l_1 = weighted_reconstruction_loss(out.scores, cond_var, out.images);
    auto l_m = feature_matching_loss(out.scores, cond_feat, fake_feat);
    auto total = ops::add(ops::add(l_gd, ops::scale(l_1, static_cast<float>(cfg_.lambda_r))),
                          ops::add(l_c, ops::scale(l_m, static_cast<float>(cfg_.lambda_m))));

    LossBundle b;
    b.l_gd = finite_or_throw("l_gd", l_gd.item());
    b.l_1 = finite_or_throw("l_1", l_1.item());
    b.l_c_g = finite_or_throw("l_c_g", l_c.item());
    b.l_m = finite_or_throw("l_m", l_m.item());
    b.total_g = total.item();
    opt_g_->zero_grad();
    ag::backward(total);
    opt_g_->step();
    return b;
  }

  // Weighted reconstruction loss on the fixed validation-seen episodes, in
  // inference mode. NaN when there are no validation categories.
  double validation_l1() const {
    if (val_episodes_.empty()) return std::numeric_limits<double>::quiet_NaN();
    ag::NoGradGuard ng;
    Rng coeff = derive_rng(cfg_.seed, 6);
    nn::ForwardContext ctx{ops::NormMode::Inference, &coeff};
    double sum = 0;
    const int n = static_cast<int>(val_episodes_.size());
    for (int start = 0; start < n; start += cfg_.batch_episodes) {
      const int count = std::min(cfg_.batch_episodes, n - start);
      std::vector<Episode> eps(val_episodes_.begin() + start, val_episodes_.begin() + start + count);
      Tensor<float> z({count, cfg_.noise_dim});
      std::copy_n(val_noise_.data() + static_cast<std::size_t>(start) * cfg_.noise_dim, z.size(), z.data());
      const auto cond = episode_batch(*store_, eps);
      auto out = gen_->generate(cond, cfg_.k, z, ctx);
      sum += count * static_cast<double>(
                         weighted_reconstruction_loss(out.scores, ag::Var<float>::constant(cond), out.images).item());
    }
    return sum / n;
  }

  EpochRecord train_epoch() {
    const int steps = (episodes_per_epoch() + cfg_.batch_episodes - 1) / cfg_.batch_episodes;
    EpochRecord r;
    r.epoch = ++epoch_;
    for (int s = 0; s < steps; ++s) {
      for (int d = 0; d < cfg_.d_steps_per_g_step; ++d) {
        auto eps = sample_batch(cfg_.batch_episodes);
        auto b = discriminator_step(eps, sample_noise(cfg_.batch_episodes));
        r.mean.l_d += b.l_d;
        r.mean.l_c_d += b.l_c_d;
        ++r.d_steps;
      }
      auto eps = sample_batch(cfg_.batch_episodes);
      auto b = generator_step(eps, sample_noise(cfg_.batch_episodes));
      r.mean.l_gd += b.l_gd;
      r.mean.l_1 += b.l_1;
      r.mean.l_c_g += b.l_c_g;
      r.mean.l_m += b.l_m;
      ++r.g_steps;
    }
    r.mean.l_d /= r.d_steps;
    r.mean.l_c_d /= r.d_steps;
    r.mean.l_gd /= r.g_steps;
    r.mean.l_1 /= r.g_steps;
    r.mean.l_c_g /= r.g_steps;
    r.mean.l_m /= r.g_steps;
    r.mean.total_d = r.mean.l_d + r.mean.l_c_d;
    r.mean.total_g = r.mean.l_gd + cfg_.lambda_r * r.mean.l_1 + r.mean.l_c_g + cfg_.lambda_m * r.mean.l_m;
    r.validation_l1 = validation_l1();
    return r;
  }

  // Runs the remaining epochs, logging to out_dir/metrics.jsonl and writing
  // out_dir/checkpoints/{last,epoch_NNNN}.ckpt after every completed epoch.
  std::vector<EpochRecord> fit(const fs::path& out_dir, const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    fs::create_directories(out_dir / "checkpoints");
    MetricLog log(out_dir / "metrics.jsonl", epoch_ > 0);
    std::vector<EpochRecord> records;
    while (epoch_ < cfg_.epochs) {
      auto r = train_epoch();
      log.write(r);
      const auto ckpt = checkpoint();
      save_checkpoint(ckpt, out_dir / "checkpoints" / "last.ckpt");
      if (r.epoch % cfg_.checkpoint_every == 0 || r.epoch == cfg_.epochs) {
        char name[32];
        std::snprintf(name, sizeof name, "epoch_%04d.ckpt", r.epoch);
        save_checkpoint(ckpt, out_dir / "checkpoints" / name);
      }
      if (on_epoch) on_epoch(r);
      records.push_back(r);
    }
    return records;
  }

  CheckpointData checkpoint() const {
    CheckpointData c;
    const auto& m = store_->manifest();
    c.meta = {{"config", cfg_},
              {"epoch", epoch_},
              {"image_channels", m.image_channels},
              {"resolution", m.resolution},
              {"seen", split_.seen},
              {"validation_seen", split_.validation_seen},
              {"unseen", split_.unseen},
              {"split_seed", split_.seed},
              {"rng", {{"data", rng_state(data_rng_)}, {"noise", rng_state(noise_rng_)}, {"dropout", rng_state(dropout_rng_)}}},
              {"optimizer_steps", {{"generator", opt_g_->steps()}, {"discriminator", opt_d_->steps()}}}};
    put_state(c, "generator", gen_->state());
    put_state(c, "discriminator", disc_->state());
    put_state(c, "optimizer", opt_g_->state("generator"));
    put_state(c, "optimizer", opt_d_->state("discriminator"));
    return c;
  }

  // Restores full training state; the checkpoint must come from the same
  // architecture.
  void restore(const CheckpointData& c) {
    auto gs = gen_->state();
    get_state(c, "generator", gs);
    auto ds = disc_->state();
    get_state(c, "discriminator", ds);
    auto os = opt_g_->state("generator");
    auto od = opt_d_->state("discriminator");
    nn::StateList<float> both = os;
    both.insert(both.end(), od.begin(), od.end());
    get_state(c, "optimizer", both);
    epoch_ = c.meta.at("epoch").get<int>();
    set_rng_state(data_rng_, c.meta.at("rng").at("data").get<std::string>());
    set_rng_state(noise_rng_, c.meta.at("rng").at("noise").get<std::string>());
    set_rng_state(dropout_rng_, c.meta.at("rng").at("dropout").get<std::string>());
    opt_g_->set_steps(c.meta.at("optimizer_steps").at("generator").get<long long>());
    opt_d_->set_steps(c.meta.at("optimizer_steps").at("discriminator").get<long long>());
  }

 private:
  static double finite_or_throw(const char* term, double v) {
    if (!std::isfinite(v)) throw TrainingError(std::string("non-finite loss term ") + term);
    return v;
  }

  TrainConfig cfg_;
  const ImageStore* store_;
  CategorySplit split_;
  std::map<int, int> labels_;
  std::unique_ptr<Gen> gen_;
  std::unique_ptr<Disc> disc_;
  std::unique_ptr<Adam<float>> opt_g_, opt_d_;
  Rng data_rng_, noise_rng_, dropout_rng_;
  std::vector<Episode> val_episodes_;
  Tensor<float> val_noise_;
  int epoch_ = 0;
};

// Generator rebuilt from a training checkpoint, in inference form.
struct LoadedGenerator {
  TrainConfig config;
  std::unique_ptr<MatchingGenerator<float>> generator;
  CategorySplit split;
  int image_channels = 1;
  int resolution = 32;
};

inline LoadedGenerator load_generator(const CheckpointData& c) {
  LoadedGenerator out;
  try {
    out.config = config_from_json(c.meta.at("config"));
    out.image_channels = c.meta.at("image_channels").get<int>();
    out.resolution = c.meta.at("resolution").get<int>();
    out.split.seen = c.meta.at("seen").get<std::vector<int>>();
    out.split.validation_seen = c.meta.at("validation_seen").get<std::vector<int>>();
    out.split.unseen = c.meta.at("unseen").get<std::vector<int>>();
    out.split.seed = c.meta.at("split_seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint metadata is incomplete: ") + e.what());
  }
  Rng init = derive_rng(out.config.seed, 1);
  out.generator = std::make_unique<MatchingGenerator<float>>(out.config.generator(out.image_channels, out.resolution), init);
  auto st = out.generator->state();
  get_state(c, "generator", st);
  return out;
}

}  // namespace mgan
