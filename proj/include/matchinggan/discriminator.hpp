#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "matchinggan/matching.hpp"
#include "matchinggan/nn.hpp"

namespace mgan {

struct DiscriminatorConfig {
  int image_channels = 1;
  int resolution = 32;
  int num_classes = 1;  // C^s, the number of seen categories
  std::vector<int> channels{64, 128, 256, 512, 1024};

  int feature_dim() const { return channels.back(); }

  void validate() const {
    if (image_channels < 1) throw ConfigError("image_channels must be >= 1");
    if (resolution < 16 || resolution % 16 != 0)
      throw ConfigError("resolution must be a positive multiple of 16, got " + std::to_string(resolution));
    if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
    if (channels.size() != 5) throw ConfigError("discriminator needs exactly five stage widths");
    for (int c : channels)
      if (c < 1) throw ConfigError("discriminator channels must be positive");
  }
};

namespace disc_detail {

inline double fan_in_std(int fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

// Pre-activation residual block: relu -> conv -> relu -> conv, plus a 1x1
// learned shortcut when the width changes.
template <class T>
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(int in, int out, Rng& rng) {
    const int hidden = std::min(in, out);
    conv1_ = nn::Conv2d<T>(in, hidden, 3, 1, 1, true, rng, fan_in_std(in * 9));
    conv2_ = nn::Conv2d<T>(hidden, out, 3, 1, 1, true, rng, fan_in_std(hidden * 9));
    if (in != out) {
      shortcut_ = nn::Conv2d<T>(in, out, 1, 1, 0, false, rng, fan_in_std(in));
      learned_shortcut_ = true;
    }
  }

  ag::Var<T> operator()(const ag::Var<T>& x) const {
    auto h = conv2_(ops::relu(conv1_(ops::relu(x))));
    return ops::add(learned_shortcut_ ? shortcut_(x) : x, h);
  }

  void collect(const std::string& p, nn::StateList<T>& out) const {
    conv1_.collect(p + ".conv1", out);
    conv2_.collect(p + ".conv2", out);
    if (learned_shortcut_) shortcut_.collect(p + ".shortcut", out);
  }

 private:
  nn::Conv2d<T> conv1_, conv2_, shortcut_;
  bool learned_shortcut_ = false;
};

}  // namespace disc_detail

// Residual discriminator with a shared trunk D-hat, a real/fake head and a
// seen-category classifier head.
template <class T>
class MatchingDiscriminator {
 public:
  MatchingDiscriminator(const DiscriminatorConfig& cfg, Rng& init_rng) : cfg_(cfg) {
    cfg_.validate();
    conv_in_ = nn::Conv2d<T>(cfg_.image_channels, cfg_.channels[0], 3, 1, 1, true, init_rng,
                             disc_detail::fan_in_std(cfg_.image_channels * 9));
    int in = cfg_.channels[0];
    for (int c : cfg_.channels) {
      blocks_.emplace_back(in, c, init_rng);
      blocks_.emplace_back(c, c, init_rng);
      in = c;
    }
    const int f = cfg_.feature_dim();
    adv_head_ = nn::Linear<T>(f, 1, init_rng, disc_detail::fan_in_std(f));
    cls_head_ = nn::Linear<T>(f, cfg_.num_classes, init_rng, disc_detail::fan_in_std(f));
  }

  const DiscriminatorConfig& config() const { return cfg_; }

  // [N, C, H, W] -> [N, F]
  ag::Var<T> extract_features(const ag::Var<T>& x) const {
    const auto& v = x.value();
    if (v.rank() != 4 || v.dim(1) != cfg_.image_channels || v.dim(2) != cfg_.resolution ||
        v.dim(3) != cfg_.resolution)
      throw ShapeError("discriminator: expected [N, " + std::to_string(cfg_.image_channels) + ", " +
                       std::to_string(cfg_.resolution) + ", " + std::to_string(cfg_.resolution) + "], got " +
                       shape_str(v.shape()));
    auto h = conv_in_(x);
    for (std::size_t s = 0; s < blocks_.size(); s += 2) {
      h = blocks_[s + 1](blocks_[s](h));
      if (h.dim(2) >= 2) h = ops::avg_pool2(h);
    }
    return ops::global_avg_pool(ops::relu(h));
  }

  // [N, F] -> [N, 1]
  ag::Var<T> score_features(const ag::Var<T>& feat) const { return adv_head_(feat); }
  // [N, F] -> [N, C^s]
  ag::Var<T> classify_features(const ag::Var<T>& feat) const { return cls_head_(feat); }

  ag::Var<T> score(const ag::Var<T>& x) const { return score_features(extract_features(x)); }
  ag::Var<T> classify(const ag::Var<T>& x) const { return classify_features(extract_features(x)); }

  nn::StateList<T> state() const {
    nn::StateList<T> out;
    conv_in_.collect("conv_in", out);
    for (std::size_t s = 0; s < blocks_.size(); ++s)
      blocks_[s].collect("stage" + std::to_string(s / 2 + 1) + ".res" + std::to_string(s % 2 + 1), out);
    adv_head_.collect("adv_head", out);
    cls_head_.collect("cls_head", out);
    return out;
  }
  nn::StateList<T> parameters() const { return nn::trainable_only(state()); }

  nn::Linear<T>& adversarial_head() { return adv_head_; }
  nn::Linear<T>& classifier_head() { return cls_head_; }

 private:
  DiscriminatorConfig cfg_;
  nn::Conv2d<T> conv_in_;
  std::vector<disc_detail::ResBlock<T>> blocks_;
  nn::Linear<T> adv_head_, cls_head_;
};

// mean(max(0, 1 + D(fake))) + mean(max(0, 1 - D(real)))
template <class T>
ag::Var<T> hinge_d_loss(const ag::Var<T>& fake_scores, const ag::Var<T>& real_scores) {
  if (fake_scores.value().empty() || real_scores.value().empty())
    throw UsageError("hinge_d_loss: empty score list");
  return ops::add(ops::mean(ops::relu(ops::affine_scalar(fake_scores, T(1), T(1)))),
                  ops::mean(ops::relu(ops::affine_scalar(real_scores, T(-1), T(1)))));
}

template <class T>
ag::Var<T> adv_g_loss(const ag::Var<T>& fake_scores) {
  if (fake_scores.value().empty()) throw UsageError("adv_g_loss: empty score list");
  return ops::scale(ops::mean(fake_scores), T(-1));
}

template <class T>
ag::Var<T> classification_loss(const ag::Var<T>& logits, std::span<const int> labels) {
  return ops::cross_entropy(logits, labels);
}

// Per-element mean |sum_i s_i D(x_i) - D(x~)|, averaged over the batch.
//   scores [B, K], cond_feats [B*K, F], fake_feat [B, F]
template <class T>
ag::Var<T> feature_matching_loss(const ag::Var<T>& scores, const ag::Var<T>& cond_feats,
                                 const ag::Var<T>& fake_feat) {
  if (fake_feat.value().rank() != 2 || cond_feats.value().rank() != 2 ||
      cond_feats.dim(1) != fake_feat.dim(1))
    throw ShapeError("feature_matching_loss: feature shapes " + shape_str(cond_feats.shape()) + " and " +
                     shape_str(fake_feat.shape()) + " disagree");
  const auto order = canonical_fusion_order(scores.value(), {&cond_feats.value()});
  return ops::mean_abs_diff(fuse_features(scores, cond_feats, order), fake_feat);
}

// Scalar forms over plain vectors.

inline double hinge_d_loss(std::span<const double> fake, std::span<const double> real) {
  if (fake.empty() || real.empty()) throw UsageError("hinge_d_loss: empty score list");
  double f = 0, r = 0;
  for (double v : fake) f += std::max(0.0, 1 + v);
  for (double v : real) r += std::max(0.0, 1 - v);
  return f / static_cast<double>(fake.size()) + r / static_cast<double>(real.size());
}

inline double adv_g_loss(std::span<const double> fake) {
  if (fake.empty()) throw UsageError("adv_g_loss: empty score list");
  double s = 0;
  for (double v : fake) s += v;
  return -s / static_cast<double>(fake.size());
}

inline double classification_loss(std::span<const double> logits, int label) {
  if (label < 0 || label >= static_cast<int>(logits.size()))
    throw UsageError("classification_loss: label " + std::to_string(label) + " outside [0, " +
                     std::to_string(logits.size()) + ")");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0;
  for (double v : logits) z += std::exp(v - mx);
  return mx + std::log(z) - logits[static_cast<std::size_t>(label)];
}

inline double feature_matching_loss(std::span<const double> scores,
                                    const std::vector<std::vector<double>>& cond_feats,
                                    std::span<const double> fake_feat) {
  if (scores.size() != cond_feats.size() || cond_feats.empty())
    throw ShapeError("feature_matching_loss: " + std::to_string(scores.size()) + " scores for " +
                     std::to_string(cond_feats.size()) + " features");
  const std::size_t f = fake_feat.size();
  for (const auto& c : cond_feats)
    if (c.size() != f)
      throw ShapeError("feature_matching_loss: feature dimension " + std::to_string(c.size()) + " vs " +
                       std::to_string(f));
  Tensor<double> s({1, static_cast<int>(scores.size())}, std::vector<double>(scores.begin(), scores.end()));
  Tensor<double> cf({static_cast<int>(cond_feats.size()), static_cast<int>(f)});
  for (std::size_t i = 0; i < cond_feats.size(); ++i)
    std::copy(cond_feats[i].begin(), cond_feats[i].end(), cf.values().begin() + static_cast<std::ptrdiff_t>(i * f));
  Tensor<double> ff({1, static_cast<int>(f)}, std::vector<double>(fake_feat.begin(), fake_feat.end()));
  ag::NoGradGuard ng;
  return feature_matching_loss(ag::Var<double>::constant(s), ag::Var<double>::constant(cf),
                               ag::Var<double>::constant(ff))
      .item();
}

}  // namespace mgan
