#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "matchinggan/discriminator.hpp"
#include "matchinggan/metrics.hpp"
#include "matchinggan/optim.hpp"

// Compact residual classifier used as the feature extractor for FID, the
// posterior for IS and the classifier of the low-data and few-shot protocols.

namespace mgan {

struct BackboneConfig {
  int image_channels = 1;
  int resolution = 32;
  int num_classes = 1;
  std::vector<int> channels{16, 32, 64};

  int feature_dim() const { return channels.back(); }

  void validate() const {
    if (image_channels < 1 || resolution < 4 || num_classes < 1 || channels.empty())
      throw ConfigError("backbone: invalid configuration");
    for (int c : channels)
      if (c < 1) throw ConfigError("backbone channels must be positive");
  }
};

struct BackboneTraining {
  int epochs = 8;
  int batch = 32;
  double learning_rate = 1e-3;
};

struct HeadTraining {
  int steps = 300;
  double learning_rate = 1e-2;
};

// Anything that maps images to features and class posteriors; a pretrained
// network can stand in for the built-in backbone.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual int feature_dim() const = 0;
  // [N, C, H, W] -> [N, F]
  virtual Eigen::MatrixXd features(const Tensor<float>& images) const = 0;
};

class EvalBackbone : public FeatureExtractor {
 public:
  EvalBackbone(const BackboneConfig& cfg, Rng& init_rng) : cfg_(cfg) {
    cfg_.validate();
    conv_in_ = nn::Conv2d<float>(cfg_.image_channels, cfg_.channels[0], 3, 1, 1, true, init_rng,
                                 disc_detail::fan_in_std(cfg_.image_channels * 9));
    int in = cfg_.channels[0];
    for (int c : cfg_.channels) {
      blocks_.emplace_back(in, c, init_rng);
      in = c;
    }
    head_ = nn::Linear<float>(cfg_.feature_dim(), cfg_.num_classes, init_rng,
                              disc_detail::fan_in_std(cfg_.feature_dim()));
  }

  const BackboneConfig& config() const { return cfg_; }
  int feature_dim() const override { return cfg_.feature_dim(); }
  int num_classes() const { return head_.out_features(); }

  ag::Var<float> feature_var(const ag::Var<float>& x) const {
    const auto& v = x.value();
    if (v.rank() != 4 || v.dim(1) != cfg_.image_channels || v.dim(2) != cfg_.resolution || v.dim(3) != cfg_.resolution)
      throw ShapeError("backbone: unexpected input shape " + shape_str(v.shape()));
    auto h = conv_in_(x);
    for (const auto& b : blocks_) {
      h = b(h);
      if (h.dim(2) >= 2) h = ops::avg_pool2(h);
    }
    return ops::global_avg_pool(ops::relu(h));
  }
  ag::Var<float> logits_var(const ag::Var<float>& x) const { return head_(feature_var(x)); }

  Eigen::MatrixXd features(const Tensor<float>& images) const override {
    ag::NoGradGuard ng;
    const int n = images.dim(0);
    Eigen::MatrixXd out(n, feature_dim());
    for (int start = 0; start < n; start += kChunk) {
      const int count = std::min(kChunk, n - start);
      auto f = feature_var(ag::Var<float>::constant(slice(images, start, count))).value();
      for (int i = 0; i < count; ++i)
        for (int j = 0; j < feature_dim(); ++j) out(start + i, j) = f[static_cast<std::size_t>(i) * feature_dim() + j];
    }
    return out;
  }

  // Softmax of the head over precomputed features.
  Eigen::MatrixXd posteriors_from_features(const Eigen::MatrixXd& feats) const {
    Eigen::MatrixXd logits = feats * weight_matrix().transpose();
    logits.rowwise() += bias_vector().transpose();
    Eigen::MatrixXd p(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      const double mx = logits.row(i).maxCoeff();
      double z = 0;
      for (Eigen::Index c = 0; c < logits.cols(); ++c) z += (p(i, c) = std::exp(logits(i, c) - mx));
      p.row(i) /= z;
    }
    return p;
  }
  Eigen::MatrixXd posteriors(const Tensor<float>& images) const { return posteriors_from_features(features(images)); }

  // Argmax of the head; ties go to the lowest class index.
  std::vector<int> predict_from_features(const Eigen::MatrixXd& feats) const {
    Eigen::MatrixXd logits = feats * weight_matrix().transpose();
    logits.rowwise() += bias_vector().transpose();
    std::vector<int> out(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      int best = 0;
      for (Eigen::Index c = 1; c < logits.cols(); ++c)
        if (logits(i, c) > logits(i, best)) best = static_cast<int>(c);
      out[static_cast<std::size_t>(i)] = best;
    }
    return out;
  }

  // Swaps in a freshly initialized head with `classes` outputs.
  void reset_head(int classes, Rng& rng) {
    head_ = nn::Linear<float>(cfg_.feature_dim(), classes, rng, disc_detail::fan_in_std(cfg_.feature_dim()));
  }
  nn::Linear<float>& head() { return head_; }
  const nn::Linear<float>& head() const { return head_; }

  nn::StateList<float> state() const {
    nn::StateList<float> out;
    conv_in_.collect("conv_in", out);
    for (std::size_t s = 0; s < blocks_.size(); ++s) blocks_[s].collect("stage" + std::to_string(s + 1), out);
    head_.collect("head", out);
    return out;
  }
  nn::StateList<float> parameters() const { return nn::trainable_only(state()); }

 private:
  static constexpr int kChunk = 64;

  static Tensor<float> slice(const Tensor<float>& images, int start, int count) {
    Shape s = images.shape();
    s[0] = count;
    const std::size_t per = images.size() / static_cast<std::size_t>(images.dim(0));
    Tensor<float> out(s);
    std::copy_n(images.data() + per * static_cast<std::size_t>(start), per * static_cast<std::size_t>(count), out.data());
    return out;
  }

  Eigen::MatrixXd weight_matrix() const {
    const auto& w = head_.weight.value();
    Eigen::MatrixXd m(w.dim(0), w.dim(1));
    for (int i = 0; i < w.dim(0); ++i)
      for (int j = 0; j < w.dim(1); ++j) m(i, j) = w[static_cast<std::size_t>(i) * w.dim(1) + j];
    return m;
  }
  Eigen::VectorXd bias_vector() const {
    const auto& b = head_.bias.value();
    Eigen::VectorXd v(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) v(static_cast<Eigen::Index>(i)) = b[i];
    return v;
  }

  BackboneConfig cfg_;
  nn::Conv2d<float> conv_in_;
  std::vector<disc_detail::ResBlock<float>> blocks_;
  nn::Linear<float> head_;
};

// Labelled images gathered into one [N, C, H, W] tensor.
struct LabelledImages {
  Tensor<float> images;
  std::vector<int> labels;

  int size() const { return static_cast<int>(labels.size()); }
};

inline LabelledImages gather_labelled(const std::vector<Tensor<float>>& images, std::vector<int> labels) {
  if (images.size() != labels.size()) throw ShapeError("gather_labelled: image and label counts differ");
  if (images.empty()) throw DataError("gather_labelled: no images");
  return {stack<float>(images), std::move(labels)};
}

// Mini-batch Adam on cross entropy over the whole network.
inline std::vector<double> train_backbone(EvalBackbone& net, const LabelledImages& data, const BackboneTraining& opt,
                                          Rng& rng) {
  const int n = data.size();
  for (int l : data.labels)
    if (l < 0 || l >= net.num_classes()) throw UsageError("train_backbone: label outside the head");
  Adam<float> adam(net.parameters(), {opt.learning_rate, 0.9, 0.999, 1e-8, 0});
  const std::size_t per = data.images.size() / static_cast<std::size_t>(n);
  Shape item_shape = data.images.shape();
  std::vector<double> epoch_loss;
  for (int e = 0; e < opt.epochs; ++e) {
    auto order = sample_without_replacement(rng, static_cast<std::size_t>(n), static_cast<std::size_t>(n));
    double total = 0;
    int batches = 0;
    for (int start = 0; start < n; start += opt.batch) {
      const int count = std::min(opt.batch, n - start);
      item_shape[0] = count;
      Tensor<float> x(item_shape);
      std::vector<int> y;
      for (int i = 0; i < count; ++i) {
        const auto src = order[static_cast<std::size_t>(start + i)];
        std::copy_n(data.images.data() + per * src, per, x.data() + per * static_cast<std::size_t>(i));
        y.push_back(data.labels[src]);
      }
      adam.zero_grad();
      auto loss = ops::cross_entropy(net.logits_var(ag::Var<float>::constant(x)), std::span<const int>(y));
      ag::backward(loss);
      adam.step();
      total += loss.item();
      ++batches;
    }
    epoch_loss.push_back(total / std::max(1, batches));
  }
  return epoch_loss;
}

// Retrains only the head, full batch, on frozen features.
inline void fit_head(EvalBackbone& net, const Eigen::MatrixXd& feats, std::span<const int> labels, int classes,
                     const HeadTraining& opt, Rng& rng) {
  if (feats.rows() != static_cast<Eigen::Index>(labels.size())) throw ShapeError("fit_head: feature/label mismatch");
  if (feats.rows() == 0) throw DataError("fit_head: no training examples");
  net.reset_head(classes, rng);
  Tensor<float> x({static_cast<int>(feats.rows()), static_cast<int>(feats.cols())});
  for (Eigen::Index i = 0; i < feats.rows(); ++i)
    for (Eigen::Index j = 0; j < feats.cols(); ++j)
      x[static_cast<std::size_t>(i * feats.cols() + j)] = static_cast<float>(feats(i, j));
  auto xv = ag::Var<float>::constant(std::move(x));
  nn::StateList<float> params;
  net.head().collect("head", params);
  Adam<float> adam(params, {opt.learning_rate, 0.9, 0.999, 1e-8, 0});
  for (int s = 0; s < opt.steps; ++s) {
    adam.zero_grad();
    auto loss = ops::cross_entropy(net.head()(xv), labels);
    ag::backward(loss);
    adam.step();
  }
}

inline double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw ShapeError("accuracy: length mismatch");
  if (truth.empty()) throw ProtocolError("accuracy: empty test set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

}  // namespace mgan
