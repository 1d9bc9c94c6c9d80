#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "matchinggan/matching.hpp"
#include "matchinggan/nn.hpp"

namespace mgan {

enum class CoefficientMode { Matched, Random };

inline std::string to_string(CoefficientMode m) { return m == CoefficientMode::Matched ? "matched" : "random"; }

inline CoefficientMode parse_coefficient_mode(const std::string& s) {
  if (s == "matched") return CoefficientMode::Matched;
  if (s == "random") return CoefficientMode::Random;
  throw ConfigError("coefficient_mode must be 'matched' or 'random', got '" + s + "'");
}

struct GeneratorConfig {
  int image_channels = 1;
  int resolution = 32;
  int noise_dim = 128;
  // Encoder block widths; the decoder mirrors them in reverse.
  std::array<int, 4> channels{64, 64, 128, 128};
  int skip_connections = 2;
  bool shared_encoder = true;
  CoefficientMode coefficient_mode = CoefficientMode::Matched;
  double dropout = 0.2;
  double init_std = 0.02;
  double leaky_slope = 0.2;

  // Matching-space dimension: the bottleneck width.
  int matching_dim() const { return channels[3]; }

  void validate() const {
    if (image_channels < 1) throw ConfigError("image_channels must be >= 1");
    if (resolution < 16 || resolution % 16 != 0)
      throw ConfigError("resolution must be a positive multiple of 16, got " + std::to_string(resolution));
    if (noise_dim < 1) throw ConfigError("noise_dim must be >= 1");
    if (skip_connections < 1 || skip_connections > 3)
      throw ConfigError("skip_connections must be 1, 2 or 3, got " + std::to_string(skip_connections));
    for (int c : channels)
      if (c < 1) throw ConfigError("generator channels must be positive");
    if (dropout < 0 || dropout >= 1) throw ConfigError("dropout must lie in [0, 1)");
  }
};

// Per-image encoder features: index 0 is the bottleneck, indices 1..L the
// skip-connected block outputs from deepest to shallowest.
template <class T>
using FeaturePyramid = std::vector<Tensor<T>>;

template <class T>
struct GeneratorOutput {
  ag::Var<T> images;               // [B, C, H, W]
  ag::Var<T> scores;               // [B, K]
  std::vector<ag::Var<T>> fused;   // L + 1 levels, [B, ...]
};

namespace gen_detail {

using nn::ForwardContext;

// Leaky rectifier -> batch norm -> (optional 2x replication) -> 3x3 conv.
template <class T>
class Composite {
 public:
  Composite() = default;
  Composite(int in, int out, int stride, bool upsample, const GeneratorConfig& cfg, Rng& rng)
      : bn_(in), conv_(in, out, 3, stride, 1, true, rng, cfg.init_std), upsample_(upsample),
        slope_(static_cast<T>(cfg.leaky_slope)) {}

  ag::Var<T> operator()(const ag::Var<T>& x, const ForwardContext& ctx) const {
    auto h = bn_(ops::leaky_relu(x, slope_), ctx.norm);
    if (upsample_) h = ops::upsample2(h);
    return conv_(h);
  }

  void collect(const std::string& p, nn::StateList<T>& out) const {
    bn_.collect(p + ".bn", out);
    conv_.collect(p + ".conv", out);
  }

 private:
  nn::BatchNorm2d<T> bn_;
  nn::Conv2d<T> conv_;
  bool upsample_ = false;
  T slope_ = T(0.2);
};

template <class T>
ag::Var<T> maybe_dropout(const ag::Var<T>& x, double rate, const ForwardContext& ctx) {
  if (!ctx.training() || rate <= 0 || ctx.rng == nullptr) return x;
  return ops::dropout(x, rate, *ctx.rng);
}

// Four composite layers: widen, a residual pair, then a stride-2 downscale.
template <class T>
class EncoderBlock {
 public:
  EncoderBlock() = default;
  EncoderBlock(int in, int out, const GeneratorConfig& cfg, Rng& rng)
      : first_(in, out, 1, false, cfg, rng), res_a_(out, out, 1, false, cfg, rng),
        res_b_(out, out, 1, false, cfg, rng), down_(out, out, 2, false, cfg, rng), dropout_(cfg.dropout) {}

  ag::Var<T> operator()(const ag::Var<T>& x, const ForwardContext& ctx) const {
    auto h = first_(x, ctx);
    h = ops::add(h, res_b_(res_a_(h, ctx), ctx));
    return maybe_dropout(down_(h, ctx), dropout_, ctx);
  }

  void collect(const std::string& p, nn::StateList<T>& out) const {
    first_.collect(p + ".c0", out);
    res_a_.collect(p + ".c1", out);
    res_b_.collect(p + ".c2", out);
    down_.collect(p + ".down", out);
  }

 private:
  Composite<T> first_, res_a_, res_b_, down_;
  double dropout_ = 0;
};

// Mirror of EncoderBlock: 2x replication + conv, then widen and residual pair.
template <class T>
class DecoderBlock {
 public:
  DecoderBlock() = default;
  DecoderBlock(int in, int out, const GeneratorConfig& cfg, Rng& rng)
      : up_(in, out, 1, true, cfg, rng), first_(out, out, 1, false, cfg, rng),
        res_a_(out, out, 1, false, cfg, rng), res_b_(out, out, 1, false, cfg, rng), dropout_(cfg.dropout) {}

  ag::Var<T> operator()(const ag::Var<T>& x, const ForwardContext& ctx) const {
    auto h = maybe_dropout(up_(x, ctx), dropout_, ctx);
    h = first_(h, ctx);
    return ops::add(h, res_b_(res_a_(h, ctx), ctx));
  }

  void collect(const std::string& p, nn::StateList<T>& out) const {
    up_.collect(p + ".up", out);
    first_.collect(p + ".c0", out);
    res_a_.collect(p + ".c1", out);
    res_b_.collect(p + ".c2", out);
  }

 private:
  Composite<T> up_, first_, res_a_, res_b_;
  double dropout_ = 0;
};

template <class T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(const GeneratorConfig& cfg, Rng& rng) {
    int in = cfg.image_channels;
    for (int j = 0; j < 4; ++j) {
      blocks_[j] = EncoderBlock<T>(in, cfg.channels[j], cfg, rng);
      in = cfg.channels[j];
    }
  }

  // Outputs of the four blocks, shallowest first.
  std::array<ag::Var<T>, 4> operator()(const ag::Var<T>& x, const ForwardContext& ctx) const {
    std::array<ag::Var<T>, 4> out;
    ag::Var<T> h = x;
    for (int j = 0; j < 4; ++j) out[j] = h = blocks_[j](h, ctx);
    return out;
  }

  void collect(const std::string& p, nn::StateList<T>& out) const {
    for (int j = 0; j < 4; ++j) blocks_[j].collect(p + ".block" + std::to_string(j + 1), out);
  }

 private:
  std::array<EncoderBlock<T>, 4> blocks_;
};

template <class T>
class Decoder {
 public:
  Decoder() = default;
  Decoder(const GeneratorConfig& cfg, Rng& rng) : skips_(cfg.skip_connections) {
    const auto& c = cfg.channels;
    // Level j (1..3) joins the input of decoder block j; it is the output of
    // encoder block 5 - j.
    const std::array<int, 4> out{c[3], c[2], c[1], c[0]};
    const std::array<int, 3> skip_width{c[3], c[2], c[1]};
    int in = c[3];
    for (int j = 0; j < 4; ++j) {
      const int joined = in + (j < skips_ ? skip_width[j] : 0);
      blocks_[j] = DecoderBlock<T>(joined, out[j], cfg, rng);
      in = out[j];
    }
    head_ = Composite<T>(c[0], cfg.image_channels, 1, false, cfg, rng);
  }

  ag::Var<T> operator()(const std::vector<ag::Var<T>>& levels, const ForwardContext& ctx) const {
    if (static_cast<int>(levels.size()) != skips_ + 1)
      throw ShapeError("decode: expected " + std::to_string(skips_ + 1) + " fused levels, got " +
                       std::to_string(levels.size()));
    ag::Var<T> h = levels[0];
    for (int j = 0; j < 4; ++j) {
      if (j < skips_) h = ops::concat_channels(h, levels[j + 1]);
      h = blocks_[j](h, ctx);
    }
    return ops::tanh(head_(h, ctx));
  }

  void collect(const std::string& p, nn::StateList<T>& out) const {
    for (int j = 0; j < 4; ++j) blocks_[j].collect(p + ".block" + std::to_string(j + 1), out);
    head_.collect(p + ".head", out);
  }

 private:
  int skips_ = 2;
  std::array<DecoderBlock<T>, 4> blocks_;
  Composite<T> head_;
};

}  // namespace gen_detail

// Matching generator: noise embedder E_z, condition encoder(s) E_psi / E_phi
// and the U-Net style decoder G.
template <class T>
class MatchingGenerator {
 public:
  using ForwardContext = nn::ForwardContext;

  MatchingGenerator(const GeneratorConfig& cfg, Rng& init_rng) : cfg_(cfg) {
    cfg_.validate();
    noise_embed_ = nn::Linear<T>(cfg_.noise_dim, cfg_.matching_dim(), init_rng, cfg_.init_std);
    encoder_ = gen_detail::Encoder<T>(cfg_, init_rng);
    if (!cfg_.shared_encoder) phi_encoder_ = gen_detail::Encoder<T>(cfg_, init_rng);
    decoder_ = gen_detail::Decoder<T>(cfg_, init_rng);
  }

  const GeneratorConfig& config() const { return cfg_; }

  // [B, d_z] -> [B, d]
  ag::Var<T> embed_noise(const ag::Var<T>& z) const {
    if (z.value().rank() != 2 || z.dim(1) != cfg_.noise_dim)
      throw ShapeError("embed_noise: expected [B, " + std::to_string(cfg_.noise_dim) + "], got " +
                       shape_str(z.shape()));
    return noise_embed_(z);
  }

  // [N, C, H, W] -> [N, d]: spatial mean of the matching encoder's bottleneck.
  ag::Var<T> embed_condition(const ag::Var<T>& x, const ForwardContext& ctx) const {
    check_images(x.value(), "embed_condition");
    const auto& enc = cfg_.shared_encoder ? encoder_ : *phi_encoder_;
    return ops::global_avg_pool(enc(x, ctx)[3]);
  }

  // Bottleneck followed by the L skip features, deepest first.
  std::vector<ag::Var<T>> extract_feature_pyramid(const ag::Var<T>& x, const ForwardContext& ctx) const {
    check_images(x.value(), "extract_feature_pyramid");
    return pyramid_from_blocks(encoder_(x, ctx));
  }

  ag::Var<T> decode(const std::vector<ag::Var<T>>& fused, const ForwardContext& ctx) const {
    const auto expected = level_shapes(fused.empty() ? 1 : fused[0].dim(0));
    if (fused.size() != expected.size())
      throw ShapeError("decode: expected " + std::to_string(expected.size()) + " levels, got " +
                       std::to_string(fused.size()));
    for (std::size_t j = 0; j < fused.size(); ++j)
      if (fused[j].shape() != expected[j])
        throw ShapeError("decode: level " + std::to_string(j) + " has shape " +
                         shape_str(fused[j].shape()) + ", expected " + shape_str(expected[j]));
    return decoder_(fused, ctx);
  }

  // Full generator pass for B episodes of K conditionals each.
  //   conditionals: [B*K, C, H, W], episode-major; z: [B, d_z].
  // `scores_override`, when given, replaces the matching procedure.
  GeneratorOutput<T> generate(const Tensor<T>& conditionals, int k, const Tensor<T>& z,
                              const ForwardContext& ctx,
                              const std::optional<Tensor<T>>& scores_override = std::nullopt) const {
    if (k < 1) throw UsageError("generate: K must be >= 1");
    check_images(conditionals, "generate");
    if (conditionals.dim(0) % k != 0)
      throw ShapeError("generate: " + std::to_string(conditionals.dim(0)) +
                       " conditionals is not a multiple of K=" + std::to_string(k));
    const int b = conditionals.dim(0) / k;
    auto x = ag::Var<T>::constant(conditionals);
    auto blocks = encoder_(x, ctx);
    auto pyramid = pyramid_from_blocks(blocks);

    ag::Var<T> scores;
    if (scores_override) {
      require_shape(*scores_override, Shape{b, k}, "generate: scores override");
      scores = ag::Var<T>::constant(*scores_override);
    } else if (cfg_.coefficient_mode == CoefficientMode::Random) {
      if (ctx.rng == nullptr) throw UsageError("generate: random coefficients need an rng");
      Tensor<T> s({b, k});
      for (int e = 0; e < b; ++e) {
        auto a = random_coefficients(k, *ctx.rng);
        for (int i = 0; i < k; ++i) s[static_cast<std::size_t>(e) * k + i] = static_cast<T>(a[i]);
      }
      scores = ag::Var<T>::constant(std::move(s));
    } else {
      if (z.rank() != 2 || z.dim(0) != b)
        throw ShapeError("generate: z must be [" + std::to_string(b) + ", d_z], got " + shape_str(z.shape()));
      auto z_emb = embed_noise(ag::Var<T>::constant(z));
      auto c_emb = cfg_.shared_encoder ? ops::global_avg_pool(blocks[3])
                                       : ops::global_avg_pool((*phi_encoder_)(x, ctx)[3]);
      scores = similarity_scores(z_emb, c_emb, k);
    }

    std::vector<const Tensor<T>*> level_values;
    for (const auto& p : pyramid) level_values.push_back(&p.value());
    const auto order = canonical_fusion_order(scores.value(), level_values);

    GeneratorOutput<T> out;
    out.scores = scores;
    for (const auto& level : pyramid) out.fused.push_back(fuse_features(scores, level, order));
    out.images = decoder_(out.fused, ctx);
    return out;
  }

  // Shapes of the L + 1 pyramid levels for a batch of n images.
  std::vector<Shape> level_shapes(int n) const {
    const int r = cfg_.resolution;
    const auto& c = cfg_.channels;
    std::vector<Shape> out{{n, c[3], r / 16, r / 16}};
    const std::array<Shape, 3> skips{Shape{n, c[3], r / 16, r / 16}, Shape{n, c[2], r / 8, r / 8},
                                     Shape{n, c[1], r / 4, r / 4}};
    for (int j = 0; j < cfg_.skip_connections; ++j) out.push_back(skips[j]);
    return out;
  }

  nn::StateList<T> state() const {
    nn::StateList<T> out;
    noise_embed_.collect("noise_embed", out);
    encoder_.collect("encoder", out);
    if (phi_encoder_) phi_encoder_->collect("matching_encoder", out);
    decoder_.collect("decoder", out);
    return out;
  }
  nn::StateList<T> parameters() const { return nn::trainable_only(state()); }

  const nn::Linear<T>& noise_embedder() const { return noise_embed_; }

 private:
  void check_images(const Tensor<T>& x, const char* what) const {
    if (x.rank() != 4 || x.dim(1) != cfg_.image_channels || x.dim(2) != cfg_.resolution ||
        x.dim(3) != cfg_.resolution)
      throw ShapeError(std::string(what) + ": expected [N, " + std::to_string(cfg_.image_channels) + ", " +
                       std::to_string(cfg_.resolution) + ", " + std::to_string(cfg_.resolution) + "], got " +
                       shape_str(x.shape()));
  }

  std::vector<ag::Var<T>> pyramid_from_blocks(const std::array<ag::Var<T>, 4>& blocks) const {
    std::vector<ag::Var<T>> levels{blocks[3]};
    for (int j = 1; j <= cfg_.skip_connections; ++j) levels.push_back(blocks[4 - j]);
    return levels;
  }

  GeneratorConfig cfg_;
  nn::Linear<T> noise_embed_;
  gen_detail::Encoder<T> encoder_;
  std::optional<gen_detail::Encoder<T>> phi_encoder_;
  gen_detail::Decoder<T> decoder_;
};

// Fuses K per-image pyramids of one episode with the given scores, in the
// canonical accumulation order.
template <class T>
FeaturePyramid<T> fuse_pyramids(std::span<const double> scores, const std::vector<FeaturePyramid<T>>& pyramids) {
  const int k = static_cast<int>(pyramids.size());
  if (k < 1 || static_cast<int>(scores.size()) != k)
    throw ShapeError("fuse_pyramids: " + std::to_string(scores.size()) + " scores for " +
                     std::to_string(k) + " pyramids");
  const std::size_t levels = pyramids[0].size();
  for (const auto& p : pyramids) {
    if (p.size() != levels) throw ShapeError("fuse_pyramids: pyramids differ in depth");
    for (std::size_t j = 0; j < levels; ++j)
      if (p[j].shape() != pyramids[0][j].shape())
        throw ShapeError("fuse_pyramids: level " + std::to_string(j) + " shape " + shape_str(p[j].shape()) +
                         " vs " + shape_str(pyramids[0][j].shape()));
  }
  Tensor<T> s({1, k});
  for (int i = 0; i < k; ++i) s[i] = static_cast<T>(scores[i]);
  std::vector<Tensor<T>> stacked;
  for (std::size_t j = 0; j < levels; ++j) {
    std::vector<Tensor<T>> items;
    for (const auto& p : pyramids) items.push_back(p[j]);
    stacked.push_back(stack<T>(items));
  }
  std::vector<const Tensor<T>*> ptrs;
  for (const auto& t : stacked) ptrs.push_back(&t);
  const auto order = canonical_fusion_order(s, ptrs);

  ag::NoGradGuard ng;
  FeaturePyramid<T> out;
  for (const auto& t : stacked) {
    auto fused = fuse_features(ag::Var<T>::constant(s), ag::Var<T>::constant(t), order);
    out.push_back(unstack_item(fused.value(), 0));
  }
  return out;
}

}  // namespace mgan
