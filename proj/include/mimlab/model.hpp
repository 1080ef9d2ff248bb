#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mimlab/image.hpp"
#include "mimlab/mask.hpp"
#include "mimlab/ops.hpp"
#include "mimlab/rng.hpp"
#include "mimlab/targets.hpp"

namespace mimlab {

struct EncoderConfig {
  Index image_size = 64;
  Index patch_size = 8;
  Index embed_dim = 64;
  Index depth = 2;
  Index num_heads = 4;
  Index mlp_ratio = 4;

  void validate() const;
  Index grid() const { return image_size / patch_size; }
  Index num_tokens() const { return grid() * grid(); }
  Index token_dim() const { return 3 * patch_size * patch_size; }
};

enum class HeadKind { linear, mlp2 };

std::string to_string(HeadKind k);
HeadKind parse_head_kind(const std::string& name);

struct HeadConfig {
  HeadKind kind = HeadKind::linear;
  Index output_dim = 0;
};

/// Parameters of one pre-norm transformer block. `T` is Tensor<float> for
/// storage or Var<S> once bound to a tape.
template <typename T>
struct BlockParams {
  T ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b;
  T ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;

  template <typename Self, typename F>
  static void for_each(Self& self, const std::string& prefix, F&& f) {
    f(prefix + "norm1.weight", self.ln1_g);
    f(prefix + "norm1.bias", self.ln1_b);
    f(prefix + "attn.qkv.weight", self.qkv_w);
    f(prefix + "attn.qkv.bias", self.qkv_b);
    f(prefix + "attn.proj.weight", self.proj_w);
    f(prefix + "attn.proj.bias", self.proj_b);
    f(prefix + "norm2.weight", self.ln2_g);
    f(prefix + "norm2.bias", self.ln2_b);
    f(prefix + "mlp.fc1.weight", self.fc1_w);
    f(prefix + "mlp.fc1.bias", self.fc1_b);
    f(prefix + "mlp.fc2.weight", self.fc2_w);
    f(prefix + "mlp.fc2.bias", self.fc2_b);
  }
};

template <typename T>
struct EncoderParams {
  T patch_w, patch_b, mask_token, pos;
  std::vector<BlockParams<T>> blocks;
  T norm_g, norm_b;

  template <typename Self, typename F>
  static void for_each(Self& self, F&& f) {
    f(std::string("patch_embed.weight"), self.patch_w);
    f(std::string("patch_embed.bias"), self.patch_b);
    f(std::string("mask_token"), self.mask_token);
    f(std::string("pos_embed"), self.pos);
    for (std::size_t i = 0; i < self.blocks.size(); ++i)
      BlockParams<T>::for_each(self.blocks[i], "blocks." + std::to_string(i) + ".", f);
    f(std::string("norm.weight"), self.norm_g);
    f(std::string("norm.bias"), self.norm_b);
  }
};

/// Linear: w1, b1. mlp2: w1, b1 (d x d), gelu, w2, b2.
template <typename T>
struct HeadParams {
  HeadKind kind = HeadKind::linear;
  T w1, b1, w2, b2;

  template <typename Self, typename F>
  static void for_each(Self& self, const std::string& prefix, F&& f) {
    if (self.kind == HeadKind::linear) {
      f(prefix + "weight", self.w1);
      f(prefix + "bias", self.b1);
    } else {
      f(prefix + "fc1.weight", self.w1);
      f(prefix + "fc1.bias", self.b1);
      f(prefix + "fc2.weight", self.w2);
      f(prefix + "fc2.bias", self.b2);
    }
  }
};

template <typename T>
struct ModelParams {
  EncoderParams<T> encoder;
  HeadParams<T> head;

  template <typename F>
  void visit(F&& f) {
    EncoderParams<T>::for_each(encoder, f);
    HeadParams<T>::for_each(head, "head.", f);
  }
  template <typename F>
  void visit(F&& f) const {
    EncoderParams<T>::for_each(encoder, f);
    HeadParams<T>::for_each(head, "head.", f);
  }

  /// Same structure with every element mapped through f(name, value).
  template <typename U, typename F>
  ModelParams<U> map(F&& f) const {
    ModelParams<U> out;
    out.encoder.blocks.resize(encoder.blocks.size());
    out.head.kind = head.kind;
    std::vector<U*> slots;
    out.visit([&](const std::string&, U& u) { slots.push_back(&u); });
    std::size_t i = 0;
    visit([&](const std::string& name, const T& t) { *slots[i++] = f(name, t); });
    return out;
  }
};

/// Trainable state: configs plus float parameters.
struct Model {
  EncoderConfig encoder;
  HeadConfig head;
  ModelParams<Tensor<float>> params;

  std::vector<std::pair<std::string, Tensor<float>*>> named();
  std::vector<std::pair<std::string, const Tensor<float>*>> named() const;
  Index parameter_count() const;
};

/// Truncated-normal(0.02) weights, N(0, 0.02^2) position and mask token,
/// zero biases, unit layernorm gains.
Model init_model(const EncoderConfig& encoder, const HeadConfig& head, Rng& rng);

/// Fresh head of a different shape on an existing encoder.
HeadParams<Tensor<float>> init_head(const HeadConfig& head, Index embed_dim, Rng& rng);

/// Hand formula for the number of scalars in a configuration.
Index expected_parameter_count(const EncoderConfig& encoder, const HeadConfig& head);

/// Layer id for layer-wise lr decay: 0 embedding, i + 1 block i, depth + 1
/// final norm and head.
Index layer_id(const std::string& name, Index depth);

/// Stacked patch tokens for a batch: (B * N) x (3 p^2).
Tensor<float> patchify_batch(std::span<const Image> images, Index patch_size);

/// Per-token mask bytes for a batch, each grid in token order.
std::vector<std::uint8_t> token_mask(std::span<const MaskGrid> masks, const EncoderConfig& config);

struct ForwardOptions {
  double drop_path = 0.0;  // per-image residual-branch drop probability
  Rng* rng = nullptr;      // required when drop_path > 0
};

/// Binds parameters onto a tape as leaves (or constants when frozen).
template <typename S>
ModelParams<Var<S>> bind(Tape<S>& tape, const ModelParams<Tensor<float>>& params, bool requires_grad = true) {
  return params.template map<Var<S>>([&](const std::string&, const Tensor<float>& t) {
    return requires_grad ? tape.leaf(t.template cast<S>()) : tape.constant(t.template cast<S>());
  });
}

// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
Var<S> affine(const Var<S>& x, const Var<S>& w, const Var<S>& b) {
  return add(matmul(x, w), broadcast_rows(b, x.value().rows()));
}

template <typename S>
Var<S> scaled_layernorm(const Var<S>& x, const Var<S>& g, const Var<S>& b) {
  const Index n = x.value().rows();
  return add(mul(layernorm(x, S(1e-5)), broadcast_rows(g, n)), broadcast_rows(b, n));
}

template <typename S>
Var<S> drop_path(const Var<S>& branch, Index images, Index tokens, const ForwardOptions& opts) {
  if (opts.drop_path <= 0.0) return branch;
  if (!opts.rng) throw ConfigError("drop_path needs an rng");
  const double keep = 1.0 - opts.drop_path;
  Tensor<S> scale_t({images * tokens, branch.value().cols()});
  for (Index b = 0; b < images; ++b) {
    const S s = opts.rng->bernoulli(keep) ? S(1.0 / keep) : S(0);
    scale_t.matrix().middleRows(b * tokens, tokens).setConstant(s);
  }
  return mul(branch, branch.tape()->constant(std::move(scale_t)));
}

template <typename S>
Var<S> attention(const Var<S>& h, const BlockParams<Var<S>>& p, Index images, Index tokens, Index heads) {
  const Index d = h.value().cols();
  const Index hd = d / heads;
  const S inv = S(1) / std::sqrt(S(hd));
  auto qkv = affine(h, p.qkv_w, p.qkv_b);
  std::vector<Var<S>> per_image;
  per_image.reserve(static_cast<std::size_t>(images));
  for (Index b = 0; b < images; ++b) {
    auto rows = slice_rows(qkv, b * tokens, tokens);
    std::vector<Var<S>> per_head;
    per_head.reserve(static_cast<std::size_t>(heads));
    for (Index k = 0; k < heads; ++k) {
      auto q = slice_cols(rows, k * hd, hd);
      auto key = slice_cols(rows, d + k * hd, hd);
      auto v = slice_cols(rows, 2 * d + k * hd, hd);
      auto a = softmax(scale(matmul(q, transpose(key)), inv));
      per_head.push_back(matmul(a, v));
    }
    per_image.push_back(heads == 1 ? per_head.front() : concat_cols(per_head));
  }
  auto out = images == 1 ? per_image.front() : concat_rows(per_image);
  return affine(out, p.proj_w, p.proj_b);
}

}  // namespace detail

/// Visible tokens get the patch embedding, masked ones the shared mask
/// token; positions are added after the replacement. `mask` may be empty
/// (nothing masked).
template <typename S>
Var<S> embed_and_mask(const EncoderParams<Var<S>>& p, const Tensor<S>& tokens, std::span<const std::uint8_t> mask,
                      const EncoderConfig& config) {
  const Index n = config.num_tokens();
  if (tokens.rank() != 2 || tokens.cols() != config.token_dim() || tokens.rows() % n != 0)
    throw ShapeError("embed_and_mask: tokens " + shape_string(tokens.shape()) + " do not fit " + std::to_string(n) +
                     " tokens of dim " + std::to_string(config.token_dim()));
  if (!mask.empty() && static_cast<Index>(mask.size()) != tokens.rows())
    throw ShapeError("embed_and_mask: mask covers " + std::to_string(mask.size()) + " tokens, batch has " +
                     std::to_string(tokens.rows()));
  auto& tape = *p.patch_w.tape();
  auto x = detail::affine(tape.constant(tokens), p.patch_w, p.patch_b);
  bool any = false;
  for (auto m : mask) any = any || m;
  if (any) x = where_rows(mask, x, p.mask_token);
  const Index images = tokens.rows() / n;
  if (images == 1) return add(x, p.pos);
  return add(x, concat_rows(std::vector<Var<S>>(static_cast<std::size_t>(images), p.pos)));
}

/// Residual stream after every block (before the final norm).
template <typename S>
std::vector<Var<S>> encoder_blocks(const EncoderParams<Var<S>>& p, Var<S> x, const EncoderConfig& config,
                                   const ForwardOptions& opts = {}) {
  const Index n = config.num_tokens();
  const Index images = x.value().rows() / n;
  std::vector<Var<S>> outs;
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    const auto& b = p.blocks[i];
    auto attn = detail::attention(detail::scaled_layernorm(x, b.ln1_g, b.ln1_b), b, images, n, config.num_heads);
    x = add(x, detail::drop_path(attn, images, n, opts));
    auto h = detail::scaled_layernorm(x, b.ln2_g, b.ln2_b);
    auto mlp = detail::affine(gelu(detail::affine(h, b.fc1_w, b.fc1_b)), b.fc2_w, b.fc2_b);
    x = add(x, detail::drop_path(mlp, images, n, opts));
    if (!x.value().all_finite()) throw NumericalError("encoder: non-finite activation in block " + std::to_string(i));
    outs.push_back(x);
  }
  return outs;
}

template <typename S>
Var<S> encoder_forward(const EncoderParams<Var<S>>& p, const Var<S>& embeddings, const EncoderConfig& config,
                       const ForwardOptions& opts = {}) {
  auto outs = encoder_blocks(p, embeddings, config, opts);
  const Var<S>& last = outs.empty() ? embeddings : outs.back();
  return detail::scaled_layernorm(last, p.norm_g, p.norm_b);
}

template <typename S>
Var<S> head_forward(const HeadParams<Var<S>>& p, const Var<S>& features) {
  if (p.kind == HeadKind::linear) return detail::affine(features, p.w1, p.b1);
  return detail::affine(gelu(detail::affine(features, p.w1, p.b1)), p.w2, p.b2);
}

/// Per-image mean over tokens: (B * N) x d -> B x d.
template <typename S>
Var<S> mean_pool(const Var<S>& features, Index tokens_per_image) {
  const Index rows = features.value().rows();
  if (tokens_per_image <= 0 || rows % tokens_per_image != 0) throw ShapeError("mean_pool: ragged batch");
  const Index images = rows / tokens_per_image;
  Tensor<S> pool({images, rows});
  for (Index b = 0; b < images; ++b)
    pool.matrix().row(b).segment(b * tokens_per_image, tokens_per_image).setConstant(S(1) / S(tokens_per_image));
  return matmul(features.tape()->constant(std::move(pool)), features);
}

/// Predictions for a batch of normalized images under masks.
template <typename S>
Var<S> model_forward(const ModelParams<Var<S>>& p, const Tensor<S>& tokens, std::span<const std::uint8_t> mask,
                     const EncoderConfig& config) {
  return head_forward(p.head, encoder_forward(p.encoder, embed_and_mask(p.encoder, tokens, mask, config), config));
}

/// Composite at target resolution: predictions (clamped to [0, 1]) inside
/// masked patches, the (downsampled) original elsewhere.
Image reconstruct_image(const Tensor<float>& predictions, const MaskGrid& mask, const Image& original,
                        const TargetSpec& target);

}  // namespace mimlab
