#include "mimlab/model.hpp"

#include <algorithm>

#include "mimlab/patches.hpp"

namespace mimlab {

void EncoderConfig::validate() const {
  if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
    throw ConfigError("encoder: image size " + std::to_string(image_size) + " not divisible by patch size " +
                      std::to_string(patch_size));
  if (embed_dim <= 0 || num_heads <= 0 || embed_dim % num_heads != 0)
    throw ConfigError("encoder: embed_dim " + std::to_string(embed_dim) + " not divisible by num_heads " +
                      std::to_string(num_heads));
  if (depth < 0) throw ConfigError("encoder: negative depth");
  if (mlp_ratio <= 0) throw ConfigError("encoder: mlp_ratio must be positive");
}

std::string to_string(HeadKind k) { return k == HeadKind::linear ? "linear" : "mlp2"; }

HeadKind parse_head_kind(const std::string& name) {
  if (name == "linear") return HeadKind::linear;
  if (name == "mlp2") return HeadKind::mlp2;
  throw ConfigError("unknown head kind '" + name + "' (expected linear or mlp2)");
}

std::vector<std::pair<std::string, Tensor<float>*>> Model::named() {
  std::vector<std::pair<std::string, Tensor<float>*>> out;
  params.visit([&](const std::string& name, Tensor<float>& t) { out.emplace_back(name, &t); });
  return out;
}

std::vector<std::pair<std::string, const Tensor<float>*>> Model::named() const {
  std::vector<std::pair<std::string, const Tensor<float>*>> out;
  params.visit([&](const std::string& name, const Tensor<float>& t) { out.emplace_back(name, &t); });
  return out;
}

Index Model::parameter_count() const {
  Index n = 0;
  params.visit([&](const std::string&, const Tensor<float>& t) { n += t.size(); });
  return n;
}

namespace {

Tensor<float> trunc_normal(Shape shape, Rng& rng, double stddev) {
  Tensor<float> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.truncated_normal(0.0, stddev));
  return t;
}

Tensor<float> normal(Shape shape, Rng& rng, double stddev) {
  Tensor<float> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.normal(0.0, stddev));
  return t;
}

}  // namespace

HeadParams<Tensor<float>> init_head(const HeadConfig& head, Index d, Rng& rng) {
  if (head.output_dim <= 0) throw ConfigError("head: output_dim must be positive");
  HeadParams<Tensor<float>> p;
  p.kind = head.kind;
  if (head.kind == HeadKind::linear) {
    p.w1 = trunc_normal({d, head.output_dim}, rng, 0.02);
    p.b1 = Tensor<float>::zeros({1, head.output_dim});
  } else {
    p.w1 = trunc_normal({d, d}, rng, 0.02);
    p.b1 = Tensor<float>::zeros({1, d});
    p.w2 = trunc_normal({d, head.output_dim}, rng, 0.02);
    p.b2 = Tensor<float>::zeros({1, head.output_dim});
  }
  return p;
}

Model init_model(const EncoderConfig& encoder, const HeadConfig& head, Rng& rng) {
  encoder.validate();
  const Index d = encoder.embed_dim, hidden = d * encoder.mlp_ratio;
  Model m;
  m.encoder = encoder;
  m.head = head;
  auto& e = m.params.encoder;
  e.patch_w = trunc_normal({encoder.token_dim(), d}, rng, 0.02);
  e.patch_b = Tensor<float>::zeros({1, d});
  e.mask_token = normal({1, d}, rng, 0.02);
  e.pos = normal({encoder.num_tokens(), d}, rng, 0.02);
  for (Index i = 0; i < encoder.depth; ++i) {
    BlockParams<Tensor<float>> b;
    b.ln1_g = Tensor<float>::ones({1, d});
    b.ln1_b = Tensor<float>::zeros({1, d});
    b.qkv_w = trunc_normal({d, 3 * d}, rng, 0.02);
    b.qkv_b = Tensor<float>::zeros({1, 3 * d});
    b.proj_w = trunc_normal({d, d}, rng, 0.02);
    b.proj_b = Tensor<float>::zeros({1, d});
    b.ln2_g = Tensor<float>::ones({1, d});
    b.ln2_b = Tensor<float>::zeros({1, d});
    b.fc1_w = trunc_normal({d, hidden}, rng, 0.02);
    b.fc1_b = Tensor<float>::zeros({1, hidden});
    b.fc2_w = trunc_normal({hidden, d}, rng, 0.02);
    b.fc2_b = Tensor<float>::zeros({1, d});
    e.blocks.push_back(std::move(b));
  }
  e.norm_g = Tensor<float>::ones({1, d});
  e.norm_b = Tensor<float>::zeros({1, d});
  m.params.head = init_head(head, d, rng);
  return m;
}

Index expected_parameter_count(const EncoderConfig& c, const HeadConfig& head) {
  const Index d = c.embed_dim, h = d * c.mlp_ratio;
  const Index embed = c.token_dim() * d + d + d + c.num_tokens() * d;
  const Index block = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * h + h) + (h * d + d);
  const Index out = head.output_dim;
  const Index head_n = head.kind == HeadKind::linear ? d * out + out : d * d + d + d * out + out;
  return embed + c.depth * block + 2 * d + head_n;
}

Index layer_id(const std::string& name, Index depth) {
  if (name.starts_with("patch_embed") || name == "mask_token" || name == "pos_embed") return 0;
  if (name.starts_with("blocks.")) {
    const auto dot = name.find('.', 7);
    return std::stoll(name.substr(7, dot - 7)) + 1;
  }
  return depth + 1;
}

Tensor<float> patchify_batch(std::span<const Image> images, Index patch_size) {
  if (images.empty()) throw ShapeError("patchify_batch: empty batch");
  Tensor<float> first = patchify(images.front(), patch_size);
  if (images.size() == 1) return first;
  const Index n = first.rows();
  Tensor<float> out({n * static_cast<Index>(images.size()), first.cols()});
  out.matrix().topRows(n) = first.matrix();
  for (std::size_t i = 1; i < images.size(); ++i) {
    const Tensor<float> t = patchify(images[i], patch_size);
    if (t.shape() != first.shape()) throw ShapeError("patchify_batch: images differ in size");
    out.matrix().middleRows(static_cast<Index>(i) * n, n) = t.matrix();
  }
  return out;
}

std::vector<std::uint8_t> token_mask(std::span<const MaskGrid> masks, const EncoderConfig& config) {
  std::vector<std::uint8_t> out;
  out.reserve(masks.size() * static_cast<std::size_t>(config.num_tokens()));
  for (const MaskGrid& m : masks) {
    MaskGrid grid = m;
    // A coarser mask covers several encoder tokens per cell.
    if (m.patch_size() != config.patch_size) {
      if (m.patch_size() % config.patch_size != 0)
        throw ShapeError("token_mask: mask patch " + std::to_string(m.patch_size()) + " is not a multiple of token patch " +
                         std::to_string(config.patch_size));
      grid = m.upsampled(m.patch_size() / config.patch_size);
    }
    if (grid.rows() != config.grid() || grid.cols() != config.grid())
      throw ShapeError("token_mask: mask grid " + std::to_string(grid.rows()) + "x" + std::to_string(grid.cols()) +
                       " does not match token grid " + std::to_string(config.grid()));
    out.insert(out.end(), grid.cells().begin(), grid.cells().end());
  }
  return out;
}

Image reconstruct_image(const Tensor<float>& predictions, const MaskGrid& mask, const Image& original,
                        const TargetSpec& target) {
  if (is_classification(target.kind))
    throw ConfigError("reconstruct_image: " + to_string(target.kind) + " predictions must be decoded first");
  const Index input = original.height();
  const Index t = target_patch(target, input, input / mask.rows());
  Image base = build_regression_target(original, target.resolution);
  Tensor<float> tokens = patchify(base, t);
  if (predictions.shape() != tokens.shape())
    throw ShapeError("reconstruct_image: predictions " + shape_string(predictions.shape()) + " expected " +
                     shape_string(tokens.shape()));
  const auto cells = mask.cells();
  for (Index r = 0; r < tokens.rows(); ++r) {
    if (!cells[static_cast<std::size_t>(r)]) continue;
    for (Index c = 0; c < tokens.cols(); ++c) tokens.at(r, c) = std::clamp(predictions.at(r, c), 0.0f, 1.0f);
  }
  return unpatchify(tokens, target.resolution, t);
}

}  // namespace mimlab
