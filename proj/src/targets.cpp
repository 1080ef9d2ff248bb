#include "mimlab/targets.hpp"

#include <algorithm>
#include <cmath>

#include "mimlab/patches.hpp"

namespace mimlab {

std::string to_string(TargetKind k) {
  switch (k) {
    case TargetKind::l1: return "l1";
    case TargetKind::l2: return "l2";
    case TargetKind::smooth_l1: return "smooth_l1";
    case TargetKind::bins: return "bins";
    case TargetKind::clusters: return "clusters";
  }
  return "?";
}

TargetKind parse_target_kind(const std::string& name) {
  for (auto k : {TargetKind::l1, TargetKind::l2, TargetKind::smooth_l1, TargetKind::bins, TargetKind::clusters})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown target kind '" + name + "' (expected l1, l2, smooth_l1, bins or clusters)");
}

void TargetSpec::validate(Index input_resolution, Index patch_size) const {
  if (resolution <= 0 || input_resolution % resolution != 0)
    throw ConfigError("target resolution " + std::to_string(resolution) + " does not divide input resolution " +
                      std::to_string(input_resolution));
  const Index factor = input_resolution / resolution;
  if (patch_size % factor != 0)
    throw ConfigError("target resolution " + std::to_string(resolution) + " leaves a fractional target patch for patch " +
                      std::to_string(patch_size));
  if (kind == TargetKind::bins && num_bins < 2) throw ConfigError("num_bins must be at least 2");
  if (kind == TargetKind::clusters) {
    if (palette_size < 1) throw ConfigError("palette size must be positive");
    if (palette) palette->validate();
  }
}

Index target_patch(const TargetSpec& spec, Index input_resolution, Index patch_size) {
  spec.validate(input_resolution, patch_size);
  return patch_size * spec.resolution / input_resolution;
}

Index head_output_dim(const TargetSpec& spec, Index input_resolution, Index patch_size) {
  const Index t = target_patch(spec, input_resolution, patch_size);
  switch (spec.kind) {
    case TargetKind::bins: return 3 * t * t * spec.num_bins;
    case TargetKind::clusters: return t * t * spec.palette_size;
    default: return 3 * t * t;
  }
}

std::optional<std::string> logit_volume_warning(const TargetSpec& spec, Index input_resolution, Index patch_size) {
  if (!is_classification(spec.kind)) return std::nullopt;
  const Index tokens = (input_resolution / patch_size) * (input_resolution / patch_size);
  const Index volume = tokens * head_output_dim(spec, input_resolution, patch_size);
  if (volume <= kLogitVolumeWarning) return std::nullopt;
  return "warning: " + std::to_string(volume) + " logits per image (" + to_string(spec.kind) +
         " target); expect high memory use";
}

Image build_regression_target(const Image& raw, Index resolution) {
  if (resolution <= 0 || raw.height() % resolution != 0 || raw.width() % resolution != 0 || raw.height() != raw.width())
    throw ConfigError("regression target: " + std::to_string(raw.height()) + "x" + std::to_string(raw.width()) +
                      " image is not an integer multiple of " + std::to_string(resolution));
  const Index f = raw.height() / resolution;
  if (f == 1) return raw;
  Image out(resolution, resolution);
  const double inv = 1.0 / static_cast<double>(f * f);
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < resolution; ++y)
      for (Index x = 0; x < resolution; ++x) {
        double s = 0;
        for (Index dy = 0; dy < f; ++dy)
          for (Index dx = 0; dx < f; ++dx) s += raw.at(c, y * f + dy, x * f + dx);
        out.at(c, y, x) = static_cast<float>(s * inv);
      }
  return out;
}

int discretize_bins(double value, int num_bins) {
  if (num_bins < 2) throw ConfigError("discretize_bins: need at least 2 bins");
  if (!(value >= 0.0 && value <= 1.0)) throw ConfigError("discretize_bins: value " + std::to_string(value) + " outside [0, 1]");
  return std::min(static_cast<int>(std::floor(value * num_bins)), num_bins - 1);
}

double bin_midpoint(int bin, int num_bins) { return (bin + 0.5) / num_bins; }

TargetBatch build_targets(const TargetSpec& spec, std::span<const Image> raw, Index patch_size) {
  if (raw.empty()) throw ConfigError("build_targets: empty batch");
  const Index input = raw.front().height();
  const Index t = target_patch(spec, input, patch_size);
  if (spec.kind == TargetKind::clusters && !spec.palette) throw ConfigError("cluster targets need a fitted palette");

  TargetBatch batch;
  batch.kind = spec.kind;
  batch.tokens_per_image = (input / patch_size) * (input / patch_size);
  const Index rows = batch.tokens_per_image * static_cast<Index>(raw.size());
  const Index elems = 3 * t * t;
  batch.per_token = spec.kind == TargetKind::clusters ? t * t : elems;
  if (!is_classification(spec.kind)) batch.values = Tensor<float>({rows, elems});
  else batch.classes.reserve(static_cast<std::size_t>(rows * batch.per_token));
  batch.num_classes = spec.kind == TargetKind::bins ? spec.num_bins : spec.kind == TargetKind::clusters ? spec.palette_size : 0;
  if (spec.kind == TargetKind::clusters && spec.palette->size() != spec.palette_size)
    throw ConfigError("palette has " + std::to_string(spec.palette->size()) + " centers, config expects " +
                      std::to_string(spec.palette_size));

  Index row = 0;
  for (const Image& img : raw) {
    if (img.height() != input || img.width() != input) throw ShapeError("build_targets: images differ in size");
    const Tensor<float> tokens = patchify(build_regression_target(img, spec.resolution), t);
    switch (spec.kind) {
      case TargetKind::bins:
        for (Index i = 0; i < tokens.size(); ++i)
          batch.classes.push_back(discretize_bins(std::clamp(tokens[i], 0.0f, 1.0f), spec.num_bins));
        break;
      case TargetKind::clusters:
        for (Index r = 0; r < tokens.rows(); ++r)
          for (Index j = 0; j < t * t; ++j)
            batch.classes.push_back(palette_assign(
                {tokens.at(r, j), tokens.at(r, t * t + j), tokens.at(r, 2 * t * t + j)}, *spec.palette));
        break;
      default:
        batch.values.matrix().middleRows(row, tokens.rows()) = tokens.matrix();
        break;
    }
    row += tokens.rows();
  }
  return batch;
}

}  // namespace mimlab
