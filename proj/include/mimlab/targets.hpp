#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mimlab/image.hpp"
#include "mimlab/ops.hpp"
#include "mimlab/rng.hpp"

namespace mimlab {

enum class TargetKind { l1, l2, smooth_l1, bins, clusters };

std::string to_string(TargetKind k);
TargetKind parse_target_kind(const std::string& name);
inline bool is_classification(TargetKind k) { return k == TargetKind::bins || k == TargetKind::clusters; }

using Rgb = std::array<float, 3>;

struct Palette {
  std::vector<Rgb> centers;
  std::uint64_t seed = 0;
  int iterations = 0;
  std::vector<double> inertia;  // after each assignment step

  Index size() const { return static_cast<Index>(centers.size()); }
  void validate() const;
};

struct TargetSpec {
  TargetKind kind = TargetKind::l1;
  Index resolution = 192;  // target image side in pixels
  int num_bins = 8;
  int palette_size = 64;
  std::optional<Palette> palette;  // required once clusters are built

  void validate(Index input_resolution, Index patch_size) const;
};

/// Side of one token's target patch: patch_size * target / input.
Index target_patch(const TargetSpec& spec, Index input_resolution, Index patch_size);

/// Per-token prediction width: 3 t^2 for regression, 3 t^2 * bins for bins,
/// t^2 * K for clusters.
Index head_output_dim(const TargetSpec& spec, Index input_resolution, Index patch_size);

/// Logits per image above which a memory warning is emitted.
inline constexpr Index kLogitVolumeWarning = Index{1} << 22;
std::optional<std::string> logit_volume_warning(const TargetSpec& spec, Index input_resolution, Index patch_size);

/// Exact box-filter downsample to `resolution`; identity at factor 1.
Image build_regression_target(const Image& raw, Index resolution);

/// floor(v * n), with v = 1 landing in the last bin.
int discretize_bins(double value, int num_bins);
double bin_midpoint(int bin, int num_bins);

/// Nearest center by squared distance; ties go to the lower index.
int palette_assign(const Rgb& pixel, const Palette& palette);

/// Lloyd k-means from K distinct sample pixels; empty clusters move to the
/// sample point farthest from every current center.
Palette fit_palette(std::span<const Rgb> sample, int k, Rng& rng, int iterations, std::uint64_t seed = 0);

std::string palette_csv(const Palette& palette);
Palette parse_palette_csv(const std::string& text);
void write_palette(const std::filesystem::path& path, const Palette& palette);
Palette read_palette(const std::filesystem::path& path);

/// Targets for a batch of B images, one block of rows per image.
struct TargetBatch {
  TargetKind kind = TargetKind::l1;
  Index tokens_per_image = 0;
  Index per_token = 0;           // elements (regression/bins) or pixels (clusters) per token
  Index num_classes = 0;         // bins or K; 0 for regression
  Tensor<float> values;          // regression: (B*N) x 3t^2
  std::vector<int> classes;      // classification: B*N*per_token class ids
};

TargetBatch build_targets(const TargetSpec& spec, std::span<const Image> raw, Index patch_size);

/// Regression loss averaged over the elements of masked tokens only;
/// `token_mask` has one byte per row of `pred` (1 = masked).
template <typename Scalar>
Var<Scalar> masked_regression_loss(const Var<Scalar>& pred, const Tensor<Scalar>& target,
                                   std::span<const std::uint8_t> token_mask, TargetKind kind);

/// Same as the masked loss with every token counted.
template <typename Scalar>
Var<Scalar> reconstruct_full_loss(const Var<Scalar>& pred, const Tensor<Scalar>& target, TargetKind kind);

/// Mean cross-entropy over masked (pixel, channel) groups. `logits` rows are
/// tokens with per_token * num_classes columns.
template <typename Scalar>
Var<Scalar> masked_classification_loss(const Var<Scalar>& logits, std::span<const int> classes, Index per_token,
                                       Index num_classes, std::span<const std::uint8_t> token_mask);

/// Dispatches on the batch kind.
template <typename Scalar>
Var<Scalar> masked_loss(const Var<Scalar>& pred, const TargetBatch& targets, std::span<const std::uint8_t> token_mask);

// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<Index> masked_rows(std::span<const std::uint8_t> token_mask) {
  std::vector<Index> rows;
  for (std::size_t i = 0; i < token_mask.size(); ++i)
    if (token_mask[i]) rows.push_back(static_cast<Index>(i));
  return rows;
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> masked_regression_loss(const Var<Scalar>& pred, const Tensor<Scalar>& target,
                                   std::span<const std::uint8_t> token_mask, TargetKind kind) {
  if (is_classification(kind)) throw ConfigError("regression loss: kind " + to_string(kind) + " is a classifier");
  const Tensor<Scalar>& p = pred.value();
  if (p.shape() != target.shape() || p.rank() != 2)
    throw ShapeError("masked_regression_loss: prediction " + shape_string(p.shape()) + " vs target " +
                     shape_string(target.shape()));
  if (static_cast<Index>(token_mask.size()) != p.rows())
    throw ShapeError("masked_regression_loss: mask has " + std::to_string(token_mask.size()) + " tokens, prediction " +
                     std::to_string(p.rows()));
  const auto rows = detail::masked_rows(token_mask);
  if (rows.empty()) throw ConfigError("masked_regression_loss: no masked pixels");

  const Index dim = p.cols();
  std::vector<Index> flat;
  flat.reserve(rows.size() * static_cast<std::size_t>(dim));
  for (Index r : rows)
    for (Index c = 0; c < dim; ++c) flat.push_back(r * dim + c);
  Tensor<Scalar> y({static_cast<Index>(flat.size())});
  for (std::size_t i = 0; i < flat.size(); ++i) y[static_cast<Index>(i)] = target[flat[i]];

  auto& tape = *pred.tape();
  auto diff = sub(gather(pred, std::move(flat)), tape.constant(std::move(y)));
  switch (kind) {
    case TargetKind::l1: return mean(abs(diff));
    case TargetKind::l2: return mean(mul(diff, diff));
    default: return mean(smooth_l1(diff, Scalar(1)));
  }
}

template <typename Scalar>
Var<Scalar> reconstruct_full_loss(const Var<Scalar>& pred, const Tensor<Scalar>& target, TargetKind kind) {
  const std::vector<std::uint8_t> all(static_cast<std::size_t>(pred.value().rows()), 1);
  return masked_regression_loss(pred, target, all, kind);
}

template <typename Scalar>
Var<Scalar> masked_classification_loss(const Var<Scalar>& logits, std::span<const int> classes, Index per_token,
                                       Index num_classes, std::span<const std::uint8_t> token_mask) {
  const Tensor<Scalar>& z = logits.value();
  if (z.rank() != 2 || z.cols() != per_token * num_classes)
    throw ShapeError("masked_classification_loss: logits " + shape_string(z.shape()) + " do not hold " +
                     std::to_string(per_token) + " groups of " + std::to_string(num_classes));
  if (static_cast<Index>(token_mask.size()) != z.rows() ||
      static_cast<Index>(classes.size()) != z.rows() * per_token)
    throw ShapeError("masked_classification_loss: mask/targets do not match " + std::to_string(z.rows()) + " tokens");
  const auto tokens = detail::masked_rows(token_mask);
  if (tokens.empty()) throw ConfigError("masked_classification_loss: no masked pixels");

  std::vector<Index> group_rows;
  group_rows.reserve(tokens.size() * static_cast<std::size_t>(per_token));
  for (Index t : tokens)
    for (Index j = 0; j < per_token; ++j) group_rows.push_back(t * per_token + j);

  std::vector<Index> picks(group_rows.size());
  for (std::size_t i = 0; i < group_rows.size(); ++i) {
    const int cls = classes[static_cast<std::size_t>(group_rows[i])];
    if (cls < 0 || cls >= num_classes) throw ConfigError("masked_classification_loss: class id out of range");
    picks[i] = static_cast<Index>(i) * num_classes + cls;
  }
  auto groups = reshape(logits, {z.rows() * per_token, num_classes});
  auto logp = log_softmax(gather_rows(groups, std::move(group_rows)));
  return scale(mean(gather(logp, std::move(picks))), Scalar(-1));
}

template <typename Scalar>
Var<Scalar> masked_loss(const Var<Scalar>& pred, const TargetBatch& targets, std::span<const std::uint8_t> token_mask) {
  if (is_classification(targets.kind))
    return masked_classification_loss(pred, std::span<const int>(targets.classes), targets.per_token,
                                      targets.num_classes, token_mask);
  return masked_regression_loss(pred, targets.values.template cast<Scalar>(), token_mask, targets.kind);
}

}  // namespace mimlab
