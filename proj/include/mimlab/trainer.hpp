#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mimlab/checkpoint.hpp"
#include "mimlab/config.hpp"
#include "mimlab/image.hpp"

namespace mimlab {

/// Rng stream identifiers mixed into the experiment seed.
namespace stream {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t shuffle = 2;
inline constexpr std::uint64_t step = 3;
inline constexpr std::uint64_t palette = 4;
inline constexpr std::uint64_t eval_masks = 5;
inline constexpr std::uint64_t droppath = 6;
inline constexpr std::uint64_t probe = 7;
inline constexpr std::uint64_t finetune = 8;
}  // namespace stream

/// Synthetic corpus or manifest-backed dataset, at the configured size.
Dataset load_source(const DataSource& source, Index image_size, int num_classes);

/// Fresh model, optimizer moments and shuffle stream; fits the color
/// palette for cluster targets.
TrainState init_training(const TrainConfig& config, const Dataset& data);

/// Augmented (or plain) views plus freshly drawn masks for one step.
struct StepBatch {
  std::vector<Image> raw;
  std::vector<Image> input;
  std::vector<MaskGrid> masks;
};

/// Views and masks come from the stream (seed, step, step index), so a
/// step is reproducible in isolation.
StepBatch make_batch(const TrainConfig& config, const Dataset& data, std::span<const std::uint32_t> indices,
                     std::int64_t step);

/// Loss of a batch under the configured objective, as a tape scalar.
template <typename S>
Var<S> batch_loss(const ModelParams<Var<S>>& params, const TrainConfig& config, const StepBatch& batch);

/// Decoupled weight decay applies to weight matrices only.
bool decays(const std::string& name, const Tensor<float>& value);

/// One AdamW update at learning rate `lr`; returns the loss before the
/// update. Throws NumericalError with the config dump on a non-finite loss.
double pretrain_step(TrainState& state, const StepBatch& batch, double lr);

/// Dataset indices of the batch for the current step; reshuffles from
/// state.rng at every epoch start.
std::vector<std::uint32_t> next_indices(TrainState& state, std::size_t n);

struct MetricRow {
  std::int64_t step;
  double lr;
  double loss;
};

std::string metrics_header();
std::string metrics_line(const MetricRow& row);

struct RunOptions {
  std::optional<std::filesystem::path> out_dir;  // metrics.csv, checkpoints
  std::optional<std::int64_t> stop_after;        // halt once state.step reaches this
  std::function<void(const MetricRow&)> on_step;
};

/// Trains from state.step to the configured step count. With an output
/// directory, appends to metrics.csv (created with a header at step 0),
/// writes step-<n>.ckpt every checkpoint_every steps and final.ckpt.
std::vector<MetricRow> pretrain_run(TrainState& state, const Dataset& data, const RunOptions& options = {});

/// Fixed masks for evaluation: image i uses stream (seed, eval, i).
std::vector<MaskGrid> eval_masks(const TrainConfig& config, std::size_t n, std::uint64_t seed);

/// Objective over all masked elements of `images` (plain views, fixed
/// masks), averaged per element.
double evaluate_masked_loss(const Model& model, const TrainConfig& config, std::span<const Image> images,
                            std::span<const MaskGrid> masks, const ChannelStats& mean, const ChannelStats& stddev,
                            const std::optional<Palette>& palette = {});

// ---------------------------------------------------------------------------

template <typename S>
Var<S> batch_loss(const ModelParams<Var<S>>& params, const TrainConfig& config, const StepBatch& batch) {
  const auto tokens = patchify_batch(batch.input, config.encoder.patch_size).template cast<S>();
  const auto mask = token_mask(batch.masks, config.encoder);
  const auto targets = build_targets(config.target, batch.raw, config.encoder.patch_size);
  const auto pred = model_forward(params, tokens, mask, config.encoder);
  if (config.loss_scope == LossScope::full_image) {
    const std::vector<std::uint8_t> all(mask.size(), 1);
    return masked_loss(pred, targets, all);
  }
  return masked_loss(pred, targets, mask);
}

}  // namespace mimlab
