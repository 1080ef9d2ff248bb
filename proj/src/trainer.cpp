#include "mimlab/trainer.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "mimlab/augment.hpp"
#include "mimlab/corpus.hpp"
#include "mimlab/error.hpp"

namespace mimlab {

Dataset load_source(const DataSource& source, Index image_size, int num_classes) {
  if (source.source == "synthetic") return synth_corpus(source.synthetic_seed, source.synthetic_count, image_size, num_classes);
  Dataset ds = load_dataset(source.source);
  for (const Image& img : ds.images)
    if (img.height() != img.width())
      throw ConfigError("dataset " + source.source + ": images must be square, got " + std::to_string(img.height()) +
                        "x" + std::to_string(img.width()));
  return ds;
}

namespace {

Palette fit_corpus_palette(const TrainConfig& config, const Dataset& data) {
  const Index side = config.target.resolution;
  std::vector<Image> low;
  low.reserve(data.size());
  for (const Image& img : data.images)
    low.push_back(build_regression_target(
        plain_view(img, config.image_size, data.manifest.mean, data.manifest.stddev).raw, side));

  Rng rng = derive_rng(config.seed, {stream::palette});
  std::vector<Rgb> sample;
  sample.reserve(config.palette_sample);
  for (std::size_t i = 0; i < config.palette_sample; ++i) {
    const Image& img = low[rng.below(low.size())];
    const auto y = static_cast<Index>(rng.below(static_cast<std::uint64_t>(side)));
    const auto x = static_cast<Index>(rng.below(static_cast<std::uint64_t>(side)));
    sample.push_back({img.at(0, y, x), img.at(1, y, x), img.at(2, y, x)});
  }
  return fit_palette(sample, config.target.palette_size, rng, config.palette_iterations, config.seed);
}

}  // namespace

TrainState init_training(const TrainConfig& config, const Dataset& data) {
  config.validate();
  if (data.size() == 0) throw ConfigError("pretraining needs a non-empty dataset");
  TrainState state;
  state.config = config;
  if (config.target.kind == TargetKind::clusters && !config.target.palette) {
    state.palette = fit_corpus_palette(config, data);
    state.config.target.palette = state.palette;
  } else if (config.target.palette) {
    state.palette = config.target.palette;
  }
  if (auto warning = logit_volume_warning(state.config.target, config.image_size, config.encoder.patch_size))
    std::fprintf(stderr, "warning: %s\n", warning->c_str());

  Rng init = derive_rng(config.seed, {stream::init});
  state.model = init_model(config.encoder, config.head_config(), init);
  for (const auto& [name, t] : state.model.named()) state.optim.push_back(AdamWState<float>::like(*t));
  state.rng = derive_rng(config.seed, {stream::shuffle});
  return state;
}

StepBatch make_batch(const TrainConfig& config, const Dataset& data, std::span<const std::uint32_t> indices,
                     std::int64_t step) {
  Rng rng = derive_rng(config.seed, {stream::step, static_cast<std::uint64_t>(step)});
  StepBatch batch;
  for (auto i : indices) {
    const Image& img = data.images.at(i);
    AugmentedView view = config.augment
                             ? augment(img, rng, config.image_size, data.manifest.mean, data.manifest.stddev)
                             : plain_view(img, config.image_size, data.manifest.mean, data.manifest.stddev);
    batch.raw.push_back(std::move(view.raw));
    batch.input.push_back(std::move(view.input));
    batch.masks.push_back(generate_mask(config.mask, config.image_size, rng));
  }
  return batch;
}

bool decays(const std::string& name, const Tensor<float>& value) {
  return value.rank() == 2 && name.size() > 7 && name.compare(name.size() - 7, 7, ".weight") == 0;
}

double pretrain_step(TrainState& state, const StepBatch& batch, double lr) {
  const TrainConfig& config = state.config;
  Tape<float> tape;
  const auto params = bind(tape, state.model.params);
  const auto abort = [&](const std::string& why) {
    return NumericalError(why + " at step " + std::to_string(state.step) + "; config:\n" + render_config(config));
  };
  Var<float> loss;
  try {
    loss = batch_loss(params, config, batch);
  } catch (const NumericalError& e) {
    throw abort(e.what());
  }
  const double value = loss.value().item();
  if (!std::isfinite(value)) throw abort("non-finite loss");
  const auto grads = tape.backward(loss);

  std::vector<const Var<float>*> vars;
  params.visit([&](const std::string&, const Var<float>& v) { vars.push_back(&v); });
  auto named = state.model.named();
  for (std::size_t i = 0; i < named.size(); ++i) {
    auto& [name, t] = named[i];
    const AdamWHyper hp{lr, config.beta1, config.beta2, config.eps, decays(name, *t) ? config.weight_decay : 0.0};
    adamw_step(*t, grads[*vars[i]], state.optim[i], hp, name);
  }
  state.step += 1;
  return value;
}

std::vector<std::uint32_t> next_indices(TrainState& state, std::size_t n) {
  const auto b = static_cast<std::size_t>(state.config.batch_size);
  const std::size_t per_epoch = (n + b - 1) / b;
  const std::size_t k = static_cast<std::size_t>(state.step) % per_epoch;
  if (k == 0 || state.order.size() != n) {
    state.order.resize(n);
    for (std::size_t i = 0; i < n; ++i) state.order[i] = static_cast<std::uint32_t>(i);
    for (std::size_t i = n; i > 1; --i) std::swap(state.order[i - 1], state.order[state.rng.below(i)]);
  }
  const std::size_t begin = k * b;
  const std::size_t end = std::min(n, begin + b);
  return {state.order.begin() + static_cast<std::ptrdiff_t>(begin), state.order.begin() + static_cast<std::ptrdiff_t>(end)};
}

std::string metrics_header() { return "step,lr,loss\n"; }

std::string metrics_line(const MetricRow& row) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%" PRId64 ",%.9g,%.9g\n", row.step, row.lr, row.loss);
  return buf;
}

std::vector<MetricRow> pretrain_run(TrainState& state, const Dataset& data, const RunOptions& options) {
  if (data.size() == 0) throw ConfigError("pretraining needs a non-empty dataset");
  const ScheduleSpec schedule = state.config.schedule_spec(data.size());
  const std::int64_t total = schedule.total_steps;
  const std::int64_t stop = std::min(total, options.stop_after.value_or(total));

  std::ofstream metrics;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    const auto path = *options.out_dir / "metrics.csv";
    metrics.open(path, state.step == 0 ? std::ios::trunc : std::ios::app);
    if (!metrics) throw IoError("cannot write " + path.string());
    if (state.step == 0) metrics << metrics_header();
  }

  std::vector<MetricRow> rows;
  while (state.step < stop) {
    const double lr = lr_at(schedule, state.step);
    const std::int64_t step = state.step;
    const auto indices = next_indices(state, data.size());
    const StepBatch batch = make_batch(state.config, data, indices, step);
    const MetricRow row{step, lr, pretrain_step(state, batch, lr)};
    rows.push_back(row);
    if (metrics.is_open()) {
      metrics << metrics_line(row);
      metrics.flush();
    }
    if (options.on_step) options.on_step(row);
    const auto every = state.config.checkpoint_every;
    if (options.out_dir && every > 0 && state.step % every == 0 && state.step < total)
      save_checkpoint(*options.out_dir / ("step-" + std::to_string(state.step) + ".ckpt"), state);
  }
  if (metrics.is_open() && !metrics) throw IoError("failed writing metrics.csv");
  if (options.out_dir && state.step == total) save_checkpoint(*options.out_dir / "final.ckpt", state);
  return rows;
}

std::vector<MaskGrid> eval_masks(const TrainConfig& config, std::size_t n, std::uint64_t seed) {
  std::vector<MaskGrid> masks;
  masks.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = derive_rng(seed, {stream::eval_masks, i});
    masks.push_back(generate_mask(config.mask, config.image_size, rng));
  }
  return masks;
}

double evaluate_masked_loss(const Model& model, const TrainConfig& config, std::span<const Image> images,
                            std::span<const MaskGrid> masks, const ChannelStats& mean, const ChannelStats& stddev,
                            const std::optional<Palette>& palette) {
  if (images.empty()) throw ConfigError("evaluate_masked_loss: no images");
  if (images.size() != masks.size()) throw ShapeError("evaluate_masked_loss: one mask per image required");
  TargetSpec spec = config.target;
  if (palette) spec.palette = palette;

  constexpr std::size_t chunk = 32;
  double weighted = 0.0, weight = 0.0;
  for (std::size_t begin = 0; begin < images.size(); begin += chunk) {
    const std::size_t end = std::min(images.size(), begin + chunk);
    StepBatch batch;
    for (std::size_t i = begin; i < end; ++i) {
      AugmentedView view = plain_view(images[i], config.image_size, mean, stddev);
      batch.raw.push_back(std::move(view.raw));
      batch.input.push_back(std::move(view.input));
      batch.masks.push_back(masks[i]);
    }
    Tape<float> tape;
    const auto params = bind(tape, model.params, false);
    const auto tokens = patchify_batch(batch.input, config.encoder.patch_size);
    const auto mask = token_mask(batch.masks, config.encoder);
    const auto targets = build_targets(spec, batch.raw, config.encoder.patch_size);
    const auto pred = model_forward(params, tokens, mask, config.encoder);
    Index masked = 0;
    for (auto m : mask) masked += m;
    weighted += static_cast<double>(masked_loss(pred, targets, mask).value().item()) * static_cast<double>(masked);
    weight += static_cast<double>(masked);
  }
  return weighted / weight;
}

}  // namespace mimlab
