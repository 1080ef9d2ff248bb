// mimlab: masked image modeling experiments from the command line.
//
//   mimlab config     --out FILE
//   mimlab corpus     --out DIR [--seed S] [--count N] [--size PX] [--classes K]
//   mimlab mask-sweep --out FILE [--strategies LIST] [--patches LIST] [--ratios LIST] [--seeds N]
//   mimlab pretrain   --config FILE --out DIR [--resume CKPT] [--force]
//   mimlab probe      --config FILE --ckpt CKPT|random-init --out FILE
//   mimlab finetune   --config FILE --ckpt CKPT|random-init --out FILE
//   mimlab visualize  --ckpt CKPT (--image PPM | --index I) --mask KIND|PPM --out PPM
//
// Exit codes: 0 success, 1 usage or configuration, 2 I/O, 3 numerical failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mimlab/augment.hpp"
#include "mimlab/checkpoint.hpp"
#include "mimlab/config.hpp"
#include "mimlab/corpus.hpp"
#include "mimlab/error.hpp"
#include "mimlab/eval.hpp"
#include "mimlab/mask.hpp"
#include "mimlab/trainer.hpp"

namespace fs = std::filesystem;
using namespace mimlab;

namespace {

enum Exit { ok = 0, usage = 1, io = 2, numerical = 3 };

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void append_results(const fs::path& path, const ResultRow& row) {
  const bool fresh = !fs::exists(path);
  std::string csv = results_csv(std::span<const ResultRow>(&row, 1));
  if (!fresh) csv.erase(0, csv.find('\n') + 1);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot write " + path.string());
  out << csv;
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool deterministic = true;
};

TrainConfig load_with_overrides(const Common& common) {
  TrainConfig config = load_config(common.config_path);
  if (common.seed) config.seed = *common.seed;
  else if (!common.deterministic) config.seed = std::random_device{}();
  config.validate();
  return config;
}

/// Checkpointed model, or a fresh initialization for "random-init".
Model load_encoder(const std::string& ckpt, const TrainConfig& config) {
  if (ckpt == "random-init") {
    Rng init = derive_rng(config.seed, {stream::init});
    return init_model(config.encoder, config.head_config(), init);
  }
  return load_checkpoint(ckpt).model;
}

int cmd_config(const std::string& out) {
  write_text(out, render_config(TrainConfig{}));
  return ok;
}

struct CorpusArgs {
  std::string out;
  std::uint64_t seed = 1;
  std::size_t count = 512;
  Index size = 64;
  int classes = 4;
};

int cmd_corpus(const CorpusArgs& a) {
  save_dataset(a.out, synth_corpus(a.seed, a.count, a.size, a.classes));
  return ok;
}

struct SweepArgs {
  std::string out;
  std::string strategies = "random,square,blockwise";
  std::string patches = "4,8,16,32,64";
  std::string ratios = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9";
  int seeds = 32;
  Index image_size = 192;
};

int cmd_mask_sweep(const SweepArgs& a, const Common& common) {
  SweepSpec spec;
  spec.strategies.clear();
  for (const auto& s : split_list(a.strategies)) spec.strategies.push_back(parse_mask_strategy(s));
  if (spec.strategies.empty()) throw ConfigError("mask-sweep: empty strategy list");
  spec.patch_sizes.clear();
  for (const auto& s : split_list(a.patches)) spec.patch_sizes.push_back(std::stoll(s));
  spec.ratios.clear();
  for (const auto& s : split_list(a.ratios)) spec.ratios.push_back(std::stod(s));
  if (spec.patch_sizes.empty() || spec.ratios.empty()) throw ConfigError("mask-sweep: empty patch or ratio list");
  spec.seeds = a.seeds;
  spec.image_size = a.image_size;
  spec.base_seed = common.seed.value_or(common.deterministic ? 0 : std::random_device{}());

  const SweepResult result = mask_sweep(spec);
  for (const auto& w : result.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  write_text(a.out, sweep_csv(result.rows));
  return ok;
}

struct PretrainArgs {
  std::string out;
  std::string resume;
  bool force = false;
};

int cmd_pretrain(const PretrainArgs& a, const Common& common) {
  const TrainConfig config = load_with_overrides(common);
  const Dataset data = load_source(config.data, config.image_size, config.num_classes);
  TrainState state;
  if (!a.resume.empty()) {
    state = load_checkpoint(a.resume, a.force ? std::nullopt : std::optional(config_hash(config)));
    state.config.checkpoint_every = config.checkpoint_every;
  } else {
    state = init_training(config, data);
  }
  RunOptions options;
  options.out_dir = fs::path(a.out);
  const auto rows = pretrain_run(state, data, options);
  if (!rows.empty())
    std::printf("pretrain: %lld steps, final loss %.6f\n", static_cast<long long>(state.step), rows.back().loss);
  return ok;
}

struct EvalArgs {
  std::string ckpt;
  std::string out;
};

int cmd_probe(const EvalArgs& a, const Common& common) {
  const TrainConfig config = load_with_overrides(common);
  const Dataset train = load_source(config.data, config.image_size, config.num_classes);
  const Dataset test = load_source(config.eval, config.image_size, config.num_classes);
  const Model model = load_encoder(a.ckpt, config);
  const ProbeResult r = linear_probe(model, train, test, config.num_classes, config.probe, config.seed);
  std::printf("probe: block %lld accuracy %.4f\n", static_cast<long long>(r.block), r.accuracy);
  for (std::size_t k = 0; k < r.per_class.size(); ++k) std::printf("  class %zu: %.4f\n", k, r.per_class[k]);
  append_results(a.out, {"probe", config.seed, r.block, r.accuracy});
  return ok;
}

int cmd_finetune(const EvalArgs& a, const Common& common) {
  const TrainConfig config = load_with_overrides(common);
  const Dataset train = load_source(config.data, config.image_size, config.num_classes);
  const Dataset test = load_source(config.eval, config.image_size, config.num_classes);
  const Model model = load_encoder(a.ckpt, config);
  const FinetuneResult r = finetune(model, train, test, config.num_classes, config.finetune, config.seed);
  std::printf("finetune: accuracy %.4f\n", r.accuracy);
  for (std::size_t k = 0; k < r.per_class.size(); ++k) std::printf("  class %zu: %.4f\n", k, r.per_class[k]);
  append_results(a.out, {"finetune", config.seed, model.encoder.depth, r.accuracy});
  return ok;
}

struct VisualizeArgs {
  std::string ckpt;
  std::string image;
  std::optional<std::size_t> index;
  std::string mask = "random";
  double ratio = 0.6;
  Index mask_patch = 0;
  std::string out;
};

Image paste_triptych(const Image& a, const Image& b, const Image& c) {
  const Index h = a.height(), w = a.width();
  Image out(h, 3 * w);
  const Image* panes[] = {&a, &b, &c};
  for (Index p = 0; p < 3; ++p)
    for (Index ch = 0; ch < 3; ++ch)
      for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) out.at(ch, y, p * w + x) = panes[p]->at(ch, y, x);
  return out;
}

int cmd_visualize(const VisualizeArgs& a, const Common& common) {
  const TrainState state = load_checkpoint(a.ckpt);
  const TrainConfig& config = state.config;
  if (is_classification(config.target.kind))
    throw ConfigError("visualize: checkpoint predicts " + to_string(config.target.kind) +
                      " classes; only regression targets can be drawn");
  const Index size = config.image_size;

  Image source;
  ChannelStats mean = {0.5f, 0.5f, 0.5f}, stddev = {0.25f, 0.25f, 0.25f};
  if (!a.image.empty()) {
    source = load_ppm(a.image);
    std::array<Image, 1> one{source};
    channel_stats(one, mean, stddev);
  }
  if (a.index || a.image.empty()) {
    const Dataset data = load_source(config.data, size, config.num_classes);
    const std::size_t i = a.index.value_or(0);
    if (i >= data.size()) throw ConfigError("visualize: --index " + std::to_string(i) + " outside the dataset");
    source = data.images[i];
    mean = data.manifest.mean;
    stddev = data.manifest.stddev;
  }
  const AugmentedView view = plain_view(source, size, mean, stddev);

  const Index patch = a.mask_patch > 0 ? a.mask_patch : config.mask.patch_size;
  MaskGrid mask;
  if (a.mask.ends_with(".ppm")) {
    const Image drawing = load_ppm(a.mask);
    if (drawing.height() != size || drawing.width() != size)
      throw ConfigError("visualize: mask drawing must be " + std::to_string(size) + "x" + std::to_string(size));
    mask = mask_from_image(drawing, patch);
  } else {
    Rng rng = derive_rng(common.seed.value_or(config.seed), {stream::eval_masks});
    mask = generate_mask(MaskConfig{parse_mask_strategy(a.mask), patch, a.ratio}, size, rng);
  }
  if (mask.patch_size() % config.encoder.patch_size != 0)
    throw ConfigError("visualize: mask patch must be a multiple of the encoder patch " +
                      std::to_string(config.encoder.patch_size));
  const MaskGrid fine = mask.upsampled(mask.patch_size() / config.encoder.patch_size);

  std::array<Image, 1> inputs{view.input};
  std::array<MaskGrid, 1> masks{fine};
  Tape<float> tape;
  const auto params = bind(tape, state.model.params, false);
  const auto pred = model_forward(params, patchify_batch(inputs, config.encoder.patch_size),
                                  token_mask(masks, config.encoder), config.encoder);
  Image recovered = reconstruct_image(pred.value(), fine, view.raw, config.target);
  if (recovered.height() != size) recovered = resize_bilinear(recovered, {0, 0, recovered.height(), recovered.width()}, size, size);

  Image masked = view.raw;
  const auto pixels = mask.pixel_mask();
  for (Index ch = 0; ch < 3; ++ch)
    for (Index p = 0; p < size * size; ++p)
      if (pixels[static_cast<std::size_t>(p)]) masked.at(ch, p / size, p % size) = 0.0f;

  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_ppm(out, paste_triptych(view.raw, masked, recovered));
  std::printf("visualize: %lld of %lld patches masked, wrote %s\n", static_cast<long long>(mask.popcount()),
              static_cast<long long>(mask.size()), a.out.c_str());
  return ok;
}

int run(int argc, char** argv) {
  CLI::App app{"Masked image modeling at desk scale"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    auto* opt = cmd->add_option("--config", common.config_path, "Experiment file (key = value lines)");
    if (needs_config) opt->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", common.seed, "Override the experiment seed");
    cmd->add_flag("--deterministic,!--no-deterministic", common.deterministic, "Fixed default seeds (default on); off draws a fresh seed unless --seed is given");
  };

  std::string config_out;
  auto* config_cmd = app.add_subcommand("config", "Write the default experiment file");
  config_cmd->add_option("--out", config_out, "Destination")->required();

  CorpusArgs corpus;
  auto* corpus_cmd = app.add_subcommand("corpus", "Export the synthetic texture corpus as PPM files");
  corpus_cmd->add_option("--out", corpus.out, "Output directory")->required();
  corpus_cmd->add_option("--seed", corpus.seed, "Corpus seed");
  corpus_cmd->add_option("--count", corpus.count, "Number of images");
  corpus_cmd->add_option("--size", corpus.size, "Image side in pixels");
  corpus_cmd->add_option("--classes", corpus.classes, "Number of texture classes");

  SweepArgs sweep;
  auto* sweep_cmd = app.add_subcommand("mask-sweep", "AvgDist over strategies, patch sizes and ratios");
  add_common(sweep_cmd, false);
  sweep_cmd->add_option("--out", sweep.out, "CSV destination")->required();
  sweep_cmd->add_option("--strategies", sweep.strategies, "Comma list of random, square, blockwise");
  sweep_cmd->add_option("--patches", sweep.patches, "Comma list of masked patch sizes");
  sweep_cmd->add_option("--ratios", sweep.ratios, "Comma list of mask ratios");
  sweep_cmd->add_option("--seeds", sweep.seeds, "Masks per cell");
  sweep_cmd->add_option("--image-size", sweep.image_size, "Image side in pixels");

  PretrainArgs pretrain;
  auto* pretrain_cmd = app.add_subcommand("pretrain", "Masked image modeling pretraining");
  add_common(pretrain_cmd, true);
  pretrain_cmd->add_option("--out", pretrain.out, "Output directory (metrics.csv, checkpoints)")->required();
  pretrain_cmd->add_option("--resume", pretrain.resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
  pretrain_cmd->add_flag("--force", pretrain.force, "Resume even if the checkpoint config differs");

  EvalArgs probe;
  auto* probe_cmd = app.add_subcommand("probe", "Linear probe of a frozen encoder");
  add_common(probe_cmd, true);
  probe_cmd->add_option("--ckpt", probe.ckpt, "Checkpoint, or random-init")->required();
  probe_cmd->add_option("--out", probe.out, "Results CSV (appended)")->required();

  EvalArgs tune;
  auto* tune_cmd = app.add_subcommand("finetune", "Fine-tune encoder and class head");
  add_common(tune_cmd, true);
  tune_cmd->add_option("--ckpt", tune.ckpt, "Checkpoint, or random-init")->required();
  tune_cmd->add_option("--out", tune.out, "Results CSV (appended)")->required();

  VisualizeArgs vis;
  auto* vis_cmd = app.add_subcommand("visualize", "Original | masked input | recovery triptych");
  add_common(vis_cmd, false);
  vis_cmd->add_option("--ckpt", vis.ckpt, "Regression-target checkpoint")->required()->check(CLI::ExistingFile);
  vis_cmd->add_option("--image", vis.image, "PPM image")->check(CLI::ExistingFile);
  vis_cmd->add_option("--index", vis.index, "Image index in the checkpoint's dataset");
  vis_cmd->add_option("--mask", vis.mask, "random, square, blockwise, or a PPM drawing (black = masked)");
  vis_cmd->add_option("--ratio", vis.ratio, "Mask ratio for generated masks");
  vis_cmd->add_option("--mask-patch", vis.mask_patch, "Masked patch size (default: the checkpoint's)");
  vis_cmd->add_option("--out", vis.out, "Triptych PPM destination")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return usage;
  }

  if (*config_cmd) return cmd_config(config_out);
  if (*corpus_cmd) return cmd_corpus(corpus);
  if (*sweep_cmd) return cmd_mask_sweep(sweep, common);
  if (*pretrain_cmd) return cmd_pretrain(pretrain, common);
  if (*probe_cmd) return cmd_probe(probe, common);
  if (*tune_cmd) return cmd_finetune(tune, common);
  return cmd_visualize(vis, common);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return io;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return numerical;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return usage;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: malformed number (%s)\n", e.what());
    return usage;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return io;
  }
}
