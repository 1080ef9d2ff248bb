#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mimlab/mask.hpp"
#include "mimlab/model.hpp"
#include "mimlab/schedule.hpp"
#include "mimlab/targets.hpp"

namespace mimlab {

enum class LossScope { masked_only, full_image };

std::string to_string(LossScope s);
LossScope parse_loss_scope(const std::string& name);

/// Where images come from: "synthetic" (procedural textures) or a manifest path.
struct DataSource {
  std::string source = "synthetic";
  std::uint64_t synthetic_seed = 1;
  std::size_t synthetic_count = 512;
};

struct ProbeConfig {
  std::int64_t steps = 5000;
  double lr = 0.05;
  double weight_decay = 1e-4;
};

struct FinetuneConfig {
  std::int64_t epochs = 10;
  std::int64_t batch_size = 32;
  double base_lr = 1e-3;
  double warmup_fraction = 0.1;
  double layer_decay = 0.9;
  double drop_path = 0.1;
  double weight_decay = 0.05;
};

/// Every knob of an experiment. Rendered to and parsed from `key = value`
/// text; every key is required and unknown keys are rejected.
struct TrainConfig {
  std::uint64_t seed = 0;
  Index image_size = 64;
  int num_classes = 4;
  DataSource data;
  DataSource eval{"synthetic", 2, 256};

  MaskConfig mask{MaskStrategy::random, 8, 0.6};
  TargetSpec target{TargetKind::l1, 64, 8, 64, std::nullopt};
  int palette_iterations = 20;
  std::size_t palette_sample = 20000;

  EncoderConfig encoder;
  HeadKind head = HeadKind::linear;

  ScheduleKind schedule = ScheduleKind::cosine;
  double base_lr = 2e-3;
  double warmup_fraction = 0.1;
  std::vector<double> step_milestones{0.9, 0.95};
  double step_factor = 0.1;

  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;

  std::int64_t batch_size = 32;
  std::int64_t epochs = 13;
  std::int64_t steps = 200;  // 0: epochs * ceil(n / batch_size)
  LossScope loss_scope = LossScope::masked_only;
  bool augment = true;
  std::int64_t checkpoint_every = 0;

  ProbeConfig probe;
  FinetuneConfig finetune;

  void validate() const;

  /// Steps for a dataset of n images.
  std::int64_t total_steps(std::size_t n) const;
  ScheduleSpec schedule_spec(std::size_t n) const;
  HeadConfig head_config() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&);
};

/// Canonical text form, one `key = value` per line in a fixed order.
std::string render_config(const TrainConfig& config);

/// Errors name the offending line or the missing key.
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);

/// FNV-1a of the canonical text.
std::uint64_t config_hash(const TrainConfig& config);

/// Keys in canonical order.
std::vector<std::string> config_keys();

}  // namespace mimlab
