#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mimlab/config.hpp"
#include "mimlab/model.hpp"
#include "mimlab/optim.hpp"
#include "mimlab/rng.hpp"

namespace mimlab {

/// Everything needed to continue pretraining bit-exactly.
struct TrainState {
  TrainConfig config;
  Model model;
  std::vector<AdamWState<float>> optim;  // parallel to model.named()
  std::int64_t step = 0;
  Rng rng;                               // shuffles the data at epoch starts
  std::vector<std::uint32_t> order;      // permutation of the current epoch
  std::optional<Palette> palette;        // cluster targets only
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout (little-endian): "SMIM", u32 version, config text, u64
/// config hash, parameter table (name, rank, dims, f32 data), buffers,
/// AdamW moments and count, step, rng state, epoch order.
std::vector<std::uint8_t> encode_checkpoint(const TrainState& state);

/// `expected_hash`, when given, must match the stored config hash.
TrainState decode_checkpoint(std::span<const std::uint8_t> bytes, std::optional<std::uint64_t> expected_hash = {});

/// Atomic write: temp file in the same directory, then rename.
void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path, std::optional<std::uint64_t> expected_hash = {});

}  // namespace mimlab
