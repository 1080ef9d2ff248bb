#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mimlab/image.hpp"
#include "mimlab/rng.hpp"

namespace mimlab {

enum class MaskStrategy { random, square, blockwise };

std::string to_string(MaskStrategy s);
MaskStrategy parse_mask_strategy(const std::string& name);

struct MaskConfig {
  MaskStrategy strategy = MaskStrategy::random;
  Index patch_size = 32;
  double ratio = 0.6;

  void validate(Index image_size) const;
};

/// Binary mask over the patch grid; 1 = masked.
class MaskGrid {
 public:
  MaskGrid() = default;
  MaskGrid(Index rows, Index cols, Index patch_size)
      : rows_(rows), cols_(cols), patch_(patch_size), cells_(static_cast<std::size_t>(rows * cols), 0) {}

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  Index patch_size() const { return patch_; }
  Index size() const { return rows_ * cols_; }

  bool masked(Index r, Index c) const { return cells_[static_cast<std::size_t>(r * cols_ + c)] != 0; }
  void set(Index r, Index c, bool value = true) { cells_[static_cast<std::size_t>(r * cols_ + c)] = value ? 1 : 0; }

  /// Row-major cells, one per patch (matches token order).
  std::span<const std::uint8_t> cells() const { return cells_; }

  Index popcount() const;
  double ratio() const { return size() ? static_cast<double>(popcount()) / static_cast<double>(size()) : 0.0; }

  /// Per-pixel mask of the (rows * patch) x (cols * patch) image.
  std::vector<std::uint8_t> pixel_mask() const;

  /// Same mask at a finer patch size; each cell becomes factor x factor cells.
  MaskGrid upsampled(Index factor) const;

  friend bool operator==(const MaskGrid&, const MaskGrid&) = default;

 private:
  Index rows_ = 0;
  Index cols_ = 0;
  Index patch_ = 1;
  std::vector<std::uint8_t> cells_;
};

/// Rounds half away from zero; used for all masked-patch counts.
Index round_half_away(double x);

/// Exactly round(ratio * rows * cols) patches, uniformly without replacement.
MaskGrid gen_random_mask(Index rows, Index cols, Index patch_size, double ratio, Rng& rng);

/// Side of the square for a requested ratio: round(sqrt(ratio * rows * cols)).
Index square_side(Index rows, Index cols, double ratio);

/// One s x s square at a uniformly random offset.
MaskGrid gen_square_mask(Index rows, Index cols, Index patch_size, double ratio, Rng& rng);

struct BlockwiseOptions {
  Index min_block = 4;
  int max_attempts = 1000;
  double min_aspect = 0.3;
};

/// Union of random rectangles until at least round(ratio * rows * cols)
/// patches are masked. Each accepted rectangle adds at most
/// max(remaining, min_block) new patches, so the final count is below
/// target + min_block.
MaskGrid gen_blockwise_mask(Index rows, Index cols, Index patch_size, double ratio, Rng& rng,
                            const BlockwiseOptions& opts = {});

MaskGrid generate_mask(const MaskConfig& config, Index image_size, Rng& rng);

/// Exact squared Euclidean distance from every pixel to the nearest pixel
/// with `source[i] != 0` (two-pass separable transform). Pixels with no
/// source at all get +inf.
std::vector<double> squared_distance_transform(std::span<const std::uint8_t> source, Index height, Index width);

/// Mean distance (in pixels, between pixel centers) from each masked pixel
/// to its nearest visible pixel.
double avg_dist(const MaskGrid& mask);
double avg_dist(const MaskGrid& mask, Index image_size);

struct SweepSpec {
  std::vector<MaskStrategy> strategies{MaskStrategy::random, MaskStrategy::square, MaskStrategy::blockwise};
  std::vector<Index> patch_sizes{4, 8, 16, 32, 64};
  std::vector<double> ratios{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  int seeds = 32;
  std::uint64_t base_seed = 0;
  Index image_size = 192;
  int threads = 0;  // 0 = MIMLAB_THREADS or hardware concurrency
};

struct SweepRow {
  MaskStrategy strategy;
  Index patch_size;
  double ratio;
  double mean;
  double stddev;
  double realized_ratio;  // mean popcount fraction; differs from `ratio` for square masks
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<std::string> warnings;  // cells skipped because a mask was invalid
};

/// AvgDist over seeds for every (strategy, patch, ratio) cell. Seed s uses
/// the same stream in every cell.
SweepResult mask_sweep(const SweepSpec& spec);

/// `strategy,patch,ratio,avgdist_mean,avgdist_std` CSV.
std::string sweep_csv(const std::vector<SweepRow>& rows);

/// Masked patches black, visible white.
Image mask_to_image(const MaskGrid& mask);

/// Hand-drawn mask in the export convention: black pixels are masked; a patch
/// is masked when the majority of its pixels are black.
MaskGrid mask_from_image(const Image& drawing, Index patch_size);

/// Worker count from MIMLAB_THREADS, else hardware concurrency.
int worker_threads();

}  // namespace mimlab
