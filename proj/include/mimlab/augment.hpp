#pragma once

#include "mimlab/image.hpp"
#include "mimlab/rng.hpp"

namespace mimlab {

struct CropBox {
  Index top = 0;
  Index left = 0;
  Index height = 0;
  Index width = 0;
};

struct AugmentOptions {
  double min_area = 0.67;
  double max_area = 1.0;
  double min_aspect = 3.0 / 4.0;
  double max_aspect = 4.0 / 3.0;
  double flip_probability = 0.5;
};

/// Random resized crop geometry. The area fraction is uniform in
/// [min_area, max_area]; the aspect ratio is log-uniform over the part of
/// [min_aspect, max_aspect] for which the crop fits inside the image.
CropBox sample_crop(Index height, Index width, Rng& rng, const AugmentOptions& opts = {});

/// Bilinear resample of `box` to out_h x out_w with half-pixel centers;
/// samples never leave the box.
Image resize_bilinear(const Image& img, const CropBox& box, Index out_h, Index out_w);

Image flip_horizontal(const Image& img);

/// Per-channel (x - mean) / std.
Image normalize(const Image& img, const ChannelStats& mean, const ChannelStats& stddev);

/// Encoder input and the matching un-normalized pixels (prediction targets
/// are built from `raw`).
struct AugmentedView {
  Image raw;
  Image input;
  CropBox crop;
  bool flipped = false;
};

/// Light augmentation: random resized crop, bilinear resize to out_size,
/// horizontal flip, normalization.
AugmentedView augment(const Image& img, Rng& rng, Index out_size, const ChannelStats& mean,
                      const ChannelStats& stddev, const AugmentOptions& opts = {});

/// Deterministic view without augmentation (whole image, resized only when
/// its size differs from out_size).
AugmentedView plain_view(const Image& img, Index out_size, const ChannelStats& mean, const ChannelStats& stddev);

}  // namespace mimlab
