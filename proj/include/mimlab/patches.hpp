#pragma once

#include "mimlab/image.hpp"

namespace mimlab {

/// N x (3 * patch^2) tokens: patches in row-major order, each flattened
/// channel-major then row-major within the patch.
Tensor<float> patchify(const Image& img, Index patch_size);

/// Exact inverse of patchify for a square image of side `resolution`.
Image unpatchify(const Tensor<float>& tokens, Index resolution, Index patch_size);

}  // namespace mimlab
