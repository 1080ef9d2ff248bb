#pragma once

#include <cstdint>

#include "mimlab/image.hpp"

namespace mimlab {

/// Procedural texture families, one per class (cycled with a frequency
/// variant when there are more than four classes).
enum class TextureFamily { stripes, checkers, blobs, gradients };

TextureFamily family_of_class(int label);

/// Deterministic labeled corpus of `n` RGB textures of side `size`.
/// Image i has label i % num_classes, so classes are balanced whenever
/// num_classes divides n. Normalization statistics are computed from the
/// generated pixels and stored in the manifest.
Dataset synth_corpus(std::uint64_t seed, std::size_t n, Index size, int num_classes);

/// Renders one texture; exposed for tests and the CLI.
Image render_texture(std::uint64_t seed, std::size_t index, Index size, int label);

}  // namespace mimlab
