#include "mimlab/patches.hpp"

#include <string>

#include "mimlab/error.hpp"

namespace mimlab {

Tensor<float> patchify(const Image& img, Index patch_size) {
  if (patch_size <= 0 || img.height() % patch_size != 0 || img.width() % patch_size != 0)
    throw ShapeError("patchify: image " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                     " not divisible by patch " + std::to_string(patch_size));
  const Index gh = img.height() / patch_size, gw = img.width() / patch_size;
  const Index dim = 3 * patch_size * patch_size;
  Tensor<float> tokens({gh * gw, dim});
  for (Index r = 0; r < gh; ++r)
    for (Index c = 0; c < gw; ++c) {
      float* out = tokens.data().data() + (r * gw + c) * dim;
      for (Index ch = 0; ch < 3; ++ch)
        for (Index y = 0; y < patch_size; ++y)
          for (Index x = 0; x < patch_size; ++x) *out++ = img.at(ch, r * patch_size + y, c * patch_size + x);
    }
  return tokens;
}

Image unpatchify(const Tensor<float>& tokens, Index resolution, Index patch_size) {
  if (patch_size <= 0 || resolution % patch_size != 0) throw ShapeError("unpatchify: resolution not divisible by patch");
  const Index g = resolution / patch_size;
  const Index dim = 3 * patch_size * patch_size;
  if (tokens.rank() != 2 || tokens.rows() != g * g || tokens.cols() != dim)
    throw ShapeError("unpatchify: expected [" + std::to_string(g * g) + "x" + std::to_string(dim) + "] tokens, got " +
                     shape_string(tokens.shape()));
  Image img(resolution, resolution);
  for (Index r = 0; r < g; ++r)
    for (Index c = 0; c < g; ++c) {
      const float* in = tokens.data().data() + (r * g + c) * dim;
      for (Index ch = 0; ch < 3; ++ch)
        for (Index y = 0; y < patch_size; ++y)
          for (Index x = 0; x < patch_size; ++x) img.at(ch, r * patch_size + y, c * patch_size + x) = *in++;
    }
  return img;
}

}  // namespace mimlab
