#include "mimlab/augment.hpp"

#include <algorithm>
#include <cmath>

namespace mimlab {

CropBox sample_crop(Index height, Index width, Rng& rng, const AugmentOptions& opts) {
  const double h = static_cast<double>(height), w = static_cast<double>(width);
  const double area = rng.uniform(opts.min_area, opts.max_area) * h * w;

  // Aspect r = crop_w / crop_h must satisfy sqrt(area * r) <= w and
  // sqrt(area / r) <= h.
  double lo = std::log(opts.min_aspect), hi = std::log(opts.max_aspect);
  const double fit_lo = std::log(area / (h * h)), fit_hi = std::log(w * w / area);
  lo = std::max(lo, fit_lo);
  hi = std::min(hi, fit_hi);
  if (lo > hi) lo = hi = std::clamp(0.0, fit_lo, fit_hi);
  const double aspect = std::exp(rng.uniform(lo, hi));

  CropBox box;
  box.width = std::clamp<Index>(std::lround(std::sqrt(area * aspect)), 1, width);
  box.height = std::clamp<Index>(std::lround(std::sqrt(area / aspect)), 1, height);
  box.top = rng.between(0, height - box.height);
  box.left = rng.between(0, width - box.width);
  return box;
}

Image resize_bilinear(const Image& img, const CropBox& box, Index out_h, Index out_w) {
  Image out(out_h, out_w);
  const double sy = static_cast<double>(box.height) / static_cast<double>(out_h);
  const double sx = static_cast<double>(box.width) / static_cast<double>(out_w);
  for (Index oy = 0; oy < out_h; ++oy) {
    const double fy_src = std::clamp((static_cast<double>(oy) + 0.5) * sy - 0.5, 0.0, static_cast<double>(box.height - 1));
    const Index y0 = static_cast<Index>(std::floor(fy_src));
    const Index y1 = std::min(y0 + 1, box.height - 1);
    const float fy = static_cast<float>(fy_src - static_cast<double>(y0));
    for (Index ox = 0; ox < out_w; ++ox) {
      const double fx_src = std::clamp((static_cast<double>(ox) + 0.5) * sx - 0.5, 0.0, static_cast<double>(box.width - 1));
      const Index x0 = static_cast<Index>(std::floor(fx_src));
      const Index x1 = std::min(x0 + 1, box.width - 1);
      const float fx = static_cast<float>(fx_src - static_cast<double>(x0));
      for (Index c = 0; c < 3; ++c) {
        const float a = img.at(c, box.top + y0, box.left + x0);
        const float b = img.at(c, box.top + y0, box.left + x1);
        const float d = img.at(c, box.top + y1, box.left + x0);
        const float e = img.at(c, box.top + y1, box.left + x1);
        // lerp in the a + t (b - a) form stays exact on constant regions.
        const float top = a + fx * (b - a);
        const float bottom = d + fx * (e - d);
        out.at(c, oy, ox) = std::clamp(top + fy * (bottom - top), 0.0f, 1.0f);
      }
    }
  }
  return out;
}

Image flip_horizontal(const Image& img) {
  Image out(img.height(), img.width());
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < img.height(); ++y)
      for (Index x = 0; x < img.width(); ++x) out.at(c, y, x) = img.at(c, y, img.width() - 1 - x);
  return out;
}

Image normalize(const Image& img, const ChannelStats& mean, const ChannelStats& stddev) {
  Image out = img;
  const Index plane = img.height() * img.width();
  for (Index c = 0; c < 3; ++c) {
    const float m = mean[static_cast<std::size_t>(c)], s = stddev[static_cast<std::size_t>(c)];
    float* p = out.rgb().data().data() + c * plane;
    for (Index i = 0; i < plane; ++i) p[i] = (p[i] - m) / s;
  }
  return out;
}

AugmentedView augment(const Image& img, Rng& rng, Index out_size, const ChannelStats& mean, const ChannelStats& stddev,
                      const AugmentOptions& opts) {
  if (out_size <= 0) throw ConfigError("augment: out_size must be positive");
  AugmentedView view;
  view.crop = sample_crop(img.height(), img.width(), rng, opts);
  view.raw = resize_bilinear(img, view.crop, out_size, out_size);
  view.flipped = rng.bernoulli(opts.flip_probability);
  if (view.flipped) view.raw = flip_horizontal(view.raw);
  view.input = normalize(view.raw, mean, stddev);
  return view;
}

AugmentedView plain_view(const Image& img, Index out_size, const ChannelStats& mean, const ChannelStats& stddev) {
  AugmentedView view;
  view.crop = CropBox{0, 0, img.height(), img.width()};
  view.raw = (img.height() == out_size && img.width() == out_size) ? img
                                                                   : resize_bilinear(img, view.crop, out_size, out_size);
  view.input = normalize(view.raw, mean, stddev);
  return view;
}

}  // namespace mimlab
