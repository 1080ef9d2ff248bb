#include "mimlab/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "mimlab/rng.hpp"

namespace mimlab {

namespace {

using Color = std::array<float, 3>;

Color random_color(Rng& rng) {
  return {static_cast<float>(rng.uniform(0.05, 0.95)), static_cast<float>(rng.uniform(0.05, 0.95)),
          static_cast<float>(rng.uniform(0.05, 0.95))};
}

void put(Image& img, Index y, Index x, const Color& a, const Color& b, double t, double noise) {
  for (int c = 0; c < 3; ++c) {
    const double v = a[static_cast<std::size_t>(c)] + t * (b[static_cast<std::size_t>(c)] - a[static_cast<std::size_t>(c)]);
    img.at(c, y, x) = static_cast<float>(std::clamp(v + noise, 0.0, 1.0));
  }
}

}  // namespace

TextureFamily family_of_class(int label) { return static_cast<TextureFamily>(label % 4); }

Image render_texture(std::uint64_t seed, std::size_t index, Index size, int label) {
  Rng rng = derive_rng(seed, {0x636f7270ULL, index});
  Image img(size, size);
  const Color c1 = random_color(rng);
  Color c2 = random_color(rng);
  // Keep the two colors apart so the pattern is visible.
  double dist = 0;
  for (std::size_t c = 0; c < 3; ++c) dist += std::abs(c1[c] - c2[c]);
  if (dist < 0.6)
    for (std::size_t c = 0; c < 3; ++c) c2[c] = 1.0f - c1[c];

  // Spatial frequency grows with the variant index for labels >= 4.
  const double scale = static_cast<double>(size) / 64.0 / (1.0 + 0.5 * static_cast<double>(label / 4));
  const double noise_sigma = 0.03;
  const double s = static_cast<double>(size);

  switch (family_of_class(label)) {
    case TextureFamily::stripes: {
      const double theta = rng.uniform(0.0, std::numbers::pi);
      const double period = rng.uniform(8.0, 16.0) * scale;
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double cx = std::cos(theta), sy = std::sin(theta);
      for (Index y = 0; y < size; ++y)
        for (Index x = 0; x < size; ++x) {
          const double u = (static_cast<double>(x) * cx + static_cast<double>(y) * sy) / period;
          put(img, y, x, c1, c2, 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * u + phase), rng.normal(0.0, noise_sigma));
        }
      break;
    }
    case TextureFamily::checkers: {
      const double theta = rng.uniform(0.0, 0.5 * std::numbers::pi);
      const double cell = rng.uniform(6.0, 12.0) * scale;
      const double ox = rng.uniform(0.0, cell), oy = rng.uniform(0.0, cell);
      const double ct = std::cos(theta), st = std::sin(theta);
      for (Index y = 0; y < size; ++y)
        for (Index x = 0; x < size; ++x) {
          const double u = (static_cast<double>(x) * ct - static_cast<double>(y) * st + ox) / cell;
          const double v = (static_cast<double>(x) * st + static_cast<double>(y) * ct + oy) / cell;
          const auto parity = (static_cast<long>(std::floor(u)) + static_cast<long>(std::floor(v))) & 1L;
          put(img, y, x, c1, c2, static_cast<double>(parity), rng.normal(0.0, noise_sigma));
        }
      break;
    }
    case TextureFamily::blobs: {
      const auto count = static_cast<int>(rng.between(4, 7));
      std::vector<std::array<double, 3>> blobs;
      for (int i = 0; i < count; ++i)
        blobs.push_back({rng.uniform(0.0, s), rng.uniform(0.0, s), rng.uniform(0.06, 0.16) * 64.0 * scale});
      for (Index y = 0; y < size; ++y)
        for (Index x = 0; x < size; ++x) {
          double t = 0.0;
          for (const auto& b : blobs) {
            const double dx = static_cast<double>(x) - b[0], dy = static_cast<double>(y) - b[1];
            t = std::max(t, std::exp(-(dx * dx + dy * dy) / (2.0 * b[2] * b[2])));
          }
          put(img, y, x, c1, c2, t, rng.normal(0.0, noise_sigma));
        }
      break;
    }
    case TextureFamily::gradients: {
      const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double ct = std::cos(theta), st = std::sin(theta);
      const double bend = rng.uniform(-0.5, 0.5);
      for (Index y = 0; y < size; ++y)
        for (Index x = 0; x < size; ++x) {
          const double u = ((static_cast<double>(x) - s / 2) * ct + (static_cast<double>(y) - s / 2) * st) / s;
          const double t = std::clamp(0.5 + u + bend * u * u, 0.0, 1.0);
          put(img, y, x, c1, c2, t, rng.normal(0.0, noise_sigma));
        }
      break;
    }
  }
  return img;
}

Dataset synth_corpus(std::uint64_t seed, std::size_t n, Index size, int num_classes) {
  if (num_classes < 1) throw ConfigError("synth_corpus: num_classes must be >= 1");
  if (n < static_cast<std::size_t>(num_classes)) throw ConfigError("synth_corpus: n must be >= num_classes");
  if (size <= 0 || size % 8 != 0) throw ConfigError("synth_corpus: size must be a positive multiple of 8");

  Dataset ds;
  ds.images.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % static_cast<std::size_t>(num_classes));
    ds.images.push_back(render_texture(seed, i, size, label));
    ds.labels.push_back(label);
    ds.manifest.entries.push_back({"synthetic:" + std::to_string(seed) + ":" + std::to_string(i), label});
  }
  channel_stats(ds.images, ds.manifest.mean, ds.manifest.stddev);
  return ds;
}

}  // namespace mimlab
