#include "mimlab/mask.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

namespace mimlab {

std::string to_string(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::random: return "random";
    case MaskStrategy::square: return "square";
    case MaskStrategy::blockwise: return "blockwise";
  }
  return "?";
}

MaskStrategy parse_mask_strategy(const std::string& name) {
  if (name == "random") return MaskStrategy::random;
  if (name == "square") return MaskStrategy::square;
  if (name == "blockwise") return MaskStrategy::blockwise;
  throw ConfigError("unknown mask strategy '" + name + "'");
}

void MaskConfig::validate(Index image_size) const {
  if (patch_size <= 0 || image_size % patch_size != 0)
    throw ConfigError("mask: patch size " + std::to_string(patch_size) + " does not divide image size " +
                      std::to_string(image_size));
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("mask: ratio must lie in [0, 1]");
}

Index MaskGrid::popcount() const {
  return static_cast<Index>(std::count_if(cells_.begin(), cells_.end(), [](std::uint8_t v) { return v != 0; }));
}

std::vector<std::uint8_t> MaskGrid::pixel_mask() const {
  const Index h = rows_ * patch_, w = cols_ * patch_;
  std::vector<std::uint8_t> px(static_cast<std::size_t>(h * w));
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) px[static_cast<std::size_t>(y * w + x)] = masked(y / patch_, x / patch_) ? 1 : 0;
  return px;
}

MaskGrid MaskGrid::upsampled(Index factor) const {
  if (factor <= 0 || patch_ % factor != 0)
    throw ConfigError("mask upsample: factor " + std::to_string(factor) + " does not divide patch size " +
                      std::to_string(patch_));
  MaskGrid out(rows_ * factor, cols_ * factor, patch_ / factor);
  for (Index r = 0; r < out.rows(); ++r)
    for (Index c = 0; c < out.cols(); ++c) out.set(r, c, masked(r / factor, c / factor));
  return out;
}

Index round_half_away(double x) { return static_cast<Index>(std::round(x)); }

MaskGrid gen_random_mask(Index rows, Index cols, Index patch_size, double ratio, Rng& rng) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("random mask: ratio must lie in [0, 1]");
  const Index n = rows * cols;
  const Index k = round_half_away(ratio * static_cast<double>(n));
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  // Partial Fisher-Yates: the first k picks are a prefix of the picks for
  // any larger k drawn from the same stream.
  MaskGrid grid(rows, cols, patch_size);
  for (Index i = 0; i < k; ++i) {
    const Index j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n - i)));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    grid.set(order[static_cast<std::size_t>(i)] / cols, order[static_cast<std::size_t>(i)] % cols);
  }
  return grid;
}

Index square_side(Index rows, Index cols, double ratio) {
  return round_half_away(std::sqrt(ratio * static_cast<double>(rows * cols)));
}

MaskGrid gen_square_mask(Index rows, Index cols, Index patch_size, double ratio, Rng& rng) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("square mask: ratio must lie in [0, 1]");
  const Index s = square_side(rows, cols, ratio);
  if (s == 0) throw ConfigError("square mask: ratio " + std::to_string(ratio) + " too small for any square");
  if (s > std::min(rows, cols))
    throw ConfigError("square mask: side " + std::to_string(s) + " does not fit the " + std::to_string(rows) + "x" +
                      std::to_string(cols) + " grid");
  const Index top = rng.between(0, rows - s);
  const Index left = rng.between(0, cols - s);
  MaskGrid grid(rows, cols, patch_size);
  for (Index r = top; r < top + s; ++r)
    for (Index c = left; c < left + s; ++c) grid.set(r, c);
  return grid;
}

MaskGrid gen_blockwise_mask(Index rows, Index cols, Index patch_size, double ratio, Rng& rng,
                            const BlockwiseOptions& opts) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("blockwise mask: ratio must lie in (0, 1)");
  if (rows * cols < opts.min_block)
    throw ConfigError("blockwise mask: grid " + std::to_string(rows) + "x" + std::to_string(cols) +
                      " smaller than the minimum block of " + std::to_string(opts.min_block) + " patches");
  const Index target = round_half_away(ratio * static_cast<double>(rows * cols));
  const double log_aspect = std::log(opts.min_aspect);

  MaskGrid grid(rows, cols, patch_size);
  Index count = 0;
  while (count < target) {
    const Index remaining = target - count;
    const Index budget = std::max(remaining, opts.min_block);
    bool placed = false;
    for (int attempt = 0; attempt < opts.max_attempts && !placed; ++attempt) {
      const double area = rng.uniform(static_cast<double>(opts.min_block), static_cast<double>(budget));
      const double aspect = std::exp(rng.uniform(log_aspect, -log_aspect));
      const Index h = round_half_away(std::sqrt(area * aspect));
      const Index w = round_half_away(std::sqrt(area / aspect));
      if (h < 1 || w < 1 || h > rows || w > cols || h * w < opts.min_block) continue;
      const Index top = rng.between(0, rows - h);
      const Index left = rng.between(0, cols - w);
      Index fresh = 0;
      for (Index r = top; r < top + h; ++r)
        for (Index c = left; c < left + w; ++c) fresh += grid.masked(r, c) ? 0 : 1;
      if (fresh == 0 || fresh > budget) continue;
      for (Index r = top; r < top + h; ++r)
        for (Index c = left; c < left + w; ++c) grid.set(r, c);
      count += fresh;
      placed = true;
    }
    if (!placed)
      throw ConfigError("blockwise mask: no admissible block after " + std::to_string(opts.max_attempts) +
                        " attempts (" + std::to_string(count) + "/" + std::to_string(target) + " masked)");
  }
  return grid;
}

MaskGrid generate_mask(const MaskConfig& config, Index image_size, Rng& rng) {
  config.validate(image_size);
  const Index g = image_size / config.patch_size;
  switch (config.strategy) {
    case MaskStrategy::random: return gen_random_mask(g, g, config.patch_size, config.ratio, rng);
    case MaskStrategy::square: return gen_square_mask(g, g, config.patch_size, config.ratio, rng);
    case MaskStrategy::blockwise: return gen_blockwise_mask(g, g, config.patch_size, config.ratio, rng);
  }
  throw ConfigError("unknown mask strategy");
}

namespace {

// 1-D lower envelope of parabolas (Felzenszwalb & Huttenlocher), in place
// over a strided line.
void edt_1d(double* f, Index n, Index stride, std::vector<double>& d, std::vector<Index>& v, std::vector<double>& z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  d.resize(static_cast<std::size_t>(n));
  v.resize(static_cast<std::size_t>(n));
  z.resize(static_cast<std::size_t>(n) + 1);
  Index k = -1;
  for (Index q = 0; q < n; ++q) {
    const double fq = f[q * stride];
    if (fq == inf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    double s = 0.0;
    for (;;) {
      const Index p = v[static_cast<std::size_t>(k)];
      const double fp = f[p * stride];
      s = ((fq + static_cast<double>(q * q)) - (fp + static_cast<double>(p * p))) / (2.0 * static_cast<double>(q - p));
      // z[0] is -inf, so this stops at k = 0 at the latest.
      if (s > z[static_cast<std::size_t>(k)]) break;
      --k;
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = s;
    z[static_cast<std::size_t>(k) + 1] = inf;
  }
  if (k < 0) return;  // no finite entries on this line
  Index j = 0;
  for (Index q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(j) + 1] < static_cast<double>(q)) ++j;
    const Index p = v[static_cast<std::size_t>(j)];
    const double dq = static_cast<double>(q - p);
    d[static_cast<std::size_t>(q)] = dq * dq + f[p * stride];
  }
  for (Index q = 0; q < n; ++q) f[q * stride] = d[static_cast<std::size_t>(q)];
}

}  // namespace

std::vector<double> squared_distance_transform(std::span<const std::uint8_t> source, Index height, Index width) {
  if (static_cast<Index>(source.size()) != height * width) throw ShapeError("distance transform: size mismatch");
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> f(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) f[i] = source[i] ? 0.0 : inf;
  std::vector<double> d;
  std::vector<Index> v;
  std::vector<double> z;
  for (Index x = 0; x < width; ++x) edt_1d(f.data() + x, height, width, d, v, z);
  for (Index y = 0; y < height; ++y) edt_1d(f.data() + y * width, width, 1, d, v, z);
  return f;
}

double avg_dist(const MaskGrid& mask) {
  const Index masked = mask.popcount();
  if (masked == 0) throw ConfigError("avg_dist: no masked patch, metric undefined");
  if (masked == mask.size()) throw ConfigError("avg_dist: no visible patch, metric undefined");
  const Index h = mask.rows() * mask.patch_size(), w = mask.cols() * mask.patch_size();
  const auto px = mask.pixel_mask();
  std::vector<std::uint8_t> visible(px.size());
  for (std::size_t i = 0; i < px.size(); ++i) visible[i] = px[i] ? 0 : 1;
  const auto dist2 = squared_distance_transform(visible, h, w);
  double total = 0.0;
  Index n = 0;
  for (std::size_t i = 0; i < px.size(); ++i) {
    if (!px[i]) continue;
    total += std::sqrt(dist2[i]);
    ++n;
  }
  return total / static_cast<double>(n);
}

double avg_dist(const MaskGrid& mask, Index image_size) {
  if (mask.rows() * mask.patch_size() != image_size || mask.cols() * mask.patch_size() != image_size)
    throw ShapeError("avg_dist: mask grid does not cover a " + std::to_string(image_size) + "^2 image");
  return avg_dist(mask);
}

int worker_threads() {
  if (const char* env = std::getenv("MIMLAB_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

SweepResult mask_sweep(const SweepSpec& spec) {
  struct Cell {
    MaskStrategy strategy;
    Index patch;
    double ratio;
    bool ok = false;
    double mean = 0, stddev = 0, realized = 0;
    std::string warning{};
  };
  std::vector<Cell> cells;
  for (MaskStrategy s : spec.strategies)
    for (Index p : spec.patch_sizes)
      for (double r : spec.ratios) cells.push_back(Cell{s, p, r});

  auto run_cell = [&spec](Cell& cell) {
    try {
      MaskConfig cfg{cell.strategy, cell.patch, cell.ratio};
      std::vector<double> values;
      double realized = 0.0;
      for (int s = 0; s < spec.seeds; ++s) {
        Rng rng = derive_rng(spec.base_seed, {static_cast<std::uint64_t>(s)});
        const MaskGrid m = generate_mask(cfg, spec.image_size, rng);
        values.push_back(avg_dist(m, spec.image_size));
        realized += m.ratio();
      }
      double sum = 0.0;
      for (double v : values) sum += v;
      const double n = static_cast<double>(values.size());
      cell.mean = sum / n;
      double ss = 0.0;
      for (double v : values) ss += (v - cell.mean) * (v - cell.mean);
      cell.stddev = values.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
      cell.realized = realized / n;
      cell.ok = true;
    } catch (const Error& e) {
      std::ostringstream msg;
      msg << "skipping " << to_string(cell.strategy) << " patch " << cell.patch << " ratio " << cell.ratio << ": "
          << e.what();
      cell.warning = msg.str();
    }
  };

  if (spec.seeds < 1) throw ConfigError("mask_sweep: need at least one seed");
  const int threads = std::max(1, std::min<int>(spec.threads > 0 ? spec.threads : worker_threads(),
                                                 static_cast<int>(cells.size())));
  if (threads <= 1) {
    for (Cell& c : cells) run_cell(c);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t i = static_cast<std::size_t>(t); i < cells.size(); i += static_cast<std::size_t>(threads))
          run_cell(cells[i]);
      });
    for (auto& th : pool) th.join();
  }

  SweepResult result;
  for (const Cell& c : cells) {
    if (c.ok)
      result.rows.push_back({c.strategy, c.patch, c.ratio, c.mean, c.stddev, c.realized});
    else
      result.warnings.push_back(c.warning);
  }
  return result;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "strategy,patch,ratio,avgdist_mean,avgdist_std\n";
  char buf[128];
  for (const SweepRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%ld,%.2f,%.6f,%.6f\n", to_string(r.strategy).c_str(), static_cast<long>(r.patch_size),
                  r.ratio, r.mean, r.stddev);
    out << buf;
  }
  return out.str();
}

Image mask_to_image(const MaskGrid& mask) {
  const Index h = mask.rows() * mask.patch_size(), w = mask.cols() * mask.patch_size();
  Image img(h, w);
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x)
        img.at(c, y, x) = mask.masked(y / mask.patch_size(), x / mask.patch_size()) ? 0.0f : 1.0f;
  return img;
}

MaskGrid mask_from_image(const Image& drawing, Index patch_size) {
  if (patch_size <= 0 || drawing.height() % patch_size != 0 || drawing.width() % patch_size != 0)
    throw ConfigError("mask image: size " + std::to_string(drawing.height()) + "x" + std::to_string(drawing.width()) +
                      " not divisible by patch size " + std::to_string(patch_size));
  MaskGrid grid(drawing.height() / patch_size, drawing.width() / patch_size, patch_size);
  for (Index r = 0; r < grid.rows(); ++r)
    for (Index c = 0; c < grid.cols(); ++c) {
      Index marked = 0;
      for (Index y = r * patch_size; y < (r + 1) * patch_size; ++y)
        for (Index x = c * patch_size; x < (c + 1) * patch_size; ++x) {
          const bool black = drawing.at(0, y, x) == 0.0f && drawing.at(1, y, x) == 0.0f && drawing.at(2, y, x) == 0.0f;
          marked += black ? 1 : 0;
        }
      grid.set(r, c, 2 * marked > patch_size * patch_size);
    }
  return grid;
}

}  // namespace mimlab
