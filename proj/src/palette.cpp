#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "mimlab/error.hpp"
#include "mimlab/targets.hpp"

namespace mimlab {

namespace {

double dist2(const Rgb& a, const std::array<double, 3>& b) {
  double s = 0;
  for (std::size_t c = 0; c < 3; ++c) s += (a[c] - b[c]) * (a[c] - b[c]);
  return s;
}

}  // namespace

void Palette::validate() const {
  if (centers.empty()) throw ConfigError("palette: no centers");
  std::set<Rgb> seen;
  for (const Rgb& c : centers) {
    for (float v : c)
      if (!(v >= 0.0f && v <= 1.0f)) throw ConfigError("palette: center outside [0, 1]^3");
    if (!seen.insert(c).second) throw ConfigError("palette: duplicate center");
  }
}

int palette_assign(const Rgb& pixel, const Palette& palette) {
  if (palette.centers.empty()) throw ConfigError("palette_assign: empty palette");
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < palette.centers.size(); ++j) {
    double d = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      const double diff = static_cast<double>(pixel[c]) - palette.centers[j][c];
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(j);
    }
  }
  return best;
}

Palette fit_palette(std::span<const Rgb> sample, int k, Rng& rng, int iterations, std::uint64_t seed) {
  if (k < 1) throw ConfigError("fit_palette: K must be positive");
  if (static_cast<std::size_t>(k) > sample.size()) throw ConfigError("fit_palette: sample smaller than K");
  std::vector<Rgb> distinct(sample.begin(), sample.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (static_cast<std::size_t>(k) > distinct.size())
    throw ConfigError("fit_palette: K=" + std::to_string(k) + " exceeds " + std::to_string(distinct.size()) +
                      " distinct pixels");

  // Initial centers: K distinct colors chosen uniformly.
  std::vector<std::array<double, 3>> centers;
  for (std::size_t i = 0; i < static_cast<std::size_t>(k); ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(distinct.size() - i));
    std::swap(distinct[i], distinct[j]);
    centers.push_back({distinct[i][0], distinct[i][1], distinct[i][2]});
  }

  Palette palette;
  palette.seed = seed;
  std::vector<int> assign(sample.size(), 0);
  auto nearest = [&](const Rgb& p) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < centers.size(); ++j) {
      const double d = dist2(p, centers[j]);
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(j);
      }
    }
    return std::pair{best, best_d};
  };

  for (int it = 0; it < iterations; ++it) {
    double inertia = 0;
    for (std::size_t i = 0; i < sample.size(); ++i) {
      const auto [j, d] = nearest(sample[i]);
      assign[i] = j;
      inertia += d;
    }
    palette.inertia.push_back(inertia);
    palette.iterations = it + 1;

    std::vector<std::array<double, 3>> sums(centers.size(), {0, 0, 0});
    std::vector<std::size_t> counts(centers.size(), 0);
    for (std::size_t i = 0; i < sample.size(); ++i) {
      const auto j = static_cast<std::size_t>(assign[i]);
      for (std::size_t c = 0; c < 3; ++c) sums[j][c] += sample[i][c];
      ++counts[j];
    }
    std::vector<std::array<double, 3>> next = centers;
    for (std::size_t j = 0; j < centers.size(); ++j)
      if (counts[j])
        for (std::size_t c = 0; c < 3; ++c) next[j][c] = sums[j][c] / static_cast<double>(counts[j]);
    for (std::size_t j = 0; j < centers.size(); ++j) {
      if (counts[j]) continue;
      std::size_t far = 0;
      double far_d = -1;
      for (std::size_t i = 0; i < sample.size(); ++i) {
        double d = std::numeric_limits<double>::infinity();
        for (const auto& c : next) d = std::min(d, dist2(sample[i], c));
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      next[j] = {sample[far][0], sample[far][1], sample[far][2]};
      assign[far] = static_cast<int>(j);
    }
    const bool converged = next == centers;
    centers = std::move(next);
    if (converged) break;
  }

  for (const auto& c : centers)
    palette.centers.push_back({static_cast<float>(c[0]), static_cast<float>(c[1]), static_cast<float>(c[2])});
  return palette;
}

std::string palette_csv(const Palette& palette) {
  std::ostringstream out;
  out << "# k=" << palette.size() << " seed=" << palette.seed << " iterations=" << palette.iterations << "\n";
  out << "r,g,b\n";
  char buf[96];
  for (const Rgb& c : palette.centers) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g\n", c[0], c[1], c[2]);
    out << buf;
  }
  return out.str();
}

Palette parse_palette_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  Palette palette;
  long long k = -1;
  unsigned long long seed = 0;
  std::size_t offset = 0;
  auto fail = [&](const std::string& what) -> ParseError { return ParseError("palette csv: " + what, offset); };
  if (!std::getline(in, line) ||
      std::sscanf(line.c_str(), "# k=%lld seed=%llu iterations=%d", &k, &seed, &palette.iterations) != 3)
    throw fail("expected '# k=<K> seed=<S> iterations=<N>' header");
  palette.seed = seed;
  offset += line.size() + 1;
  if (!std::getline(in, line) || line != "r,g,b") throw fail("expected 'r,g,b' column header");
  offset += line.size() + 1;
  while (std::getline(in, line)) {
    if (line.empty()) {
      offset += 1;
      continue;
    }
    Rgb c{};
    char tail = 0;
    if (std::sscanf(line.c_str(), "%f,%f,%f%c", &c[0], &c[1], &c[2], &tail) != 3) throw fail("bad row '" + line + "'");
    palette.centers.push_back(c);
    offset += line.size() + 1;
  }
  if (static_cast<long long>(palette.centers.size()) != k)
    throw fail("header says k=" + std::to_string(k) + " but found " + std::to_string(palette.centers.size()) + " rows");
  palette.validate();
  return palette;
}

void write_palette(const std::filesystem::path& path, const Palette& palette) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write palette " + path.string());
  out << palette_csv(palette);
  if (!out) throw IoError("failed writing palette " + path.string());
}

Palette read_palette(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read palette " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_palette_csv(ss.str());
}

}  // namespace mimlab
