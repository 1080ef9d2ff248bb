#include "mimlab/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "mimlab/error.hpp"

namespace mimlab {

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw ConfigError("Rng::below: empty range");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return x % n;
}

double Rng::normal() {
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::truncated_normal(double mean, double stddev) {
  for (;;) {
    const double z = normal();
    if (z >= -2.0 && z <= 2.0) return mean + stddev * z;
  }
}

std::string Rng::state() const {
  std::ostringstream out;
  out << engine_;
  return out.str();
}

void Rng::set_state(const std::string& state) {
  std::istringstream in(state);
  std::mt19937_64 engine;
  in >> engine;
  if (in.fail()) throw ParseError("invalid rng state", 0);
  engine_ = engine;
}

std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> stream) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(seed);
  for (std::uint64_t s : stream) h = mix(h ^ mix(s));
  return h;
}

}  // namespace mimlab
