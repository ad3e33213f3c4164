#include "cyclegan3d/rng.hpp"

#include <sstream>
#include <vector>

#include "cyclegan3d/error.hpp"

namespace cg3d {

Rng make_stream(uint64_t seed, std::initializer_list<uint64_t> tags) {
  std::vector<uint32_t> words;
  words.reserve(2 * (tags.size() + 1));
  auto push = [&words](uint64_t v) {
    words.push_back(static_cast<uint32_t>(v & 0xffffffffu));
    words.push_back(static_cast<uint32_t>(v >> 32));
  };
  push(seed);
  for (uint64_t tag : tags) push(tag);
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double uniform(Rng& rng, double low, double high) { return low + (high - low) * uniform01(rng); }

uint64_t uniform_index(Rng& rng, uint64_t n) {
  // Rejection sampling on the top of the range removes modulo bias.
  const uint64_t limit = Rng::max() - (Rng::max() % n + 1) % n;
  uint64_t draw = rng();
  while (draw > limit) draw = rng();
  return draw % n;
}

bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

std::string serialize_rng(const Rng& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

Rng deserialize_rng(const std::string& state) {
  Rng rng;
  std::istringstream in(state);
  in >> rng;
  if (in.fail()) throw ConfigError("malformed RNG state");
  return rng;
}

}  // namespace cg3d
