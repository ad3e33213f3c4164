#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>

#include "cyclegan3d/volume.hpp"

namespace cg3d {

/// Synthetic vessel phantom: red tubes (vessels), blue blobs (nuclei) and
/// sparse green blobs (T cells) on a dark background.
struct PhantomConfig {
  int64_t depth = 9;
  int64_t height = 32;
  int64_t width = 32;
  int64_t vessel_count = 3;
  // Expected nuclei per en-face pixel; green cells are a quarter as frequent.
  double nucleus_density = 0.01;
  double noise_sigma = 0.05;
  uint64_t seed = 0;

  void validate() const;
  bool operator==(const PhantomConfig&) const = default;
};

inline constexpr float kPhantomBackground = -0.9f;

/// Returns (x, y): y is the RGB phantom, x = clamp(to_luminance(y) + noise)
/// with Gaussian noise of `noise_sigma`. A pure function of `cfg`.
std::pair<Volume, Volume> generate_phantom_pair(const PhantomConfig& cfg);

struct PhantomDatasetSpec {
  PhantomConfig phantom;
  int64_t train_count = 4;
  int64_t test_count = 0;
};

/// Writes `root/{train,test}{X,Y}/vol_###/slice_###.png`. Volume i of a split
/// uses the phantom seed derived from (phantom.seed, split, i), so the output
/// does not depend on `workers`.
void write_phantom_dataset(const std::filesystem::path& root, const PhantomDatasetSpec& spec, int workers = 1);

/// The per-volume phantom config used by write_phantom_dataset.
PhantomConfig phantom_for_index(const PhantomConfig& base, bool test_split, int64_t index);

}  // namespace cg3d
