#pragma once

#include <cstdint>

#include "cyclegan3d/rng.hpp"
#include "cyclegan3d/volume.hpp"

namespace cg3d {

struct AugmentationConfig {
  double flip_probability = 0.5;
  double zoom_low = 0.9;
  double zoom_high = 1.1;
  int64_t pre_crop_size = 522;
  int64_t crop_size = 512;
  uint64_t seed = 0;

  void validate() const;
  bool operator==(const AugmentationConfig&) const = default;
};

/// What one call to `augment` decided; offsets refer to the zoomed (and
/// possibly reflection-padded) canvas.
struct AugmentTrace {
  double zoom = 1.0;
  int64_t canvas_size = 0;
  int64_t pad_before = 0;
  int64_t crop_top = 0;
  int64_t crop_left = 0;
  bool flipped = false;
};

/// Spatial augmentation applied per slice, depth and channels untouched:
/// resize (H, W) to pre_crop_size, zoom by a uniform factor from the zoom
/// range (bilinear), reflection-pad up to crop_size if the zoom shrank the
/// canvas below it, take a random crop_size square, then mirror the width
/// axis with flip_probability.
///
/// Each call draws exactly four values from `rng` (zoom, top, left, flip).
Volume augment(const Volume& v, const AugmentationConfig& cfg, Rng& rng, AugmentTrace* trace = nullptr);

/// Bilinear (half-pixel centres) resize of every slice to height x width.
Volume resize_spatial(const Volume& v, int64_t height, int64_t width);

/// Mirrors the width axis.
Volume flip_width(const Volume& v);

}  // namespace cg3d
