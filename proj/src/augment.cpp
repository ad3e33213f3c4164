#include "cyclegan3d/augment.hpp"

#include <cmath>
#include <string>

#include <torch/torch.h>

#include "cyclegan3d/error.hpp"

namespace F = torch::nn::functional;

namespace cg3d {

void AugmentationConfig::validate() const {
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) {
    throw ConfigError("augmentation flip_probability must lie in [0, 1]");
  }
  if (!(zoom_low > 0.0) || !(zoom_high >= zoom_low) || !std::isfinite(zoom_high)) {
    throw ConfigError("augmentation zoom range must satisfy 0 < low <= high");
  }
  if (crop_size < 1 || pre_crop_size < crop_size) {
    throw ConfigError("augmentation requires 1 <= crop_size <= pre_crop_size, got crop " + std::to_string(crop_size) +
                      " pre-crop " + std::to_string(pre_crop_size));
  }
}

Volume resize_spatial(const Volume& v, int64_t height, int64_t width) {
  if (height == v.height() && width == v.width()) return v;
  // (D, H, W, C) -> (D, C, H, W): depth acts as the batch so it is never resampled.
  auto slices = v.data().permute({0, 3, 1, 2});
  auto resized = F::interpolate(slices, F::InterpolateFuncOptions()
                                            .size(std::vector<int64_t>{height, width})
                                            .mode(torch::kBilinear)
                                            .align_corners(false));
  return Volume(resized.permute({0, 2, 3, 1}).clamp(-1.0, 1.0), v.domain());
}

Volume flip_width(const Volume& v) { return Volume(v.data().flip({2}), v.domain()); }

Volume augment(const Volume& v, const AugmentationConfig& cfg, Rng& rng, AugmentTrace* trace) {
  cfg.validate();
  if (v.height() < cfg.crop_size || v.width() < cfg.crop_size) {
    throw ShapeError("augmentation input " + std::to_string(v.height()) + "x" + std::to_string(v.width()) +
                     " is smaller than crop size " + std::to_string(cfg.crop_size));
  }
  const double zoom = uniform(rng, cfg.zoom_low, cfg.zoom_high);
  const uint64_t top_draw = rng();
  const uint64_t left_draw = rng();
  const bool flip = bernoulli(rng, cfg.flip_probability);

  Volume canvas = resize_spatial(v, cfg.pre_crop_size, cfg.pre_crop_size);
  const auto zoomed = std::max<int64_t>(1, std::llround(static_cast<double>(cfg.pre_crop_size) * zoom));
  canvas = resize_spatial(canvas, zoomed, zoomed);

  int64_t pad_before = 0;
  if (zoomed < cfg.crop_size) {
    pad_before = (cfg.crop_size - zoomed) / 2;
    const int64_t pad_after = cfg.crop_size - zoomed - pad_before;
    if (pad_before >= zoomed || pad_after >= zoomed) {
      throw ShapeError("zoomed canvas too small to reflection-pad to crop size");
    }
    auto slices = canvas.data().permute({0, 3, 1, 2});
    auto padded = F::pad(slices, F::PadFuncOptions({pad_before, pad_after, pad_before, pad_after}).mode(torch::kReflect));
    canvas = Volume(padded.permute({0, 2, 3, 1}), v.domain());
  }

  const auto span = static_cast<uint64_t>(canvas.height() - cfg.crop_size + 1);
  const auto top = static_cast<int64_t>(top_draw % span);
  const auto left = static_cast<int64_t>(left_draw % span);
  auto cropped = canvas.data().narrow(1, top, cfg.crop_size).narrow(2, left, cfg.crop_size);
  Volume out(cropped, v.domain());
  if (flip) out = flip_width(out);

  if (trace) *trace = AugmentTrace{zoom, zoomed, pad_before, top, left, flip};
  return out;
}

}  // namespace cg3d
