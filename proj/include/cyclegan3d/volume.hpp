#pragma once

#include <array>
#include <cstdint>
#include <string_view>

#include <torch/types.h>

namespace cg3d {

enum class Domain { OctLike, ConfocalLike };

std::string_view to_string(Domain domain);
int64_t channels_for(Domain domain);
// Throws ShapeError for channel counts other than 1 or 3.
Domain domain_for_channels(int64_t channels);

/// A (depth, height, width, channel) float32 tensor with values in [-1, 1].
///
/// Construction validates the invariants: rank 4, every extent >= 1, channel
/// count consistent with the domain tag, and all values finite within [-1, 1].
/// The underlying tensor is shared, never mutated through this type.
class Volume {
 public:
  Volume(torch::Tensor data, Domain domain);

  /// Wraps sample `index` of an (N, C, D, H, W) network tensor.
  static Volume from_network(const torch::Tensor& ncdhw, int64_t index = 0);

  const torch::Tensor& data() const { return data_; }
  Domain domain() const { return domain_; }

  int64_t depth() const { return data_.size(0); }
  int64_t height() const { return data_.size(1); }
  int64_t width() const { return data_.size(2); }
  int64_t channels() const { return data_.size(3); }
  std::array<int64_t, 4> shape() const { return {depth(), height(), width(), channels()}; }

  /// (1, C, D, H, W) contiguous copy for the networks.
  torch::Tensor to_network() const;

  bool equal(const Volume& other) const;

 private:
  torch::Tensor data_;
  Domain domain_;
};

/// (height, width, channel) float32 image with values in [0, 1].
struct ProjectionImage {
  torch::Tensor data;

  int64_t height() const { return data.size(0); }
  int64_t width() const { return data.size(1); }
  int64_t channels() const { return data.size(2); }
};

enum class ProjectionMode { Mean, Max };

/// raw / 127.5 - 1 elementwise. `raw` is (D, H, W, C) of any real or integer
/// dtype; values outside [0, 255] are rejected with the offending index.
Volume normalize(const torch::Tensor& raw, Domain domain);

/// round-half-up((v + 1) * 127.5) clamped to [0, 255], as uint8.
torch::Tensor denormalize(const Volume& v);

/// Rec.601 luma of an RGB volume; the result is tagged OctLike.
Volume to_luminance(const Volume& v);
/// Copies the single channel into R, G and B; the result is tagged ConfocalLike.
Volume replicate_channels(const Volume& v);

// Network-layout (N, C, D, H, W) counterparts; differentiable.
torch::Tensor luminance(const torch::Tensor& ncdhw);
torch::Tensor replicate(const torch::Tensor& ncdhw);

/// Collapses depth: per (h, w, c) the mean (or max) over depth of (v + 1) / 2.
ProjectionImage project_fundus(const Volume& v, ProjectionMode mode = ProjectionMode::Mean);

/// round(p * 255) as (H, W, C) uint8.
torch::Tensor projection_to_u8(const ProjectionImage& image);

}  // namespace cg3d
