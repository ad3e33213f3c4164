#include "cyclegan3d/volume.hpp"

#include <sstream>

#include <torch/torch.h>

#include "cyclegan3d/error.hpp"

namespace cg3d {

namespace {

constexpr double kLumaR = 0.299;
constexpr double kLumaG = 0.587;
constexpr double kLumaB = 0.114;

std::string index_string(const torch::Tensor& flat_index, at::IntArrayRef sizes) {
  int64_t linear = flat_index.item<int64_t>();
  std::vector<int64_t> idx(sizes.size());
  for (int64_t d = static_cast<int64_t>(sizes.size()) - 1; d >= 0; --d) {
    idx[d] = linear % sizes[d];
    linear /= sizes[d];
  }
  std::ostringstream out;
  out << "(";
  for (size_t i = 0; i < idx.size(); ++i) out << (i ? ", " : "") << idx[i];
  out << ")";
  return out.str();
}

}  // namespace

std::string_view to_string(Domain domain) {
  return domain == Domain::OctLike ? "oct_like" : "confocal_like";
}

int64_t channels_for(Domain domain) { return domain == Domain::OctLike ? 1 : 3; }

Domain domain_for_channels(int64_t channels) {
  if (channels == 1) return Domain::OctLike;
  if (channels == 3) return Domain::ConfocalLike;
  throw ShapeError("volume must have 1 (grayscale) or 3 (RGB) channels, got " + std::to_string(channels));
}

Volume::Volume(torch::Tensor data, Domain domain) : domain_(domain) {
  if (!data.defined() || data.dim() != 4) {
    throw ShapeError("volume tensor must have rank 4 (depth, height, width, channel)");
  }
  for (int64_t d = 0; d < 4; ++d) {
    if (data.size(d) < 1) throw ShapeError("volume extents must all be >= 1");
  }
  if (data.size(3) != channels_for(domain)) {
    std::ostringstream msg;
    msg << "domain " << to_string(domain) << " requires " << channels_for(domain) << " channel(s), got "
        << data.size(3);
    throw ShapeError(msg.str());
  }
  data_ = data.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  if (!torch::isfinite(data_).all().item<bool>()) throw NumericError("volume contains non-finite values");
  if ((data_.abs() > 1.0f).any().item<bool>()) {
    auto flat = (data_.abs() > 1.0f).flatten().nonzero()[0][0];
    throw DataError("volume value outside [-1, 1] at " + index_string(flat, data_.sizes()));
  }
}

Volume Volume::from_network(const torch::Tensor& ncdhw, int64_t index) {
  if (ncdhw.dim() != 5) throw ShapeError("network tensor must have rank 5 (N, C, D, H, W)");
  auto sample = ncdhw.select(0, index).permute({1, 2, 3, 0});
  return Volume(sample, domain_for_channels(sample.size(3)));
}

torch::Tensor Volume::to_network() const { return data_.permute({3, 0, 1, 2}).unsqueeze(0).contiguous(); }

bool Volume::equal(const Volume& other) const {
  return domain_ == other.domain_ && data_.sizes() == other.data_.sizes() && torch::equal(data_, other.data_);
}

Volume normalize(const torch::Tensor& raw, Domain domain) {
  if (raw.dim() != 4) throw ShapeError("raw volume must have rank 4 (depth, height, width, channel)");
  auto values = raw.to(torch::kFloat64);
  auto bad = (values < 0) | (values > 255) | ~torch::isfinite(values);
  if (bad.any().item<bool>()) {
    auto flat = bad.flatten().nonzero()[0][0];
    throw DataError("raw value outside [0, 255] at " + index_string(flat, raw.sizes()));
  }
  return Volume((values / 127.5 - 1.0).to(torch::kFloat32), domain);
}

torch::Tensor denormalize(const Volume& v) {
  auto scaled = (v.data().to(torch::kFloat64) + 1.0) * 127.5;
  return torch::floor(scaled + 0.5).clamp(0, 255).to(torch::kUInt8);
}

torch::Tensor luminance(const torch::Tensor& ncdhw) {
  if (ncdhw.size(1) != 3) throw ShapeError("luminance requires 3 channels, got " + std::to_string(ncdhw.size(1)));
  // Accumulate in double so that achromatic input maps back to itself exactly.
  auto wide = ncdhw.to(torch::kFloat64);
  auto lum = kLumaR * wide.narrow(1, 0, 1) + kLumaG * wide.narrow(1, 1, 1) + kLumaB * wide.narrow(1, 2, 1);
  return lum.to(ncdhw.scalar_type());
}

torch::Tensor replicate(const torch::Tensor& ncdhw) {
  if (ncdhw.size(1) != 1) throw ShapeError("replication requires 1 channel, got " + std::to_string(ncdhw.size(1)));
  return ncdhw.expand({ncdhw.size(0), 3, ncdhw.size(2), ncdhw.size(3), ncdhw.size(4)}).contiguous();
}

Volume to_luminance(const Volume& v) {
  if (v.channels() != 3) throw ShapeError("to_luminance requires 3 channels, got " + std::to_string(v.channels()));
  auto d = v.data().to(torch::kFloat64);
  auto lum = kLumaR * d.narrow(3, 0, 1) + kLumaG * d.narrow(3, 1, 1) + kLumaB * d.narrow(3, 2, 1);
  // Convex weights keep values in range; clamp absorbs last-ulp rounding.
  return Volume(lum.clamp(-1.0, 1.0), Domain::OctLike);
}

Volume replicate_channels(const Volume& v) {
  if (v.channels() != 1) {
    throw ShapeError("replicate_channels requires 1 channel, got " + std::to_string(v.channels()));
  }
  return Volume(v.data().expand({v.depth(), v.height(), v.width(), 3}), Domain::ConfocalLike);
}

ProjectionImage project_fundus(const Volume& v, ProjectionMode mode) {
  // Double accumulation makes the mean independent of slice order.
  auto shifted = (v.data().to(torch::kFloat64) + 1.0) / 2.0;
  auto image = mode == ProjectionMode::Mean ? shifted.mean(0) : std::get<0>(shifted.max(0));
  return {image.clamp(0.0, 1.0).to(torch::kFloat32).contiguous()};
}

torch::Tensor projection_to_u8(const ProjectionImage& image) {
  return torch::round(image.data.to(torch::kFloat64) * 255.0).clamp(0, 255).to(torch::kUInt8);
}

}  // namespace cg3d
