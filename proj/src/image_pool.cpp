#include "cyclegan3d/image_pool.hpp"

#include <torch/torch.h>

#include "cyclegan3d/error.hpp"

namespace cg3d {

ImagePool::ImagePool(int64_t capacity, Rng rng) : capacity_(capacity), rng_(std::move(rng)) {
  if (capacity < 0) throw ConfigError("image pool capacity must be >= 0");
}

torch::Tensor ImagePool::query(const torch::Tensor& fresh) {
  auto detached = fresh.detach();
  if (capacity_ == 0) return detached;
  std::vector<torch::Tensor> out;
  out.reserve(static_cast<size_t>(detached.size(0)));
  for (int64_t i = 0; i < detached.size(0); ++i) out.push_back(query_one(detached.narrow(0, i, 1)));
  return out.size() == 1 ? out.front() : torch::cat(out, 0);
}

torch::Tensor ImagePool::query_one(const torch::Tensor& sample) {
  if (size() < capacity_) {
    stored_.push_back(sample.clone());
    return sample;
  }
  // Both draws happen on every full-pool query so the stream advances uniformly.
  const bool return_fresh = bernoulli(rng_, 0.5);
  const auto slot = static_cast<size_t>(uniform_index(rng_, static_cast<uint64_t>(capacity_)));
  if (return_fresh) return sample;
  auto old = stored_[slot];
  stored_[slot] = sample.clone();
  return old;
}

void ImagePool::restore(std::vector<torch::Tensor> stored, Rng rng) {
  if (static_cast<int64_t>(stored.size()) > capacity_) throw ConfigError("image pool state exceeds its capacity");
  stored_ = std::move(stored);
  rng_ = std::move(rng);
}

}  // namespace cg3d
