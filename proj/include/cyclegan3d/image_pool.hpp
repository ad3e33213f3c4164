#pragma once

#include <cstdint>
#include <vector>

#include <torch/types.h>

#include "cyclegan3d/rng.hpp"

namespace cg3d {

/// History of generated volumes replayed to a discriminator.
///
/// While filling, a query stores and returns its input. Once full, each query
/// returns the input with probability 0.5, otherwise a uniformly chosen stored
/// volume, which the input then replaces. Capacity 0 disables the pool.
class ImagePool {
 public:
  ImagePool(int64_t capacity, Rng rng);

  /// `fresh` is one sample (1, C, D, H, W) or a batch; batches are queried
  /// sample by sample. The result is detached from any autograd graph.
  torch::Tensor query(const torch::Tensor& fresh);

  int64_t capacity() const { return capacity_; }
  int64_t size() const { return static_cast<int64_t>(stored_.size()); }
  const std::vector<torch::Tensor>& stored() const { return stored_; }
  const Rng& rng() const { return rng_; }

  void restore(std::vector<torch::Tensor> stored, Rng rng);

 private:
  torch::Tensor query_one(const torch::Tensor& sample);

  int64_t capacity_;
  Rng rng_;
  std::vector<torch::Tensor> stored_;
};

}  // namespace cg3d
