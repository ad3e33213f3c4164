#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <torch/types.h>

namespace cg3d {

struct AdamOptions {
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over a fixed, named parameter list. State is
/// plain tensors so it can be checkpointed and restored exactly.
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, torch::Tensor>> params, AdamOptions options);

  void zero_grad();
  /// Parameters without a gradient are left untouched.
  void step(double lr);

  int64_t step_count() const { return step_; }
  const std::vector<std::pair<std::string, torch::Tensor>>& params() const { return params_; }
  const std::vector<torch::Tensor>& exp_avg() const { return exp_avg_; }
  const std::vector<torch::Tensor>& exp_avg_sq() const { return exp_avg_sq_; }

  void restore(int64_t step, std::vector<torch::Tensor> exp_avg, std::vector<torch::Tensor> exp_avg_sq);

 private:
  std::vector<std::pair<std::string, torch::Tensor>> params_;
  AdamOptions options_;
  int64_t step_ = 0;
  std::vector<torch::Tensor> exp_avg_;
  std::vector<torch::Tensor> exp_avg_sq_;
};

}  // namespace cg3d
