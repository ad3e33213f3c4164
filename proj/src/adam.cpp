#include "cyclegan3d/adam.hpp"

#include <cmath>

#include <torch/torch.h>

#include "cyclegan3d/error.hpp"

namespace cg3d {

Adam::Adam(std::vector<std::pair<std::string, torch::Tensor>> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const auto& [name, p] : params_) {
    exp_avg_.push_back(torch::zeros_like(p));
    exp_avg_sq_.push_back(torch::zeros_like(p));
  }
}

void Adam::zero_grad() {
  for (auto& [name, p] : params_) {
    if (p.mutable_grad().defined()) p.mutable_grad() = torch::Tensor();
  }
}

void Adam::step(double lr) {
  torch::NoGradGuard no_grad;
  ++step_;
  const double correction1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
  const double correction2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].second;
    const auto& grad = p.grad();
    if (!grad.defined()) continue;
    exp_avg_[i].mul_(options_.beta1).add_(grad, 1.0 - options_.beta1);
    exp_avg_sq_[i].mul_(options_.beta2).addcmul_(grad, grad, 1.0 - options_.beta2);
    auto denom = (exp_avg_sq_[i] / correction2).sqrt_().add_(options_.eps);
    p.addcdiv_(exp_avg_[i], denom, -lr / correction1);
  }
}

void Adam::restore(int64_t step, std::vector<torch::Tensor> exp_avg, std::vector<torch::Tensor> exp_avg_sq) {
  if (exp_avg.size() != params_.size() || exp_avg_sq.size() != params_.size()) {
    throw ConfigError("optimizer state does not match the parameter list");
  }
  for (size_t i = 0; i < params_.size(); ++i) {
    if (exp_avg[i].sizes() != params_[i].second.sizes() || exp_avg_sq[i].sizes() != params_[i].second.sizes()) {
      throw ConfigError("optimizer state shape mismatch for " + params_[i].first);
    }
  }
  step_ = step;
  exp_avg_ = std::move(exp_avg);
  exp_avg_sq_ = std::move(exp_avg_sq);
}

}  // namespace cg3d
