#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <string>

#include <torch/torch.h>
#include <unistd.h>

#include "cyclegan3d/nets.hpp"
#include "cyclegan3d/volume.hpp"

namespace testing {

// Directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("cg3d_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& child) const { return path_ / child; }

 private:
  std::filesystem::path path_;
};

// Uniform values in [-1, 1], or on the 8-bit grid when `quantized`.
inline cg3d::Volume random_volume(int64_t d, int64_t h, int64_t w, cg3d::Domain domain, uint64_t seed,
                                  bool quantized = false) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  const int64_t c = cg3d::channels_for(domain);
  if (quantized) {
    auto raw = torch::randint(0, 256, {d, h, w, c}, gen, torch::kFloat32);
    return cg3d::normalize(raw, domain);
  }
  auto data = torch::rand({d, h, w, c}, gen, torch::kFloat32) * 2 - 1;
  return cg3d::Volume(data, domain);
}

}  // namespace testing

namespace testing {

// Input voxels whose perturbation can reach logit (d, h, w): nonzero support
// of the gradient of that logit, reduced to per-axis index ranges.
struct Support {
  int64_t d0, d1, h0, h1, w0, w1;
};

inline Support gradient_support(cg3d::Discriminator& disc, const torch::Tensor& input, int64_t d, int64_t h,
                                int64_t w) {
  auto x = input.clone().requires_grad_(true);
  auto logits = disc->forward(x);
  logits.index({0, 0, d, h, w}).backward();
  auto nz = x.grad().abs().sum({0, 1}).ne(0);
  auto along = [&](int64_t keep) {
    std::vector<int64_t> dims;
    for (int64_t i = 0; i < 3; ++i) {
      if (i != keep) dims.push_back(i);
    }
    auto mask = nz.any(dims[1]).any(dims[0]);
    auto idx = mask.nonzero().flatten();
    return std::pair<int64_t, int64_t>{idx.min().item<int64_t>(), idx.max().item<int64_t>()};
  };
  auto [d0, d1] = along(0);
  auto [h0, h1] = along(1);
  auto [w0, w1] = along(2);
  return {d0, d1, h0, h1, w0, w1};
}

}  // namespace testing

namespace testing {

// Fraction of coordinates where the autograd gradient of `f` at `x` agrees
// with a central difference within `rel_tol` (relative to the larger
// magnitude). Where both lie below the round-off level of the difference
// quotient, the gradient is zero and the coordinate counts as agreeing.
inline double gradient_agreement(const std::function<torch::Tensor(const torch::Tensor&)>& f, const torch::Tensor& x,
                                 double step = 1e-4, double rel_tol = 1e-3) {
  auto xg = x.detach().to(torch::kFloat64).clone().requires_grad_(true);
  auto value = f(xg);
  const double zero = 64 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(value.item<double>())) / step;
  value.backward();
  auto analytic = xg.grad().flatten();
  auto base = x.detach().to(torch::kFloat64).clone();
  auto flat = base.view({-1});
  int64_t ok = 0;
  torch::NoGradGuard no_grad;
  for (int64_t i = 0; i < flat.numel(); ++i) {
    const double orig = flat[i].item<double>();
    flat[i] = orig + step;
    const double up = f(base).item<double>();
    flat[i] = orig - step;
    const double down = f(base).item<double>();
    flat[i] = orig;
    const double numeric = (up - down) / (2 * step);
    const double a = analytic[i].item<double>();
    const double scale = std::max(std::abs(a), std::abs(numeric));
    if (scale < zero || std::abs(a - numeric) <= rel_tol * scale) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(flat.numel());
}

}  // namespace testing
