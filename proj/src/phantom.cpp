#include "cyclegan3d/phantom.hpp"

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

#include <cmath>
#include <cstdio>
#include <future>
#include <numbers>
#include <vector>

#include "cyclegan3d/error.hpp"
#include "cyclegan3d/rng.hpp"
#include "cyclegan3d/volume_io.hpp"

namespace fs = std::filesystem;

namespace cg3d {

namespace {

constexpr uint64_t kGeometryStream = 1;
constexpr uint64_t kNoiseStream = 2;

struct Grid {
  torch::Tensor z, y, x;  // (D, H, W) coordinates, float64
};

Grid make_grid(const PhantomConfig& cfg) {
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto zs = torch::arange(cfg.depth, opts);
  auto ys = torch::arange(cfg.height, opts);
  auto xs = torch::arange(cfg.width, opts);
  auto mesh = torch::meshgrid({zs, ys, xs}, "ij");
  return {mesh[0], mesh[1], mesh[2]};
}

// Alpha-composites `color` over `rgb` (D, H, W, 3) with per-voxel coverage in [0, 1].
void composite(torch::Tensor& rgb, const torch::Tensor& coverage, const std::array<double, 3>& color) {
  auto alpha = coverage.unsqueeze(-1);
  auto paint = torch::tensor({color[0], color[1], color[2]}, torch::kFloat64).view({1, 1, 1, 3});
  rgb = rgb * (1.0 - alpha) + paint * alpha;
}

void draw_blob(torch::Tensor& rgb, const Grid& g, Rng& rng, const PhantomConfig& cfg, double scale,
               const std::array<double, 3>& color) {
  const double cz = uniform(rng, 0.0, static_cast<double>(cfg.depth - 1));
  const double cy = uniform(rng, 0.0, static_cast<double>(cfg.height - 1));
  const double cx = uniform(rng, 0.0, static_cast<double>(cfg.width - 1));
  const double r_xy = uniform(rng, 1.2, 2.0) * scale;
  const double r_z = uniform(rng, 0.8, 1.5);
  auto rho = torch::sqrt(((g.x - cx) / r_xy).square() + ((g.y - cy) / r_xy).square() + ((g.z - cz) / r_z).square());
  composite(rgb, ((1.0 - rho) * r_xy + 0.5).clamp(0.0, 1.0), color);
}

}  // namespace

void PhantomConfig::validate() const {
  if (depth < 1 || height < 1 || width < 1) throw ConfigError("phantom volume_shape extents must be >= 1");
  if (vessel_count < 0) throw ConfigError("phantom vessel_count must be >= 0");
  if (!(nucleus_density >= 0.0) || !std::isfinite(nucleus_density)) {
    throw ConfigError("phantom nucleus_density must be a finite value >= 0");
  }
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("phantom noise_sigma must be >= 0");
}

std::pair<Volume, Volume> generate_phantom_pair(const PhantomConfig& cfg) {
  cfg.validate();
  Rng rng = make_stream(cfg.seed, {kGeometryStream});
  const Grid g = make_grid(cfg);
  const double bg = kPhantomBackground;
  const double scale = std::max(1.0, static_cast<double>(std::min(cfg.height, cfg.width)) / 64.0);
  const double extent = static_cast<double>(std::max(cfg.height, cfg.width));
  auto rgb = torch::full({cfg.depth, cfg.height, cfg.width, 3}, bg, torch::kFloat64);

  for (int64_t i = 0; i < cfg.vessel_count; ++i) {
    const double cy = uniform(rng, 0.0, static_cast<double>(cfg.height - 1));
    const double cx = uniform(rng, 0.0, static_cast<double>(cfg.width - 1));
    const double theta = uniform(rng, 0.0, std::numbers::pi);
    const double amplitude = uniform(rng, 0.0, 0.08) * extent;
    const double wavelength = uniform(rng, 0.5, 1.5) * extent;
    const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const double radius = uniform(rng, 1.0, 2.0) * scale;
    const double drift = uniform(rng, -0.3, 0.3);
    const double peak = uniform(rng, 0.6, 0.9);
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    auto along = (g.x - cx) * c + (g.y - cy) * s;
    auto across = -(g.x - cx) * s + (g.y - cy) * c - drift * (g.z - 0.5 * static_cast<double>(cfg.depth - 1)) -
                  amplitude * torch::sin(2.0 * std::numbers::pi * along / wavelength + phase);
    composite(rgb, (radius + 0.5 - across.abs()).clamp(0.0, 1.0), {peak, bg, bg});
  }

  const auto area = static_cast<double>(cfg.height * cfg.width);
  const auto nuclei = static_cast<int64_t>(std::llround(cfg.nucleus_density * area));
  const auto t_cells = static_cast<int64_t>(std::llround(cfg.nucleus_density * area / 4.0));
  for (int64_t i = 0; i < nuclei; ++i) draw_blob(rgb, g, rng, cfg, scale, {bg, bg, uniform(rng, 0.4, 0.8)});
  for (int64_t i = 0; i < t_cells; ++i) draw_blob(rgb, g, rng, cfg, scale, {bg, uniform(rng, 0.5, 0.9), bg});

  // Snap Y onto the 8-bit grid so the in-memory phantom equals its PNG form.
  Volume y = normalize(denormalize(Volume(rgb.clamp(-1.0, 1.0).to(torch::kFloat32), Domain::ConfocalLike)),
                       Domain::ConfocalLike);
  Volume x = to_luminance(y);
  if (cfg.noise_sigma > 0.0) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(make_stream(cfg.seed, {kNoiseStream})());
    auto noise = torch::randn(x.data().sizes(), gen, torch::kFloat64) * cfg.noise_sigma;
    x = Volume((x.data().to(torch::kFloat64) + noise).clamp(-1.0, 1.0).to(torch::kFloat32), Domain::OctLike);
  }
  return {std::move(x), std::move(y)};
}

PhantomConfig phantom_for_index(const PhantomConfig& base, bool test_split, int64_t index) {
  PhantomConfig cfg = base;
  cfg.seed = make_stream(base.seed, {test_split ? 1u : 0u, static_cast<uint64_t>(index)})();
  return cfg;
}

void write_phantom_dataset(const fs::path& root, const PhantomDatasetSpec& spec, int workers) {
  spec.phantom.validate();
  if (spec.train_count < 0 || spec.test_count < 0) throw ConfigError("phantom volume counts must be >= 0");
  for (const char* dir : {"trainX", "trainY", "testX", "testY"}) fs::create_directories(root / dir);

  struct Job {
    bool test;
    int64_t index;
  };
  std::vector<Job> jobs;
  for (int64_t i = 0; i < spec.train_count; ++i) jobs.push_back({false, i});
  for (int64_t i = 0; i < spec.test_count; ++i) jobs.push_back({true, i});

  auto run = [&](const Job& job) {
    auto [x, y] = generate_phantom_pair(phantom_for_index(spec.phantom, job.test, job.index));
    char name[32];
    std::snprintf(name, sizeof(name), "vol_%03lld", static_cast<long long>(job.index));
    const std::string split = job.test ? "test" : "train";
    save_volume(x, root / (split + "X") / name);
    save_volume(y, root / (split + "Y") / name);
  };

  const size_t lanes = static_cast<size_t>(std::max(1, workers));
  for (size_t start = 0; start < jobs.size(); start += lanes) {
    std::vector<std::future<void>> pending;
    for (size_t j = start; j < std::min(jobs.size(), start + lanes); ++j) {
      pending.push_back(std::async(std::launch::async, run, jobs[j]));
    }
    for (auto& f : pending) f.get();
  }
}

}  // namespace cg3d
