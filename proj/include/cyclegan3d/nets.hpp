#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <torch/nn/module.h>
#include <torch/nn/modules/container/sequential.h>
#include <torch/nn/modules/conv.h>
#include <torch/nn/pimpl.h>

#include "cyclegan3d/volume.hpp"

namespace cg3d {

enum class GeneratorArch { Resnet, Unet };
enum class PaddingMode { Reflection, Zero };
enum class NormKind { Instance, None };

std::string to_string(GeneratorArch arch);
std::string to_string(PaddingMode mode);
std::string to_string(NormKind norm);
GeneratorArch parse_arch(const std::string& s);
PaddingMode parse_padding(const std::string& s);
NormKind parse_norm(const std::string& s);

struct GeneratorConfig {
  int64_t in_channels = 1;
  int64_t out_channels = 3;
  int64_t n_downsampling = 3;
  int64_t n_res_blocks = 9;
  int64_t base_width = 64;
  GeneratorArch arch = GeneratorArch::Resnet;
  PaddingMode padding_mode = PaddingMode::Reflection;
  NormKind norm = NormKind::Instance;
  bool norm_affine = false;
  std::string final_activation = "tanh";

  void validate() const;
  /// Same architecture with input and output channel counts swapped.
  GeneratorConfig mirrored() const;
  bool operator==(const GeneratorConfig&) const = default;
};

/// 3D PatchGAN. `widths` lists the hidden layers; `spatial_strides` has one
/// more entry, the last belonging to the single-channel logit layer.
struct DiscriminatorConfig {
  int64_t in_channels = 3;
  std::vector<int64_t> widths{64, 128, 256, 512};
  int64_t spatial_kernel = 4;
  std::vector<int64_t> spatial_strides{2, 2, 2, 1, 1};
  int64_t depth_kernel = 3;
  int64_t depth_stride = 1;
  NormKind norm = NormKind::Instance;
  double leaky_slope = 0.2;

  void validate() const;
  int64_t layer_count() const { return static_cast<int64_t>(spatial_strides.size()); }
  int64_t spatial_padding() const { return 1; }
  int64_t depth_padding() const { return (depth_kernel - 1) / 2; }
  bool operator==(const DiscriminatorConfig&) const = default;
};

struct ReceptiveField {
  int64_t depth = 1;
  int64_t height = 1;
  int64_t width = 1;
  bool operator==(const ReceptiveField&) const = default;
};

/// RF of a conv stack along one axis: rf += (k - 1) * prod(previous strides).
int64_t receptive_extent(const std::vector<int64_t>& kernels, const std::vector<int64_t>& strides);
ReceptiveField receptive_field(const DiscriminatorConfig& cfg);

/// Inclusive input interval [first, last] seen by logit `index` along one
/// axis, before clipping to the input. Accounts for padding.
struct Interval {
  int64_t first;
  int64_t last;
};
Interval receptive_window(const std::vector<int64_t>& kernels, const std::vector<int64_t>& strides,
                          const std::vector<int64_t>& paddings, int64_t index);

/// Logit map extent (D, H, W) for an input of extent (D, H, W).
std::array<int64_t, 3> logit_map_shape(const DiscriminatorConfig& cfg, int64_t depth, int64_t height, int64_t width);

class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(GeneratorConfig cfg);

  /// (N, in_channels, D, H, W) -> (N, out_channels, D, H, W) in (-1, 1).
  torch::Tensor forward(const torch::Tensor& x);

  const GeneratorConfig& config() const { return cfg_; }
  /// Throws ShapeError unless (D, H, W) suits this generator.
  void check_input(int64_t channels, int64_t depth, int64_t height, int64_t width) const;

 private:
  torch::Tensor forward_unet(const torch::Tensor& x);

  GeneratorConfig cfg_;
  torch::nn::Sequential body_{nullptr};
  // U-Net only.
  torch::nn::Sequential stem_{nullptr};
  std::vector<torch::nn::Sequential> down_;
  std::vector<torch::nn::Sequential> up_;
  torch::nn::Sequential head_{nullptr};
};
TORCH_MODULE(Generator);

class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(DiscriminatorConfig cfg);

  /// (N, C, D, H, W) -> raw logits (N, 1, D', H', W').
  torch::Tensor forward(const torch::Tensor& x);

  const DiscriminatorConfig& config() const { return cfg_; }

 private:
  DiscriminatorConfig cfg_;
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(Discriminator);

/// Builds and initializes (weights ~ N(0, 0.02), zero bias) from `seed`.
Generator build_generator(const GeneratorConfig& cfg, uint64_t seed);
Discriminator build_discriminator(const DiscriminatorConfig& cfg, uint64_t seed);

void init_weights(torch::nn::Module& module, uint64_t seed, double stddev = 0.02);

/// Runs the generator without gradient tracking.
Volume generator_forward(Generator& g, const Volume& v);

int64_t parameter_count(const torch::nn::Module& module);
/// FNV-1a over parameter names and bytes, for change detection.
uint64_t parameter_hash(const torch::nn::Module& module);

}  // namespace cg3d
