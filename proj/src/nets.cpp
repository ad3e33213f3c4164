#include "cyclegan3d/nets.hpp"

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

#include <cmath>
#include <cstring>
#include <sstream>

#include "cyclegan3d/error.hpp"

namespace nn = torch::nn;

namespace cg3d {

namespace {

// (left, right, top, bottom, front, back) in torch's pad order.
nn::AnyModule make_pad(PaddingMode mode, int64_t depth_pad, int64_t spatial_pad) {
  std::vector<int64_t> pads{spatial_pad, spatial_pad, spatial_pad, spatial_pad, depth_pad, depth_pad};
  if (mode == PaddingMode::Reflection) return nn::AnyModule(nn::ReflectionPad3d(nn::ReflectionPad3dOptions(pads)));
  return nn::AnyModule(nn::ConstantPad3d(nn::ConstantPad3dOptions(pads, 0.0)));
}

void push_norm(nn::Sequential& seq, NormKind norm, int64_t channels, bool affine) {
  if (norm == NormKind::Instance) seq->push_back(nn::InstanceNorm3d(nn::InstanceNorm3dOptions(channels).affine(affine)));
}

nn::Conv3d conv(int64_t in, int64_t out, std::vector<int64_t> kernel, std::vector<int64_t> stride,
                std::vector<int64_t> padding = {0, 0, 0}) {
  return nn::Conv3d(nn::Conv3dOptions(in, out, kernel).stride(stride).padding(padding));
}

// Reflection/zero padded conv followed by norm and ReLU.
void push_conv_block(nn::Sequential& seq, const GeneratorConfig& cfg, int64_t in, int64_t out,
                     std::vector<int64_t> kernel, std::vector<int64_t> stride) {
  seq->push_back(make_pad(cfg.padding_mode, kernel[0] / 2, kernel[1] / 2));
  seq->push_back(conv(in, out, kernel, stride));
  push_norm(seq, cfg.norm, out, cfg.norm_affine);
  seq->push_back(nn::ReLU());
}

// Fractional-strided conv: stride (1, 2, 2) with output padding restores 2x H and W exactly.
void push_up_block(nn::Sequential& seq, const GeneratorConfig& cfg, int64_t in, int64_t out) {
  seq->push_back(nn::ConvTranspose3d(
      nn::ConvTranspose3dOptions(in, out, 3).stride({1, 2, 2}).padding(1).output_padding({0, 1, 1})));
  push_norm(seq, cfg.norm, out, cfg.norm_affine);
  seq->push_back(nn::ReLU());
}

// tanh rounds to exactly +-1 for |x| > ~9 in float32; keep outputs strictly inside (-1, 1).
torch::Tensor open_tanh(const torch::Tensor& x) {
  const double limit =
      x.scalar_type() == torch::kFloat64 ? std::nextafter(1.0, 0.0) : static_cast<double>(std::nextafter(1.0f, 0.0f));
  return torch::tanh(x).clamp(-limit, limit);
}

void push_head(nn::Sequential& seq, const GeneratorConfig& cfg, int64_t in) {
  seq->push_back(make_pad(cfg.padding_mode, 1, 3));
  seq->push_back(conv(in, cfg.out_channels, {3, 7, 7}, {1, 1, 1}));
  seq->push_back(nn::Functional(open_tanh));
}

class ResidualBlockImpl : public nn::Module {
 public:
  ResidualBlockImpl(const GeneratorConfig& cfg, int64_t channels) {
    nn::Sequential seq;
    push_conv_block(seq, cfg, channels, channels, {3, 3, 3}, {1, 1, 1});
    seq->push_back(make_pad(cfg.padding_mode, 1, 1));
    seq->push_back(conv(channels, channels, {3, 3, 3}, {1, 1, 1}));
    push_norm(seq, cfg.norm, channels, cfg.norm_affine);
    block_ = register_module("block", seq);
  }

  torch::Tensor forward(const torch::Tensor& x) { return x + block_->forward(x); }

 private:
  nn::Sequential block_{nullptr};
};
TORCH_MODULE(ResidualBlock);

}  // namespace

std::string to_string(GeneratorArch arch) { return arch == GeneratorArch::Resnet ? "resnet" : "unet"; }
std::string to_string(PaddingMode mode) { return mode == PaddingMode::Reflection ? "reflection" : "zero"; }
std::string to_string(NormKind norm) { return norm == NormKind::Instance ? "instance" : "none"; }

GeneratorArch parse_arch(const std::string& s) {
  if (s == "resnet") return GeneratorArch::Resnet;
  if (s == "unet") return GeneratorArch::Unet;
  throw ConfigError("unknown generator arch '" + s + "' (expected resnet or unet)");
}

PaddingMode parse_padding(const std::string& s) {
  if (s == "reflection") return PaddingMode::Reflection;
  if (s == "zero") return PaddingMode::Zero;
  throw ConfigError("unknown padding mode '" + s + "' (expected reflection or zero)");
}

NormKind parse_norm(const std::string& s) {
  if (s == "instance") return NormKind::Instance;
  if (s == "none") return NormKind::None;
  throw ConfigError("unknown norm '" + s + "' (expected instance or none)");
}

void GeneratorConfig::validate() const {
  const bool pairing_ok = (in_channels == 1 && out_channels == 3) || (in_channels == 3 && out_channels == 1);
  if (!pairing_ok) {
    throw ConfigError("generator channels must pair 1->3 or 3->1, got " + std::to_string(in_channels) + "->" +
                      std::to_string(out_channels));
  }
  if (n_downsampling != 2 && n_downsampling != 3) throw ConfigError("generator n_downsampling must be 2 or 3");
  if (arch == GeneratorArch::Resnet && n_res_blocks < 1) throw ConfigError("ResNet generator needs n_res_blocks >= 1");
  if (base_width < 1) throw ConfigError("generator base_width must be >= 1");
  if (final_activation != "tanh") throw ConfigError("generator final_activation must be tanh");
}

GeneratorConfig GeneratorConfig::mirrored() const {
  GeneratorConfig m = *this;
  std::swap(m.in_channels, m.out_channels);
  return m;
}

void DiscriminatorConfig::validate() const {
  if (in_channels != 1 && in_channels != 3) throw ConfigError("discriminator in_channels must be 1 or 3");
  if (widths.empty()) throw ConfigError("discriminator needs at least one hidden width");
  for (auto w : widths) {
    if (w < 1) throw ConfigError("discriminator widths must be >= 1");
  }
  if (spatial_strides.size() != widths.size() + 1) {
    throw ConfigError("discriminator needs one spatial stride per hidden layer plus one for the logit layer");
  }
  for (auto s : spatial_strides) {
    if (s < 1) throw ConfigError("discriminator strides must be >= 1");
  }
  if (spatial_kernel < 1 || depth_kernel < 1 || depth_stride < 1) {
    throw ConfigError("discriminator kernels and depth stride must be >= 1");
  }
  if (depth_kernel % 2 == 0) throw ConfigError("discriminator depth_kernel must be odd");
  if (!(leaky_slope >= 0.0)) throw ConfigError("discriminator leaky_slope must be >= 0");
}

int64_t receptive_extent(const std::vector<int64_t>& kernels, const std::vector<int64_t>& strides) {
  int64_t rf = 1;
  int64_t jump = 1;
  for (size_t i = 0; i < kernels.size(); ++i) {
    rf += (kernels[i] - 1) * jump;
    jump *= strides[i];
  }
  return rf;
}

ReceptiveField receptive_field(const DiscriminatorConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<size_t>(cfg.layer_count());
  const int64_t spatial = receptive_extent(std::vector<int64_t>(n, cfg.spatial_kernel), cfg.spatial_strides);
  const int64_t depth =
      receptive_extent(std::vector<int64_t>(n, cfg.depth_kernel), std::vector<int64_t>(n, cfg.depth_stride));
  return {depth, spatial, spatial};
}

Interval receptive_window(const std::vector<int64_t>& kernels, const std::vector<int64_t>& strides,
                          const std::vector<int64_t>& paddings, int64_t index) {
  int64_t jump = 1;
  int64_t offset = 0;
  for (size_t i = 0; i < kernels.size(); ++i) {
    offset += paddings[i] * jump;
    jump *= strides[i];
  }
  const int64_t first = index * jump - offset;
  return {first, first + receptive_extent(kernels, strides) - 1};
}

std::array<int64_t, 3> logit_map_shape(const DiscriminatorConfig& cfg, int64_t depth, int64_t height, int64_t width) {
  std::array<int64_t, 3> extent{depth, height, width};
  for (int64_t layer = 0; layer < cfg.layer_count(); ++layer) {
    const int64_t s = cfg.spatial_strides[static_cast<size_t>(layer)];
    extent[0] = (extent[0] + 2 * cfg.depth_padding() - cfg.depth_kernel) / cfg.depth_stride + 1;
    extent[1] = (extent[1] + 2 * cfg.spatial_padding() - cfg.spatial_kernel) / s + 1;
    extent[2] = (extent[2] + 2 * cfg.spatial_padding() - cfg.spatial_kernel) / s + 1;
    for (auto e : extent) {
      if (e < 1) return {0, 0, 0};
    }
  }
  return extent;
}

GeneratorImpl::GeneratorImpl(GeneratorConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int64_t w = cfg_.base_width;
  if (cfg_.arch == GeneratorArch::Resnet) {
    nn::Sequential seq;
    push_conv_block(seq, cfg_, cfg_.in_channels, w, {3, 7, 7}, {1, 1, 1});
    int64_t c = w;
    for (int64_t i = 0; i < cfg_.n_downsampling; ++i, c *= 2) push_conv_block(seq, cfg_, c, 2 * c, {3, 3, 3}, {1, 2, 2});
    for (int64_t i = 0; i < cfg_.n_res_blocks; ++i) seq->push_back(ResidualBlock(cfg_, c));
    for (int64_t i = 0; i < cfg_.n_downsampling; ++i, c /= 2) push_up_block(seq, cfg_, c, c / 2);
    push_head(seq, cfg_, c);
    body_ = register_module("body", seq);
    return;
  }

  nn::Sequential stem;
  push_conv_block(stem, cfg_, cfg_.in_channels, w, {3, 7, 7}, {1, 1, 1});
  stem_ = register_module("stem", stem);
  for (int64_t i = 0; i < cfg_.n_downsampling; ++i) {
    nn::Sequential down;
    push_conv_block(down, cfg_, w << i, w << (i + 1), {3, 3, 3}, {1, 2, 2});
    down_.push_back(register_module("down" + std::to_string(i), down));
  }
  // up[i] maps level i+1 to level i. Its input is the bottleneck for the
  // deepest block and otherwise the previous output concatenated with its skip.
  for (int64_t i = 0; i < cfg_.n_downsampling; ++i) {
    nn::Sequential up;
    const int64_t in = i == cfg_.n_downsampling - 1 ? w << cfg_.n_downsampling : w << (i + 2);
    push_up_block(up, cfg_, in, w << i);
    up_.push_back(register_module("up" + std::to_string(i), up));
  }
  nn::Sequential head;
  push_head(head, cfg_, 2 * w);
  head_ = register_module("head", head);
}

void GeneratorImpl::check_input(int64_t channels, int64_t depth, int64_t height, int64_t width) const {
  if (channels != cfg_.in_channels) {
    throw ShapeError("generator expects " + std::to_string(cfg_.in_channels) + " input channel(s), got " +
                     std::to_string(channels));
  }
  const int64_t factor = int64_t{1} << cfg_.n_downsampling;
  if (height % factor != 0 || width % factor != 0) {
    std::ostringstream msg;
    msg << "generator input height and width must be divisible by " << factor << " (2^" << cfg_.n_downsampling
        << "), got " << height << "x" << width;
    throw ShapeError(msg.str());
  }
  if (cfg_.padding_mode == PaddingMode::Reflection && (depth < 2 || height / factor < 2 || width / factor < 2)) {
    std::ostringstream msg;
    msg << "reflection padding needs depth >= 2 and height, width >= " << 2 * factor << ", got " << depth << "x"
        << height << "x" << width;
    throw ShapeError(msg.str());
  }
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 5) throw ShapeError("generator input must be (N, C, D, H, W)");
  check_input(x.size(1), x.size(2), x.size(3), x.size(4));
  if (cfg_.arch == GeneratorArch::Unet) return forward_unet(x);
  return body_->forward(x);
}

torch::Tensor GeneratorImpl::forward_unet(const torch::Tensor& x) {
  std::vector<torch::Tensor> skips{stem_->forward(x)};
  for (auto& down : down_) skips.push_back(down->forward(skips.back()));
  torch::Tensor h = skips.back();
  for (int64_t i = cfg_.n_downsampling - 1; i >= 0; --i) {
    h = torch::cat({up_[static_cast<size_t>(i)]->forward(h), skips[static_cast<size_t>(i)]}, 1);
  }
  return head_->forward(h);
}

DiscriminatorImpl::DiscriminatorImpl(DiscriminatorConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  nn::Sequential seq;
  const std::vector<int64_t> pad{cfg_.depth_padding(), cfg_.spatial_padding(), cfg_.spatial_padding()};
  int64_t c = cfg_.in_channels;
  for (size_t i = 0; i < cfg_.widths.size(); ++i) {
    const int64_t s = cfg_.spatial_strides[i];
    seq->push_back(conv(c, cfg_.widths[i], {cfg_.depth_kernel, cfg_.spatial_kernel, cfg_.spatial_kernel},
                        {cfg_.depth_stride, s, s}, pad));
    if (i > 0) push_norm(seq, cfg_.norm, cfg_.widths[i], false);
    seq->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(cfg_.leaky_slope)));
    c = cfg_.widths[i];
  }
  const int64_t s = cfg_.spatial_strides.back();
  seq->push_back(conv(c, 1, {cfg_.depth_kernel, cfg_.spatial_kernel, cfg_.spatial_kernel}, {cfg_.depth_stride, s, s},
                      pad));
  body_ = register_module("body", seq);
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 5) throw ShapeError("discriminator input must be (N, C, D, H, W)");
  if (x.size(1) != cfg_.in_channels) {
    throw ShapeError("discriminator expects " + std::to_string(cfg_.in_channels) + " channel(s), got " +
                     std::to_string(x.size(1)));
  }
  auto shape = logit_map_shape(cfg_, x.size(2), x.size(3), x.size(4));
  if (shape[0] < 1) {
    std::ostringstream msg;
    msg << "discriminator input " << x.size(2) << "x" << x.size(3) << "x" << x.size(4)
        << " is too small to produce a logit map";
    throw ShapeError(msg.str());
  }
  return body_->forward(x);
}

void init_weights(nn::Module& module, uint64_t seed, double stddev) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  torch::NoGradGuard no_grad;
  for (auto& item : module.named_parameters(true)) {
    const auto& name = item.key();
    auto& p = item.value();
    const bool is_bias = name.size() >= 4 && name.compare(name.size() - 4, 4, "bias") == 0;
    if (p.dim() >= 3) {
      p.normal_(0.0, stddev, gen);
    } else if (is_bias) {
      p.zero_();
    } else {
      p.fill_(1.0);  // affine norm scale
    }
  }
}

Generator build_generator(const GeneratorConfig& cfg, uint64_t seed) {
  Generator g(cfg);
  init_weights(*g, seed);
  return g;
}

Discriminator build_discriminator(const DiscriminatorConfig& cfg, uint64_t seed) {
  Discriminator d(cfg);
  init_weights(*d, seed);
  return d;
}

Volume generator_forward(Generator& g, const Volume& v) {
  torch::NoGradGuard no_grad;
  auto param = g->parameters().front();
  auto out = g->forward(v.to_network().to(param.scalar_type()));
  return Volume::from_network(out);
}

int64_t parameter_count(const nn::Module& module) {
  int64_t total = 0;
  for (const auto& p : module.parameters(true)) total += p.numel();
  return total;
}

uint64_t parameter_hash(const nn::Module& module) {
  uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& item : module.named_parameters(true)) {
    mix(item.key().data(), item.key().size());
    auto t = item.value().detach().contiguous();
    mix(t.data_ptr(), static_cast<size_t>(t.numel()) * t.element_size());
  }
  return h;
}

}  // namespace cg3d
