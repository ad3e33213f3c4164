#include "cyclegan3d/losses.hpp"

#include <charconv>
#include <cmath>
#include <ostream>

#include <torch/torch.h>

#include "cyclegan3d/error.hpp"

namespace F = torch::nn::functional;

namespace cg3d {

namespace {

std::string shape_string(const torch::Tensor& t) {
  std::string s = "(";
  for (int64_t i = 0; i < t.dim(); ++i) s += (i ? ", " : "") + std::to_string(t.size(i));
  return s + ")";
}

torch::Tensor to_luma(const torch::Tensor& t) { return t.size(1) == 3 ? luminance(t) : t; }

}  // namespace

void LossWeights::validate() const {
  for (double w : {adv, cyc, id, grad}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and >= 0");
  }
}

double generator_objective(const LossReport& parts, const LossWeights& w) {
  return weighted_generator_objective(parts.generator_terms(), w);
}

torch::Tensor adversarial_loss(const torch::Tensor& logits, bool target_real) {
  return target_real ? F::softplus(-logits).mean() : F::softplus(logits).mean();
}

torch::Tensor discriminator_objective(const torch::Tensor& real_logits, const torch::Tensor& fake_logits) {
  return 0.5 * (adversarial_loss(real_logits, true) + adversarial_loss(fake_logits, false));
}

torch::Tensor cycle_loss(const torch::Tensor& original, const torch::Tensor& reconstructed) {
  if (original.sizes() != reconstructed.sizes()) {
    throw ShapeError("cycle loss shape mismatch: " + shape_string(original) + " vs " + shape_string(reconstructed));
  }
  return (original - reconstructed).abs().mean();
}

torch::Tensor identity_loss(const TranslateFn& g, int64_t g_in_channels, const torch::Tensor& target) {
  if (target.dim() != 5) throw ShapeError("identity loss target must be (N, C, D, H, W)");
  const int64_t c = target.size(1);
  torch::Tensor input;
  if (g_in_channels == 1 && c == 3) {
    input = luminance(target);
  } else if (g_in_channels == 3 && c == 1) {
    input = replicate(target);
  } else {
    throw DataError("identity loss target with " + std::to_string(c) + " channel(s) is not in the output domain of a " +
                    std::to_string(g_in_channels) + "-channel-input generator");
  }
  return cycle_loss(target, g(input));
}

torch::Tensor identity_loss(Generator& g, const torch::Tensor& target) {
  return identity_loss([&g](const torch::Tensor& t) { return g->forward(t); }, g->config().in_channels, target);
}

torch::Tensor gradient_loss(const torch::Tensor& source, const torch::Tensor& translated) {
  if (source.dim() != 5 || translated.dim() != 5) throw ShapeError("gradient loss inputs must be (N, C, D, H, W)");
  for (int64_t d : {0, 2, 3, 4}) {
    if (source.size(d) != translated.size(d)) {
      throw ShapeError("gradient loss needs matching (N, D, H, W): " + shape_string(source) + " vs " +
                       shape_string(translated));
    }
  }
  if (source.size(3) < 2 || source.size(4) < 2) {
    throw ShapeError("gradient loss needs height and width >= 2, got " + shape_string(source));
  }
  auto s = to_luma(source);
  auto t = to_luma(translated);
  auto dh = [](const torch::Tensor& v) { return v.narrow(3, 1, v.size(3) - 1) - v.narrow(3, 0, v.size(3) - 1); };
  auto dw = [](const torch::Tensor& v) { return v.narrow(4, 1, v.size(4) - 1) - v.narrow(4, 0, v.size(4) - 1); };
  return (dh(s) - dh(t)).abs().mean() + (dw(s) - dw(t)).abs().mean();
}

double cycle_loss(const Volume& original, const Volume& reconstructed) {
  if (original.shape() != reconstructed.shape()) throw ShapeError("cycle loss volumes differ in shape");
  return cycle_loss(original.data().to(torch::kFloat64), reconstructed.data().to(torch::kFloat64)).item<double>();
}

double identity_loss(Generator& g, const Volume& target) {
  if (target.channels() != g->config().out_channels) {
    throw DataError("identity loss target is " + std::string(to_string(target.domain())) +
                    " but the generator outputs " + std::to_string(g->config().out_channels) + " channel(s)");
  }
  torch::NoGradGuard no_grad;
  auto dtype = g->parameters().front().scalar_type();
  return identity_loss(g, target.to_network().to(dtype)).item<double>();
}

double gradient_loss(const Volume& source, const Volume& translated) {
  return gradient_loss(source.to_network().to(torch::kFloat64), translated.to_network().to(torch::kFloat64))
      .item<double>();
}

std::string format_double(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

void write_loss_csv_header(std::ostream& out) {
  out << "iteration";
  for (const char* name : LossReport::kFieldNames) out << ',' << name;
  out << '\n';
}

void write_loss_csv_row(std::ostream& out, int64_t iteration, const LossReport& report) {
  out << iteration;
  for (double v : report.values()) out << ',' << format_double(v);
  out << '\n';
}

}  // namespace cg3d
