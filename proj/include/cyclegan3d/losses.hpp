#pragma once

#include <array>
#include <functional>
#include <iosfwd>
#include <string>

#include <torch/types.h>

#include "cyclegan3d/nets.hpp"
#include "cyclegan3d/volume.hpp"

namespace cg3d {

struct LossWeights {
  double adv = 1.0;
  double cyc = 10.0;
  double id = 5.0;
  double grad = 1.0;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

/// The eight generator-side terms; T is double for reports, torch::Tensor
/// during training.
template <class T>
struct GeneratorTerms {
  T adv_g, adv_f, cyc_x, cyc_y, id_g, id_f, grad_g, grad_f;
};

template <class T>
T weighted_generator_objective(const GeneratorTerms<T>& t, const LossWeights& w) {
  return (t.adv_g + t.adv_f) * w.adv + (t.cyc_x + t.cyc_y) * w.cyc + (t.id_g + t.id_f) * w.id +
         (t.grad_g + t.grad_f) * w.grad;
}

struct LossReport {
  double adv_g = 0, adv_f = 0, cyc_x = 0, cyc_y = 0, id_g = 0, id_f = 0, grad_g = 0, grad_f = 0, d_x = 0, d_y = 0;

  static constexpr std::array<const char*, 10> kFieldNames{"adv_g", "adv_f", "cyc_x",  "cyc_y", "id_g",
                                                          "id_f",  "grad_g", "grad_f", "d_x",   "d_y"};
  std::array<double, 10> values() const { return {adv_g, adv_f, cyc_x, cyc_y, id_g, id_f, grad_g, grad_f, d_x, d_y}; }
  GeneratorTerms<double> generator_terms() const { return {adv_g, adv_f, cyc_x, cyc_y, id_g, id_f, grad_g, grad_f}; }
  bool operator==(const LossReport&) const = default;
};

double generator_objective(const LossReport& parts, const LossWeights& w);

/// Mean BCE between sigmoid(logits) and the all-real / all-fake target,
/// computed from raw logits as softplus(-z) or softplus(z).
torch::Tensor adversarial_loss(const torch::Tensor& logits, bool target_real);

/// 0.5 * (BCE(real_logits, real) + BCE(fake_logits, fake)).
torch::Tensor discriminator_objective(const torch::Tensor& real_logits, const torch::Tensor& fake_logits);

/// Mean absolute difference; shapes must match.
torch::Tensor cycle_loss(const torch::Tensor& original, const torch::Tensor& reconstructed);

/// Any (N, C, D, H, W) -> (N, C', D, H, W) mapping, e.g. a generator.
using TranslateFn = std::function<torch::Tensor(const torch::Tensor&)>;

/// L1(g(adapt(target)), target) where `target` lies in g's output domain and
/// adapt bridges the channel counts: luminance for 3 -> 1 channel inputs,
/// replication for 1 -> 3.
torch::Tensor identity_loss(const TranslateFn& g, int64_t g_in_channels, const torch::Tensor& target);
torch::Tensor identity_loss(Generator& g, const torch::Tensor& target);

/// Compares forward differences along H and W of the luminance of both
/// volumes: mean|dh s - dh t| + mean|dw s - dw t|. Channels may differ.
torch::Tensor gradient_loss(const torch::Tensor& source, const torch::Tensor& translated);

// Volume-level forms.
double cycle_loss(const Volume& original, const Volume& reconstructed);
double identity_loss(Generator& g, const Volume& target);
double gradient_loss(const Volume& source, const Volume& translated);

/// CSV training log: "iteration,adv_g,...,d_y" with shortest round-trip
/// decimal formatting, so equal logs mean bit-identical losses.
void write_loss_csv_header(std::ostream& out);
void write_loss_csv_row(std::ostream& out, int64_t iteration, const LossReport& report);
std::string format_double(double value);

}  // namespace cg3d
