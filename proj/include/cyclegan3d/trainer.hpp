#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/types.h>

#include "cyclegan3d/adam.hpp"
#include "cyclegan3d/augment.hpp"
#include "cyclegan3d/dataset.hpp"
#include "cyclegan3d/image_pool.hpp"
#include "cyclegan3d/losses.hpp"
#include "cyclegan3d/nets.hpp"

namespace cg3d {

/// Optional linear decay of the learning rate to zero between two iterations.
struct LrDecay {
  bool enabled = false;
  int64_t start_iteration = 0;
  int64_t end_iteration = 0;
  bool operator==(const LrDecay&) const = default;
};

struct TrainConfig {
  double learning_rate = 2e-5;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int64_t batch_size = 1;
  int64_t epochs = 1;
  // When > 0 overrides epochs * iterations_per_epoch.
  int64_t max_iterations = 0;
  int64_t pool_size = 50;
  LossWeights loss_weights;
  GeneratorConfig generator_xy{};
  GeneratorConfig generator_yx = GeneratorConfig{}.mirrored();
  DiscriminatorConfig discriminator_x = [] {
    DiscriminatorConfig d;
    d.in_channels = 1;
    return d;
  }();
  DiscriminatorConfig discriminator_y{};
  bool augment = true;
  AugmentationConfig augmentation;
  LrDecay lr_decay;
  uint64_t seed = 0;
  int64_t checkpoint_every = 0;

  void validate() const;
  double learning_rate_at(int64_t iteration) const;
  /// Architecture-only comparison used when resuming.
  bool same_architecture(const TrainConfig& other) const;
  bool operator==(const TrainConfig&) const = default;
};

/// Self-describing training state: a JSON header plus named float32 tensors.
struct CheckpointBundle {
  nlohmann::json header;
  std::vector<std::pair<std::string, torch::Tensor>> tensors;

  const torch::Tensor& tensor(const std::string& name) const;
  TrainConfig train_config() const;
  int64_t iteration() const;
};

/// Binary layout: 8-byte magic "CG3DCKPT", uint32 version, uint64 header
/// length, the UTF-8 JSON header, then every tensor's little-endian float32
/// data in header order. Deterministic: save(load(f)) reproduces f byte for byte.
void save_checkpoint(const CheckpointBundle& bundle, const std::filesystem::path& path);
CheckpointBundle load_checkpoint(const std::filesystem::path& path);
std::string serialize_checkpoint(const CheckpointBundle& bundle);
CheckpointBundle deserialize_checkpoint(const std::string& bytes);

enum class Direction { XtoY, YtoX };
Direction parse_direction(const std::string& s);

/// G: X -> Y, F: Y -> X and their discriminators with optimizers, pools and
/// sampler. Single-threaded over model state.
class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);

  /// Restores every piece of state. When `expected` is given its
  /// architecture must match the checkpoint's.
  static Trainer from_checkpoint(const CheckpointBundle& bundle, const std::optional<TrainConfig>& expected = {});

  /// One CycleGAN update on an (N, 1, D, H, W) X batch and an (N, 3, D, H, W)
  /// Y batch: G and F jointly, then D_Y, then D_X.
  LossReport train_step(const torch::Tensor& x, const torch::Tensor& y);
  LossReport train_step(const Volume& x, const Volume& y);

  /// Draws the next unpaired batch (augmented per config) and steps.
  LossReport train_next(const UnpairedDataset& ds);
  /// The batch `train_next` would use for the given draw; deterministic in
  /// (seed, iteration), independent of worker scheduling.
  std::pair<torch::Tensor, torch::Tensor> prepare_batch(const UnpairedDataset& ds,
                                                        const std::vector<std::pair<uint64_t, uint64_t>>& draws,
                                                        int64_t iteration) const;
  std::vector<std::pair<uint64_t, uint64_t>> draw_indices(const UnpairedDataset& ds);

  CheckpointBundle checkpoint() const;

  /// Called inside train_step after each update ("generators", "d_y", "d_x").
  void set_phase_hook(std::function<void(const std::string& phase)> hook) { phase_hook_ = std::move(hook); }

  int64_t iteration() const { return iteration_; }
  const TrainConfig& config() const { return cfg_; }
  Generator& g() { return g_; }
  Generator& f() { return f_; }
  Discriminator& d_x() { return d_x_; }
  Discriminator& d_y() { return d_y_; }
  const ImagePool& pool_x() const { return pool_x_; }
  const ImagePool& pool_y() const { return pool_y_; }

 private:
  TrainConfig cfg_;
  Generator g_{nullptr};
  Generator f_{nullptr};
  Discriminator d_x_{nullptr};
  Discriminator d_y_{nullptr};
  std::unique_ptr<Adam> opt_gen_;
  std::unique_ptr<Adam> opt_d_x_;
  std::unique_ptr<Adam> opt_d_y_;
  ImagePool pool_x_;
  ImagePool pool_y_;
  std::optional<UnpairedSampler> sampler_;
  int64_t iteration_ = 0;
  std::function<void(const std::string&)> phase_hook_;
};

struct TrainRunOptions {
  /// Checkpoints (`checkpoint_########.ckpt`, `final.ckpt`) and
  /// `train_log.csv` go here when set.
  std::optional<std::filesystem::path> out_dir;
  /// Continue from this state instead of initializing.
  std::optional<CheckpointBundle> resume;
  /// > 1 prepares the next batch concurrently; results do not change.
  int workers = 1;
  std::function<void(int64_t iteration, const LossReport&)> on_iteration;
};

/// Total iterations implied by the config for a dataset of `size_x` X volumes.
int64_t planned_iterations(const TrainConfig& cfg, uint64_t size_x);

CheckpointBundle train(const TrainConfig& cfg, const UnpairedDataset& ds, const TrainRunOptions& options = {});

/// Runs G (XtoY) or F (YtoX) from a checkpoint on one volume.
Volume translate(const CheckpointBundle& ckpt, const Volume& v, Direction direction);

/// Rebuilds G (XtoY) or F (YtoX) from a checkpoint, in evaluation mode.
Generator load_generator(const CheckpointBundle& ckpt, Direction direction);

}  // namespace cg3d
