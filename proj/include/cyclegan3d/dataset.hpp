#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cyclegan3d/rng.hpp"
#include "cyclegan3d/volume.hpp"

namespace cg3d {

/// Two independent volume collections: X is grayscale (OCT-like), Y is RGB
/// (confocal-like). Nothing pairs x[i] with y[i].
struct UnpairedDataset {
  std::vector<Volume> x;
  std::vector<Volume> y;
  std::vector<std::string> x_names;
  std::vector<std::string> y_names;

  /// Both domains non-empty, X all single-channel, Y all RGB.
  void validate_for_training() const;
};

enum class Split { Train, Test };

/// Reads `root/{train,test}X/<volume>` and `root/{train,test}Y/<volume>`;
/// each `<volume>` is a PNG-slice directory or a TIFF file, visited in
/// lexicographic order. Missing domain directories yield empty lists.
UnpairedDataset load_dataset(const std::filesystem::path& root, Split split);

/// Lists the volume entries (sub-directories or TIFF files) of a directory.
std::vector<std::filesystem::path> list_volume_entries(const std::filesystem::path& dir);

struct SamplerState {
  std::string rng;
  std::vector<uint64_t> order;
  uint64_t position = 0;
  uint64_t epoch = 0;
};

/// Draws (x index, y index) pairs. X indices follow a fresh random
/// permutation each epoch so every X element appears once per epoch; Y
/// indices are drawn uniformly and independently.
class UnpairedSampler {
 public:
  UnpairedSampler(uint64_t size_x, uint64_t size_y, Rng rng);

  std::pair<uint64_t, uint64_t> next();

  uint64_t epoch() const { return epoch_; }
  uint64_t size_x() const { return size_x_; }
  uint64_t size_y() const { return size_y_; }

  SamplerState state() const;
  void restore(const SamplerState& state);

 private:
  void reshuffle();

  uint64_t size_x_;
  uint64_t size_y_;
  Rng rng_;
  std::vector<uint64_t> order_;
  uint64_t position_ = 0;
  uint64_t epoch_ = 0;
};

/// One unpaired draw from the dataset.
std::pair<Volume, Volume> sample_unpaired(const UnpairedDataset& ds, UnpairedSampler& sampler);

}  // namespace cg3d
