#include "cyclegan3d/dataset.hpp"

#include <algorithm>
#include <numeric>

#include "cyclegan3d/error.hpp"
#include "cyclegan3d/volume_io.hpp"

namespace fs = std::filesystem;

namespace cg3d {

void UnpairedDataset::validate_for_training() const {
  if (x.empty()) throw DataError("dataset domain X is empty");
  if (y.empty()) throw DataError("dataset domain Y is empty");
  for (size_t i = 0; i < x.size(); ++i) {
    if (x[i].channels() != 1) throw DataError("X volume " + std::to_string(i) + " is not single-channel");
  }
  for (size_t i = 0; i < y.size(); ++i) {
    if (y[i].channels() != 3) throw DataError("Y volume " + std::to_string(i) + " is not RGB");
  }
}

std::vector<fs::path> list_volume_entries(const fs::path& dir) {
  std::vector<fs::path> entries;
  if (!fs::is_directory(dir)) return entries;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory() || (entry.is_regular_file() && is_tiff_path(entry.path()))) {
      entries.push_back(entry.path());
    }
  }
  std::sort(entries.begin(), entries.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
  return entries;
}

UnpairedDataset load_dataset(const fs::path& root, Split split) {
  if (!fs::is_directory(root)) throw DataError("dataset root does not exist: " + root.string());
  const std::string prefix = split == Split::Train ? "train" : "test";
  UnpairedDataset ds;
  for (const auto& entry : list_volume_entries(root / (prefix + "X"))) {
    ds.x.push_back(load_volume(entry, Domain::OctLike));
    ds.x_names.push_back(entry.filename().string());
  }
  for (const auto& entry : list_volume_entries(root / (prefix + "Y"))) {
    ds.y.push_back(load_volume(entry, Domain::ConfocalLike));
    ds.y_names.push_back(entry.filename().string());
  }
  return ds;
}

UnpairedSampler::UnpairedSampler(uint64_t size_x, uint64_t size_y, Rng rng)
    : size_x_(size_x), size_y_(size_y), rng_(std::move(rng)) {
  if (size_x == 0) throw DataError("cannot sample from an empty X domain");
  if (size_y == 0) throw DataError("cannot sample from an empty Y domain");
  reshuffle();
}

void UnpairedSampler::reshuffle() {
  order_.resize(size_x_);
  std::iota(order_.begin(), order_.end(), uint64_t{0});
  // Fisher-Yates with our own index draw keeps the order library-independent.
  for (uint64_t i = size_x_; i > 1; --i) std::swap(order_[i - 1], order_[uniform_index(rng_, i)]);
  position_ = 0;
}

std::pair<uint64_t, uint64_t> UnpairedSampler::next() {
  if (position_ == order_.size()) {
    ++epoch_;
    reshuffle();
  }
  const uint64_t xi = order_[position_++];
  const uint64_t yi = uniform_index(rng_, size_y_);
  return {xi, yi};
}

SamplerState UnpairedSampler::state() const { return {serialize_rng(rng_), order_, position_, epoch_}; }

void UnpairedSampler::restore(const SamplerState& state) {
  if (state.order.size() != size_x_ || state.position > state.order.size()) {
    throw ConfigError("sampler state does not match the dataset size");
  }
  rng_ = deserialize_rng(state.rng);
  order_ = state.order;
  position_ = state.position;
  epoch_ = state.epoch;
}

std::pair<Volume, Volume> sample_unpaired(const UnpairedDataset& ds, UnpairedSampler& sampler) {
  if (ds.x.empty() || ds.y.empty()) throw DataError("cannot sample from an empty dataset");
  if (sampler.size_x() != ds.x.size() || sampler.size_y() != ds.y.size()) {
    throw ConfigError("sampler was built for a different dataset size");
  }
  auto [xi, yi] = sampler.next();
  return {ds.x[xi], ds.y[yi]};
}

}  // namespace cg3d
