#include "cyclegan3d/config_json.hpp"

#include <fstream>
#include <set>
#include <string>

#include "cyclegan3d/error.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace cg3d {

namespace {

// Reads the known keys of one JSON object and rejects the rest.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string context) : j_(j), context_(std::move(context)) {
    if (!j.is_object()) throw ConfigError(context_ + ": expected a JSON object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      j_.at(key).get_to(out);
    } catch (const json::exception& e) {
      throw ConfigError(context_ + "." + key + ": " + e.what());
    }
  }

  template <class Enum, class Parse>
  void get_enum(const char* key, Enum& out, Parse parse) {
    std::string s;
    get(key, s);
    if (!s.empty()) out = parse(s);
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError(context_ + ": unknown key '" + item.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string context_;
  std::set<std::string> seen_;
};

}  // namespace

void to_json(json& j, const GeneratorConfig& c) {
  j = json{{"in_channels", c.in_channels},   {"out_channels", c.out_channels},
           {"n_downsampling", c.n_downsampling}, {"n_res_blocks", c.n_res_blocks},
           {"base_width", c.base_width},     {"arch", to_string(c.arch)},
           {"padding_mode", to_string(c.padding_mode)}, {"norm", to_string(c.norm)},
           {"norm_affine", c.norm_affine},   {"final_activation", c.final_activation}};
}

void from_json(const json& j, GeneratorConfig& c) {
  ObjectReader r(j, "generator");
  r.get("in_channels", c.in_channels);
  r.get("out_channels", c.out_channels);
  r.get("n_downsampling", c.n_downsampling);
  r.get("n_res_blocks", c.n_res_blocks);
  r.get("base_width", c.base_width);
  r.get_enum("arch", c.arch, parse_arch);
  r.get_enum("padding_mode", c.padding_mode, parse_padding);
  r.get_enum("norm", c.norm, parse_norm);
  r.get("norm_affine", c.norm_affine);
  r.get("final_activation", c.final_activation);
  r.finish();
}

void to_json(json& j, const DiscriminatorConfig& c) {
  j = json{{"in_channels", c.in_channels},       {"widths", c.widths},
           {"spatial_kernel", c.spatial_kernel}, {"spatial_strides", c.spatial_strides},
           {"depth_kernel", c.depth_kernel},     {"depth_stride", c.depth_stride},
           {"norm", to_string(c.norm)},          {"leaky_slope", c.leaky_slope}};
}

void from_json(const json& j, DiscriminatorConfig& c) {
  ObjectReader r(j, "discriminator");
  r.get("in_channels", c.in_channels);
  r.get("widths", c.widths);
  r.get("spatial_kernel", c.spatial_kernel);
  r.get("spatial_strides", c.spatial_strides);
  r.get("depth_kernel", c.depth_kernel);
  r.get("depth_stride", c.depth_stride);
  r.get_enum("norm", c.norm, parse_norm);
  r.get("leaky_slope", c.leaky_slope);
  r.finish();
}

void to_json(json& j, const LossWeights& c) {
  j = json{{"w_adv", c.adv}, {"w_cyc", c.cyc}, {"w_id", c.id}, {"w_grad", c.grad}};
}

void from_json(const json& j, LossWeights& c) {
  ObjectReader r(j, "loss_weights");
  r.get("w_adv", c.adv);
  r.get("w_cyc", c.cyc);
  r.get("w_id", c.id);
  r.get("w_grad", c.grad);
  r.finish();
}

void to_json(json& j, const AugmentationConfig& c) {
  j = json{{"flip_probability", c.flip_probability},
           {"zoom_range", {c.zoom_low, c.zoom_high}},
           {"pre_crop_size", c.pre_crop_size},
           {"crop_size", c.crop_size},
           {"seed", c.seed}};
}

void from_json(const json& j, AugmentationConfig& c) {
  ObjectReader r(j, "augmentation");
  r.get("flip_probability", c.flip_probability);
  std::vector<double> zoom{c.zoom_low, c.zoom_high};
  r.get("zoom_range", zoom);
  if (zoom.size() != 2) throw ConfigError("augmentation.zoom_range must have two entries");
  c.zoom_low = zoom[0];
  c.zoom_high = zoom[1];
  r.get("pre_crop_size", c.pre_crop_size);
  r.get("crop_size", c.crop_size);
  r.get("seed", c.seed);
  r.finish();
}

void to_json(json& j, const PhantomConfig& c) {
  j = json{{"volume_shape", {c.depth, c.height, c.width}},
           {"vessel_count", c.vessel_count},
           {"nucleus_density", c.nucleus_density},
           {"noise_sigma", c.noise_sigma},
           {"rng_seed", c.seed}};
}

void from_json(const json& j, PhantomConfig& c) {
  ObjectReader r(j, "phantom");
  std::vector<int64_t> shape{c.depth, c.height, c.width};
  r.get("volume_shape", shape);
  if (shape.size() != 3) throw ConfigError("phantom.volume_shape must be [depth, height, width]");
  c.depth = shape[0];
  c.height = shape[1];
  c.width = shape[2];
  r.get("vessel_count", c.vessel_count);
  r.get("nucleus_density", c.nucleus_density);
  r.get("noise_sigma", c.noise_sigma);
  r.get("rng_seed", c.seed);
  r.finish();
}

void to_json(json& j, const LrDecay& c) {
  j = json{{"enabled", c.enabled}, {"start_iteration", c.start_iteration}, {"end_iteration", c.end_iteration}};
}

void from_json(const json& j, LrDecay& c) {
  ObjectReader r(j, "lr_decay");
  r.get("enabled", c.enabled);
  r.get("start_iteration", c.start_iteration);
  r.get("end_iteration", c.end_iteration);
  r.finish();
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"learning_rate", c.learning_rate},
           {"adam_beta1", c.adam_beta1},
           {"adam_beta2", c.adam_beta2},
           {"adam_eps", c.adam_eps},
           {"batch_size", c.batch_size},
           {"epochs", c.epochs},
           {"max_iterations", c.max_iterations},
           {"pool_size", c.pool_size},
           {"loss_weights", c.loss_weights},
           {"generator_xy", c.generator_xy},
           {"generator_yx", c.generator_yx},
           {"discriminator_x", c.discriminator_x},
           {"discriminator_y", c.discriminator_y},
           {"augment", c.augment},
           {"augmentation", c.augmentation},
           {"lr_decay", c.lr_decay},
           {"seed", c.seed},
           {"checkpoint_every", c.checkpoint_every}};
}

void from_json(const json& j, TrainConfig& c) {
  ObjectReader r(j, "train");
  r.get("learning_rate", c.learning_rate);
  r.get("adam_beta1", c.adam_beta1);
  r.get("adam_beta2", c.adam_beta2);
  r.get("adam_eps", c.adam_eps);
  r.get("batch_size", c.batch_size);
  r.get("epochs", c.epochs);
  r.get("max_iterations", c.max_iterations);
  r.get("pool_size", c.pool_size);
  r.get("loss_weights", c.loss_weights);
  r.get("generator_xy", c.generator_xy);
  r.get("generator_yx", c.generator_yx);
  r.get("discriminator_x", c.discriminator_x);
  r.get("discriminator_y", c.discriminator_y);
  r.get("augment", c.augment);
  r.get("augmentation", c.augmentation);
  r.get("lr_decay", c.lr_decay);
  r.get("seed", c.seed);
  r.get("checkpoint_every", c.checkpoint_every);
  r.finish();
}

void to_json(json& j, const SamplerState& s) {
  j = json{{"rng", s.rng}, {"order", s.order}, {"position", s.position}, {"epoch", s.epoch}};
}

void from_json(const json& j, SamplerState& s) {
  ObjectReader r(j, "sampler");
  r.get("rng", s.rng);
  r.get("order", s.order);
  r.get("position", s.position);
  r.get("epoch", s.epoch);
  r.finish();
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open JSON file: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void write_json_file_atomic(const json& j, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << j.dump(2) << '\n';
    if (!out) throw DataError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace cg3d
