#include "cyclegan3d/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <future>
#include <sstream>

#include <torch/torch.h>

#include "cyclegan3d/config_json.hpp"
#include "cyclegan3d/error.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace cg3d {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'G', '3', 'D', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

// Stream tags; each source of randomness gets its own stream from the seed.
enum : uint64_t { kTagInit = 1, kTagPool = 2, kTagSampler = 3, kTagAugment = 4 };

uint64_t init_seed(uint64_t seed, uint64_t net) { return make_stream(seed, {kTagInit, net})(); }

std::vector<std::pair<std::string, torch::Tensor>> prefixed_params(const torch::nn::Module& m,
                                                                   const std::string& prefix) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : m.named_parameters()) out.emplace_back(prefix + item.key(), item.value());
  return out;
}

void set_requires_grad(torch::nn::Module& m, bool flag) {
  for (auto& p : m.parameters()) p.set_requires_grad(flag);
}

void copy_params(torch::nn::Module& m, const std::string& prefix, const CheckpointBundle& bundle) {
  torch::NoGradGuard no_grad;
  for (auto& item : m.named_parameters()) {
    const auto& src = bundle.tensor(prefix + item.key());
    if (src.sizes() != item.value().sizes()) throw ConfigError("checkpoint tensor shape mismatch: " + prefix + item.key());
    item.value().copy_(src);
  }
}

double checked_value(const torch::Tensor& t, const char* name) {
  const double v = t.item<double>();
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite loss term ") + name);
  return v;
}

std::string shape_string(const torch::Tensor& t) {
  std::ostringstream s;
  s << t.sizes();
  return s.str();
}

void put_u32(std::string& out, uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::string& out, uint64_t v) { out.append(reinterpret_cast<const char*>(&v), 8); }

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0)) throw ConfigError("adam_eps must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (max_iterations < 0) throw ConfigError("max_iterations must be >= 0");
  if (pool_size < 0) throw ConfigError("pool_size must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  loss_weights.validate();
  generator_xy.validate();
  generator_yx.validate();
  discriminator_x.validate();
  discriminator_y.validate();
  augmentation.validate();
  if (generator_xy.in_channels != 1 || generator_xy.out_channels != 3) {
    throw ConfigError("generator_xy must map 1 channel to 3");
  }
  if (generator_yx.in_channels != 3 || generator_yx.out_channels != 1) {
    throw ConfigError("generator_yx must map 3 channels to 1");
  }
  if (discriminator_x.in_channels != 1) throw ConfigError("discriminator_x must take 1 channel");
  if (discriminator_y.in_channels != 3) throw ConfigError("discriminator_y must take 3 channels");
  if (lr_decay.enabled && lr_decay.end_iteration <= lr_decay.start_iteration) {
    throw ConfigError("lr_decay.end_iteration must exceed start_iteration");
  }
}

double TrainConfig::learning_rate_at(int64_t iteration) const {
  if (!lr_decay.enabled || iteration < lr_decay.start_iteration) return learning_rate;
  const double span = static_cast<double>(lr_decay.end_iteration - lr_decay.start_iteration);
  const double done = static_cast<double>(iteration - lr_decay.start_iteration) / span;
  return learning_rate * std::max(0.0, 1.0 - done);
}

bool TrainConfig::same_architecture(const TrainConfig& other) const {
  return generator_xy == other.generator_xy && generator_yx == other.generator_yx &&
         discriminator_x == other.discriminator_x && discriminator_y == other.discriminator_y;
}

const torch::Tensor& CheckpointBundle::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw ConfigError("checkpoint has no tensor '" + name + "'");
}

TrainConfig CheckpointBundle::train_config() const {
  if (!header.contains("train_config")) throw ConfigError("checkpoint header lacks train_config");
  TrainConfig cfg = header.at("train_config").get<TrainConfig>();
  cfg.validate();
  return cfg;
}

int64_t CheckpointBundle::iteration() const { return header.value("iteration", int64_t{0}); }

std::string serialize_checkpoint(const CheckpointBundle& bundle) {
  json header = bundle.header;
  json entries = json::array();
  for (const auto& [name, t] : bundle.tensors) entries.push_back({{"name", name}, {"shape", t.sizes().vec()}});
  header["tensors"] = entries;
  const std::string text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put_u32(out, kVersion);
  put_u64(out, text.size());
  out += text;
  for (const auto& [name, t] : bundle.tensors) {
    auto c = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    out.append(static_cast<const char*>(c.data_ptr()), static_cast<size_t>(c.numel()) * sizeof(float));
  }
  return out;
}

CheckpointBundle deserialize_checkpoint(const std::string& bytes) {
  constexpr size_t kPrefix = sizeof(kMagic) + 4 + 8;
  if (bytes.size() < kPrefix || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not a checkpoint file (bad magic)");
  }
  uint32_t version = 0;
  uint64_t header_len = 0;
  std::memcpy(&version, bytes.data() + 8, 4);
  std::memcpy(&header_len, bytes.data() + 12, 8);
  if (version != kVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  if (header_len > bytes.size() - kPrefix) throw DataError("truncated checkpoint header");

  CheckpointBundle bundle;
  try {
    bundle.header = json::parse(bytes.substr(kPrefix, header_len));
  } catch (const json::parse_error& e) {
    throw DataError(std::string("corrupt checkpoint header: ") + e.what());
  }
  size_t offset = kPrefix + header_len;
  for (const auto& entry : bundle.header.at("tensors")) {
    auto shape = entry.at("shape").get<std::vector<int64_t>>();
    auto t = torch::empty(shape, torch::kFloat32);
    const size_t n = static_cast<size_t>(t.numel()) * sizeof(float);
    if (offset + n > bytes.size()) throw DataError("truncated checkpoint data");
    std::memcpy(t.data_ptr(), bytes.data() + offset, n);
    offset += n;
    bundle.tensors.emplace_back(entry.at("name").get<std::string>(), t);
  }
  if (offset != bytes.size()) throw DataError("trailing bytes after checkpoint data");
  bundle.header.erase("tensors");
  return bundle;
}

void save_checkpoint(const CheckpointBundle& bundle, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    const auto bytes = serialize_checkpoint(bundle);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

CheckpointBundle load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str());
}

Direction parse_direction(const std::string& s) {
  if (s == "x2y" || s == "XtoY") return Direction::XtoY;
  if (s == "y2x" || s == "YtoX") return Direction::YtoX;
  throw ConfigError("unknown direction '" + s + "' (expected x2y or y2x)");
}

Trainer::Trainer(TrainConfig cfg)
    : cfg_((cfg.validate(), std::move(cfg))),
      pool_x_(cfg_.pool_size, make_stream(cfg_.seed, {kTagPool, 0})),
      pool_y_(cfg_.pool_size, make_stream(cfg_.seed, {kTagPool, 1})) {
  g_ = build_generator(cfg_.generator_xy, init_seed(cfg_.seed, 0));
  f_ = build_generator(cfg_.generator_yx, init_seed(cfg_.seed, 1));
  d_x_ = build_discriminator(cfg_.discriminator_x, init_seed(cfg_.seed, 2));
  d_y_ = build_discriminator(cfg_.discriminator_y, init_seed(cfg_.seed, 3));
  const AdamOptions opts{cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps};
  auto gen_params = prefixed_params(*g_, "G/");
  auto f_params = prefixed_params(*f_, "F/");
  gen_params.insert(gen_params.end(), f_params.begin(), f_params.end());
  opt_gen_ = std::make_unique<Adam>(std::move(gen_params), opts);
  opt_d_x_ = std::make_unique<Adam>(prefixed_params(*d_x_, "D_X/"), opts);
  opt_d_y_ = std::make_unique<Adam>(prefixed_params(*d_y_, "D_Y/"), opts);
}

LossReport Trainer::train_step(const torch::Tensor& x, const torch::Tensor& y) {
  if (x.dim() != 5 || y.dim() != 5 || x.size(1) != 1 || y.size(1) != 3) {
    throw DataError("train_step needs x (N, 1, D, H, W) and y (N, 3, D, H, W), got " + shape_string(x) + " and " +
                    shape_string(y));
  }
  if (x.size(0) != y.size(0)) throw ShapeError("x and y batches differ in size");
  const auto& w = cfg_.loss_weights;
  const double lr = cfg_.learning_rate_at(iteration_);
  LossReport r;

  // Generators. Discriminator parameters are frozen so no gradient reaches them.
  set_requires_grad(*d_x_, false);
  set_requires_grad(*d_y_, false);
  opt_gen_->zero_grad();
  auto fake_y = g_->forward(x);
  auto fake_x = f_->forward(y);
  GeneratorTerms<torch::Tensor> t;
  {
    // Zero-weighted adversarial/identity terms are still reported but need no graph.
    std::optional<torch::NoGradGuard> guard;
    if (w.adv == 0) guard.emplace();
    t.adv_g = adversarial_loss(d_y_->forward(fake_y), true);
    t.adv_f = adversarial_loss(d_x_->forward(fake_x), true);
  }
  t.cyc_x = cycle_loss(x, f_->forward(fake_y));
  t.cyc_y = cycle_loss(y, g_->forward(fake_x));
  {
    std::optional<torch::NoGradGuard> guard;
    if (w.id == 0) guard.emplace();
    t.id_g = identity_loss(g_, y);
    t.id_f = identity_loss(f_, x);
  }
  t.grad_g = gradient_loss(x, fake_y);
  t.grad_f = gradient_loss(y, fake_x);

  r.adv_g = checked_value(t.adv_g, "adv_g");
  r.adv_f = checked_value(t.adv_f, "adv_f");
  r.cyc_x = checked_value(t.cyc_x, "cyc_x");
  r.cyc_y = checked_value(t.cyc_y, "cyc_y");
  r.id_g = checked_value(t.id_g, "id_g");
  r.id_f = checked_value(t.id_f, "id_f");
  r.grad_g = checked_value(t.grad_g, "grad_g");
  r.grad_f = checked_value(t.grad_f, "grad_f");

  auto objective = weighted_generator_objective(t, w);
  if (objective.requires_grad()) objective.backward();
  opt_gen_->step(lr);
  set_requires_grad(*d_x_, true);
  set_requires_grad(*d_y_, true);
  if (phase_hook_) phase_hook_("generators");

  auto step_discriminator = [&](Discriminator& d, Adam& opt, ImagePool& pool, const torch::Tensor& real,
                                const torch::Tensor& fake, const char* name) {
    auto replay = pool.query(fake);
    opt.zero_grad();
    auto loss = discriminator_objective(d->forward(real), d->forward(replay));
    const double value = checked_value(loss, name);
    loss.backward();
    opt.step(lr);
    if (phase_hook_) phase_hook_(name);
    return value;
  };
  r.d_y = step_discriminator(d_y_, *opt_d_y_, pool_y_, y, fake_y.detach(), "d_y");
  r.d_x = step_discriminator(d_x_, *opt_d_x_, pool_x_, x, fake_x.detach(), "d_x");

  ++iteration_;
  return r;
}

LossReport Trainer::train_step(const Volume& x, const Volume& y) {
  if (x.domain() != Domain::OctLike || y.domain() != Domain::ConfocalLike) {
    throw DataError("train_step needs an OCT-like x and a confocal-like y");
  }
  return train_step(x.to_network(), y.to_network());
}

std::vector<std::pair<uint64_t, uint64_t>> Trainer::draw_indices(const UnpairedDataset& ds) {
  if (!sampler_) {
    sampler_.emplace(ds.x.size(), ds.y.size(), make_stream(cfg_.seed, {kTagSampler}));
  } else if (sampler_->size_x() != ds.x.size() || sampler_->size_y() != ds.y.size()) {
    throw DataError("dataset size differs from the one this trainer was sampling");
  }
  std::vector<std::pair<uint64_t, uint64_t>> draws;
  for (int64_t i = 0; i < cfg_.batch_size; ++i) draws.push_back(sampler_->next());
  return draws;
}

std::pair<torch::Tensor, torch::Tensor> Trainer::prepare_batch(
    const UnpairedDataset& ds, const std::vector<std::pair<uint64_t, uint64_t>>& draws, int64_t iteration) const {
  std::vector<torch::Tensor> xs, ys;
  for (size_t s = 0; s < draws.size(); ++s) {
    const Volume* x = &ds.x.at(draws[s].first);
    const Volume* y = &ds.y.at(draws[s].second);
    std::optional<Volume> ax, ay;
    if (cfg_.augment) {
      const auto it = static_cast<uint64_t>(iteration);
      auto rx = make_stream(cfg_.augmentation.seed, {cfg_.seed, kTagAugment, it, s, 0});
      auto ry = make_stream(cfg_.augmentation.seed, {cfg_.seed, kTagAugment, it, s, 1});
      ax.emplace(augment(*x, cfg_.augmentation, rx));
      ay.emplace(augment(*y, cfg_.augmentation, ry));
      x = &*ax;
      y = &*ay;
    }
    xs.push_back(x->to_network());
    ys.push_back(y->to_network());
  }
  for (size_t s = 1; s < xs.size(); ++s) {
    if (xs[s].sizes() != xs[0].sizes() || ys[s].sizes() != ys[0].sizes()) {
      throw ShapeError("volumes in one batch must share their shape; enable augmentation or use batch_size 1");
    }
  }
  return {torch::cat(xs, 0), torch::cat(ys, 0)};
}

LossReport Trainer::train_next(const UnpairedDataset& ds) {
  auto draws = draw_indices(ds);
  auto [x, y] = prepare_batch(ds, draws, iteration_);
  return train_step(x, y);
}

CheckpointBundle Trainer::checkpoint() const {
  CheckpointBundle b;
  b.header["format"] = "cyclegan3d-checkpoint";
  b.header["iteration"] = iteration_;
  b.header["train_config"] = cfg_;

  auto add_module = [&](const torch::nn::Module& m, const std::string& prefix) {
    for (auto& [name, t] : prefixed_params(m, prefix)) b.tensors.emplace_back(name, t.detach().clone());
  };
  add_module(*g_, "G/");
  add_module(*f_, "F/");
  add_module(*d_x_, "D_X/");
  add_module(*d_y_, "D_Y/");

  auto add_optimizer = [&](const Adam& opt, const std::string& key) {
    b.header["optimizers"][key] = {{"step", opt.step_count()}};
    for (size_t i = 0; i < opt.params().size(); ++i) {
      b.tensors.emplace_back("adam." + key + ".m/" + opt.params()[i].first, opt.exp_avg()[i].clone());
      b.tensors.emplace_back("adam." + key + ".v/" + opt.params()[i].first, opt.exp_avg_sq()[i].clone());
    }
  };
  add_optimizer(*opt_gen_, "gen");
  add_optimizer(*opt_d_x_, "d_x");
  add_optimizer(*opt_d_y_, "d_y");

  auto add_pool = [&](const ImagePool& pool, const std::string& key) {
    b.header["pools"][key] = {{"rng", serialize_rng(pool.rng())}, {"size", pool.size()}};
    for (int64_t i = 0; i < pool.size(); ++i) {
      b.tensors.emplace_back("pool." + key + "/" + std::to_string(i), pool.stored()[static_cast<size_t>(i)].clone());
    }
  };
  add_pool(pool_x_, "x");
  add_pool(pool_y_, "y");

  if (sampler_) {
    b.header["sampler"] = {{"size_x", sampler_->size_x()}, {"size_y", sampler_->size_y()}, {"state", sampler_->state()}};
  } else {
    b.header["sampler"] = nullptr;
  }
  return b;
}

Trainer Trainer::from_checkpoint(const CheckpointBundle& bundle, const std::optional<TrainConfig>& expected) {
  TrainConfig stored = bundle.train_config();
  if (expected) {
    if (!expected->same_architecture(stored)) {
      throw ConfigError("checkpoint architecture does not match the requested configuration");
    }
    if (expected->pool_size != stored.pool_size) throw ConfigError("checkpoint pool_size does not match");
  }
  Trainer t(expected ? *expected : stored);
  copy_params(*t.g_, "G/", bundle);
  copy_params(*t.f_, "F/", bundle);
  copy_params(*t.d_x_, "D_X/", bundle);
  copy_params(*t.d_y_, "D_Y/", bundle);

  auto restore_optimizer = [&](Adam& opt, const std::string& key) {
    std::vector<torch::Tensor> m, v;
    for (const auto& [name, p] : opt.params()) {
      m.push_back(bundle.tensor("adam." + key + ".m/" + name).clone());
      v.push_back(bundle.tensor("adam." + key + ".v/" + name).clone());
    }
    opt.restore(bundle.header.at("optimizers").at(key).at("step").get<int64_t>(), std::move(m), std::move(v));
  };
  restore_optimizer(*t.opt_gen_, "gen");
  restore_optimizer(*t.opt_d_x_, "d_x");
  restore_optimizer(*t.opt_d_y_, "d_y");

  auto restore_pool = [&](ImagePool& pool, const std::string& key) {
    const auto& h = bundle.header.at("pools").at(key);
    std::vector<torch::Tensor> stored_tensors;
    for (int64_t i = 0; i < h.at("size").get<int64_t>(); ++i) {
      stored_tensors.push_back(bundle.tensor("pool." + key + "/" + std::to_string(i)).clone());
    }
    pool.restore(std::move(stored_tensors), deserialize_rng(h.at("rng").get<std::string>()));
  };
  restore_pool(t.pool_x_, "x");
  restore_pool(t.pool_y_, "y");

  const auto& s = bundle.header.value("sampler", json());
  if (!s.is_null()) {
    t.sampler_.emplace(s.at("size_x").get<uint64_t>(), s.at("size_y").get<uint64_t>(), Rng{});
    t.sampler_->restore(s.at("state").get<SamplerState>());
  }
  t.iteration_ = bundle.iteration();
  return t;
}

int64_t planned_iterations(const TrainConfig& cfg, uint64_t size_x) {
  if (cfg.max_iterations > 0) return cfg.max_iterations;
  const auto per_epoch = static_cast<int64_t>((size_x + static_cast<uint64_t>(cfg.batch_size) - 1) /
                                              static_cast<uint64_t>(cfg.batch_size));
  return cfg.epochs * per_epoch;
}

CheckpointBundle train(const TrainConfig& cfg, const UnpairedDataset& ds, const TrainRunOptions& options) {
  cfg.validate();
  ds.validate_for_training();
  Trainer trainer = options.resume ? Trainer::from_checkpoint(*options.resume, cfg) : Trainer(cfg);
  const int64_t total = planned_iterations(cfg, ds.x.size());

  std::ofstream log;
  if (options.out_dir) {
    fs::create_directories(*options.out_dir);
    const auto log_path = *options.out_dir / "train_log.csv";
    // On resume keep the rows that precede the restored iteration.
    std::vector<std::string> kept;
    if (options.resume && fs::exists(log_path)) {
      std::ifstream in(log_path);
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        if (!line.empty() && std::stoll(line.substr(0, line.find(','))) < trainer.iteration()) kept.push_back(line);
      }
    }
    log.open(log_path, std::ios::trunc);
    if (!log) throw DataError("cannot write " + log_path.string());
    write_loss_csv_header(log);
    for (const auto& line : kept) log << line << '\n';
  }

  // With workers > 1 the next batch is prepared while the current step runs.
  // Prefetching draws from the sampler early, so it pauses at checkpoint
  // boundaries to keep the saved sampler state exact.
  using Batch = std::pair<torch::Tensor, torch::Tensor>;
  const bool prefetch = options.workers > 1;
  auto launch = [&](int64_t iteration) {
    auto draws = trainer.draw_indices(ds);
    return std::async(std::launch::async,
                      [&trainer, &ds, draws, iteration] { return trainer.prepare_batch(ds, draws, iteration); });
  };
  std::future<Batch> next;
  while (trainer.iteration() < total) {
    const int64_t it = trainer.iteration();
    Batch batch = next.valid() ? next.get() : trainer.prepare_batch(ds, trainer.draw_indices(ds), it);
    const bool boundary = cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0;
    if (prefetch && it + 1 < total && !boundary) next = launch(it + 1);
    const LossReport report = trainer.train_step(batch.first, batch.second);
    if (log.is_open()) {
      write_loss_csv_row(log, it, report);
      log.flush();
    }
    if (options.on_iteration) options.on_iteration(it, report);
    if (options.out_dir && cfg.checkpoint_every > 0 && trainer.iteration() % cfg.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_%08lld.ckpt", static_cast<long long>(trainer.iteration()));
      save_checkpoint(trainer.checkpoint(), *options.out_dir / name);
    }
  }
  auto bundle = trainer.checkpoint();
  if (options.out_dir) save_checkpoint(bundle, *options.out_dir / "final.ckpt");
  return bundle;
}

Generator load_generator(const CheckpointBundle& ckpt, Direction direction) {
  const TrainConfig cfg = ckpt.train_config();
  const bool xy = direction == Direction::XtoY;
  Generator g(xy ? cfg.generator_xy : cfg.generator_yx);
  copy_params(*g, xy ? "G/" : "F/", ckpt);
  g->eval();
  return g;
}

Volume translate(const CheckpointBundle& ckpt, const Volume& v, Direction direction) {
  const int64_t expected = direction == Direction::XtoY ? 1 : 3;
  if (v.channels() != expected) {
    throw DataError(std::string("translate ") + (direction == Direction::XtoY ? "x2y" : "y2x") + " needs a " +
                    std::to_string(expected) + "-channel volume, got " + std::to_string(v.channels()));
  }
  auto g = load_generator(ckpt, direction);
  return generator_forward(g, v);
}

}  // namespace cg3d
