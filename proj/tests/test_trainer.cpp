#include <doctest.h>

#include <fstream>
#include <sstream>

#include "cyclegan3d/error.hpp"
#include "cyclegan3d/phantom.hpp"
#include "cyclegan3d/trainer.hpp"
#include "support.hpp"

using namespace cg3d;

namespace {

TrainConfig tiny_config() {
  TrainConfig cfg;
  for (auto* g : {&cfg.generator_xy, &cfg.generator_yx}) {
    g->n_downsampling = 2;
    g->n_res_blocks = 1;
    g->base_width = 4;
  }
  for (auto* d : {&cfg.discriminator_x, &cfg.discriminator_y}) d->widths = {4, 4, 4, 4};
  cfg.pool_size = 2;
  cfg.learning_rate = 2e-4;
  cfg.augmentation.pre_crop_size = 34;
  cfg.augmentation.crop_size = 32;
  cfg.seed = 5;
  return cfg;
}

UnpairedDataset tiny_dataset(int64_t n = 3) {
  UnpairedDataset ds;
  PhantomConfig pc;
  pc.depth = 3;
  for (int64_t i = 0; i < n; ++i) {
    auto [x, y] = generate_phantom_pair(phantom_for_index(pc, false, i));
    ds.x.push_back(x);
    ds.y.push_back(y);
    ds.x_names.push_back("x" + std::to_string(i));
    ds.y_names.push_back("y" + std::to_string(i));
  }
  return ds;
}

std::vector<LossReport> run(const TrainConfig& cfg, const UnpairedDataset& ds, TrainRunOptions opts = {}) {
  std::vector<LossReport> log;
  opts.on_iteration = [&](int64_t, const LossReport& r) { log.push_back(r); };
  train(cfg, ds, opts);
  return log;
}

}  // namespace

TEST_CASE("train config validation") {
  CHECK_NOTHROW(TrainConfig{}.validate());
  auto bad = TrainConfig{};
  bad.learning_rate = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.pool_size = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.generator_yx = bad.generator_xy;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.discriminator_x.in_channels = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("learning rate is constant unless decay is enabled") {
  TrainConfig cfg;
  CHECK(cfg.learning_rate_at(0) == 2e-5);
  CHECK(cfg.learning_rate_at(100000) == 2e-5);
  cfg.lr_decay = {true, 10, 20};
  CHECK(cfg.learning_rate_at(10) == 2e-5);
  CHECK(cfg.learning_rate_at(15) == doctest::Approx(1e-5));
  CHECK(cfg.learning_rate_at(25) == 0.0);
}

TEST_CASE("planned iterations") {
  TrainConfig cfg;
  cfg.epochs = 3;
  CHECK(planned_iterations(cfg, 4) == 12);
  cfg.batch_size = 3;
  CHECK(planned_iterations(cfg, 4) == 6);
  cfg.max_iterations = 7;
  CHECK(planned_iterations(cfg, 4) == 7);
}

TEST_CASE("zero loss weights leave the generators untouched") {
  auto cfg = tiny_config();
  cfg.loss_weights = {0, 0, 0, 0};
  Trainer t(cfg);
  const auto g0 = parameter_hash(*t.g());
  const auto f0 = parameter_hash(*t.f());
  const auto dy0 = parameter_hash(*t.d_y());
  auto ds = tiny_dataset(1);
  t.train_step(ds.x[0], ds.y[0]);
  CHECK(parameter_hash(*t.g()) == g0);
  CHECK(parameter_hash(*t.f()) == f0);
  CHECK(parameter_hash(*t.d_y()) != dy0);
}

TEST_CASE("each update phase changes only its own networks") {
  Trainer t(tiny_config());
  auto ds = tiny_dataset(1);
  auto hashes = [&] {
    return std::array<uint64_t, 4>{parameter_hash(*t.g()), parameter_hash(*t.f()), parameter_hash(*t.d_x()),
                                   parameter_hash(*t.d_y())};
  };
  auto before = hashes();
  std::vector<std::string> phases;
  t.set_phase_hook([&](const std::string& phase) {
    auto now = hashes();
    phases.push_back(phase);
    if (phase == "generators") {
      CHECK(now[0] != before[0]);
      CHECK(now[1] != before[1]);
      CHECK(now[2] == before[2]);
      CHECK(now[3] == before[3]);
    } else if (phase == "d_y") {
      CHECK(now[0] == before[0]);
      CHECK(now[1] == before[1]);
      CHECK(now[2] == before[2]);
      CHECK(now[3] != before[3]);
    } else {
      CHECK(now[0] == before[0]);
      CHECK(now[1] == before[1]);
      CHECK(now[2] != before[2]);
      CHECK(now[3] == before[3]);
    }
    before = now;
  });
  t.train_step(ds.x[0], ds.y[0]);
  CHECK(phases == std::vector<std::string>{"generators", "d_y", "d_x"});
  CHECK(t.iteration() == 1);
  for (auto* d : {&t.d_x(), &t.d_y()}) {
    for (const auto& p : (*d)->parameters()) CHECK(p.requires_grad());
  }
}

TEST_CASE("loss report terms are finite and non-negative") {
  Trainer t(tiny_config());
  auto ds = tiny_dataset(1);
  auto r = t.train_step(ds.x[0], ds.y[0]);
  for (double v : r.values()) {
    CHECK(std::isfinite(v));
    CHECK(v >= 0.0);
  }
}

TEST_CASE("non-finite input is reported with the offending term") {
  Trainer t(tiny_config());
  auto ds = tiny_dataset(1);
  auto x = ds.x[0].to_network().clone();
  x.index_put_({0, 0, 1, 3, 3}, NAN);
  try {
    t.train_step(x, ds.y[0].to_network());
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("adv_g") != std::string::npos);
  }
}

TEST_CASE("checkpoint bytes round trip and restore forward outputs") {
  auto cfg = tiny_config();
  auto ds = tiny_dataset(2);
  Trainer t(cfg);
  for (int i = 0; i < 2; ++i) t.train_next(ds);
  auto bundle = t.checkpoint();
  const auto bytes = serialize_checkpoint(bundle);
  CHECK(serialize_checkpoint(deserialize_checkpoint(bytes)) == bytes);

  testing::TempDir dir("ckpt");
  save_checkpoint(bundle, dir / "a.ckpt");
  auto loaded = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(loaded, dir / "b.ckpt");
  std::ifstream a(dir / "a.ckpt", std::ios::binary);
  std::ifstream b(dir / "b.ckpt", std::ios::binary);
  std::stringstream sa;
  std::stringstream sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  CHECK(sa.str() == sb.str());
  CHECK(sa.str().substr(0, 8) == "CG3DCKPT");
  CHECK(loaded.iteration() == 2);
  CHECK(loaded.train_config() == cfg);

  auto restored = Trainer::from_checkpoint(loaded);
  auto probe = ds.x[0].to_network();
  torch::NoGradGuard no_grad;
  CHECK(torch::equal(t.g()->forward(probe), restored.g()->forward(probe)));
  CHECK(torch::equal(t.d_y()->forward(t.g()->forward(probe)), restored.d_y()->forward(t.g()->forward(probe))));
  CHECK(restored.iteration() == 2);
}

TEST_CASE("corrupt checkpoints are rejected") {
  CHECK_THROWS_AS(deserialize_checkpoint("not a checkpoint"), DataError);
  Trainer t(tiny_config());
  auto bytes = serialize_checkpoint(t.checkpoint());
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 4)), DataError);
}

TEST_CASE("zero epochs returns the initialization") {
  auto cfg = tiny_config();
  cfg.epochs = 0;
  auto bundle = train(cfg, tiny_dataset(1));
  Trainer fresh(cfg);
  CHECK(bundle.iteration() == 0);
  CHECK(serialize_checkpoint(bundle) == serialize_checkpoint(fresh.checkpoint()));
}

TEST_CASE("same seed gives identical loss trajectories") {
  auto cfg = tiny_config();
  cfg.max_iterations = 4;
  auto ds = tiny_dataset();
  auto a = run(cfg, ds);
  auto b = run(cfg, ds);
  CHECK(a.size() == 4);
  CHECK((a == b));
  cfg.seed = 6;
  CHECK((run(cfg, ds) != a));
}

TEST_CASE("prefetching workers do not change results") {
  auto cfg = tiny_config();
  cfg.max_iterations = 3;
  auto ds = tiny_dataset();
  TrainRunOptions two;
  two.workers = 2;
  CHECK((run(cfg, ds) == run(cfg, ds, two)));
}

TEST_CASE("resume matches an uninterrupted run") {
  auto cfg = tiny_config();
  cfg.max_iterations = 6;
  cfg.checkpoint_every = 2;
  auto ds = tiny_dataset();
  testing::TempDir dir("resume");
  TrainRunOptions full;
  full.out_dir = dir / "full";
  auto uninterrupted = run(cfg, ds, full);
  REQUIRE(std::filesystem::exists(dir / "full" / "checkpoint_00000002.ckpt"));
  REQUIRE(std::filesystem::exists(dir / "full" / "final.ckpt"));

  TrainRunOptions resumed;
  resumed.out_dir = dir / "resumed";
  resumed.resume = load_checkpoint(dir / "full" / "checkpoint_00000002.ckpt");
  auto tail = run(cfg, ds, resumed);
  REQUIRE(tail.size() == 4);
  for (size_t i = 0; i < tail.size(); ++i) CHECK((tail[i] == uninterrupted[i + 2]));
  CHECK(serialize_checkpoint(load_checkpoint(dir / "resumed" / "final.ckpt")) ==
        serialize_checkpoint(load_checkpoint(dir / "full" / "final.ckpt")));
}

TEST_CASE("training log lists one row per iteration") {
  auto cfg = tiny_config();
  cfg.max_iterations = 3;
  testing::TempDir dir("log");
  TrainRunOptions opts;
  opts.out_dir = dir.path();
  run(cfg, tiny_dataset(), opts);
  std::ifstream in(dir / "train_log.csv");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  REQUIRE(lines.size() == 4);
  CHECK(lines[0].rfind("iteration,adv_g", 0) == 0);
  CHECK(lines[1].rfind("0,", 0) == 0);
  CHECK(lines[3].rfind("2,", 0) == 0);
}

TEST_CASE("resume rejects a different architecture") {
  auto cfg = tiny_config();
  Trainer t(cfg);
  auto bundle = t.checkpoint();
  auto other = cfg;
  other.generator_xy.n_downsampling = 3;
  other.generator_yx.n_downsampling = 3;
  CHECK_THROWS_AS(Trainer::from_checkpoint(bundle, other), ConfigError);
  auto same = cfg;
  same.learning_rate = 1e-3;
  CHECK_NOTHROW(Trainer::from_checkpoint(bundle, same));
}

TEST_CASE("translate follows the direction's channel contract") {
  auto cfg = tiny_config();
  auto bundle = Trainer(cfg).checkpoint();
  auto x = testing::random_volume(9, 64, 64, Domain::OctLike, 1);
  auto y = translate(bundle, x, Direction::XtoY);
  CHECK(y.shape() == std::array<int64_t, 4>{9, 64, 64, 3});
  CHECK(y.data().abs().max().item<float>() < 1.0f);
  CHECK(translate(bundle, y, Direction::YtoX).shape() == std::array<int64_t, 4>{9, 64, 64, 1});
  CHECK_THROWS_AS(translate(bundle, x, Direction::YtoX), DataError);
  CHECK(parse_direction("y2x") == Direction::YtoX);
  CHECK_THROWS_AS(parse_direction("sideways"), ConfigError);
  auto g = load_generator(bundle, Direction::XtoY);
  CHECK_FALSE(g->is_training());
}
