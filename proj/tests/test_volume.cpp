#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "cyclegan3d/error.hpp"
#include "cyclegan3d/volume.hpp"
#include "support.hpp"

using namespace cg3d;

TEST_CASE("normalize maps the 8-bit range endpoints and midpoint") {
  auto raw = torch::tensor({0.0, 255.0, 128.0, 127.5}).reshape({1, 1, 4, 1});
  auto v = normalize(raw, Domain::OctLike);
  auto d = v.data().flatten();
  CHECK(d[0].item<float>() == -1.0f);
  CHECK(d[1].item<float>() == 1.0f);
  CHECK(d[2].item<double>() == doctest::Approx(128.0 / 127.5 - 1.0).epsilon(1e-7));
  CHECK(d[3].item<float>() == 0.0f);
}

TEST_CASE("normalize rejects out-of-range values and names the index") {
  auto raw = torch::zeros({2, 3, 4, 1});
  raw[1][2][3][0] = 256;
  try {
    normalize(raw, Domain::OctLike);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("(1, 2, 3, 0)") != std::string::npos);
  }
  raw[1][2][3][0] = -1;
  CHECK_THROWS_AS(normalize(raw, Domain::OctLike), DataError);
}

TEST_CASE("denormalize inverts normalize on every 8-bit value") {
  auto raw = torch::arange(256, torch::kFloat32).reshape({1, 16, 16, 1});
  auto back = denormalize(normalize(raw, Domain::OctLike));
  CHECK(torch::equal(back, raw.to(torch::kUInt8)));
}

TEST_CASE("denormalize endpoints and half-up rounding") {
  auto v = Volume(torch::tensor({-1.0f, 1.0f, 0.0f}).reshape({1, 1, 3, 1}), Domain::OctLike);
  auto out = denormalize(v).flatten();
  CHECK(out[0].item<int>() == 0);
  CHECK(out[1].item<int>() == 255);
  CHECK(out[2].item<int>() == 128);
}

TEST_CASE("volume invariants are enforced") {
  CHECK_THROWS_AS(Volume(torch::zeros({2, 2, 2, 3}), Domain::OctLike), ShapeError);
  CHECK_THROWS_AS(Volume(torch::zeros({2, 2, 2}), Domain::OctLike), ShapeError);
  CHECK_THROWS_AS(Volume(torch::zeros({0, 2, 2, 1}), Domain::OctLike), ShapeError);
  CHECK_THROWS_AS(Volume(torch::full({1, 1, 1, 1}, 1.5), Domain::OctLike), DataError);
  CHECK_THROWS_AS(Volume(torch::full({1, 1, 1, 1}, NAN), Domain::OctLike), NumericError);
  CHECK_NOTHROW(Volume(torch::zeros({1, 1, 1, 3}), Domain::ConfocalLike));
}

TEST_CASE("network layout round trip") {
  auto v = testing::random_volume(3, 4, 5, Domain::ConfocalLike, 1);
  auto net = v.to_network();
  CHECK(net.sizes() == at::IntArrayRef({1, 3, 3, 4, 5}));
  CHECK(Volume::from_network(net).equal(v));
}

TEST_CASE("luminance of an achromatic volume is the volume itself") {
  auto gray = testing::random_volume(3, 5, 5, Domain::OctLike, 2);
  CHECK(to_luminance(replicate_channels(gray)).equal(gray));
  auto net = gray.to_network();
  CHECK(torch::equal(luminance(replicate(net)), net));
}

TEST_CASE("luminance uses Rec.601 weights") {
  auto d = torch::tensor({1.0f, -1.0f, -1.0f, -1.0f, 1.0f, -1.0f, -1.0f, -1.0f, 1.0f}).reshape({1, 1, 3, 3});
  auto lum = to_luminance(Volume(d, Domain::ConfocalLike)).data().flatten();
  CHECK(lum[0].item<double>() == doctest::Approx(0.299 * 2 - 1).epsilon(1e-7));
  CHECK(lum[1].item<double>() == doctest::Approx(0.587 * 2 - 1).epsilon(1e-7));
  CHECK(lum[2].item<double>() == doctest::Approx(0.114 * 2 - 1).epsilon(1e-7));
  CHECK_THROWS_AS(to_luminance(testing::random_volume(1, 1, 1, Domain::OctLike, 0)), ShapeError);
}

TEST_CASE("mean projection matches a brute-force loop") {
  auto v = testing::random_volume(4, 3, 5, Domain::ConfocalLike, 3);
  auto p = project_fundus(v);
  REQUIRE(p.data.sizes() == at::IntArrayRef({3, 5, 3}));
  auto a = v.data().accessor<float, 4>();
  auto out = p.data.accessor<float, 3>();
  for (int64_t h = 0; h < 3; ++h) {
    for (int64_t w = 0; w < 5; ++w) {
      for (int64_t c = 0; c < 3; ++c) {
        double s = 0;
        for (int64_t z = 0; z < 4; ++z) s += (static_cast<double>(a[z][h][w][c]) + 1.0) / 2.0;
        CHECK(out[h][w][c] == doctest::Approx(s / 4).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("max projection picks the brightest slice") {
  auto v = testing::random_volume(4, 3, 3, Domain::OctLike, 4);
  auto p = project_fundus(v, ProjectionMode::Max);
  auto expected = ((std::get<0>(v.data().max(0)) + 1) / 2);
  CHECK(torch::allclose(p.data, expected));
}

TEST_CASE("projection is invariant to depth permutation") {
  auto v = testing::random_volume(9, 6, 6, Domain::ConfocalLike, 5);
  auto base = project_fundus(v);
  std::vector<int64_t> order(9);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(order.begin(), order.end(), rng);
    Volume shuffled(v.data().index_select(0, torch::tensor(order)), v.domain());
    CHECK(torch::equal(project_fundus(shuffled).data, base.data));
  }
}

TEST_CASE("projection to 8-bit") {
  ProjectionImage img{torch::tensor({0.0f, 0.5f, 1.0f}).reshape({1, 3, 1})};
  auto u8 = projection_to_u8(img).flatten();
  CHECK(u8[0].item<int>() == 0);
  CHECK(u8[1].item<int>() == 128);
  CHECK(u8[2].item<int>() == 255);
}
