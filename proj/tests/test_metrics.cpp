#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <torch/script.h>

#include "cyclegan3d/error.hpp"
#include "cyclegan3d/metrics.hpp"
#include "support.hpp"

using namespace cg3d;

namespace {

Eigen::MatrixXd random_features(Eigen::Index n, Eigen::Index d, unsigned seed, double shift = 0.0) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd m(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = normal(rng) + shift;
  }
  return m;
}

double poly_kernel(const Eigen::MatrixXd& a, Eigen::Index i, const Eigen::MatrixXd& b, Eigen::Index j) {
  double dot = 0;
  for (Eigen::Index k = 0; k < a.cols(); ++k) dot += a(i, k) * b(j, k);
  return std::pow(dot / static_cast<double>(a.cols()) + 1.0, 3);
}

// Unbiased MMD^2 spelled out with explicit loops.
double mmd2_loops(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const auto n = a.rows();
  const auto m = b.rows();
  double aa = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i != j) aa += poly_kernel(a, i, a, j);
    }
  }
  double bb = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      if (i != j) bb += poly_kernel(b, i, b, j);
    }
  }
  double ab = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) ab += poly_kernel(a, i, b, j);
  }
  return aa / static_cast<double>(n * (n - 1)) + bb / static_cast<double>(m * (m - 1)) -
         2 * ab / static_cast<double>(n * m);
}

// Unbiased 2x2 covariance by loops.
std::array<double, 4> cov2(const Eigen::MatrixXd& x) {
  const auto n = static_cast<double>(x.rows());
  double m0 = 0;
  double m1 = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    m0 += x(i, 0) / n;
    m1 += x(i, 1) / n;
  }
  std::array<double, 4> c{0, 0, 0, 0};
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double a = x(i, 0) - m0;
    const double b = x(i, 1) - m1;
    c[0] += a * a;
    c[1] += a * b;
    c[2] += a * b;
    c[3] += b * b;
  }
  for (auto& v : c) v /= n - 1;
  return c;
}

// For 2x2 SPD P and Q, tr sqrt(PQ) = sqrt(tr(PQ) + 2 sqrt(det P det Q)).
double fid_2d_closed_form(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  auto p = cov2(a);
  auto q = cov2(b);
  const double tr_pq = p[0] * q[0] + p[1] * q[2] + p[2] * q[1] + p[3] * q[3];
  const double det = (p[0] * p[3] - p[1] * p[2]) * (q[0] * q[3] - q[1] * q[2]);
  const double tr_sqrt = std::sqrt(tr_pq + 2 * std::sqrt(det));
  const Eigen::RowVectorXd dmu = a.colwise().mean() - b.colwise().mean();
  return dmu.squaredNorm() + p[0] + p[3] + q[0] + q[3] - 2 * tr_sqrt;
}

RankRecord record(const std::string& rater, const std::string& set, const std::vector<int64_t>& ranks) {
  RankRecord r{rater, set, {}};
  for (size_t i = 0; i < ranks.size(); ++i) r.ranks["m" + std::to_string(i)] = ranks[i];
  return r;
}

std::vector<Volume> volumes(int n, uint64_t seed, Domain domain = Domain::ConfocalLike) {
  std::vector<Volume> out;
  for (int i = 0; i < n; ++i) out.push_back(testing::random_volume(3, 20, 20, domain, seed + i));
  return out;
}

}  // namespace

TEST_CASE("fid of a set with itself vanishes") {
  auto a = random_features(40, 6, 1);
  CHECK(std::abs(fid(a, a)) <= 1e-6);
  auto wide = random_features(5, 50, 2);
  CHECK(std::abs(fid(wide, wide)) <= 1e-6);
}

TEST_CASE("fid with exact one-dimensional moments") {
  const double s = std::sqrt(0.5);
  Eigen::MatrixXd a(2, 1);
  a << -s, s;
  Eigen::MatrixXd b = a.array() + 1.0;
  CHECK(fid(a, b) == doctest::Approx(1.0).epsilon(1e-4));
  Eigen::MatrixXd wider(4, 1);
  wider << -1, 1, -1, 1;  // unbiased variance 4/3
  const double expected = 4.0 / 3.0 + 1.0 - 2 * std::sqrt(4.0 / 3.0);
  CHECK(fid(a, wider) == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("fid matches the two-dimensional closed form") {
  for (unsigned seed = 0; seed < 5; ++seed) {
    auto a = random_features(12, 2, 10 + seed);
    auto b = random_features(9, 2, 20 + seed, 0.7);
    b.col(1) *= 2.0;
    CHECK(fid(a, b) == doctest::Approx(fid_2d_closed_form(a, b)).epsilon(1e-9));
  }
}

TEST_CASE("fid is unchanged when features gain zero dimensions") {
  // Padding to more dimensions than rows switches to the n x n route.
  auto a = random_features(4, 3, 5);
  auto b = random_features(5, 3, 6, 0.5);
  Eigen::MatrixXd pa = Eigen::MatrixXd::Zero(4, 12);
  Eigen::MatrixXd pb = Eigen::MatrixXd::Zero(5, 12);
  pa.leftCols(3) = a;
  pb.leftCols(3) = b;
  CHECK(fid(pa, pb) == doctest::Approx(fid(a, b)).epsilon(1e-8));
}

TEST_CASE("fid symmetry, permutation invariance and errors") {
  auto a = random_features(10, 4, 7);
  auto b = random_features(8, 4, 8, 0.3);
  CHECK(fid(a, b) == doctest::Approx(fid(b, a)).epsilon(1e-10));
  CHECK(fid(a, b) >= 0.0);
  Eigen::MatrixXd ra = a.colwise().reverse();
  Eigen::MatrixXd rb = b.colwise().reverse();
  CHECK(fid(ra, rb) == doctest::Approx(fid(a, b)).epsilon(1e-10));
  CHECK_THROWS_AS(fid(a, random_features(8, 5, 0)), DataError);
  CHECK_THROWS_AS(fid(a.topRows(1), b), DataError);
}

TEST_CASE("kid equals the triple-loop oracle") {
  auto a = random_features(3, 4, 30);
  auto b = random_features(3, 4, 31, 0.4);
  CHECK(std::abs(kid(a, b) - mmd2_loops(a, b)) <= 1e-10);
  auto c = random_features(5, 4, 32);
  CHECK(std::abs(kid(a, c) - mmd2_loops(a, c)) <= 1e-10);
}

TEST_CASE("kid of a set with itself") {
  // With B = A the unbiased estimate reduces to 2 (offdiag - all) mean kernel,
  // which is never positive.
  auto a = random_features(6, 5, 33);
  double offdiag = 0;
  double all = 0;
  for (Eigen::Index i = 0; i < 6; ++i) {
    for (Eigen::Index j = 0; j < 6; ++j) {
      const double k = poly_kernel(a, i, a, j);
      all += k / 36;
      if (i != j) offdiag += k / 30;
    }
  }
  CHECK(kid(a, a) == doctest::Approx(2 * (offdiag - all)).epsilon(1e-10));
  CHECK(kid(a, a) <= 1e-8);
}

TEST_CASE("kid symmetry, permutation invariance and block mode") {
  auto a = random_features(7, 3, 34);
  auto b = random_features(6, 3, 35, 0.2);
  CHECK(kid(a, b) == doctest::Approx(kid(b, a)).epsilon(1e-12));
  Eigen::MatrixXd ra = a.colwise().reverse();
  CHECK(kid(ra, b) == doctest::Approx(kid(a, b)).epsilon(1e-12));
  KidOptions block{4, 3, 9};
  CHECK(kid(a, b, block) == kid(a, b, block));
  CHECK(std::isfinite(kid(a, b, block)));
  CHECK_THROWS_AS(kid(a, b, {2, 7, 0}), ConfigError);
  CHECK_THROWS_AS(kid(a, random_features(6, 2, 0)), DataError);
}

TEST_CASE("kid block mode with whole-set subsets equals the full estimate") {
  auto a = random_features(6, 3, 36);
  auto b = random_features(6, 3, 37, 0.5);
  CHECK(kid(a, b, {5, 6, 2}) == doctest::Approx(kid(a, b)).epsilon(1e-12));
}

TEST_CASE("MOS examples") {
  std::vector<RankRecord> unanimous;
  for (int r = 0; r < 4; ++r) unanimous.push_back(record("r" + std::to_string(r), "s1", {1, 2, 3, 4, 5}));
  auto mos = mos_aggregate(unanimous);
  CHECK(mos["m0"] == 100.0);
  CHECK(mos["m4"] == 1.0);
  CHECK(mos["m2"] == doctest::Approx(50.5));
  auto mixed = mos_aggregate({record("a", "s1", {1, 2, 3, 4, 5}), record("b", "s1", {5, 2, 3, 4, 1})});
  CHECK(mixed["m0"] == 50.5);
}

TEST_CASE("MOS stays within [1, 100] and averages 50.5 over all permutations") {
  std::vector<int64_t> perm{1, 2, 3, 4, 5};
  std::vector<RankRecord> all;
  do {
    all.push_back(record("r" + std::to_string(all.size()), "s", perm));
  } while (std::next_permutation(perm.begin(), perm.end()));
  REQUIRE(all.size() == 120);
  for (const auto& [name, v] : mos_aggregate(all)) CHECK(v == doctest::Approx(50.5).epsilon(1e-12));

  std::mt19937 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const int m = 2 + trial % 6;
    std::vector<int64_t> p(static_cast<size_t>(m));
    std::iota(p.begin(), p.end(), 1);
    std::vector<RankRecord> recs;
    for (int k = 0; k < 1 + trial % 7; ++k) {
      std::shuffle(p.begin(), p.end(), rng);
      recs.push_back(record("r" + std::to_string(k), "s", p));
    }
    for (const auto& [name, v] : mos_aggregate(recs)) {
      CHECK(v >= 1.0);
      CHECK(v <= 100.0);
    }
  }
}

TEST_CASE("MOS errors name the record") {
  try {
    mos_aggregate({record("a", "s1", {1, 2, 3}), record("b", "s7", {1, 1, 3})});
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("rater b, set s7") != std::string::npos);
  }
  CHECK_THROWS_AS(mos_aggregate({record("a", "s1", {1, 2, 4})}), DataError);
  CHECK_THROWS_AS(mos_aggregate({record("a", "s1", {1, 2}), record("a", "s2", {1, 2, 3})}), DataError);
  CHECK_THROWS_AS(mos_aggregate({record("a", "s1", {1})}), DataError);
  CHECK_THROWS_AS(mos_aggregate({}), DataError);
}

TEST_CASE("rank records parse from CSV") {
  std::istringstream in(
      "rater_id,set_id,method,rank\n"
      "alice,1,ours,1\nalice,1,base,2\n"
      "bob,1,ours,2\nbob,1,base,1\n");
  auto recs = parse_rank_records(in);
  REQUIRE(recs.size() == 2);
  auto mos = mos_aggregate(recs);
  CHECK(mos["ours"] == 50.5);
  std::istringstream bad("rater,set\n");
  CHECK_THROWS_AS(parse_rank_records(bad), DataError);
  std::istringstream twice("rater_id,set_id,method,rank\na,1,x,1\na,1,x,2\n");
  CHECK_THROWS_AS(parse_rank_records(twice), DataError);
  std::istringstream nonint("rater_id,set_id,method,rank\na,1,x,1.5\n");
  CHECK_THROWS_AS(parse_rank_records(nonint), DataError);
}

TEST_CASE("random projection embedding of volume sets") {
  RandomProjectionEmbedder e(4);
  auto vols = volumes(3, 50);
  auto f768 = embed_set(vols, e, 768);
  auto f2048 = embed_set(vols, e, 2048);
  CHECK(f768.rows() == 3);
  CHECK(f768.cols() == 768);
  CHECK(f2048.cols() == 2048);
  std::vector<Volume> swapped{vols[2], vols[0], vols[1]};
  auto fs = embed_set(swapped, e, 768);
  CHECK(fs.row(0) == f768.row(2));
  CHECK(fs.row(1) == f768.row(0));
  std::vector<Volume> same{vols[0], vols[0]};
  auto fd = embed_set(same, e, 768);
  CHECK(fd.row(0) == fd.row(1));
  CHECK(embed_set(vols, RandomProjectionEmbedder(4), 768) == f768);
  CHECK(embed_set(vols, RandomProjectionEmbedder(5), 768) != f768);
  auto gray = embed_set(volumes(2, 60, Domain::OctLike), e, 768);
  CHECK(gray.allFinite());
  CHECK_THROWS_AS(embed_set({}, e, 768), DataError);
  CHECK_THROWS_AS(embed_set(vols, e, 1000), ConfigError);
}

TEST_CASE("TorchScript embedder picks the output of the requested size") {
  auto module = std::make_shared<torch::jit::Module>("Features");
  module->define(R"JIT(
def forward(self, x):
    flat = x.reshape([768])
    return (flat, flat.repeat(3)[:2048])
)JIT");
  TorchScriptEmbedder e(module, 16, "toy");
  CHECK(e.input_size() == 16);
  auto img = torch::rand({3, 16, 16});
  auto v = e.embed(img, 768);
  REQUIRE(v.size() == 768);
  auto flat = (img * 2 - 1).flatten();
  for (int64_t i = 0; i < 768; i += 97) CHECK(v(i) == doctest::Approx(flat[i].item<double>()).epsilon(1e-6));
  CHECK(e.embed(img, 2048).size() == 2048);
  CHECK_THROWS_AS(TorchScriptEmbedder("/nonexistent/model.pt"), DataError);
}

TEST_CASE("report scores a method against itself near zero and marks the best") {
  RandomProjectionEmbedder e(1);
  auto ref = volumes(4, 100);
  std::vector<Volume> dark;
  for (const auto& v : volumes(4, 200)) dark.emplace_back(v.data() * 0.2f - 0.7f, v.domain());
  ScenarioInput total{"TOTAL", ref, {{"same", ref}, {"dark", dark}, {"lonely", {ref[0]}}}};
  std::ostringstream warnings;
  auto report = build_report({total}, e, {{"TOTAL", {{"same", 80.0}, {"dark", 20.0}}}}, &warnings);
  CHECK(warnings.str().find("lonely") != std::string::npos);
  REQUIRE(report.rows.size() == 2);
  const auto* same = report.find("TOTAL", "same");
  const auto* far = report.find("TOTAL", "dark");
  REQUIRE(same);
  REQUIRE(far);
  CHECK(std::abs(same->fid768) <= 1e-6);
  CHECK(std::abs(same->fid2048) <= 1e-6);
  CHECK(same->kid <= 1e-8);
  CHECK(far->fid768 > same->fid768);
  CHECK(same->mos == 80.0);

  auto table = format_report_table(report);
  CHECK(table.find("Total") != std::string::npos);
  CHECK(table.find("FID2048") != std::string::npos);
  std::istringstream lines(table);
  std::string line;
  bool found = false;
  while (std::getline(lines, line)) {
    if (line.rfind("same", 0) == 0) {
      found = true;
      CHECK(std::count(line.begin(), line.end(), '*') == 4);
    }
    if (line.rfind("dark", 0) == 0) CHECK(std::count(line.begin(), line.end(), '+') == 4);
  }
  CHECK(found);

  ReportOptions only768;
  only768.dims = {768};
  auto partial = build_report({total}, e, {}, nullptr, only768);
  CHECK(std::isnan(partial.find("TOTAL", "same")->fid2048));
  CHECK(format_report_table(partial).find("- ") != std::string::npos);
}

TEST_CASE("report CSV round trip and merging") {
  MetricReport r;
  r.rows.push_back({"W_REF", "a", 0.5, 150.25, 0.125, 55.0});
  r.rows.push_back({"TOTAL", "b", 1.0 / 3.0, 2.0, -0.001, std::nullopt});
  std::stringstream csv;
  write_report_csv(r, csv);
  auto back = read_report_csv(csv);
  CHECK((back == r));
  MetricReport other;
  other.rows.push_back({"WO_REF", "a", 1, 2, 3, 4.0});
  auto merged = merge_reports({r, other});
  CHECK(merged.rows.size() == 3);
  CHECK(merged.scenarios() == std::vector<std::string>{"W_REF", "WO_REF", "TOTAL"});
  CHECK_THROWS_AS(merge_reports({r, r}), DataError);
  std::istringstream bad("scenario,method\n");
  CHECK_THROWS_AS(read_report_csv(bad), DataError);
}
