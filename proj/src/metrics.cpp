#include "cyclegan3d/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <torch/script.h>
#include <torch/torch.h>

#include "cyclegan3d/error.hpp"
#include "cyclegan3d/losses.hpp"
#include "cyclegan3d/rng.hpp"

namespace F = torch::nn::functional;

namespace cg3d {

namespace {

// Box-Muller on our own uniform stream, so the matrix does not depend on the
// standard library's normal_distribution.
Eigen::MatrixXd gaussian_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      const double u1 = 1.0 - uniform01(rng);
      const double u2 = uniform01(rng);
      m(i, j) = scale * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }
  }
  return m;
}

void check_dim(int64_t dim) {
  if (dim != 768 && dim != 2048) throw ConfigError("feature dimension must be 768 or 2048, got " + std::to_string(dim));
}

void check_pair(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const char* what) {
  if (a.cols() != b.cols()) {
    throw DataError(std::string(what) + ": feature dimensions differ (" + std::to_string(a.cols()) + " vs " +
                    std::to_string(b.cols()) + ")");
  }
  if (a.rows() < 2 || b.rows() < 2) throw DataError(std::string(what) + " needs at least two rows per set");
}

double sum_sqrt_clamped(const Eigen::MatrixXd& sym) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym, Eigen::EigenvaluesOnly);
  double s = 0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) s += std::sqrt(std::max(0.0, es.eigenvalues()(i)));
  return s;
}

double mmd2(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double d = static_cast<double>(a.cols());
  const double n = static_cast<double>(a.rows());
  const double m = static_cast<double>(b.rows());
  auto kernel = [d](const Eigen::MatrixXd& p, const Eigen::MatrixXd& q) -> Eigen::MatrixXd {
    return ((p * q.transpose()).array() / d + 1.0).cube().matrix();
  };
  const Eigen::MatrixXd kaa = kernel(a, a);
  const Eigen::MatrixXd kbb = kernel(b, b);
  const Eigen::MatrixXd kab = kernel(a, b);
  const double saa = kaa.sum() - kaa.trace();
  const double sbb = kbb.sum() - kbb.trace();
  return saa / (n * (n - 1)) + sbb / (m * (m - 1)) - 2.0 * kab.sum() / (n * m);
}

Eigen::MatrixXd random_rows(const Eigen::MatrixXd& x, int64_t count, Rng& rng) {
  std::vector<Eigen::Index> idx(static_cast<size_t>(x.rows()));
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<Eigen::Index>(i);
  Eigen::MatrixXd out(count, x.cols());
  for (int64_t i = 0; i < count; ++i) {
    const auto j = static_cast<size_t>(i) + uniform_index(rng, idx.size() - static_cast<size_t>(i));
    std::swap(idx[static_cast<size_t>(i)], idx[j]);
    out.row(i) = x.row(idx[static_cast<size_t>(i)]);
  }
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream s(line);
  while (std::getline(s, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& s, const std::string& where) {
  try {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": not a number: '" + s + "'");
  }
}

std::string scenario_label(const std::string& tag) {
  if (tag == "W_REF") return "W Ref";
  if (tag == "WO_REF") return "W/O Ref";
  if (tag == "TOTAL") return "Total";
  return tag;
}

}  // namespace

RandomProjectionEmbedder::RandomProjectionEmbedder(uint64_t seed) : seed_(seed) {
  auto rng = make_stream(seed, {768});
  proj768_ = gaussian_matrix(rng, 768, 768);
  rng = make_stream(seed, {2048});
  proj2048_ = gaussian_matrix(rng, 2048, 768);
}

std::string RandomProjectionEmbedder::name() const { return "random-projection(seed=" + std::to_string(seed_) + ")"; }

Eigen::VectorXd RandomProjectionEmbedder::embed(const torch::Tensor& image, int64_t dim) const {
  check_dim(dim);
  if (image.dim() != 3 || image.size(0) != 3 || image.size(1) != 16 || image.size(2) != 16) {
    throw ShapeError("random-projection embedder expects a (3, 16, 16) image");
  }
  auto flat = image.to(torch::kFloat64).contiguous().reshape({-1});
  Eigen::Map<const Eigen::VectorXd> v(flat.data_ptr<double>(), 768);
  return dim == 768 ? Eigen::VectorXd(proj768_ * v) : Eigen::VectorXd(proj2048_ * v);
}

TorchScriptEmbedder::TorchScriptEmbedder(const std::filesystem::path& path, int64_t input_size)
    : input_size_(input_size), label_("torchscript(" + path.filename().string() + ")") {
  try {
    module_ = std::make_shared<torch::jit::Module>(torch::jit::load(path.string()));
  } catch (const c10::Error& e) {
    throw DataError("cannot load TorchScript embedder " + path.string() + ": " + e.what_without_backtrace());
  }
  module_->eval();
}

TorchScriptEmbedder::TorchScriptEmbedder(std::shared_ptr<torch::jit::Module> module, int64_t input_size,
                                         std::string label)
    : module_(std::move(module)), input_size_(input_size), label_(std::move(label)) {}

Eigen::VectorXd TorchScriptEmbedder::embed(const torch::Tensor& image, int64_t dim) const {
  check_dim(dim);
  torch::NoGradGuard no_grad;
  auto input = (image.to(torch::kFloat32) * 2.0 - 1.0).unsqueeze(0);
  auto out = module_->forward({input});
  std::vector<torch::Tensor> candidates;
  if (out.isTuple()) {
    for (const auto& e : out.toTuple()->elements()) candidates.push_back(e.toTensor());
  } else if (out.isTensorList()) {
    for (const auto& t : out.toTensorVector()) candidates.push_back(t);
  } else {
    candidates.push_back(out.toTensor());
  }
  for (const auto& t : candidates) {
    if (t.numel() == dim) {
      auto flat = t.to(torch::kFloat64).contiguous().reshape({-1});
      return Eigen::Map<const Eigen::VectorXd>(flat.data_ptr<double>(), dim);
    }
  }
  throw ShapeError(label_ + " produced no " + std::to_string(dim) + "-element feature output");
}

Eigen::MatrixXd embed_set(const std::vector<Volume>& volumes, const FeatureEmbedder& embedder, int64_t dim) {
  check_dim(dim);
  if (volumes.empty()) throw DataError("cannot embed an empty volume set");
  const int64_t s = embedder.input_size();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(volumes.size()), dim);
  for (size_t i = 0; i < volumes.size(); ++i) {
    auto img = project_fundus(volumes[i]).data.to(torch::kFloat32).permute({2, 0, 1}).unsqueeze(0);
    if (img.size(2) != s || img.size(3) != s) {
      img = F::interpolate(img, F::InterpolateFuncOptions()
                                    .size(std::vector<int64_t>{s, s})
                                    .mode(torch::kBilinear)
                                    .align_corners(false)
                                    .antialias(true));
    }
    if (img.size(1) == 1) img = img.expand({1, 3, s, s});
    out.row(static_cast<Eigen::Index>(i)) = embedder.embed(img.squeeze(0).clamp(0.0, 1.0).contiguous(), dim);
  }
  return out;
}

double fid(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  check_pair(a, b, "fid");
  const auto n = static_cast<double>(a.rows());
  const auto m = static_cast<double>(b.rows());
  const Eigen::RowVectorXd mu_a = a.colwise().mean();
  const Eigen::RowVectorXd mu_b = b.colwise().mean();
  const Eigen::MatrixXd xa = a.rowwise() - mu_a;
  const Eigen::MatrixXd xb = b.rowwise() - mu_b;
  const double mean_term = (mu_a - mu_b).squaredNorm();
  const double trace_a = xa.squaredNorm() / (n - 1);
  const double trace_b = xb.squaredNorm() / (m - 1);

  // Tr sqrt(Sa Sb) from the smaller of the two symmetric eigenproblems.
  double cross;
  if (a.cols() <= std::min(a.rows(), b.rows())) {
    const Eigen::MatrixXd sa = xa.transpose() * xa / (n - 1);
    const Eigen::MatrixXd sb = xb.transpose() * xb / (m - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sa);
    const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    const Eigen::MatrixXd sa_half = es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
    const Eigen::MatrixXd prod = sa_half * sb * sa_half;
    cross = sum_sqrt_clamped(0.5 * (prod + prod.transpose()));
  } else {
    // Nonzero eigenvalues of Sa Sb equal those of C C^T with C = Xa Xb^T / sqrt((n-1)(m-1)).
    const Eigen::MatrixXd c = xa * xb.transpose() / std::sqrt((n - 1) * (m - 1));
    const Eigen::MatrixXd prod = c * c.transpose();
    cross = sum_sqrt_clamped(0.5 * (prod + prod.transpose()));
  }
  return std::max(0.0, mean_term + trace_a + trace_b - 2.0 * cross);
}

double kid(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const KidOptions& options) {
  check_pair(a, b, "kid");
  if (options.subsets <= 0) return mmd2(a, b);
  if (options.subset_size < 2 || options.subset_size > std::min(a.rows(), b.rows())) {
    throw ConfigError("kid subset_size must lie in [2, min(n, m)]");
  }
  auto rng = make_stream(options.seed, {0x6b6964});
  double total = 0;
  for (int64_t i = 0; i < options.subsets; ++i) {
    const auto sa = random_rows(a, options.subset_size, rng);
    const auto sb = random_rows(b, options.subset_size, rng);
    total += mmd2(sa, sb);
  }
  return total / static_cast<double>(options.subsets);
}

std::vector<RankRecord> parse_rank_records(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw DataError(source + ": empty rank file");
  const auto header = split_csv(line);
  if (header != std::vector<std::string>{"rater_id", "set_id", "method", "rank"}) {
    throw DataError(source + ": expected header rater_id,set_id,method,rank");
  }
  std::vector<RankRecord> records;
  std::map<std::pair<std::string, std::string>, size_t> index;
  int64_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv(line);
    const std::string where = source + ":" + std::to_string(line_no);
    if (cells.size() != 4) throw DataError(where + ": expected 4 columns");
    const double r = parse_number(cells[3], where);
    if (r != std::floor(r)) throw DataError(where + ": rank must be an integer");
    const auto key = std::make_pair(cells[0], cells[1]);
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, records.size()).first;
      records.push_back({cells[0], cells[1], {}});
    }
    auto& ranks = records[it->second].ranks;
    if (!ranks.emplace(cells[2], static_cast<int64_t>(r)).second) {
      throw DataError(where + ": method '" + cells[2] + "' ranked twice in one record");
    }
  }
  return records;
}

std::vector<RankRecord> read_rank_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open rank file " + path.string());
  return parse_rank_records(in, path.string());
}

std::map<std::string, double> mos_aggregate(const std::vector<RankRecord>& records) {
  if (records.empty()) throw DataError("no rank records");
  std::set<std::string> methods;
  for (const auto& [name, r] : records.front().ranks) methods.insert(name);
  const auto m = static_cast<int64_t>(methods.size());
  if (m < 2) throw DataError("MOS needs at least two ranked methods");

  std::map<std::string, double> sum;
  for (const auto& rec : records) {
    const std::string label = "rank record (rater " + rec.rater_id + ", set " + rec.set_id + ")";
    std::set<std::string> names;
    std::vector<int64_t> ranks;
    for (const auto& [name, r] : rec.ranks) {
      names.insert(name);
      ranks.push_back(r);
    }
    if (names != methods) throw DataError(label + " ranks a different method set");
    std::sort(ranks.begin(), ranks.end());
    for (int64_t i = 0; i < m; ++i) {
      if (ranks[static_cast<size_t>(i)] != i + 1) throw DataError(label + " is not a permutation of 1.." + std::to_string(m));
    }
    for (const auto& [name, r] : rec.ranks) {
      sum[name] += 100.0 - static_cast<double>(r - 1) * 99.0 / static_cast<double>(m - 1);
    }
  }
  for (auto& [name, s] : sum) s /= static_cast<double>(records.size());
  return sum;
}

std::vector<std::string> MetricReport::scenarios() const {
  std::vector<std::string> out;
  for (const auto& tag : canonical_scenarios()) {
    if (std::any_of(rows.begin(), rows.end(), [&](const MetricRow& r) { return r.scenario == tag; })) out.push_back(tag);
  }
  for (const auto& r : rows) {
    if (std::find(out.begin(), out.end(), r.scenario) == out.end()) out.push_back(r.scenario);
  }
  return out;
}

std::vector<std::string> MetricReport::methods() const {
  std::vector<std::string> out;
  for (const auto& r : rows) {
    if (std::find(out.begin(), out.end(), r.method) == out.end()) out.push_back(r.method);
  }
  return out;
}

const MetricRow* MetricReport::find(const std::string& scenario, const std::string& method) const {
  for (const auto& r : rows) {
    if (r.scenario == scenario && r.method == method) return &r;
  }
  return nullptr;
}

MetricReport build_report(const std::vector<ScenarioInput>& scenarios, const FeatureEmbedder& embedder,
                          const std::map<std::string, std::map<std::string, double>>& mos, std::ostream* warnings,
                          const ReportOptions& options) {
  if (options.dims.empty()) throw ConfigError("at least one feature dimension is required");
  for (int64_t d : options.dims) check_dim(d);
  const bool want768 = std::find(options.dims.begin(), options.dims.end(), 768) != options.dims.end();
  const bool want2048 = std::find(options.dims.begin(), options.dims.end(), 2048) != options.dims.end();
  const double nan = std::numeric_limits<double>::quiet_NaN();

  MetricReport report;
  auto warn = [&](const std::string& msg) {
    if (warnings) *warnings << "warning: " << msg << '\n';
  };
  for (const auto& sc : scenarios) {
    if (sc.reference.size() < 2) {
      warn("scenario " + sc.tag + " has fewer than two reference volumes; omitted");
      continue;
    }
    Eigen::MatrixXd ref768, ref2048;
    if (want768) ref768 = embed_set(sc.reference, embedder, 768);
    if (want2048) ref2048 = embed_set(sc.reference, embedder, 2048);
    for (const auto& [method, vols] : sc.methods) {
      if (vols.size() < 2) {
        warn("method " + method + " has fewer than two volumes in scenario " + sc.tag + "; omitted");
        continue;
      }
      MetricRow row{sc.tag, method, nan, nan, nan};
      if (want768) {
        const auto f = embed_set(vols, embedder, 768);
        row.fid768 = fid(f, ref768);
        if (!want2048) row.kid = kid(f, ref768, options.kid);
      }
      if (want2048) {
        const auto f = embed_set(vols, embedder, 2048);
        row.fid2048 = fid(f, ref2048);
        row.kid = kid(f, ref2048, options.kid);
      }
      if (auto s = mos.find(sc.tag); s != mos.end()) {
        if (auto v = s->second.find(method); v != s->second.end()) row.mos = v->second;
      }
      report.rows.push_back(row);
    }
  }
  return report;
}

void write_report_csv(const MetricReport& report, std::ostream& out) {
  out << "scenario,method,fid768,fid2048,kid,mos\n";
  for (const auto& r : report.rows) {
    out << r.scenario << ',' << r.method << ',' << format_double(r.fid768) << ',' << format_double(r.fid2048) << ','
        << format_double(r.kid) << ',' << (r.mos ? format_double(*r.mos) : std::string()) << '\n';
  }
}

MetricReport read_report_csv(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line) ||
      split_csv(line) != std::vector<std::string>{"scenario", "method", "fid768", "fid2048", "kid", "mos"}) {
    throw DataError(source + ": expected header scenario,method,fid768,fid2048,kid,mos");
  }
  MetricReport report;
  int64_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto c = split_csv(line);
    const std::string where = source + ":" + std::to_string(line_no);
    if (c.size() != 6) throw DataError(where + ": expected 6 columns");
    MetricRow r{c[0], c[1], parse_number(c[2], where), parse_number(c[3], where), parse_number(c[4], where)};
    if (!c[5].empty()) r.mos = parse_number(c[5], where);
    report.rows.push_back(r);
  }
  return report;
}

MetricReport merge_reports(const std::vector<MetricReport>& reports) {
  MetricReport merged;
  for (const auto& rep : reports) {
    for (const auto& r : rep.rows) {
      if (merged.find(r.scenario, r.method)) {
        throw DataError("duplicate report row for method " + r.method + " in scenario " + r.scenario);
      }
      merged.rows.push_back(r);
    }
  }
  return merged;
}

std::string format_report_table(const MetricReport& report) {
  const auto scenarios = report.scenarios();
  const auto methods = report.methods();
  static const std::array<const char*, 4> kColumns{"FID768", "FID2048", "KID", "MOS"};

  // cells[method][scenario * 4 + column]
  std::vector<std::vector<std::string>> cells(methods.size(), std::vector<std::string>(scenarios.size() * 4, "- "));
  for (size_t s = 0; s < scenarios.size(); ++s) {
    for (size_t c = 0; c < kColumns.size(); ++c) {
      std::vector<std::pair<double, size_t>> ranked;
      for (size_t m = 0; m < methods.size(); ++m) {
        const MetricRow* row = report.find(scenarios[s], methods[m]);
        if (!row) continue;
        std::optional<double> v;
        if (c == 0) v = row->fid768;
        if (c == 1) v = row->fid2048;
        if (c == 2) v = row->kid;
        if (c == 3) v = row->mos;
        if (!v || std::isnan(*v)) continue;
        char buf[64];
        std::snprintf(buf, sizeof(buf), c == 2 ? "%.4f" : "%.3f", *v);
        cells[m][s * 4 + c] = buf;
        ranked.emplace_back(c == 3 ? -*v : *v, m);
      }
      std::stable_sort(ranked.begin(), ranked.end(),
                       [](const auto& x, const auto& y) { return x.first < y.first; });
      for (size_t k = 0; k < ranked.size(); ++k) cells[ranked[k].second][s * 4 + c] += k == 0 ? "*" : k == 1 ? "+" : " ";
    }
  }

  size_t name_w = 6;
  for (const auto& m : methods) name_w = std::max(name_w, m.size());
  std::vector<size_t> col_w(scenarios.size() * 4);
  for (size_t i = 0; i < col_w.size(); ++i) {
    col_w[i] = std::string(kColumns[i % 4]).size();
    for (const auto& row : cells) col_w[i] = std::max(col_w[i], row[i].size());
  }
  // Widen the last column of a group if the group label is longer.
  for (size_t s = 0; s < scenarios.size(); ++s) {
    size_t group = 3 * 2;
    for (size_t c = 0; c < 4; ++c) group += col_w[s * 4 + c];
    const size_t label = scenario_label(scenarios[s]).size();
    if (label > group) col_w[s * 4 + 3] += label - group;
  }

  auto pad = [](const std::string& s, size_t w, bool right) {
    const std::string fill(w > s.size() ? w - s.size() : 0, ' ');
    return right ? fill + s : s + fill;
  };
  std::ostringstream out;
  out << pad("", name_w, false);
  for (size_t s = 0; s < scenarios.size(); ++s) {
    size_t group = 3 * 2;
    for (size_t c = 0; c < 4; ++c) group += col_w[s * 4 + c];
    out << " | " << pad(scenario_label(scenarios[s]), group, false);
  }
  out << '\n' << pad("Method", name_w, false);
  for (size_t s = 0; s < scenarios.size(); ++s) {
    out << " |";
    for (size_t c = 0; c < 4; ++c) out << (c ? "  " : " ") << pad(kColumns[c], col_w[s * 4 + c], true);
  }
  out << '\n';
  for (size_t m = 0; m < methods.size(); ++m) {
    out << pad(methods[m], name_w, false);
    for (size_t s = 0; s < scenarios.size(); ++s) {
      out << " |";
      for (size_t c = 0; c < 4; ++c) out << (c ? "  " : " ") << pad(cells[m][s * 4 + c], col_w[s * 4 + c], true);
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace cg3d
