#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <torch/types.h>

#include "cyclegan3d/volume.hpp"

namespace torch::jit {
struct Module;
}

namespace cg3d {

/// Maps a square RGB image (3, S, S) with values in [0, 1] to a feature
/// vector of one of the supported dimensions (768 and 2048).
class FeatureEmbedder {
 public:
  virtual ~FeatureEmbedder() = default;
  virtual int64_t input_size() const = 0;
  virtual Eigen::VectorXd embed(const torch::Tensor& image, int64_t dim) const = 0;
  virtual std::string name() const = 0;
};

/// Deterministic embedder for tests and desk-scale runs: the image is
/// downsampled to 16 x 16, flattened (768 values) and multiplied by a fixed
/// Gaussian matrix drawn from `seed`.
class RandomProjectionEmbedder final : public FeatureEmbedder {
 public:
  explicit RandomProjectionEmbedder(uint64_t seed = 0);
  int64_t input_size() const override { return 16; }
  Eigen::VectorXd embed(const torch::Tensor& image, int64_t dim) const override;
  std::string name() const override;

 private:
  uint64_t seed_;
  Eigen::MatrixXd proj768_;
  Eigen::MatrixXd proj2048_;
};

/// Adapter for a pretrained inception-style network exported as TorchScript.
/// `forward` receives a (1, 3, S, S) float tensor in [-1, 1] and returns
/// either a tuple of feature tensors (one with 768 and one with 2048
/// elements) or a single tensor.
class TorchScriptEmbedder final : public FeatureEmbedder {
 public:
  TorchScriptEmbedder(const std::filesystem::path& path, int64_t input_size = 299);
  TorchScriptEmbedder(std::shared_ptr<torch::jit::Module> module, int64_t input_size, std::string label);
  int64_t input_size() const override { return input_size_; }
  Eigen::VectorXd embed(const torch::Tensor& image, int64_t dim) const override;
  std::string name() const override { return label_; }

 private:
  std::shared_ptr<torch::jit::Module> module_;
  int64_t input_size_;
  std::string label_;
};

/// Projects each volume to a fundus-like image, resizes it to the embedder's
/// input size (grayscale replicated to RGB) and embeds it. Row i belongs to
/// volumes[i].
Eigen::MatrixXd embed_set(const std::vector<Volume>& volumes, const FeatureEmbedder& embedder, int64_t dim);

/// Frechet distance between Gaussian fits (unbiased covariances) of the rows
/// of A and B. Clamped at 0.
double fid(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

struct KidOptions {
  /// 0 means one estimate over the full sets; otherwise the mean over this
  /// many random subsets of `subset_size` rows from each set.
  int64_t subsets = 0;
  int64_t subset_size = 0;
  uint64_t seed = 0;
};

/// Unbiased MMD^2 with kernel k(x, y) = (x.y / d + 1)^3, diagonal terms
/// excluded from the within-set sums. May be slightly negative.
double kid(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const KidOptions& options = {});

/// One rater's ranking of all methods for one image set (1 = best).
struct RankRecord {
  std::string rater_id;
  std::string set_id;
  std::map<std::string, int64_t> ranks;
};

/// Reads "rater_id,set_id,method,rank" rows (with header); rows sharing
/// (rater_id, set_id) form one record.
std::vector<RankRecord> read_rank_records(const std::filesystem::path& path);
std::vector<RankRecord> parse_rank_records(std::istream& in, const std::string& source = "<stream>");

/// Rank r of m maps linearly to 100 - (r - 1) * 99 / (m - 1); MOS is the mean
/// over records.
std::map<std::string, double> mos_aggregate(const std::vector<RankRecord>& records);

inline const std::vector<std::string>& canonical_scenarios() {
  static const std::vector<std::string> tags{"W_REF", "WO_REF", "TOTAL"};
  return tags;
}

struct MetricRow {
  std::string scenario;
  std::string method;
  double fid768 = 0;
  double fid2048 = 0;
  double kid = 0;
  std::optional<double> mos;
  bool operator==(const MetricRow&) const = default;
};

struct MetricReport {
  std::vector<MetricRow> rows;

  std::vector<std::string> scenarios() const;
  std::vector<std::string> methods() const;
  const MetricRow* find(const std::string& scenario, const std::string& method) const;
  bool operator==(const MetricReport&) const = default;
};

struct ScenarioInput {
  std::string tag;
  std::vector<Volume> reference;
  std::map<std::string, std::vector<Volume>> methods;
};

struct ReportOptions {
  /// FID dimensions to compute; the others are reported as NaN. KID uses the
  /// largest one.
  std::vector<int64_t> dims{768, 2048};
  KidOptions kid;
};

/// Scores every method of every scenario against that scenario's reference
/// set. A method with fewer than two volumes in a scenario is skipped and a
/// warning is written to `warnings`. `mos` maps scenario -> method -> MOS.
MetricReport build_report(const std::vector<ScenarioInput>& scenarios, const FeatureEmbedder& embedder,
                          const std::map<std::string, std::map<std::string, double>>& mos = {},
                          std::ostream* warnings = nullptr, const ReportOptions& options = {});

/// Columns: scenario,method,fid768,fid2048,kid,mos (empty when absent).
void write_report_csv(const MetricReport& report, std::ostream& out);
MetricReport read_report_csv(std::istream& in, const std::string& source = "<stream>");
MetricReport merge_reports(const std::vector<MetricReport>& reports);

/// Aligned text table with one column group (FID768, FID2048, KID, MOS) per
/// scenario. Per column the best value is marked '*' and the runner-up '+'
/// (lower is better except MOS). Missing and NaN values print as '-'.
std::string format_report_table(const MetricReport& report);

}  // namespace cg3d
