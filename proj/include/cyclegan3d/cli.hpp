#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cyclegan3d/metrics.hpp"
#include "cyclegan3d/phantom.hpp"
#include "cyclegan3d/trainer.hpp"

namespace cg3d {

inline constexpr const char* kToolVersion = "0.1.0";

/// Record of one command invocation, written as JSON next to its outputs.
struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;
  uint64_t seed = 0;
  std::string tool_version = kToolVersion;
  std::string started_at;
  std::string finished_at;
};

nlohmann::json manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);
void write_manifest(const RunManifest& m, const std::filesystem::path& path);

struct GlobalOptions {
  std::optional<uint64_t> seed;
  std::optional<std::filesystem::path> config;
  bool force = false;
  int workers = 1;
};

/// Loads --config. A manifest is accepted too, in which case its "config"
/// object is used. Returns an empty object when no file was given.
nlohmann::json load_config_document(const GlobalOptions& g);

/// synth config: {"phantom": PhantomConfig, "train_count": n, "test_count": n}.
struct SynthConfig {
  PhantomDatasetSpec spec;
};
void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

struct SynthArgs {
  std::filesystem::path out_dir;
  std::optional<int64_t> count;
  std::optional<int64_t> test_count;
  std::optional<double> noise_sigma;
};
RunManifest cmd_synth(const GlobalOptions& g, const SynthArgs& a);

struct TrainArgs {
  std::filesystem::path data_root;
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;
  std::optional<int64_t> max_iterations;
  std::optional<int64_t> epochs;
  std::ostream* progress = nullptr;
};
RunManifest cmd_train(const GlobalOptions& g, const TrainArgs& a);

struct TranslateArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path input;
  /// Slice directory or TIFF file. The projection goes to
  /// `<output>.projection.png` and the manifest to `<output>.manifest.json`.
  std::filesystem::path output;
  Direction direction = Direction::XtoY;
};
RunManifest cmd_translate(const GlobalOptions& g, const TranslateArgs& a);

struct ProjectArgs {
  std::filesystem::path input;
  std::filesystem::path output;
  ProjectionMode mode = ProjectionMode::Mean;
};
RunManifest cmd_project(const GlobalOptions& g, const ProjectArgs& a);

struct EvaluateArgs {
  /// Directories of volume entries, one per method.
  std::vector<std::filesystem::path> generated;
  /// Method names; defaults to the directory names.
  std::vector<std::string> methods;
  std::filesystem::path reference;
  std::optional<std::filesystem::path> ranks;
  std::string scenario = "TOTAL";
  std::vector<int64_t> dims{768, 2048};
  /// TorchScript feature extractor; the seeded random-projection embedder otherwise.
  std::optional<std::filesystem::path> embedder;
  int64_t embedder_input_size = 299;
  /// Report CSV; the text table goes to `<out>.txt` with the extension replaced.
  std::filesystem::path out;
};
RunManifest cmd_evaluate(const GlobalOptions& g, const EvaluateArgs& a, std::ostream* warnings = nullptr);

struct ReportArgs {
  std::vector<std::filesystem::path> inputs;
  std::optional<std::filesystem::path> out;
};
/// Merges report CSVs and returns the aligned table; with `out` also writes
/// the merged CSV there and the table next to it.
std::string cmd_report(const GlobalOptions& g, const ReportArgs& a, RunManifest* manifest = nullptr);

/// Parses arguments and runs one command. Errors print as a single line
/// `error:<kind>:<message>` on `err`; the return value is the exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cg3d
