#include "cyclegan3d/cli.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "cyclegan3d/config_json.hpp"
#include "cyclegan3d/dataset.hpp"
#include "cyclegan3d/error.hpp"
#include "cyclegan3d/volume_io.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace cg3d {

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

fs::path sibling(const fs::path& p, const std::string& suffix) {
  auto out = p;
  out += suffix;
  return out;
}

bool non_empty_dir(const fs::path& p) { return fs::is_directory(p) && !fs::is_empty(p); }

void refuse_overwrite(const fs::path& p, bool force) {
  if (!force && fs::exists(p) && (!fs::is_directory(p) || !fs::is_empty(p))) {
    throw ConfigError("output " + p.string() + " already exists (use --force to overwrite)");
  }
}

std::vector<Volume> load_volume_set(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<Volume> vols;
  for (const auto& entry : list_volume_entries(dir)) vols.push_back(load_volume(entry));
  if (vols.empty()) throw DataError("no volumes found in " + dir.string());
  return vols;
}

std::string replace_ext(const fs::path& p, const std::string& ext) {
  auto q = p;
  q.replace_extension(ext);
  return q.string();
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  auto tmp = sibling(p, ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << text;
  }
  fs::rename(tmp, p);
}

}  // namespace

json manifest_to_json(const RunManifest& m) {
  return json{{"command", m.command},       {"config", m.config},     {"inputs", m.inputs},
              {"outputs", m.outputs},       {"seed", m.seed},         {"tool_version", m.tool_version},
              {"started_at", m.started_at}, {"finished_at", m.finished_at}};
}

RunManifest manifest_from_json(const json& j) {
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.config = j.at("config");
    m.inputs = j.value("inputs", std::map<std::string, std::string>{});
    m.outputs = j.value("outputs", std::map<std::string, std::string>{});
    m.seed = j.value("seed", uint64_t{0});
    m.tool_version = j.value("tool_version", std::string());
    m.started_at = j.value("started_at", std::string());
    m.finished_at = j.value("finished_at", std::string());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid manifest: ") + e.what());
  }
  return m;
}

void write_manifest(const RunManifest& m, const fs::path& path) { write_json_file_atomic(manifest_to_json(m), path); }

json load_config_document(const GlobalOptions& g) {
  if (!g.config) return json::object();
  json doc = read_json_file(*g.config);
  if (doc.is_object() && doc.contains("command") && doc.contains("config") && doc.contains("tool_version")) {
    return doc.at("config");
  }
  return doc;
}

void to_json(json& j, const SynthConfig& c) {
  j = json{{"phantom", c.spec.phantom}, {"train_count", c.spec.train_count}, {"test_count", c.spec.test_count}};
}

void from_json(const json& j, SynthConfig& c) {
  if (!j.is_object()) throw ConfigError("synth config must be a JSON object");
  for (const auto& item : j.items()) {
    const auto& k = item.key();
    if (k == "phantom") {
      c.spec.phantom = item.value().get<PhantomConfig>();
    } else if (k == "train_count" || k == "test_count") {
      if (!item.value().is_number_integer()) throw ConfigError("synth." + k + " must be an integer");
      (k == "train_count" ? c.spec.train_count : c.spec.test_count) = item.value().get<int64_t>();
    } else {
      throw ConfigError("synth: unknown key '" + k + "'");
    }
  }
}

RunManifest cmd_synth(const GlobalOptions& g, const SynthArgs& a) {
  RunManifest m;
  m.command = "synth";
  m.started_at = utc_now();
  SynthConfig c = load_config_document(g).get<SynthConfig>();
  if (a.count) c.spec.train_count = *a.count;
  if (a.test_count) c.spec.test_count = *a.test_count;
  if (a.noise_sigma) c.spec.phantom.noise_sigma = *a.noise_sigma;
  if (g.seed) c.spec.phantom.seed = *g.seed;
  c.spec.phantom.validate();

  if (non_empty_dir(a.out_dir)) {
    if (!g.force) throw ConfigError("output directory " + a.out_dir.string() + " is not empty (use --force)");
    for (const char* sub : {"trainX", "trainY", "testX", "testY", "manifest.json"}) fs::remove_all(a.out_dir / sub);
  }
  write_phantom_dataset(a.out_dir, c.spec, g.workers);

  m.config = c;
  m.seed = c.spec.phantom.seed;
  m.outputs["dataset"] = a.out_dir.string();
  m.finished_at = utc_now();
  write_manifest(m, a.out_dir / "manifest.json");
  return m;
}

RunManifest cmd_train(const GlobalOptions& g, const TrainArgs& a) {
  RunManifest m;
  m.command = "train";
  m.started_at = utc_now();
  TrainConfig cfg = load_config_document(g).get<TrainConfig>();
  if (g.seed) cfg.seed = *g.seed;
  if (a.max_iterations) cfg.max_iterations = *a.max_iterations;
  if (a.epochs) cfg.epochs = *a.epochs;
  cfg.validate();

  if (non_empty_dir(a.out_dir) && !g.force && !a.resume) {
    throw ConfigError("output directory " + a.out_dir.string() + " is not empty (use --force or --resume)");
  }
  const auto ds = load_dataset(a.data_root, Split::Train);
  ds.validate_for_training();
  fs::create_directories(a.out_dir);
  write_json_file_atomic(json(cfg), a.out_dir / "config.json");

  TrainRunOptions opts;
  opts.out_dir = a.out_dir;
  opts.workers = g.workers;
  if (a.resume) opts.resume = load_checkpoint(*a.resume);
  const int64_t total = planned_iterations(cfg, ds.x.size());
  if (a.progress) {
    opts.on_iteration = [&](int64_t it, const LossReport& r) {
      *a.progress << "iter " << (it + 1) << '/' << total;
      const auto values = r.values();
      for (size_t i = 0; i < values.size(); ++i) *a.progress << ' ' << LossReport::kFieldNames[i] << '=' << values[i];
      *a.progress << std::endl;
    };
  }
  train(cfg, ds, opts);

  m.config = cfg;
  m.seed = cfg.seed;
  m.inputs["data_root"] = a.data_root.string();
  if (a.resume) m.inputs["resume"] = a.resume->string();
  m.outputs["checkpoint"] = (a.out_dir / "final.ckpt").string();
  m.outputs["log"] = (a.out_dir / "train_log.csv").string();
  m.outputs["config"] = (a.out_dir / "config.json").string();
  m.finished_at = utc_now();
  write_manifest(m, a.out_dir / "manifest.json");
  return m;
}

RunManifest cmd_translate(const GlobalOptions& g, const TranslateArgs& a) {
  RunManifest m;
  m.command = "translate";
  m.started_at = utc_now();
  refuse_overwrite(a.output, g.force);
  const auto ckpt = load_checkpoint(a.checkpoint);
  const bool xy = a.direction == Direction::XtoY;
  const auto v = load_volume(a.input, xy ? Domain::OctLike : Domain::ConfocalLike);
  const auto out = translate(ckpt, v, a.direction);
  if (g.force && fs::exists(a.output)) fs::remove_all(a.output);
  save_volume(out, a.output);
  const auto projection = sibling(a.output, ".projection.png");
  save_projection(project_fundus(out), projection);

  const auto cfg = ckpt.train_config();
  m.config = {{"direction", xy ? "x2y" : "y2x"},
              {"checkpoint_iteration", ckpt.iteration()},
              {"generator", xy ? cfg.generator_xy : cfg.generator_yx}};
  m.seed = g.seed.value_or(cfg.seed);
  m.inputs = {{"checkpoint", a.checkpoint.string()}, {"volume", a.input.string()}};
  m.outputs = {{"volume", a.output.string()}, {"projection", projection.string()}};
  m.finished_at = utc_now();
  write_manifest(m, sibling(a.output, ".manifest.json"));
  return m;
}

RunManifest cmd_project(const GlobalOptions& g, const ProjectArgs& a) {
  RunManifest m;
  m.command = "project";
  m.started_at = utc_now();
  refuse_overwrite(a.output, g.force);
  const auto v = load_volume(a.input);
  save_projection(project_fundus(v, a.mode), a.output);
  m.config = {{"mode", a.mode == ProjectionMode::Mean ? "mean" : "max"}};
  m.seed = g.seed.value_or(0);
  m.inputs = {{"volume", a.input.string()}};
  m.outputs = {{"projection", a.output.string()}};
  m.finished_at = utc_now();
  write_manifest(m, sibling(a.output, ".manifest.json"));
  return m;
}

RunManifest cmd_evaluate(const GlobalOptions& g, const EvaluateArgs& a, std::ostream* warnings) {
  RunManifest m;
  m.command = "evaluate";
  m.started_at = utc_now();
  if (a.generated.empty()) throw ConfigError("evaluate needs at least one --generated directory");
  if (!a.methods.empty() && a.methods.size() != a.generated.size()) {
    throw ConfigError("--method must be given once per --generated directory");
  }
  refuse_overwrite(a.out, g.force);

  ScenarioInput sc;
  sc.tag = a.scenario;
  sc.reference = load_volume_set(a.reference);
  for (size_t i = 0; i < a.generated.size(); ++i) {
    const std::string name = a.methods.empty() ? a.generated[i].filename().string() : a.methods[i];
    if (sc.methods.count(name)) throw ConfigError("duplicate method name '" + name + "'");
    sc.methods[name] = load_volume_set(a.generated[i]);
  }
  std::map<std::string, std::map<std::string, double>> mos;
  if (a.ranks) mos[a.scenario] = mos_aggregate(read_rank_records(*a.ranks));

  const uint64_t seed = g.seed.value_or(0);
  std::unique_ptr<FeatureEmbedder> embedder;
  if (a.embedder) {
    embedder = std::make_unique<TorchScriptEmbedder>(*a.embedder, a.embedder_input_size);
  } else {
    embedder = std::make_unique<RandomProjectionEmbedder>(seed);
  }
  ReportOptions ro;
  ro.dims = a.dims;
  const auto report = build_report({sc}, *embedder, mos, warnings, ro);

  std::ostringstream csv;
  write_report_csv(report, csv);
  write_text(a.out, csv.str());
  const auto table_path = replace_ext(a.out, ".txt");
  write_text(table_path, format_report_table(report));

  m.config = {{"scenario", a.scenario}, {"dims", a.dims}, {"embedder", embedder->name()}};
  m.seed = seed;
  m.inputs["reference"] = a.reference.string();
  for (size_t i = 0; i < a.generated.size(); ++i) m.inputs["generated." + std::to_string(i)] = a.generated[i].string();
  if (a.ranks) m.inputs["ranks"] = a.ranks->string();
  m.outputs = {{"report", a.out.string()}, {"table", table_path}};
  m.finished_at = utc_now();
  write_manifest(m, sibling(a.out, ".manifest.json"));
  return m;
}

std::string cmd_report(const GlobalOptions& g, const ReportArgs& a, RunManifest* manifest) {
  RunManifest m;
  m.command = "report";
  m.started_at = utc_now();
  if (a.inputs.empty()) throw ConfigError("report needs at least one metric file");
  std::vector<MetricReport> parts;
  for (const auto& p : a.inputs) {
    std::ifstream in(p);
    if (!in) throw DataError("cannot open metric file " + p.string());
    parts.push_back(read_report_csv(in, p.string()));
  }
  const auto merged = merge_reports(parts);
  const auto table = format_report_table(merged);
  for (size_t i = 0; i < a.inputs.size(); ++i) m.inputs["metrics." + std::to_string(i)] = a.inputs[i].string();
  m.config = json::object();
  m.seed = g.seed.value_or(0);
  if (a.out) {
    refuse_overwrite(*a.out, g.force);
    std::ostringstream csv;
    write_report_csv(merged, csv);
    write_text(*a.out, csv.str());
    const auto table_path = replace_ext(*a.out, ".txt");
    write_text(table_path, table);
    m.outputs = {{"report", a.out->string()}, {"table", table_path}};
    m.finished_at = utc_now();
    write_manifest(m, sibling(*a.out, ".manifest.json"));
  } else {
    m.finished_at = utc_now();
  }
  if (manifest) *manifest = m;
  return table;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"3D CycleGAN for OCT-like to confocal-like volume translation"};
  app.name("cyclegan3d");
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  uint64_t seed = 0;
  std::string config_path;
  auto* seed_opt = app.add_option("--seed", seed, "Seed for every random stream");
  auto* config_opt = app.add_option("--config", config_path, "JSON config file (or a previous run's manifest)");
  app.add_flag("--force", g.force, "Overwrite existing outputs");
  app.add_option("--workers", g.workers, "Worker threads for data generation and prefetch")
      ->check(CLI::PositiveNumber);

  SynthArgs synth;
  int64_t synth_count = 0, synth_test = 0;
  double synth_sigma = 0;
  auto* c_synth = app.add_subcommand("synth", "Write a phantom dataset tree");
  c_synth->add_option("out_dir", synth.out_dir, "Dataset root")->required();
  auto* o_count = c_synth->add_option("--count", synth_count, "Training volumes per domain");
  auto* o_test = c_synth->add_option("--test-count", synth_test, "Test volumes per domain");
  auto* o_sigma = c_synth->add_option("--sigma", synth_sigma, "Noise sigma of the X domain");

  TrainArgs train_args;
  std::string resume_path;
  int64_t max_iters = 0, epochs = 0;
  auto* c_train = app.add_subcommand("train", "Train G and F on a dataset tree");
  c_train->add_option("--data", train_args.data_root, "Dataset root")->required();
  c_train->add_option("--out", train_args.out_dir, "Run directory")->required();
  auto* o_resume = c_train->add_option("--resume", resume_path, "Checkpoint to continue from");
  auto* o_iters = c_train->add_option("--max-iterations", max_iters, "Stop after this many iterations");
  auto* o_epochs = c_train->add_option("--epochs", epochs, "Epochs over the X domain");

  TranslateArgs tr;
  std::string direction = "x2y";
  auto* c_translate = app.add_subcommand("translate", "Run G or F from a checkpoint on one volume");
  c_translate->add_option("checkpoint", tr.checkpoint)->required();
  c_translate->add_option("input", tr.input)->required();
  c_translate->add_option("output", tr.output)->required();
  c_translate->add_option("--direction", direction)->check(CLI::IsMember({"x2y", "y2x"}));

  ProjectArgs pr;
  std::string mode = "mean";
  auto* c_project = app.add_subcommand("project", "Write the fundus-like projection of a volume");
  c_project->add_option("input", pr.input)->required();
  c_project->add_option("output", pr.output)->required();
  c_project->add_option("--mode", mode)->check(CLI::IsMember({"mean", "max"}));

  EvaluateArgs ev;
  std::string dims = "768,2048", ranks, embedder;
  auto* c_eval = app.add_subcommand("evaluate", "FID/KID (and MOS) of generated sets against a reference set");
  c_eval->add_option("--generated", ev.generated, "Directory of generated volumes (repeatable)")->required();
  c_eval->add_option("--method", ev.methods, "Method name per --generated");
  c_eval->add_option("--reference", ev.reference, "Directory of reference volumes")->required();
  auto* o_ranks = c_eval->add_option("--ranks", ranks, "Rank CSV (rater_id,set_id,method,rank)");
  c_eval->add_option("--scenario", ev.scenario, "Scenario tag (W_REF, WO_REF, TOTAL)");
  c_eval->add_option("--dims", dims, "Feature dimensions, comma separated");
  auto* o_embedder = c_eval->add_option("--embedder", embedder, "TorchScript feature extractor");
  c_eval->add_option("--embedder-size", ev.embedder_input_size, "Input side length of the extractor");
  c_eval->add_option("--out", ev.out, "Report CSV")->required();

  ReportArgs rep;
  std::string rep_out;
  auto* c_report = app.add_subcommand("report", "Merge metric CSVs into one table");
  c_report->add_option("inputs", rep.inputs)->required();
  auto* o_rep_out = c_report->add_option("--out", rep_out, "Merged CSV");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error:config:" << e.what() << '\n';
    return 2;
  }

  try {
    if (seed_opt->count()) g.seed = seed;
    if (config_opt->count()) g.config = config_path;
    if (c_synth->parsed()) {
      if (o_count->count()) synth.count = synth_count;
      if (o_test->count()) synth.test_count = synth_test;
      if (o_sigma->count()) synth.noise_sigma = synth_sigma;
      cmd_synth(g, synth);
      out << "wrote " << synth.out_dir.string() << '\n';
    } else if (c_train->parsed()) {
      if (o_resume->count()) train_args.resume = resume_path;
      if (o_iters->count()) train_args.max_iterations = max_iters;
      if (o_epochs->count()) train_args.epochs = epochs;
      train_args.progress = &out;
      cmd_train(g, train_args);
      out << "wrote " << (train_args.out_dir / "final.ckpt").string() << '\n';
    } else if (c_translate->parsed()) {
      tr.direction = parse_direction(direction);
      cmd_translate(g, tr);
      out << "wrote " << tr.output.string() << '\n';
    } else if (c_project->parsed()) {
      pr.mode = mode == "max" ? ProjectionMode::Max : ProjectionMode::Mean;
      cmd_project(g, pr);
      out << "wrote " << pr.output.string() << '\n';
    } else if (c_eval->parsed()) {
      ev.dims.clear();
      std::istringstream s(dims);
      std::string item;
      while (std::getline(s, item, ',')) {
        try {
          ev.dims.push_back(std::stoll(item));
        } catch (const std::exception&) {
          throw ConfigError("--dims: not an integer: '" + item + "'");
        }
      }
      if (o_ranks->count()) ev.ranks = ranks;
      if (o_embedder->count()) ev.embedder = embedder;
      cmd_evaluate(g, ev, &err);
      std::ifstream table(replace_ext(ev.out, ".txt"));
      out << table.rdbuf();
    } else if (c_report->parsed()) {
      if (o_rep_out->count()) rep.out = rep_out;
      out << cmd_report(g, rep);
    }
  } catch (const Error& e) {
    err << "error:" << to_string(e.kind()) << ':' << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error:data:" << e.what() << '\n';
    return 3;
  } catch (const c10::Error& e) {
    err << "error:shape:" << e.what_without_backtrace() << '\n';
    return 3;
  } catch (const std::exception& e) {
    err << "error:internal:" << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace cg3d
