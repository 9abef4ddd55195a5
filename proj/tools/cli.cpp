// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "aag/binary_io.hpp"
#include "aag/dataset.hpp"
#include "aag/errors.hpp"
#include "aag/metrics.hpp"
#include "aag/model.hpp"
#include "aag/training.hpp"

#ifndef AAG_VERSION_STRING
#define AAG_VERSION_STRING "aag-unknown"
#endif

namespace aag::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

/// Reproduction record written next to every artifact.
struct RunManifest {
  std::string command;
  json config = json::object();
  std::uint64_t seed = 0;
  std::string started = utc_now();
  json outputs = json::array();

  void write(const fs::path& path) const {
    json j{{"command", command},
           {"config", config},
           {"seed", seed},
           {"version", AAG_VERSION_STRING},
           {"start", started},
           {"end", utc_now()},
           {"outputs", outputs}};
    write_file_atomic(path, j.dump(2) + "\n");
  }
};

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw UsageError("cannot create directory " + dir.string() + ": " + ec.message());
}

unsigned eval_threads() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("AAG_THREADS")) {
    try {
      const int cap = std::stoi(env);
      if (cap >= 1) n = std::min(n, static_cast<unsigned>(cap));
    } catch (const std::exception&) {
      throw ConfigError(std::string("AAG_THREADS must be a positive integer, got '") + env + "'");
    }
  }
  return n;
}

SyntheticSpec synthetic_spec_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("synthetic spec must be a JSON object");
  SyntheticSpec s;
  auto count = [&](const std::string& key) {
    const auto& v = j.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      throw ConfigError("spec key '" + key + "' must be a non-negative integer");
    }
    return v.get<std::uint64_t>();
  };
  for (const auto& [key, value] : j.items()) {
    if (key == "n_classes") s.n_classes = static_cast<std::uint32_t>(count(key));
    else if (key == "d_ft") s.d_ft = static_cast<std::uint32_t>(count(key));
    else if (key == "d_txt") s.d_txt = static_cast<std::uint32_t>(count(key));
    else if (key == "history_len") s.history_len = static_cast<std::uint32_t>(count(key));
    else if (key == "n_samples") s.n_samples = static_cast<std::uint32_t>(count(key));
    else if (key == "frames") s.frames = static_cast<std::uint32_t>(count(key));
    else if (key == "seed") s.seed = count(key);
    else if (key == "label_rule") {
      if (!value.is_string()) throw ConfigError("spec key 'label_rule' must be a string");
      s.label_rule = label_rule_from_string(value.get<std::string>());
    } else if (key == "noise_sigma") {
      if (!value.is_number()) throw ConfigError("spec key 'noise_sigma' must be a number");
      s.noise_sigma = value.get<double>();
    } else if (key == "with_description") {
      if (!value.is_boolean()) throw ConfigError("spec key 'with_description' must be a boolean");
      s.with_description = value.get<bool>();
    } else {
      throw ConfigError("unknown synthetic spec key '" + key + "'");
    }
  }
  validate(s);
  return s;
}

json to_json(const SyntheticSpec& s) {
  return json{{"n_classes", s.n_classes},     {"d_ft", s.d_ft},
              {"d_txt", s.d_txt},             {"history_len", s.history_len},
              {"n_samples", s.n_samples},     {"frames", s.frames},
              {"label_rule", to_string(s.label_rule)},
              {"noise_sigma", s.noise_sigma}, {"with_description", s.with_description},
              {"seed", s.seed}};
}

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  json model_json = json::object();
};

/// Parses {"model": {...}, "train": {...}}; both sections optional.
RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  RunConfig rc;
  for (const auto& [key, value] : j.items()) {
    if (key == "model") {
      rc.model_json = value;
      rc.model = model_config_from_json(value);
    } else if (key == "train") {
      rc.train = train_config_from_json(value);
    } else {
      throw ConfigError("unknown run config section '" + key + "' (expected 'model' or 'train')");
    }
  }
  return rc;
}

/// Dimensions the config leaves unset are taken from the data header; ones it
/// sets must match.
ModelConfig resolve_model_config(const RunConfig& rc, const DatasetMeta& meta) {
  ModelConfig cfg = rc.model;
  const json& j = rc.model_json;
  if (!j.contains("d_ft")) cfg.d_ft = meta.d_ft;
  if (!j.contains("d_txt")) cfg.d_txt = meta.d_txt;
  if (!j.contains("n_classes")) cfg.n_classes = meta.n_classes;
  if (!j.contains("history_len")) cfg.history_len = meta.history_len;
  if (!j.contains("window") && cfg.input == InputMode::video) cfg.window = meta.frames;
  cfg.validate();
  check_compatible(cfg, meta);
  return cfg;
}

struct Inputs {
  Dataset train;
  Dataset val;
  ClassTextTable table;
};

Inputs load_inputs(const fs::path& train, const fs::path& val, const fs::path& classes) {
  Inputs in;
  in.train = read_aagf(train);
  in.val = read_aagf(val);
  if (!(in.train.meta == in.val.meta)) {
    throw DataError("train and validation headers differ (" + train.string() + " vs " + val.string() + ")");
  }
  in.table = load_class_table(classes, in.train.meta);
  return in;
}

std::vector<int> labels_of(const Dataset& d) {
  std::vector<int> labels;
  labels.reserve(d.records.size());
  for (const auto& r : d.records) labels.push_back(r.label);
  return labels;
}

// --- synth ---------------------------------------------------------------

int cmd_synth(const fs::path& spec_path, const fs::path& out_dir, std::ostream& out) {
  RunManifest manifest;
  manifest.command = "synth";
  const SyntheticSpec spec = synthetic_spec_from_json(read_json_file(spec_path));
  manifest.config = to_json(spec);
  manifest.seed = spec.seed;
  const SyntheticData data = generate_synthetic(spec);
  ensure_dir(out_dir);
  write_aagf(data.train, out_dir / "train.aagf");
  write_aagf(data.val, out_dir / "val.aagf");
  write_class_table(data.table, out_dir / "classes.aagc");
  manifest.outputs = {(out_dir / "train.aagf").string(), (out_dir / "val.aagf").string(),
                      (out_dir / "classes.aagc").string()};
  manifest.write(out_dir / "manifest.json");
  out << "wrote " << data.train.records.size() << " train / " << data.val.records.size() << " val records to "
      << out_dir.string() << '\n';
  return kOk;
}

// --- train ---------------------------------------------------------------

int cmd_train(const fs::path& train_path, const fs::path& val_path, const fs::path& classes_path,
              const fs::path& config_path, const fs::path& out_dir, const std::string& log_path,
              std::ostream& out) {
  RunManifest manifest;
  manifest.command = "train";
  const RunConfig rc = run_config_from_json(read_json_file(config_path));
  Inputs in = load_inputs(train_path, val_path, classes_path);
  const ModelConfig cfg = resolve_model_config(rc, in.train.meta);
  rc.train.validate();
  manifest.config = json{{"model", to_json(cfg)},
                         {"train", to_json(rc.train)},
                         {"data", {{"train", train_path.string()}, {"val", val_path.string()},
                                   {"classes", classes_path.string()}}}};
  manifest.seed = rc.train.seed;

  ensure_dir(out_dir);
  const fs::path log_file = log_path.empty() ? out_dir / "train_log.jsonl" : fs::path(log_path);
  std::ofstream log(log_file, std::ios::trunc);
  if (!log) throw UsageError("cannot write " + log_file.string());

  AagModel model(cfg);
  FitOptions options;
  options.eval_threads = eval_threads();
  options.on_epoch = [&](const EpochLog& e) {
    log << to_json(e).dump() << '\n';
    log.flush();
    out << "epoch " << e.epoch << " loss " << e.train_loss << " val_top1 " << e.val_top1
        << (e.improved ? " *" : "") << '\n';
  };
  const FitResult result = fit(model, in.train, in.val, in.table, rc.train, options);

  save_checkpoint(model, out_dir / "model.aagm");
  const MetricsReport report = evaluate(model, in.val, in.table, options.eval_threads);
  emit_report(report, ReportFormat::json, out_dir / "metrics.json");
  manifest.outputs = {(out_dir / "model.aagm").string(), (out_dir / "metrics.json").string(),
                      log_file.string()};
  manifest.write(out_dir / "manifest.json");
  out << "best epoch " << result.best_epoch << " of " << result.epochs_run << ", val top1 " << report.top1
      << ", top5 " << report.top5 << ", recall@5 " << report.class_mean_top5_recall << '\n';
  return kOk;
}

// --- eval ----------------------------------------------------------------

int cmd_eval(const fs::path& model_path, const fs::path& data_path, const fs::path& classes_path,
             const fs::path& out_path, std::optional<std::size_t> k, const std::string& dump_logits,
             std::ostream& out) {
  RunManifest manifest;
  manifest.command = "eval";
  const AagModel model = load_checkpoint(model_path);
  const Dataset data = read_aagf(data_path);
  const ClassTextTable table = load_class_table(classes_path, data.meta);
  check_compatible(model.config(), data.meta);
  if (data.records.empty()) throw UsageError("eval: " + data_path.string() + " has no records");
  manifest.config = json{{"model", to_json(model.config())},
                         {"data", data_path.string()},
                         {"classes", classes_path.string()}};
  manifest.seed = model.config().seed;

  const Tensor logits = model.predict_logits(data.records, table, eval_threads());
  const std::vector<int> labels = labels_of(data);
  const MetricsReport report = compute_metrics(logits, labels);

  const bool csv = out_path.extension() == ".csv";
  if (csv) {
    std::string text = to_csv(report);
    if (k) {
      std::ostringstream row;
      row.precision(17);
      row << "top_k_" << *k << ',' << top_k_accuracy(logits, labels, *k) << '\n';
      text += row.str();
    }
    write_file_atomic(out_path, text);
  } else {
    json j = to_json(report);
    if (k) {
      j["k"] = *k;
      j["top_k"] = top_k_accuracy(logits, labels, *k);
    }
    write_file_atomic(out_path, j.dump(2) + "\n");
  }
  manifest.outputs = json::array({out_path.string()});

  if (!dump_logits.empty()) {
    std::ostringstream os;
    os.precision(17);
    os << "sample_id,label";
    for (std::size_t c = 0; c < logits.cols(); ++c) os << ",logit_" << c;
    os << '\n';
    for (std::size_t i = 0; i < logits.rows(); ++i) {
      os << data.records[i].sample_id << ',' << labels[i];
      for (double v : logits.row(i)) os << ',' << v;
      os << '\n';
    }
    write_file_atomic(dump_logits, os.str());
    manifest.outputs.push_back(dump_logits);
  }
  fs::path manifest_path = out_path;
  manifest_path += ".manifest.json";
  manifest.write(manifest_path);
  out << "top1 " << report.top1 << ", top5 " << report.top5 << ", recall@5 " << report.class_mean_top5_recall
      << " over " << report.n_samples << " samples\n";
  return kOk;
}

// --- ablate --------------------------------------------------------------

struct GridCell {
  std::string label;
  ModelConfig model;
};

std::vector<GridCell> grid_cells(const std::string& grid, const ModelConfig& base) {
  std::vector<GridCell> cells;
  if (grid == "visual") {
    for (VisualFusion v : visual_fusion_grid()) {
      ModelConfig c = base;
      c.visual_fusion = v;
      if (c.multimodal_fusion == MultimodalFusion::self_attn_three) c.multimodal_fusion = MultimodalFusion::self_attn_vis_text;
      cells.push_back({to_string(v), c});
    }
  } else if (grid == "multimodal") {
    for (MultimodalFusion m : all_multimodal_fusions()) {
      ModelConfig c = base;
      c.multimodal_fusion = m;
      cells.push_back({to_string(m), c});
    }
  } else if (grid == "history_len") {
    for (std::uint32_t n : {1u, 3u, 5u, 7u, 10u}) {
      ModelConfig c = base;
      c.history_len = n;
      cells.push_back({"N=" + std::to_string(n), c});
    }
  } else if (grid == "history_source") {
    for (HistoryStrategy h : all_history_strategies()) {
      ModelConfig c = base;
      c.history_strategy = h;
      cells.push_back({to_string(h), c});
    }
  } else {
    throw ConfigError("unknown grid '" + grid + "' (expected visual, multimodal, history_len or history_source)");
  }
  return cells;
}

std::string csv_escape(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '"') c = ';';
  return s;
}

int cmd_ablate(const fs::path& train_path, const fs::path& val_path, const fs::path& classes_path,
               const std::string& grid, const std::string& config_path, const fs::path& out_path,
               std::ostream& out, std::ostream& err) {
  RunManifest manifest;
  manifest.command = "ablate";
  RunConfig rc;
  if (!config_path.empty()) rc = run_config_from_json(read_json_file(config_path));
  rc.train.validate();
  Inputs in = load_inputs(train_path, val_path, classes_path);

  ModelConfig base = rc.model;
  const json& j = rc.model_json;
  if (!j.contains("d_ft")) base.d_ft = in.train.meta.d_ft;
  if (!j.contains("d_txt")) base.d_txt = in.train.meta.d_txt;
  if (!j.contains("n_classes")) base.n_classes = in.train.meta.n_classes;
  if (!j.contains("history_len")) base.history_len = in.train.meta.history_len;
  if (!j.contains("window") && base.input == InputMode::video) base.window = in.train.meta.frames;
  const std::vector<GridCell> cells = grid_cells(grid, base);

  manifest.config = json{{"grid", grid},
                         {"base_model", to_json(base)},
                         {"train", to_json(rc.train)},
                         {"data", {{"train", train_path.string()}, {"val", val_path.string()},
                                   {"classes", classes_path.string()}}}};
  manifest.seed = rc.train.seed;

  const unsigned threads = eval_threads();
  std::ostringstream csv;
  csv.precision(17);
  csv << "strategy,top1,top5,recall5,epochs_run,wall_ms,error\n";
  bool any_failed = false;
  for (const GridCell& cell : cells) {
    const auto start = std::chrono::steady_clock::now();
    try {
      cell.model.validate();
      check_compatible(cell.model, in.train.meta);
      AagModel model(cell.model);
      FitOptions options;
      options.eval_threads = threads;
      const FitResult result = fit(model, in.train, in.val, in.table, rc.train, options);
      const MetricsReport report = evaluate(model, in.val, in.table, threads);
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      csv << cell.label << ',' << report.top1 << ',' << report.top5 << ',' << report.class_mean_top5_recall << ','
          << result.epochs_run << ',' << static_cast<long long>(ms) << ",\n";
      out << cell.label << ": top1 " << report.top1 << " top5 " << report.top5 << " (" << result.epochs_run
          << " epochs)\n";
    } catch (const Error& e) {
      any_failed = true;
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      csv << cell.label << ",,,,0," << static_cast<long long>(ms) << ',' << csv_escape(e.what()) << '\n';
      err << cell.label << ": failed: " << e.what() << '\n';
    }
  }
  if (out_path.has_parent_path()) ensure_dir(out_path.parent_path());
  write_file_atomic(out_path, csv.str());
  manifest.outputs = json::array({out_path.string()});
  fs::path manifest_path = out_path;
  manifest_path += ".manifest.json";
  manifest.write(manifest_path);
  return any_failed ? kPartialFailure : kOk;
}

// --- inspect -------------------------------------------------------------

int cmd_inspect(const fs::path& path, std::ostream& out) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  const std::string magic = bytes.size() >= 4 ? std::string(bytes.begin(), bytes.begin() + 4) : std::string();
  if (magic == "AAGF") {
    const Dataset d = decode_aagf(bytes, path.string());
    const DatasetMeta& m = d.meta;
    out << "format: AAGF v" << kAagfVersion << '\n'
        << "n_samples: " << d.records.size() << '\n'
        << "d_ft: " << m.d_ft << '\n'
        << "d_txt: " << m.d_txt << '\n'
        << "n_classes: " << m.n_classes << '\n'
        << "history_len: " << m.history_len << '\n'
        << "frames: " << m.frames << '\n'
        << "delta_ms: " << m.delta_ms << '\n'
        << "depth_source: " << to_string(m.depth_source) << '\n'
        << "description: " << (m.has_description ? "yes" : "no") << '\n';
  } else if (magic == "AAGC") {
    const ClassTextTable t = decode_aagc(bytes, path.string());
    out << "format: AAGC v" << kAagcVersion << '\n'
        << "n_classes: " << t.n_classes() << '\n'
        << "d_txt: " << t.d_txt << '\n';
    for (std::size_t i = 0; i < t.names.size(); ++i) out << "class " << i << ": " << t.names[i] << '\n';
  } else if (magic == "AAGM") {
    const AagModel model = decode_checkpoint(bytes, path.string());
    const auto params = model.parameters();
    out << "format: AAGM v" << kAagmVersion << '\n'
        << "config: " << to_json(model.config()).dump() << '\n'
        << "parameters: " << params.size() << " tensors\n"
        << "total_parameters: " << model.parameter_count() << '\n'
        << "trainable_parameters: " << model.parameter_count() << '\n';
    for (const Parameter* p : params) out << "  " << p->name << ' ' << p->value.shape_string() << '\n';
  } else {
    throw FormatError(path.string() + ": unknown magic '" + magic + "'");
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Action anticipation with multimodal fusion and action history", "aag"};
  app.require_subcommand(1);

  std::string spec, out_dir, train, val, classes, config, log, model_path, data, out_file, grid, file, dump;
  std::size_t k = 0;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--spec", spec, "SyntheticSpec JSON")->required();
  synth->add_option("--out", out_dir, "Output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "Train a model with early stopping");
  train_cmd->add_option("--train", train, "Training AAGF")->required();
  train_cmd->add_option("--val", val, "Validation AAGF")->required();
  train_cmd->add_option("--classes", classes, "Class table AAGC")->required();
  train_cmd->add_option("--config", config, "Run config JSON")->required();
  train_cmd->add_option("--out", out_dir, "Output directory")->required();
  train_cmd->add_option("--log", log, "Epoch log (JSON lines)");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--model", model_path, "AAGM checkpoint")->required();
  eval_cmd->add_option("--data", data, "AAGF dataset")->required();
  eval_cmd->add_option("--classes", classes, "Class table AAGC")->required();
  eval_cmd->add_option("--out", out_file, "Report path (.json or .csv)")->required();
  auto* k_opt = eval_cmd->add_option("--k", k, "Additional top-k accuracy")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--dump-logits", dump, "Write per-sample logits as CSV");

  auto* ablate = app.add_subcommand("ablate", "Train one model per grid cell");
  ablate->add_option("--train", train, "Training AAGF")->required();
  ablate->add_option("--val", val, "Validation AAGF")->required();
  ablate->add_option("--classes", classes, "Class table AAGC")->required();
  ablate->add_option("--grid", grid, "visual | multimodal | history_len | history_source")
      ->required()
      ->check(CLI::IsMember({"visual", "multimodal", "history_len", "history_source"}));
  ablate->add_option("--config", config, "Base run config JSON");
  ablate->add_option("--out", out_file, "Results CSV")->required();

  auto* inspect = app.add_subcommand("inspect", "Print the header of an AAGF, AAGC or AAGM file");
  inspect->add_option("--file", file, "File to inspect")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  }

  try {
    if (*synth) return cmd_synth(spec, out_dir, out);
    if (*train_cmd) return cmd_train(train, val, classes, config, out_dir, log, out);
    if (*eval_cmd) {
      return cmd_eval(model_path, data, classes, out_file, k_opt->count() ? std::optional<std::size_t>(k) : std::nullopt,
                      dump, out);
    }
    if (*ablate) return cmd_ablate(train, val, classes, grid, config, out_file, out, err);
    if (*inspect) return cmd_inspect(file, out);
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumericalFailure;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  }
  return kUsageError;
}

}  // namespace aag::cli
