// SPDX-FileCopyrightText: (c) 2026 The flowdetect Authors
//
// SPDX-License-Identifier: Apache-2.0

#include <openssl/evp.h>

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "flowdetect/flowdetect.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace flowdetect;

namespace {

constexpr int kRunFormatVersion = 1;

std::string hex(const unsigned char* data, std::size_t n) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(digits[data[i] >> 4]);
    out.push_back(digits[data[i] & 0xf]);
  }
  return out;
}

/// Same id `git hash-object` prints for the content.
std::string git_blob_sha1(std::string_view content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1 || EVP_DigestUpdate(ctx, header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx, content.data(), content.size()) != 1 || EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error(Errc::io_error, "sha1 digest failed");
  }
  EVP_MD_CTX_free(ctx);
  return hex(digest, len);
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Collects inputs and outputs of one subcommand and writes manifest.json last.
class RunManifest {
 public:
  RunManifest(std::string subcommand, fs::path out) : subcommand_(std::move(subcommand)), out_(std::move(out)) {
    std::error_code ec;
    fs::create_directories(out_, ec);
    if (ec) throw Error(Errc::io_error, "cannot create '" + out_.string() + "': " + ec.message());
  }

  const fs::path& dir() const { return out_; }

  void input(const fs::path& path) {
    if (fs::is_directory(path)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(path))
        if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) input(f);
      return;
    }
    inputs_.push_back({{"path", path.string()}, {"sha1", git_blob_sha1(csv::read_file(path.string()))}});
  }

  void write(const std::string& name, std::string_view content) {
    csv::write_file((out_ / name).string(), content);
    outputs_.push_back({{"path", name}, {"sha1", git_blob_sha1(content)}});
  }

  /// Records a file some library routine already wrote into the output directory.
  void output(const std::string& name) {
    outputs_.push_back({{"path", name}, {"sha1", git_blob_sha1(csv::read_file((out_ / name).string()))}});
  }

  void finish(const json& config, std::uint64_t seed) {
    json m = {{"tool", "flowdetect"},
              {"tool_version", "0.1.0"},
              {"subcommand", subcommand_},
              {"config", config},
              {"seed", seed},
              {"inputs", inputs_},
              {"outputs", outputs_},
              {"timestamp", utc_timestamp()}};
    csv::write_file((out_ / "manifest.json").string(), m.dump(2) + "\n");
  }

 private:
  std::string subcommand_;
  fs::path out_;
  json inputs_ = json::array();
  json outputs_ = json::array();
};

json read_json(const fs::path& path) {
  try {
    return json::parse(csv::read_file(path.string()));
  } catch (const json::exception& e) {
    throw Error(Errc::format_version_mismatch, path.string() + ": " + e.what());
  }
}

// ------------------------------------------------------------ options

struct SeedOpt {
  std::uint64_t value = 0;
  CLI::Option* opt = nullptr;

  void add(CLI::App* app) { opt = app->add_option("--seed", value, "Random seed (fallback: FLOWDETECT_SEED, then 0)"); }

  /// Flags and config win; the environment is the fallback.
  std::uint64_t resolve() {
    if (opt->count() == 0) {
      if (const char* env = std::getenv("FLOWDETECT_SEED"); env && *env) {
        try {
          value = std::stoull(env);
        } catch (const std::exception&) {
          throw Error(Errc::invalid_argument, "FLOWDETECT_SEED is not an unsigned integer: '" + std::string(env) + "'");
        }
      }
    }
    return value;
  }
};

struct TrainOpts {
  TrainConfig train;
  ModelConfig dims;
  std::string mode = "full_ft";
  std::vector<std::string> targets = {"q", "v"};
  std::string quantization = "raw";

  void add(CLI::App* app) {
    app->add_option("--mode", mode, "full_ft or lora")->capture_default_str();
    app->add_option("--lr", train.learning_rate, "Adam learning rate")->capture_default_str();
    app->add_option("--batch", train.batch_size, "Mini-batch size")->capture_default_str();
    app->add_option("--epochs", train.max_epochs, "Maximum epochs")->capture_default_str();
    app->add_option("--patience", train.early_stop_patience, "Early-stopping patience")->capture_default_str();
    app->add_option("--l2", train.l2_coeff, "L2 coefficient")->capture_default_str();
    app->add_option("--rank", train.lora_rank, "LoRA rank")->capture_default_str();
    app->add_option("--targets", targets, "LoRA target matrices (q k v o w1 w2)")->capture_default_str();
    app->add_option("--lora-scaling", train.lora_scaling, "LoRA output scaling")->capture_default_str();
    app->add_option("--class-weights", train.class_weights, "Loss weight per class (normal attack)");
    app->add_option("--d-model", dims.d_model, "Model width")->capture_default_str();
    app->add_option("--layers", dims.n_layers, "Encoder layers")->capture_default_str();
    app->add_option("--heads", dims.n_heads, "Attention heads")->capture_default_str();
    app->add_option("--d-ff", dims.d_ff, "Feed-forward width")->capture_default_str();
    app->add_option("--dropout", dims.dropout_p, "Dropout probability")->capture_default_str();
    app->add_option("--quantization", quantization, "Numeric token policy: raw or log_bucket")->capture_default_str();
  }

  void resolve(std::uint64_t seed) {
    train.seed = seed;
    train.mode = train_mode_from_string(mode);
    train.lora_targets.clear();
    for (const auto& t : targets) train.lora_targets.push_back(lora_target_from_string(t));
    train.validate();
    quantization_from_string(quantization);
  }

  json to_config() const {
    json j = to_json(train);
    j["model"] = to_json(dims);
    j["model"].erase("vocab_size");
    j["model"].erase("max_seq");
    j["quantization"] = quantization;
    return j;
  }
};

struct PerturbOpts {
  std::string scale = "auto";
  bool no_round = false;
  bool no_clip = false;

  void add(CLI::App* app) {
    app->add_option("--scale", scale, "Noise scale, or 'auto' (lambda 4, otherwise 1 x column std)")->capture_default_str();
    app->add_flag("--no-round", no_round, "Keep full noisy precision instead of the cell's own");
    app->add_flag("--no-clip", no_clip, "Allow non-negative columns to go negative");
  }

  PerturbSpec spec(NoiseKind kind, std::uint64_t seed) const {
    PerturbSpec s;
    if (scale == "auto") {
      s = auto_scaled(kind, seed);
    } else {
      s.kind = kind;
      s.seed = seed;
      try {
        s.scale = std::stod(scale);
      } catch (const std::exception&) {
        throw Error(Errc::invalid_argument, "--scale must be 'auto' or a number, got '" + scale + "'");
      }
    }
    s.round_to_precision = !no_round;
    s.clip_nonnegative = !no_clip;
    return s;
  }

  json to_config() const { return {{"scale", scale}, {"round", !no_round}, {"clip_nonnegative", !no_clip}}; }
};

// ------------------------------------------------------- shared pieces

/// Column kinds and standard deviations per source, frozen from a training split.
struct SourceStats {
  std::map<std::string, std::vector<ColumnKind>> kinds;
  ColumnStats stds;
};

SourceStats source_stats(const MixDataset& mix) {
  SourceStats out;
  for (const auto& schema : mix.schemas) {
    FlowTable t{schema, {}};
    for (const auto& r : mix.train)
      if (r.source == schema.dataset_name) t.records.push_back(r);
    std::vector<ColumnKind> kinds;
    if (t.empty()) {
      for (const auto& c : schema.feature_columns())
        kinds.push_back(c.kind == ColumnKind::automatic ? ColumnKind::categorical : c.kind);
    } else {
      kinds = column_kinds(t);
    }
    out.stds[schema.dataset_name] = column_std(t.records, kinds);
    out.kinds[schema.dataset_name] = std::move(kinds);
  }
  return out;
}

json stats_to_json(const SourceStats& s) {
  json j = json::object();
  for (const auto& [name, kinds] : s.kinds) {
    json k = json::array();
    for (auto kind : kinds) k.push_back(to_string(kind));
    j[name] = {{"kinds", k}, {"column_std", s.stds.at(name)}};
  }
  return j;
}

SourceStats stats_from_json(const json& j) {
  SourceStats s;
  for (const auto& [name, v] : j.items()) {
    auto& kinds = s.kinds[name];
    for (const auto& k : v.at("kinds")) kinds.push_back(column_kind_from_string(k.get<std::string>()));
    s.stds[name] = v.at("column_std").get<std::vector<double>>();
  }
  return s;
}

/// Everything `train` leaves behind that `eval` and `robustness` need.
struct TrainedRun {
  json meta;
  Vocabulary vocab;
  WindowSpec window;
  ModelParams<float> params;
  std::optional<LoraAdapter<float>> adapter;
  SourceStats stats;

  const LoraAdapter<float>* adapter_ptr() const { return adapter ? &*adapter : nullptr; }
  std::uint64_t seed() const { return meta.at("seed").get<std::uint64_t>(); }
  std::string hash() const { return meta.at("config_hash").get<std::string>(); }
};

TrainedRun load_run(const fs::path& dir, RunManifest& manifest) {
  const auto meta_path = dir / "run.json";
  auto meta = read_json(meta_path);
  if (meta.value("format", "") != "flowdetect-run" || meta.value("version", -1) != kRunFormatVersion)
    throw Error(Errc::format_version_mismatch, meta_path.string() + ": not a flowdetect-run v" +
                                                   std::to_string(kRunFormatVersion) + " file");
  manifest.input(meta_path);
  for (auto name : {"vocab.txt", "model.bin"}) manifest.input(dir / name);
  auto vocab = Vocabulary::deserialize(csv::read_file((dir / "vocab.txt").string()));
  auto params = load_model(dir / "model.bin");
  std::optional<LoraAdapter<float>> adapter;
  if (meta.value("adapter", false)) {
    manifest.input(dir / "adapter.bin");
    adapter = load_adapter(dir / "adapter.bin", params);
  }
  WindowSpec window{meta.at("window").get<std::size_t>()};
  auto stats = stats_from_json(meta.at("sources"));
  return TrainedRun{std::move(meta), std::move(vocab), window, std::move(params), std::move(adapter), std::move(stats)};
}

MixDataset load_mix_input(const fs::path& dir, RunManifest& manifest) {
  auto mix = load_mix(dir);
  manifest.input(dir);
  return mix;
}

std::vector<std::string> pick_sources(const MixDataset& mix, const std::vector<std::string>& wanted) {
  std::vector<std::string> out;
  if (wanted.empty()) {
    for (const auto& [name, records] : mix.tests) out.push_back(name);
    return out;
  }
  for (const auto& w : wanted) {
    if (!mix.tests.contains(w)) throw Error(Errc::invalid_argument, "mix has no test set for source '" + w + "'");
    out.push_back(w);
  }
  return out;
}

// --------------------------------------------------------- subcommands

struct SynthArgs {
  std::vector<std::string> styles = {"nsl_kdd", "kdd99", "unsw_nb15", "x_iiotid"};
  std::size_t rows = 1000;
  SeedOpt seed;
  std::string out;
};

void cmd_synth(SynthArgs& a) {
  const auto seed = a.seed.resolve();
  RunManifest manifest("synth", a.out);
  json datasets = json::array();
  for (const auto& name : a.styles) {
    std::string text;
    Schema schema;
    const auto style_seed = derive_seed(seed, "synth/" + name);
    if (name == "separable") {
      auto table = synthetic::separable_table(a.rows, style_seed, name);
      schema = table.schema;
      text = write_dataset_text(table);
    } else {
      const auto style = synthetic::dataset_style_from_string(name);
      schema = synthetic::styled_schema(style);
      text = synthetic::styled_csv(style, a.rows, style_seed);
    }
    const auto file = schema.dataset_name + ".csv";
    manifest.write(file, text);
    auto entry = schema_to_json(schema);
    entry["file"] = file;
    datasets.push_back(entry);
  }
  manifest.write("schemas.json", json{{"datasets", datasets}}.dump(2) + "\n");
  manifest.finish({{"styles", a.styles}, {"rows", a.rows}}, seed);
  std::cout << "wrote " << a.styles.size() << " datasets to " << a.out << "\n";
}

struct IngestArgs {
  std::string schemas;
  std::vector<std::string> inputs;  // name=path overrides
  std::vector<std::string> datasets;
  std::string out;
};

void cmd_ingest(IngestArgs& a) {
  RunManifest manifest("ingest", a.out);
  manifest.input(a.schemas);
  std::map<std::string, std::string> overrides;
  for (const auto& kv : a.inputs) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error(Errc::invalid_argument, "--input expects name=path, got '" + kv + "'");
    overrides[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  json datasets = json::array();
  json summary = json::array();
  for (const auto& entry : load_schema_manifest(a.schemas)) {
    const auto& name = entry.schema.dataset_name;
    if (!a.datasets.empty() && std::find(a.datasets.begin(), a.datasets.end(), name) == a.datasets.end()) continue;
    std::string path;
    if (auto it = overrides.find(name); it != overrides.end()) {
      path = it->second;
    } else if (entry.file) {
      path = *entry.file;
    } else {
      throw Error(Errc::invalid_argument, "dataset '" + name + "' has no file; pass --input " + name + "=<path>");
    }
    FlowTable table;
    try {
      table = parse_dataset(path, entry.schema);
    } catch (const Error& e) {
      throw Error(e.code(), path + ": " + e.what());
    }
    manifest.input(path);
    table.schema = resolve_schema(table);
    const auto file = name + ".csv";
    manifest.write(file, write_dataset_text(table));
    auto j = schema_to_json(table.schema);
    j["file"] = file;
    datasets.push_back(j);
    std::size_t attacks = 0;
    for (const auto& r : table.records) attacks += r.label == Label::attack;
    summary.push_back({{"dataset", name}, {"records", table.size()}, {"attack", attacks}, {"normal", table.size() - attacks}});
    std::cout << name << ": " << table.size() << " records (" << attacks << " attack)\n";
  }
  if (datasets.empty()) throw Error(Errc::invalid_argument, "no dataset selected from " + a.schemas);
  manifest.write("schemas.json", json{{"datasets", datasets}}.dump(2) + "\n");
  manifest.write("ingest.json", summary.dump(2) + "\n");
  manifest.finish({{"schemas", a.schemas}, {"inputs", a.inputs}, {"datasets", a.datasets}}, 0);
}

/// Tables named by a schema manifest (or a directory holding schemas.json).
std::vector<FlowTable> load_tables(const std::string& where, const std::vector<std::string>& only, RunManifest& manifest) {
  fs::path path = where;
  if (fs::is_directory(path)) path /= "schemas.json";
  manifest.input(path);
  std::vector<FlowTable> tables;
  for (const auto& entry : load_schema_manifest(path.string())) {
    if (!only.empty() && std::find(only.begin(), only.end(), entry.schema.dataset_name) == only.end()) continue;
    if (!entry.file) throw Error(Errc::invalid_argument, path.string() + ": dataset '" + entry.schema.dataset_name + "' has no file");
    try {
      tables.push_back(parse_dataset(*entry.file, entry.schema));
    } catch (const Error& e) {
      throw Error(e.code(), *entry.file + ": " + e.what());
    }
    manifest.input(*entry.file);
  }
  if (tables.empty()) throw Error(Errc::invalid_argument, "no dataset selected from " + path.string());
  return tables;
}

struct BuildMixArgs {
  std::string tables;
  std::vector<std::string> datasets;
  std::size_t per_source = 100000;
  std::size_t test_per_source = 10000;
  std::string separator = "U+241F";
  SeedOpt seed;
  std::string out;
};

void cmd_build_mix(BuildMixArgs& a) {
  const auto seed = a.seed.resolve();
  RunManifest manifest("build-mix", a.out);
  if (!a.separator.starts_with("U+")) throw Error(Errc::invalid_argument, "--separator must look like U+241F");
  const auto sep = static_cast<char32_t>(std::stoul(a.separator.substr(2), nullptr, 16));
  auto tables = load_tables(a.tables, a.datasets, manifest);
  auto mix = build_mix(tables, a.per_source, a.test_per_source, seed, sep);
  serialize_mix(mix, a.out);
  manifest.output("mix.json");
  manifest.output("train.txt");
  manifest.output("val.txt");
  for (const auto& [name, records] : mix.tests) manifest.output("test_" + name + ".txt");
  manifest.finish({{"tables", a.tables},
                   {"datasets", a.datasets},
                   {"per_source", a.per_source},
                   {"test_per_source", a.test_per_source},
                   {"separator", a.separator}},
                  seed);
  std::cout << "train " << mix.train.size() << ", val " << mix.val.size();
  for (const auto& [name, records] : mix.tests) std::cout << ", test[" << name << "] " << records.size();
  std::cout << "\n";
}

struct TrainArgs {
  std::string mix;
  TrainOpts opts;
  SeedOpt seed;
  std::string out;
};

void cmd_train(TrainArgs& a) {
  const auto seed = a.seed.resolve();
  a.opts.resolve(seed);
  RunManifest manifest("train", a.out);
  auto mix = load_mix_input(a.mix, manifest);
  if (mix.train.empty()) throw Error(Errc::empty_train_split, a.mix + ": training split is empty");

  const auto quant = quantization_from_string(a.opts.quantization);
  auto vocab = Vocabulary::from_records(mix.train, quant);
  const auto window = compute_window(mix.train);
  auto params = init_model<float>(model_config_for(a.opts.dims, vocab.size(), window.sequence_length()),
                                  derive_seed(seed, "init"));
  auto result = sft_train<float>(a.opts.train, std::move(params), std::nullopt, mix.train, mix.val, vocab, window);
  for (const auto& e : result.history.epochs)
    std::cerr << "epoch " << e.epoch << " train_loss " << e.train_loss << " val_loss " << e.val_loss << " val_acc "
              << e.val_accuracy << "\n";

  const auto config = a.opts.to_config();
  const auto hash = config_hash(config);
  json meta = {{"format", "flowdetect-run"},
               {"version", kRunFormatVersion},
               {"seed", seed},
               {"config", config},
               {"config_hash", hash},
               {"model", to_json(result.params.config)},
               {"window", window.window},
               {"sequence_length", window.sequence_length()},
               {"adapter", result.adapter.has_value()},
               {"trainable_params", result.trainable_params},
               {"total_params", result.params.parameter_count()},
               {"best_epoch", result.history.best_epoch},
               {"stop_reason", result.history.stop_reason},
               {"sources", stats_to_json(source_stats(mix))}};

  manifest.write("model.bin", encode_model(result.params, {{"config_hash", hash}}));
  if (result.adapter) manifest.write("adapter.bin", encode_adapter(*result.adapter));
  manifest.write("vocab.txt", vocab.serialize());
  manifest.write("history.jsonl", history_jsonl(result.history));
  manifest.write("run.json", meta.dump(2) + "\n");
  manifest.write("timing.json", json{{"train_seconds", result.train_seconds}}.dump(2) + "\n");
  json resolved = config;
  resolved["mix"] = a.mix;
  manifest.finish(resolved, seed);
  std::cout << "best epoch " << result.history.best_epoch << " of " << result.history.epochs.size() << " ("
            << result.history.stop_reason << "), trainable params " << result.trainable_params << "\n";
}

struct EvalArgs {
  std::string run;
  std::string mix;
  std::vector<std::string> sources;
  std::string perturb;
  PerturbOpts popts;
  SeedOpt seed;
  std::string out;
};

void cmd_eval(EvalArgs& a) {
  const auto seed = a.seed.resolve();
  RunManifest manifest("eval", a.out);
  auto run = load_run(a.run, manifest);
  auto mix = load_mix_input(a.mix, manifest);
  std::optional<PerturbSpec> spec;
  if (!a.perturb.empty()) spec = a.popts.spec(noise_kind_from_string(a.perturb), seed);

  std::vector<EvalReport> reports;
  json timing = json::object();
  for (const auto& source : pick_sources(mix, a.sources)) {
    std::vector<FlowRecord> records = mix.tests.at(source);
    if (spec) records = perturb_records(records, *spec, run.stats.kinds, run.stats.stds);
    auto r = evaluate<float>(run.params, run.adapter_ptr(), records, run.vocab, run.window, source);
    r.seed = run.seed();
    r.config_hash = run.hash();
    if (spec) r.perturbation = to_json(*spec);
    timing[source] = r.wall_seconds;
    reports.push_back(std::move(r));
  }
  manifest.write("report.json", reports_json(reports).dump(2) + "\n");
  manifest.write("report.txt", render_table(reports));
  manifest.write("timing.json", timing.dump(2) + "\n");
  json config = {{"run", a.run}, {"mix", a.mix}, {"sources", a.sources}, {"perturb", a.perturb}};
  config.update(a.popts.to_config());
  manifest.finish(config, seed);
  std::cout << render_table(reports);
}

struct PerturbArgs {
  std::string mix;
  std::string kind = "gaussian";
  PerturbOpts popts;
  SeedOpt seed;
  std::string out;
};

void cmd_perturb(PerturbArgs& a) {
  const auto seed = a.seed.resolve();
  RunManifest manifest("perturb", a.out);
  auto mix = load_mix_input(a.mix, manifest);
  const auto spec = a.popts.spec(noise_kind_from_string(a.kind), seed);
  const auto stats = source_stats(mix);
  for (auto& [name, records] : mix.tests) records = perturb_records(records, spec, stats.kinds, stats.stds);
  serialize_mix(mix, a.out);
  manifest.output("mix.json");
  manifest.output("train.txt");
  manifest.output("val.txt");
  for (const auto& [name, records] : mix.tests) manifest.output("test_" + name + ".txt");
  manifest.write("perturb.json", to_json(spec).dump(2) + "\n");
  json config = {{"mix", a.mix}, {"kind", a.kind}};
  config.update(a.popts.to_config());
  manifest.finish(config, seed);
  std::cout << "perturbed " << mix.tests.size() << " test sets with " << a.kind << "\n";
}

struct TokreportArgs {
  std::string tables;
  std::vector<std::string> datasets;
  std::size_t subword_vocab_size = 1000;
  std::vector<std::string> perturb;
  PerturbOpts popts;
  SeedOpt seed;
  std::string out;
};

std::string tokreport_table(const std::vector<CorpusStats>& rows) {
  std::vector<std::vector<std::string>> cells;
  for (const auto& s : rows) {
    char mean[32], secs[32];
    std::snprintf(mean, sizeof mean, "%.2f", s.mean_length);
    std::snprintf(secs, sizeof secs, "%.4f", s.tokenize_seconds);
    cells.push_back({s.dataset, s.tokenizer, s.perturbation, std::to_string(s.max_length), mean, secs});
  }
  return detail::render_rows({"Dataset", "Tokenizer", "Perturbation", "MaxLen", "MeanLen", "Seconds"}, cells);
}

void cmd_tokreport(TokreportArgs& a) {
  const auto seed = a.seed.resolve();
  RunManifest manifest("tokreport", a.out);
  auto tables = load_tables(a.tables, a.datasets, manifest);
  std::vector<NoiseKind> kinds;
  for (const auto& p : a.perturb) {
    if (p == "all") {
      kinds.assign(std::begin(kAllNoiseKinds), std::end(kAllNoiseKinds));
    } else {
      kinds.push_back(noise_kind_from_string(p));
    }
  }
  std::vector<CorpusStats> rows;
  for (const auto& table : tables) {
    const auto vocab = build_vocab(table);
    const auto window = compute_window(table, vocab);
    std::vector<std::string> texts;
    for (const auto& r : table.records) texts.push_back(flow_text(r));
    const auto subword = train_subword_vocab(texts, a.subword_vocab_size);
    rows.push_back(corpus_stats(table, vocab, window));
    rows.push_back(corpus_stats(table, subword));
    const auto column = column_kinds(table);
    for (auto kind : kinds) {
      const auto spec = a.popts.spec(kind, derive_seed(seed, table.schema.dataset_name));
      const auto noisy = perturb_table(table, spec, column).table;
      for (auto s : {corpus_stats(noisy, vocab, window), corpus_stats(noisy, subword)}) {
        s.perturbation = std::string(to_string(kind));
        rows.push_back(std::move(s));
      }
    }
  }
  json j = json::array();
  for (const auto& s : rows) j.push_back(to_json(s));
  manifest.write("tokreport.json", j.dump(2) + "\n");
  manifest.write("tokreport.txt", tokreport_table(rows));
  json config = {{"tables", a.tables}, {"datasets", a.datasets}, {"subword_vocab_size", a.subword_vocab_size},
                 {"perturb", a.perturb}};
  config.update(a.popts.to_config());
  manifest.finish(config, seed);
  std::cout << tokreport_table(rows);
}

struct RobustnessArgs {
  std::string run;
  std::string mix;
  std::vector<std::string> sources;
  bool no_round = false;
  bool no_clip = false;
  SeedOpt seed;
  std::string out;
};

void cmd_robustness(RobustnessArgs& a) {
  const auto seed = a.seed.resolve();
  RunManifest manifest("robustness", a.out);
  auto run = load_run(a.run, manifest);
  auto mix = load_mix_input(a.mix, manifest);
  auto specs = default_perturbations(seed);
  for (auto& s : specs) {
    s.round_to_precision = !a.no_round;
    s.clip_nonnegative = !a.no_clip;
  }
  std::vector<EvalReport> reports;
  for (const auto& source : pick_sources(mix, a.sources)) {
    auto part = robustness_run(run.params, run.adapter_ptr(), std::span<const FlowRecord>(mix.tests.at(source)),
                               run.vocab, run.window, run.stats.kinds, run.stats.stds, specs, source);
    for (auto& r : part) {
      r.seed = run.seed();
      r.config_hash = run.hash();
      reports.push_back(std::move(r));
    }
  }
  manifest.write("robustness.json", reports_json(reports).dump(2) + "\n");
  manifest.write("robustness.txt", render_table(reports));
  manifest.finish({{"run", a.run}, {"mix", a.mix}, {"sources", a.sources}, {"round", !a.no_round},
                   {"clip_nonnegative", !a.no_clip}},
                  seed);
  std::cout << render_table(reports);
}

struct AblateArgs {
  std::string mix;
  TrainOpts opts;
  std::size_t subword_vocab_size = 1000;
  SeedOpt seed;
  std::string out;
};

void cmd_ablate(AblateArgs& a) {
  const auto seed = a.seed.resolve();
  a.opts.resolve(seed);
  RunManifest manifest("ablate", a.out);
  auto mix = load_mix_input(a.mix, manifest);
  std::vector<FlowRecord> test;
  for (const auto& [name, records] : mix.tests) test.insert(test.end(), records.begin(), records.end());
  AblationSetup setup{a.opts.dims, a.opts.train, a.subword_vocab_size, "mix"};
  auto rows = ablation_run(kAblationGrid, mix.train, mix.val, test, setup);
  json j = json::array();
  for (const auto& r : rows) j.push_back(to_json(r));
  manifest.write("ablation.json", j.dump(2) + "\n");
  manifest.write("ablation.txt", render_ablation_table(rows));
  json config = a.opts.to_config();
  config["mix"] = a.mix;
  config["subword_vocab_size"] = a.subword_vocab_size;
  manifest.finish(config, seed);
  std::cout << render_ablation_table(rows);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowdetect: flow tokenization, tiny-encoder training and robustness evaluation"};
  app.set_config("--config", "", "TOML config file; flags override it")->check(CLI::ExistingFile);
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate deterministic dataset-styled CSV files and a schema manifest");
  c_synth->add_option("--style", synth.styles, "nsl_kdd, kdd99, unsw_nb15, x_iiotid or separable")->capture_default_str();
  c_synth->add_option("--rows", synth.rows, "Records per dataset")->capture_default_str();
  synth.seed.add(c_synth);
  c_synth->add_option("--out", synth.out, "Output directory")->required();

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Parse CSV datasets under a schema manifest");
  c_ingest->add_option("--schemas", ingest.schemas, "Schema manifest (JSON)")->required();
  c_ingest->add_option("--input", ingest.inputs, "Override a dataset file: name=path");
  c_ingest->add_option("--dataset", ingest.datasets, "Only these datasets");
  c_ingest->add_option("--out", ingest.out, "Output directory")->required();

  BuildMixArgs mix;
  auto* c_mix = app.add_subcommand("build-mix", "Sample, split 4:1 and build per-source test sets");
  c_mix->add_option("--tables", mix.tables, "Ingested directory or schema manifest")->required();
  c_mix->add_option("--dataset", mix.datasets, "Only these datasets");
  c_mix->add_option("--per-source", mix.per_source, "Records sampled per source")->capture_default_str();
  c_mix->add_option("--test-per-source", mix.test_per_source, "Test records per source")->capture_default_str();
  c_mix->add_option("--separator", mix.separator, "Field separator code point")->capture_default_str();
  mix.seed.add(c_mix);
  c_mix->add_option("--out", mix.out, "Output directory")->required();

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Fine-tune the encoder on a MIX dataset");
  c_train->add_option("--mix", train.mix, "MIX directory")->required();
  train.opts.add(c_train);
  train.seed.add(c_train);
  c_train->add_option("--out", train.out, "Output directory")->required();

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a trained run on the MIX test sets");
  c_eval->add_option("--run", eval.run, "Directory written by train")->required();
  c_eval->add_option("--mix", eval.mix, "MIX directory")->required();
  c_eval->add_option("--source", eval.sources, "Only these test sets");
  c_eval->add_option("--perturb", eval.perturb, "poisson, uniform, gaussian or laplace");
  eval.popts.add(c_eval);
  eval.seed.add(c_eval);
  c_eval->add_option("--out", eval.out, "Output directory")->required();

  PerturbArgs perturb;
  auto* c_perturb = app.add_subcommand("perturb", "Write a copy of a MIX dataset with perturbed test sets");
  c_perturb->add_option("--mix", perturb.mix, "MIX directory")->required();
  c_perturb->add_option("--kind", perturb.kind, "poisson, uniform, gaussian or laplace")->capture_default_str();
  perturb.popts.add(c_perturb);
  perturb.seed.add(c_perturb);
  c_perturb->add_option("--out", perturb.out, "Output directory")->required();

  TokreportArgs tok;
  auto* c_tok = app.add_subcommand("tokreport", "Compare NSS and subword sequence lengths and timings");
  c_tok->add_option("--tables", tok.tables, "Ingested directory or schema manifest")->required();
  c_tok->add_option("--dataset", tok.datasets, "Only these datasets");
  c_tok->add_option("--subword-vocab-size", tok.subword_vocab_size, "Subword vocabulary size")->capture_default_str();
  c_tok->add_option("--perturb", tok.perturb, "Also report under these perturbations (or 'all')");
  tok.popts.add(c_tok);
  tok.seed.add(c_tok);
  c_tok->add_option("--out", tok.out, "Output directory")->required();

  RobustnessArgs rob;
  auto* c_rob = app.add_subcommand("robustness", "Clean vs. the four perturbation families at automatic scales");
  c_rob->add_option("--run", rob.run, "Directory written by train")->required();
  c_rob->add_option("--mix", rob.mix, "MIX directory")->required();
  c_rob->add_option("--source", rob.sources, "Only these test sets");
  c_rob->add_flag("--no-round", rob.no_round, "Keep full noisy precision");
  c_rob->add_flag("--no-clip", rob.no_clip, "Allow non-negative columns to go negative");
  rob.seed.add(c_rob);
  c_rob->add_option("--out", rob.out, "Output directory")->required();

  AblateArgs ablate;
  auto* c_ablate = app.add_subcommand("ablate", "Train and evaluate the SFT/NSS/LoRA ablation grid");
  c_ablate->add_option("--mix", ablate.mix, "MIX directory")->required();
  ablate.opts.add(c_ablate);
  c_ablate->add_option("--subword-vocab-size", ablate.subword_vocab_size, "Subword vocabulary size")->capture_default_str();
  ablate.seed.add(c_ablate);
  c_ablate->add_option("--out", ablate.out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  auto* active = app.get_subcommands().front();
  try {
    if (active == c_synth) cmd_synth(synth);
    if (active == c_ingest) cmd_ingest(ingest);
    if (active == c_mix) cmd_build_mix(mix);
    if (active == c_train) cmd_train(train);
    if (active == c_eval) cmd_eval(eval);
    if (active == c_perturb) cmd_perturb(perturb);
    if (active == c_tok) cmd_tokreport(tok);
    if (active == c_rob) cmd_robustness(rob);
    if (active == c_ablate) cmd_ablate(ablate);
  } catch (const std::exception& e) {
    std::cerr << "flowdetect " << active->get_name() << ": error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
