#include "cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "posenc/checkpoint.hpp"
#include "posenc/errors.hpp"
#include "posenc/metrics.hpp"
#include "posenc/rng.hpp"
#include "posenc/stability.hpp"
#include "posenc/synth.hpp"
#include "posenc/train.hpp"

namespace posenc::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

void reject_unknown(const json& j, std::initializer_list<std::string_view> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown key '" + key + "' in " + where);
    }
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UserError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UserError("cannot write " + path.string());
  out << text;
}

// Flags shared by train and sweep; empty optionals leave the config alone.
struct Overrides {
  std::string config_path;
  std::string dataset;
  std::string preset;
  std::string encoding;
  std::string nmax;
  std::string activation;
  std::string seeds;
  std::optional<std::size_t> jobs;
  std::optional<int> epochs;
  std::optional<int> extra_epochs;
  std::optional<std::size_t> negatives;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
  std::string out;
};

void add_model_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("dataset", o.dataset, "Interaction log (overrides dataset.path)");
  cmd->add_option("--config", o.config_path, "JSON run config");
  cmd->add_option("--preset", o.preset, "Hyperparameter preset: Men, Fashion, Games, Beauty");
  cmd->add_option("--encoding", o.encoding, "Positional encoding variant");
  cmd->add_option("--nmax", o.nmax, "Row norm bound, FLOAT or none");
  cmd->add_option("--activation", o.activation, "leaky or silu");
  cmd->add_option("--epochs", o.epochs, "Training epochs");
  cmd->add_option("--extra-epochs", o.extra_epochs, "Epochs appended after --epochs");
  cmd->add_option("--negatives", o.negatives, "Sampled negatives per evaluated user");
  cmd->add_option("--lr", o.lr, "Adam learning rate");
  cmd->add_option("--out", o.out, "Output directory");
}

RunConfigFile resolve(const Overrides& o) {
  RunConfigFile cfg;
  if (!o.config_path.empty()) cfg = load_run_config(o.config_path);
  if (!o.preset.empty()) {
    const ModelConfig p = preset(o.preset);
    cfg.model = model_config_from_json(json::object(), p);
  }
  ModelConfig& m = cfg.model;
  if (!o.dataset.empty()) cfg.dataset.path = o.dataset;
  if (!o.encoding.empty()) m.encoding.variant = parse_encoding(o.encoding);
  if (!o.nmax.empty()) m.nmax = parse_nmax(o.nmax);
  if (!o.activation.empty()) {
    m.activation = parse_activation(o.activation);
    if (m.activation == Activation::kIdentity) throw ConfigError("--activation must be leaky or silu");
  }
  if (o.epochs) m.epochs = *o.epochs;
  if (o.extra_epochs) m.extra_epochs = *o.extra_epochs;
  if (o.negatives) m.eval_negatives = *o.negatives;
  if (o.seed) m.seed = *o.seed;
  if (o.lr) m.lr = *o.lr;
  if (!o.seeds.empty()) cfg.seeds = parse_seed_list(o.seeds);
  if (o.jobs) cfg.jobs = *o.jobs;
  if (!o.out.empty()) cfg.output = o.out;
  if (cfg.dataset.path.empty()) throw ConfigError("no dataset: pass a path or set dataset.path in --config");
  m.validate();
  return cfg;
}

fs::path output_dir(const RunConfigFile& cfg, const std::string& command) {
  if (!cfg.output.empty()) return cfg.output;
  const char* root = std::getenv(kOutRootEnv);
  const fs::path base = root && *root ? fs::path(root) : fs::path("runs");
  return base / (command + "-" + std::string(to_string(cfg.model.encoding.variant)) + "-" +
                 config_fingerprint(cfg.model).substr(0, 8));
}

void echo_config(const RunConfigFile& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  write_file(dir / "config.json", to_json(cfg).dump(2) + "\n");
  if (!cfg.source_text.empty()) write_file(dir / "config.input.json", cfg.source_text);
}

SweepSummary labelled(SweepSummary s, const ModelConfig& m) {
  s.fingerprint = config_fingerprint(m);
  s.activation = std::string(to_string(m.activation));
  s.encoding = std::string(to_string(m.encoding.variant));
  s.nmax = format_nmax(m.nmax);
  return s;
}

int cmd_stats(const DatasetRef& ref, const std::string& out_dir, bool tsv, std::ostream& out) {
  DatasetStats s;
  std::ifstream probe(ref.path);
  std::string first;
  if (probe && std::getline(probe, first) && first.rfind("users\titems", 0) == 0) {
    probe.seekg(0);
    s = read_stats_tsv(probe);
  } else {
    s = stats(load_dataset(ref));
  }
  if (tsv) write_stats_tsv(out, s);
  else out << format_stats_table(s);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream f(fs::path(out_dir) / "stats.tsv");
    write_stats_tsv(f, s);
  }
  return kExitOk;
}

int cmd_train(const Overrides& o, std::ostream& out) {
  RunConfigFile cfg = resolve(o);
  const fs::path dir = output_dir(cfg, "train");
  echo_config(cfg, dir);
  const InteractionDataset data = load_dataset(cfg.dataset);
  TrainOptions options;
  options.on_eval = [&](const MetricRow& r) {
    out << "epoch " << r.epoch << " " << r.split << " Hit@10 " << 100.0 * r.hit << " NDCG " << 100.0 * r.ndcg
        << " loss " << r.loss << "\n";
  };
  const TrainOutcome result = train(cfg.model, data, options);
  {
    std::ofstream f(dir / "history.tsv");
    write_history_tsv(f, result.history);
  }
  save_checkpoint(*result.model, dir / "model.ckpt");
  {
    std::ofstream f(dir / "metrics.tsv");
    write_eval_tsv(f, result.test);
  }
  SeedResult seed{cfg.model.seed, true, result.test.hit_at_10, result.test.ndcg, result.best_epoch, {}};
  const SweepSummary summary = labelled(aggregate(std::span<const SeedResult>(&seed, 1)), cfg.model);
  {
    std::ofstream f(dir / "summary.tsv");
    write_summary_tsv(f, std::span<const SweepSummary>(&summary, 1));
  }
  out << "best epoch " << result.best_epoch << ", test Hit@10 " << 100.0 * result.test.hit_at_10 << ", NDCG "
      << 100.0 * result.test.ndcg << "\nwrote " << dir.string() << "\n";
  return kExitOk;
}

int cmd_sweep(const Overrides& o, std::ostream& out, std::ostream& err) {
  RunConfigFile cfg = resolve(o);
  if (cfg.seeds.empty()) throw ConfigError("sweep needs --seeds or sweep.seeds in the config");
  // Reject bad input before anything is written.
  cfg.model.validate();
  if (std::set<std::uint64_t>(cfg.seeds.begin(), cfg.seeds.end()).size() != cfg.seeds.size()) {
    throw ConfigError("sweep: seeds must be distinct");
  }
  const fs::path dir = output_dir(cfg, "sweep");
  echo_config(cfg, dir);
  const InteractionDataset data = load_dataset(cfg.dataset);
  SweepOptions options;
  options.seeds = cfg.seeds;
  options.jobs = cfg.jobs;
  options.out_dir = dir;
  options.warn = [&](const std::string& msg) { err << "warning: " << msg << "\n"; };
  const SweepSummary s = sweep(cfg.model, data, options);
  write_summary_tsv(out, std::span<const SweepSummary>(&s, 1));
  out << "wrote " << dir.string() << "\n";
  return kExitOk;
}

int cmd_evaluate(const std::string& checkpoint, const DatasetRef& ref, const std::string& split_name,
                 std::optional<std::size_t> negatives, std::optional<std::uint64_t> seed, const std::string& out_dir,
                 std::ostream& out) {
  const auto model = load_checkpoint(checkpoint);
  const InteractionDataset data = load_dataset(ref);
  if (data.num_items() != model->num_items()) {
    throw DataError("dataset has " + std::to_string(data.num_items()) + " items but the checkpoint expects " +
                    std::to_string(model->num_items()));
  }
  const LeaveOneOutSplit split = leave_one_out(data);
  EvalOptions options;
  options.negatives = negatives.value_or(model->config().eval_negatives);
  options.full_ranking = model->config().full_ranking;
  std::span<const EvalCase> cases;
  if (split_name == "test") {
    cases = split.test;
    options.seed = seed.value_or(test_seed(model->config().seed));
  } else if (split_name == "valid") {
    cases = split.validation;
    options.seed = seed.value_or(validation_seed(model->config().seed));
  } else {
    throw ConfigError("--split must be test or valid");
  }
  const EvalResult r = evaluate(*model, cases, data.sequences, options);
  write_eval_tsv(out, r);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream f(fs::path(out_dir) / "metrics.tsv");
    write_eval_tsv(f, r);
  }
  return kExitOk;
}

int cmd_recommend(const std::string& path, double threshold, std::ostream& out) {
  fs::path file = path;
  if (fs::is_directory(file)) file /= "summary.tsv";
  std::ifstream in(file);
  if (!in) throw UserError("cannot read " + file.string());
  const auto rows = read_summary_tsv(in);
  const SweepSummary* baseline = nullptr;
  for (const auto& r : rows) {
    if (parse_encoding(r.encoding) == EncodingVariant::kNone) baseline = &r;
  }
  if (!baseline) throw UserError(file.string() + " has no encoding = None row to use as the baseline");
  const Recommendation rec = recommend_encoding(*baseline, threshold);
  out << "recommendation\t" << to_string(rec.variant) << "\n"
      << "evidence\t" << rec.reason << "\n";
  return kExitOk;
}

int cmd_subset(const DatasetRef& ref, std::optional<std::size_t> items, std::optional<std::size_t> users,
               std::uint64_t seed, const std::string& out_dir, std::ostream& out) {
  if (out_dir.empty()) throw ConfigError("subset needs --out");
  const InteractionDataset data = load_dataset(ref);
  Rng rng(seed);
  const InteractionDataset sub = subset(data, {items, users}, rng);
  fs::create_directories(out_dir);
  {
    std::ofstream f(fs::path(out_dir) / "interactions.tsv");
    write_interactions(f, sub);
  }
  save_index_maps(sub, out_dir);
  const DatasetStats s = stats(sub);
  {
    std::ofstream f(fs::path(out_dir) / "stats.tsv");
    write_stats_tsv(f, s);
  }
  out << format_stats_table(s);
  return kExitOk;
}

int cmd_synth(const SynthOptions& o, const std::string& out_path, std::ostream& out) {
  const auto rows = synthesize(o);
  if (out_path.empty() || out_path == "-") {
    write_synth_log(out, rows);
    return kExitOk;
  }
  const fs::path p(out_path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw UserError("cannot write " + out_path);
  write_synth_log(f, rows);
  return kExitOk;
}

}  // namespace

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(csv);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t");
    const auto e = cell.find_last_not_of(" \t");
    if (b == std::string::npos) throw ConfigError("empty entry in seed list '" + csv + "'");
    cell = cell.substr(b, e - b + 1);
    if (cell.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError("seed '" + cell + "' is not a non-negative integer");
    }
    seeds.push_back(std::stoull(cell));
  }
  if (seeds.empty()) throw ConfigError("empty seed list");
  return seeds;
}

RunConfigFile parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown(j, {"dataset", "preset", "model", "encoding", "split", "sweep", "output"}, "run config");
  RunConfigFile cfg;
  cfg.source_text = text;
  try {
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      if (d.is_string()) {
        cfg.dataset.path = d.get<std::string>();
      } else {
        reject_unknown(d, {"path", "format", "attributes", "min_interactions"}, "dataset");
        cfg.dataset.path = d.value("path", std::string());
        cfg.dataset.format = d.value("format", cfg.dataset.format);
        cfg.dataset.attributes = d.value("attributes", std::string());
        cfg.dataset.min_interactions = d.value("min_interactions", cfg.dataset.min_interactions);
      }
    }
    if (j.contains("preset")) cfg.model = preset(j.at("preset").get<std::string>());
    if (j.contains("model")) cfg.model = model_config_from_json(j.at("model"), cfg.model);
    if (j.contains("encoding")) {
      cfg.model = model_config_from_json(json{{"encoding", j.at("encoding")}}, cfg.model);
    }
    if (j.contains("split") && j.at("split").get<std::string>() != "leave-one-out") {
      throw ConfigError("split: only 'leave-one-out' is supported");
    }
    if (j.contains("sweep")) {
      const auto& s = j.at("sweep");
      reject_unknown(s, {"seeds", "jobs"}, "sweep");
      if (s.contains("seeds")) cfg.seeds = s.at("seeds").get<std::vector<std::uint64_t>>();
      cfg.jobs = s.value("jobs", cfg.jobs);
    }
    cfg.output = j.value("output", std::string());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return cfg;
}

RunConfigFile load_run_config(const fs::path& path) { return parse_run_config(read_file(path)); }

json to_json(const RunConfigFile& cfg) {
  json j = {
      {"dataset",
       {{"path", cfg.dataset.path},
        {"format", cfg.dataset.format},
        {"attributes", cfg.dataset.attributes},
        {"min_interactions", cfg.dataset.min_interactions}}},
      {"model", posenc::to_json(cfg.model)},
      {"split", "leave-one-out"},
      {"sweep", {{"seeds", cfg.seeds}, {"jobs", cfg.jobs}}},
      {"output", cfg.output},
  };
  return j;
}

InteractionDataset load_dataset(const DatasetRef& ref) {
  LoadOptions options;
  options.format = ref.format;
  options.min_interactions = ref.min_interactions;
  InteractionDataset ds = load_interactions(ref.path, options);
  if (!ref.attributes.empty()) load_attributes(ds, ref.attributes);
  return ds;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Positional-encoding workbench for transformer sequential recommenders", "posenc"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "posenc 0.1.0");

  DatasetRef ref;
  auto add_dataset_flags = [&](CLI::App* cmd, bool positional) {
    if (positional) cmd->add_option("dataset", ref.path, "Interaction log")->required();
    cmd->add_option("--format", ref.format, "auto, tsv, csv or ws");
    cmd->add_option("--attributes", ref.attributes, "Item attribute sidecar");
    cmd->add_option("--min-interactions", ref.min_interactions, "Drop users with fewer rows");
  };

  std::string out_dir;
  bool tsv = false;
  auto* stats_cmd = app.add_subcommand("stats", "Dataset statistics (also re-reads a stats TSV)");
  add_dataset_flags(stats_cmd, true);
  stats_cmd->add_flag("--tsv", tsv, "Print TSV instead of a table");
  stats_cmd->add_option("--out", out_dir, "Also write stats.tsv here");

  SynthOptions synth;
  std::string profile = "memorizable";
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic interaction log");
  synth_cmd->add_option("--profile", profile, "memorizable, positional or random");
  synth_cmd->add_option("--users", synth.users);
  synth_cmd->add_option("--items", synth.items);
  synth_cmd->add_option("--length", synth.length, "Items per user (memorizable, positional)");
  synth_cmd->add_option("--interactions", synth.interactions, "Total rows (random)");
  synth_cmd->add_option("--noise", synth.noise, "Run-break probability (positional)");
  synth_cmd->add_option("--seed", synth.seed);
  synth_cmd->add_option("--out", synth_out, "Output file (default stdout)");

  std::optional<std::size_t> item_budget;
  std::optional<std::size_t> user_budget;
  std::uint64_t subset_seed = 42;
  auto* subset_cmd = app.add_subcommand("subset", "Popularity/user-budget subset of a dataset");
  add_dataset_flags(subset_cmd, true);
  subset_cmd->add_option("--items", item_budget, "Keep the N most popular items");
  subset_cmd->add_option("--users", user_budget, "Keep N users sampled uniformly");
  subset_cmd->add_option("--seed", subset_seed);
  subset_cmd->add_option("--out", out_dir, "Output directory")->required();

  Overrides train_o;
  auto* train_cmd = app.add_subcommand("train", "Train one model and evaluate it");
  add_model_flags(train_cmd, train_o);
  train_cmd->add_option("--seed", train_o.seed);

  Overrides sweep_o;
  auto* sweep_cmd = app.add_subcommand("sweep", "Train over several seeds and aggregate");
  add_model_flags(sweep_cmd, sweep_o);
  sweep_cmd->add_option("--seeds", sweep_o.seeds, "Comma-separated seeds");
  sweep_cmd->add_option("--jobs", sweep_o.jobs, "Concurrent runs");

  std::string checkpoint;
  std::string split_name = "test";
  std::optional<std::size_t> eval_negatives;
  std::optional<std::uint64_t> eval_seed;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score a checkpoint on a dataset split");
  add_dataset_flags(eval_cmd, true);
  eval_cmd->add_option("--checkpoint", checkpoint, "model.ckpt from train")->required();
  eval_cmd->add_option("--split", split_name, "test or valid");
  eval_cmd->add_option("--negatives", eval_negatives);
  eval_cmd->add_option("--seed", eval_seed, "Negative sampling seed");
  eval_cmd->add_option("--out", out_dir);

  std::string summary_path;
  double threshold = kDefaultDeviationThreshold;
  auto* rec_cmd = app.add_subcommand("recommend-encoding", "Pick an encoding from a None-baseline sweep");
  rec_cmd->add_option("summary", summary_path, "summary.tsv or sweep directory")->required();
  rec_cmd->add_option("--threshold", threshold, "Hit Dev threshold");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUserError;
  }

  try {
    if (*stats_cmd) return cmd_stats(ref, out_dir, tsv, out);
    if (*synth_cmd) {
      synth.profile = parse_synth_profile(profile);
      return cmd_synth(synth, synth_out, out);
    }
    if (*subset_cmd) return cmd_subset(ref, item_budget, user_budget, subset_seed, out_dir, out);
    if (*train_cmd) return cmd_train(train_o, out);
    if (*sweep_cmd) return cmd_sweep(sweep_o, out, err);
    if (*eval_cmd) return cmd_evaluate(checkpoint, ref, split_name, eval_negatives, eval_seed, out_dir, out);
    if (*rec_cmd) return cmd_recommend(summary_path, threshold, out);
  } catch (const UserError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUserError;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;
}

}  // namespace posenc::cli
