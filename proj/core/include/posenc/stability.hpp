#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "posenc/dataset.hpp"
#include "posenc/encodings.hpp"
#include "posenc/model_config.hpp"

namespace posenc {

inline constexpr double kConfidenceZ = 1.96;
inline constexpr double kDefaultDeviationThreshold = 3.0;

// Outcome of one seed. Metrics are fractions in [0, 1].
struct SeedResult {
  std::uint64_t seed = 0;
  bool ok = true;
  double hit = 0.0;
  double ndcg = 0.0;
  int best_epoch = 0;
  std::string error;  // set when !ok
};

struct ConfidenceInterval {
  double low = 0.0;
  double high = 0.0;
};

double round2(double x);

// mean +- z * dev / sqrt(runs), bounds rounded to two decimals.
ConfidenceInterval confidence_interval(double mean, double dev, std::size_t runs, double z = kConfidenceZ);

// Columns of one results-table row; metric fields on the x100 scale.
struct SweepSummary {
  std::string fingerprint;
  std::string activation = "leaky";
  std::string encoding = "None";
  std::string nmax = "NaN";
  std::vector<SeedResult> results;  // successful and failed seeds
  double hit_mean = 0.0;
  double hit_dev = 0.0;
  double ndcg_mean = 0.0;
  double ndcg_dev = 0.0;
  std::size_t runs = 0;  // successful seeds
  ConfidenceInterval ci;
  double ci_length = 0.0;
};

// Mean and sample standard deviation (n - 1) over the successful seeds; a
// single run has deviation 0. The CI is taken on Hit.
SweepSummary aggregate(std::span<const SeedResult> results);
// Same statistics from already-aggregated values, as printed in tables.
SweepSummary summary_from_moments(double hit_mean, double hit_dev, double ndcg_mean, double ndcg_dev,
                                  std::size_t runs);

struct DeviationSummary {
  std::string encoding;
  double avg_dev_hit = 0.0;
  double avg_dev_ndcg = 0.0;
  double avg_runs = 0.0;
  double avg_ci_length = 0.0;
  std::size_t summaries = 0;
};

// Unweighted means per encoding, in order of first appearance.
std::vector<DeviationSummary> avg_dev(std::span<const SweepSummary> summaries);

struct Recommendation {
  EncodingVariant variant = EncodingVariant::kRotatoryCon;
  double hit_dev = 0.0;
  double threshold = kDefaultDeviationThreshold;
  std::size_t runs = 0;
  std::string reason;
};

// Hit Dev above the threshold -> RMHA4, otherwise RotatoryCon. Throws
// UserError ("insufficient runs") for fewer than 3 runs and ConfigError when
// the baseline is not an encoding = None summary.
Recommendation recommend_encoding(const SweepSummary& baseline, double threshold = kDefaultDeviationThreshold);

// Per-seed worker: trains and evaluates config (seed already set).
using SeedRunner = std::function<SeedResult(const ModelConfig&)>;

struct SweepOptions {
  std::vector<std::uint64_t> seeds;
  std::size_t jobs = 1;
  // runs.jsonl, summary.tsv and per-seed run directories go here; empty
  // keeps everything in memory.
  std::filesystem::path out_dir;
  SeedRunner runner;  // defaults to train + test evaluation
  std::function<void(const std::string&)> warn;
};

// Trains every seed (up to `jobs` at a time), appending each result to
// runs.jsonl as it finishes. Seeds already in the ledger under the same
// config fingerprint are not recomputed. Diverged seeds are recorded and
// excluded from the statistics. Throws ConfigError for repeated seeds.
SweepSummary sweep(const ModelConfig& config, const InteractionDataset& data, const SweepOptions& options);

// Runs train() for one seed and reports its test metrics. With a non-empty
// run_dir, writes config.json, history.tsv, model.ckpt and metrics.tsv there.
SeedResult run_seed(const ModelConfig& config, const InteractionDataset& data,
                    const std::filesystem::path& run_dir = {});

// Ledger lines of one fingerprint; unparsable lines are skipped with a warning.
std::vector<SeedResult> read_ledger(const std::filesystem::path& path, const std::string& fingerprint,
                                    const std::function<void(const std::string&)>& warn = {});

// "Act\tencoding\tnmax\tHit Mean\tHit Dev\tNDCG Mean\tNDCG Dev\truns\tCI\tCI-length"
void write_summary_tsv(std::ostream& out, std::span<const SweepSummary> rows);
std::vector<SweepSummary> read_summary_tsv(std::istream& in);

}  // namespace posenc
