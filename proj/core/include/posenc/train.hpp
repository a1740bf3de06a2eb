#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "posenc/dataset.hpp"
#include "posenc/metrics.hpp"
#include "posenc/model.hpp"
#include "posenc/model_config.hpp"

namespace posenc {

struct MetricRow {
  int epoch = 0;
  std::string split;  // "valid" or "test"
  double hit = 0.0;   // fractions; the TSV prints them x100
  double ndcg = 0.0;
  double loss = 0.0;  // mean batch loss of that epoch
};

// Epochs at which validation runs: 1, then each epoch >= 1.3 x the last
// evaluated one, plus the final epoch.
std::vector<int> eval_schedule(int total_epochs);

struct TrainOptions {
  // Called after every evaluation, e.g. for progress output.
  std::function<void(const MetricRow&)> on_eval;
};

struct TrainOutcome {
  std::shared_ptr<SequentialRecommender> model;  // restored to the best epoch
  std::vector<MetricRow> history;
  EvalResult validation;  // at the best epoch
  EvalResult test;
  int best_epoch = 0;
  std::size_t skipped_users = 0;  // training histories shorter than 2
};

// Adam over shuffled user batches for config.total_epochs() epochs; the
// best validation checkpoint (Hit@10, then NDCG, then the earlier epoch)
// is kept and scored on the test cases. Deterministic given config.seed.
// lr = 0 trains nothing: the optimizer step is skipped. Throws
// TrainingDiverged when the loss turns non-finite.
TrainOutcome train(const ModelConfig& config, const InteractionDataset& data, const LeaveOneOutSplit& split,
                   const TrainOptions& options = {});
TrainOutcome train(const ModelConfig& config, const InteractionDataset& data, const TrainOptions& options = {});

// Seeds of the fixed validation and test negative streams for a run.
std::uint64_t validation_seed(std::uint64_t run_seed);
std::uint64_t test_seed(std::uint64_t run_seed);

// "epoch\tsplit\tHit@10\tNDCG\tloss" with metrics x100.
void write_history_tsv(std::ostream& out, const std::vector<MetricRow>& history);

}  // namespace posenc
