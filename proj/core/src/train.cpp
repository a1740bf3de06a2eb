#include "posenc/train.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "posenc/adam.hpp"
#include "posenc/errors.hpp"
#include "posenc/rng.hpp"
#include "posenc/sequences.hpp"

namespace posenc {
namespace {

// Independent streams of one run.
constexpr std::uint64_t kInitStream = 0;
constexpr std::uint64_t kNegativeStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kDropoutStream = 3;

bool better(const EvalResult& a, const EvalResult& b) {
  if (a.hit_at_10 != b.hit_at_10) return a.hit_at_10 > b.hit_at_10;
  return a.ndcg > b.ndcg;
}

std::string describe(const ModelConfig& c) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "encoding=%s activation=%s lr=%g nmax=%s d=%zu blocks=%zu heads=%zu seed=%llu",
                std::string(to_string(c.encoding.variant)).c_str(), std::string(to_string(c.activation)).c_str(),
                c.lr, format_nmax(c.nmax).c_str(), c.d, c.blocks, c.heads,
                static_cast<unsigned long long>(c.seed));
  return buf;
}

}  // namespace

std::vector<int> eval_schedule(int total_epochs) {
  std::vector<int> out;
  if (total_epochs < 1) return out;
  out.push_back(1);
  for (int e = 2; e <= total_epochs; ++e) {
    if (e >= 1.3 * out.back()) out.push_back(e);
  }
  if (out.back() != total_epochs) out.push_back(total_epochs);
  return out;
}

std::uint64_t validation_seed(std::uint64_t run_seed) { return mix64(run_seed ^ 0x76616c6964ULL); }
std::uint64_t test_seed(std::uint64_t run_seed) { return mix64(run_seed ^ 0x74657374ULL); }

TrainOutcome train(const ModelConfig& config, const InteractionDataset& data, const TrainOptions& options) {
  return train(config, data, leave_one_out(data), options);
}

TrainOutcome train(const ModelConfig& config, const InteractionDataset& data, const LeaveOneOutSplit& split,
                   const TrainOptions& options) {
  config.validate();
  if (data.num_items() == 0 || split.train.empty()) throw DataError("train: dataset has no users");

  Rng init_rng(config.seed, kInitStream);
  Rng negative_rng(config.seed, kNegativeStream);
  Rng shuffle_rng(config.seed, kShuffleStream);
  Rng dropout_rng(config.seed, kDropoutStream);

  TrainOutcome out;
  out.model = std::make_shared<SequentialRecommender>(config, data.num_items(), init_rng, data.attributes,
                                                      data.attribute_dims);
  SequentialRecommender& model = *out.model;

  std::vector<std::size_t> users;
  std::vector<std::vector<std::int64_t>> excluded(split.train.size());
  for (std::size_t u = 0; u < split.train.size(); ++u) {
    if (split.train[u].size() < 2) {
      ++out.skipped_users;
      continue;
    }
    users.push_back(u);
    excluded[u] = exclusion_set(u < data.sequences.size() ? data.sequences[u] : split.train[u]);
  }
  if (users.empty()) throw DataError("train: no user has at least two training interactions");

  std::vector<Tensor> params;
  for (const auto& p : model.parameters()) params.push_back(p.tensor);
  AdamState adam;
  AdamOptions adam_options;
  adam_options.lr = config.lr;

  EvalOptions valid_options;
  valid_options.negatives = config.eval_negatives;
  valid_options.full_ranking = config.full_ranking;
  valid_options.seed = validation_seed(config.seed);
  EvalOptions test_options = valid_options;
  test_options.seed = test_seed(config.seed);

  const std::vector<int> schedule = eval_schedule(config.total_epochs());
  std::size_t next_eval = 0;
  std::vector<std::vector<double>> best_values = snapshot(model);
  bool have_best = false;

  for (int epoch = 1; epoch <= config.total_epochs(); ++epoch) {
    shuffle_rng.shuffle(std::span<std::size_t>(users));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < users.size(); start += config.batch_size) {
      const std::size_t end = std::min(users.size(), start + config.batch_size);
      SequenceBatch batch(config.max_len);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t u = users[k];
        auto row = build_sequence(split.train[u], config.max_len, data.num_items(), excluded[u], negative_rng);
        if (row) batch.append(*row);
        else ++batch.skipped;
      }
      if (batch.batch == 0) continue;
      const Tensor loss = model.loss(batch, &dropout_rng, true);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw TrainingDiverged(epoch, "training diverged at epoch " + std::to_string(epoch) +
                                          " (loss " + std::to_string(value) + "; " + describe(config) + ")");
      }
      backward(loss);
      if (config.lr > 0.0) {
        adam_step(params, adam, adam_options);
        model.apply_max_norm();
      } else {
        for (auto& p : params) p.zero_grad();
      }
      loss_sum += value;
      ++batches;
    }
    const double epoch_loss = batches > 0 ? loss_sum / static_cast<double>(batches) : 0.0;

    if (next_eval < schedule.size() && schedule[next_eval] == epoch) {
      ++next_eval;
      if (split.validation.empty()) {
        // Nothing to select on: keep the latest parameters.
        best_values = snapshot(model);
        out.best_epoch = epoch;
        have_best = true;
        continue;
      }
      EvalResult r = evaluate(model, split.validation, data.sequences, valid_options);
      MetricRow row{epoch, "valid", r.hit_at_10, r.ndcg, epoch_loss};
      out.history.push_back(row);
      if (options.on_eval) options.on_eval(row);
      if (!have_best || better(r, out.validation)) {
        out.validation = std::move(r);
        out.best_epoch = epoch;
        best_values = snapshot(model);
        have_best = true;
      }
    }
  }

  restore(model, best_values);
  if (!split.test.empty()) {
    out.test = evaluate(model, split.test, data.sequences, test_options);
    MetricRow row{out.best_epoch, "test", out.test.hit_at_10, out.test.ndcg, 0.0};
    for (const auto& h : out.history) {
      if (h.epoch == out.best_epoch) row.loss = h.loss;
    }
    out.history.push_back(row);
    if (options.on_eval) options.on_eval(row);
  }
  return out;
}

void write_history_tsv(std::ostream& out, const std::vector<MetricRow>& history) {
  out << "epoch\tsplit\tHit@10\tNDCG\tloss\n";
  char buf[160];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%d\t%s\t%.4f\t%.4f\t%.6f\n", r.epoch, r.split.c_str(), 100.0 * r.hit,
                  100.0 * r.ndcg, r.loss);
    out << buf;
  }
}

}  // namespace posenc
