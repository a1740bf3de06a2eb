#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "posenc/checkpoint.hpp"
#include "posenc/errors.hpp"
#include "posenc/model.hpp"
#include "posenc/rng.hpp"
#include "posenc/synth.hpp"
#include "posenc/train.hpp"

namespace posenc {
namespace {

using testing::check_gradient;
using testing::random_values;

ModelConfig tiny_config(EncodingVariant v = EncodingVariant::kLearnt) {
  ModelConfig c;
  c.d = 8;
  c.g = 12;
  c.blocks = 2;
  c.heads = 2;
  c.dropout = 0.0;
  c.max_len = 5;
  c.encoding.variant = v;
  c.epochs = 3;
  c.batch_size = 8;
  c.lr = 0.01;
  c.eval_negatives = 20;
  return c;
}

InteractionDataset dataset_from(const std::vector<SynthRow>& rows) {
  std::stringstream ss;
  write_synth_log(ss, rows);
  return parse_interactions(ss);
}

InteractionDataset memorizable(std::size_t users = 30, std::size_t items = 25, std::size_t length = 8) {
  SynthOptions o;
  o.users = users;
  o.items = items;
  o.length = length;
  o.seed = 3;
  return dataset_from(synthesize(o));
}

TEST(BuildSequence, ShiftsByOne) {
  Rng rng(1);
  const std::vector<std::int64_t> h = {0, 1, 2, 3};  // i1..i4
  const auto ex = exclusion_set(h);
  const auto row = build_sequence(h, 3, 10, ex, rng);
  ASSERT_TRUE(row);
  EXPECT_EQ(row->inputs, (std::vector<std::int64_t>{1, 2, 3}));
  EXPECT_EQ(row->positives, (std::vector<std::int64_t>{2, 3, 4}));
}

TEST(BuildSequence, LeftPadsAndTruncates) {
  Rng rng(2);
  const std::vector<std::int64_t> h = {4, 5};
  const auto row = build_sequence(h, 4, 10, exclusion_set(h), rng);
  EXPECT_EQ(row->inputs, (std::vector<std::int64_t>{0, 0, 0, 5}));
  EXPECT_EQ(row->valid, (std::vector<double>{0, 0, 0, 1}));
  EXPECT_EQ(row->negatives[0], 0);
  const std::vector<std::int64_t> long_h = {0, 1, 2, 3, 4, 5, 6};
  const auto cut = build_sequence(long_h, 3, 10, exclusion_set(long_h), rng);
  EXPECT_EQ(cut->inputs, (std::vector<std::int64_t>{4, 5, 6}));
  EXPECT_EQ(cut->positives, (std::vector<std::int64_t>{5, 6, 7}));
}

TEST(BuildSequence, ShortHistorySkipped) {
  Rng rng(3);
  const std::vector<std::int64_t> h = {1};
  EXPECT_FALSE(build_sequence(h, 3, 10, exclusion_set(h), rng));
}

TEST(BuildSequence, NegativesNeverHitHistory) {
  Rng rng(4);
  const std::vector<std::int64_t> h = {0, 2, 4, 6, 8, 3, 3};
  const auto ex = exclusion_set(h);
  for (int i = 0; i < 10000; ++i) {
    const auto n = sample_negative(ex, 12, rng);
    ASSERT_TRUE(n >= 0 && n < 12);
    ASSERT_FALSE(std::binary_search(ex.begin(), ex.end(), n));
  }
  const std::vector<std::int64_t> all = {0, 1, 2};
  EXPECT_THROW(sample_negative(exclusion_set(all), 3, rng), DataError);
}

TEST(Score, Examples) {
  const Tensor a = Tensor::constant({1, 1, 2}, {1.0, 0.0});
  const Tensor b = Tensor::constant({1, 1, 2}, {0.0, 1.0});
  EXPECT_DOUBLE_EQ(score(a, b).item(), 0.5);
  const Tensor big = Tensor::constant({1, 1, 2}, {30.0, 30.0});
  EXPECT_GT(score(big, big).item(), 1.0 - 1e-12);
}

TEST(Score, MatchesDotLoop) {
  Rng rng(5);
  const Tensor h = Tensor::constant({2, 3, 4}, random_values(24, rng));
  const Tensor e = Tensor::constant({2, 3, 4}, random_values(24, rng));
  const Tensor s = score(h, e);
  for (std::size_t r = 0; r < 6; ++r) {
    const double dot = testing::dot(std::span<const double>(h.values()).subspan(r * 4, 4),
                                    std::span<const double>(e.values()).subspan(r * 4, 4));
    EXPECT_NEAR(s.values()[r], 1.0 / (1.0 + std::exp(-dot)), 1e-12);
  }
}

TEST(BceLoss, Examples) {
  const Tensor half = Tensor::constant({1, 1}, {0.5});
  const Tensor one = Tensor::constant({1, 1}, {1.0});
  EXPECT_NEAR(bce_loss(half, half, one).item(), 2.0 * std::log(2.0), 1e-12);
  const Tensor p = Tensor::constant({1, 2}, {1.0, 1.0});
  const Tensor q = Tensor::constant({1, 2}, {0.0, 0.0});
  const Tensor both = Tensor::constant({1, 2}, {1.0, 1.0});
  EXPECT_LE(bce_loss(p, q, both).item(), 2 * 1e-7 * 2 * 1.0001);
  const Tensor rand_p = Tensor::constant({1, 2}, {0.3, 0.9});
  const Tensor none = Tensor::constant({1, 2}, {0.0, 0.0});
  EXPECT_EQ(bce_loss(rand_p, rand_p, none).item(), 0.0);
}

TEST(BceLoss, MeanDividesByValidPositions) {
  const Tensor half = Tensor::constant({1, 3}, {0.5, 0.5, 0.5});
  const Tensor valid = Tensor::constant({1, 3}, {0.0, 1.0, 1.0});
  EXPECT_NEAR(bce_loss(half, half, valid, LossReduction::kMean).item(), 2.0 * std::log(2.0), 1e-12);
  EXPECT_NEAR(bce_loss(half, half, valid, LossReduction::kSum).item(), 4.0 * std::log(2.0), 1e-12);
}

TEST(MaxNorm, Examples) {
  Tensor t = Tensor::parameter({2, 2}, {3.0, 4.0, 3e-5, 4e-5});
  std::vector<Tensor> tables{t};
  apply_max_norm(tables, std::nullopt);
  EXPECT_EQ(t.values()[0], 3.0);
  apply_max_norm(tables, 1e-4);
  EXPECT_NEAR(t.values()[0], 6e-5, 1e-18);
  EXPECT_NEAR(t.values()[1], 8e-5, 1e-18);
  EXPECT_EQ(t.values()[2], 3e-5);  // norm 5e-5 stays
  const std::vector<double> once(t.values().begin(), t.values().end());
  apply_max_norm(tables, 1e-4);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(t.values()[i], once[i]);
  EXPECT_THROW(apply_max_norm(tables, 0.0), ConfigError);
}

TEST(ModelConfig, InvariantsAndPresets) {
  ModelConfig c = tiny_config();
  c.nmax = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.max_len = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  const ModelConfig games = preset("Games");
  EXPECT_EQ(games.lr, 1e-4);
  EXPECT_EQ(games.max_len, 50u);
  EXPECT_EQ(games.blocks, 3u);
  EXPECT_EQ(games.heads, 3u);
  EXPECT_EQ(games.dropout, 0.5);
  EXPECT_EQ(games.d, 90u);
  EXPECT_EQ(games.g, 450u);
  EXPECT_FALSE(games.nmax);
  EXPECT_EQ(preset("Men").lr, 6e-6);
  EXPECT_EQ(preset("beauty").heads, 1u);
  EXPECT_THROW(preset("Books"), ConfigError);
}

TEST(ModelConfig, JsonRoundTripAndStrictKeys) {
  ModelConfig c = tiny_config(EncodingVariant::kRMHA4);
  c.nmax = 1e-4;
  c.activation = Activation::kSilu;
  const ModelConfig back = model_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_THROW(model_config_from_json(nlohmann::json{{"dimension", 8}}), ConfigError);
  EXPECT_THROW(model_config_from_json(nlohmann::json{{"encoding", {{"clip", 3}}}}), ConfigError);
  EXPECT_EQ(model_config_from_json(nlohmann::json{{"nmax", "none"}}).nmax, std::nullopt);
}

TEST(ModelConfig, FingerprintIgnoresSeedOnly) {
  ModelConfig a = tiny_config();
  ModelConfig b = a;
  b.seed = 999;
  EXPECT_EQ(config_fingerprint(a), config_fingerprint(b));
  b.lr = 0.02;
  EXPECT_NE(config_fingerprint(a), config_fingerprint(b));
}

TEST(Nmax, Parsing) {
  EXPECT_EQ(parse_nmax("none"), std::nullopt);
  EXPECT_EQ(parse_nmax("NaN"), std::nullopt);
  EXPECT_EQ(parse_nmax("0"), std::nullopt);
  EXPECT_EQ(parse_nmax("0.0001"), 0.0001);
  EXPECT_THROW(parse_nmax("abc"), ConfigError);
  EXPECT_EQ(format_nmax(0.0001), "0.0001");
  EXPECT_EQ(format_nmax(std::nullopt), "NaN");
}

SequenceBatch random_batch(const ModelConfig& c, std::size_t items, std::size_t users, Rng& rng) {
  SequenceBatch batch(c.max_len);
  for (std::size_t u = 0; u < users; ++u) {
    std::vector<std::int64_t> h;
    const std::size_t len = 2 + rng.below(c.max_len + 2);
    for (std::size_t t = 0; t < len; ++t) h.push_back(static_cast<std::int64_t>(rng.below(items / 2)));
    batch.append(*build_sequence(h, c.max_len, items, exclusion_set(h), rng));
  }
  return batch;
}

TEST(Model, LossGradientsMatchFiniteDifferencesForEveryGroup) {
  for (auto v : {EncodingVariant::kNone, EncodingVariant::kLearntCon, EncodingVariant::kRotatoryCon,
                 EncodingVariant::kRMHA4, EncodingVariant::kRopeOne}) {
    Rng rng(6);
    const ModelConfig c = tiny_config(v);
    SequentialRecommender model(c, 12, rng);
    const SequenceBatch batch = random_batch(c, 12, 3, rng);
    auto loss = [&] { return model.loss(batch, nullptr, false); };
    for (const auto& p : model.parameters()) {
      const auto r = check_gradient(loss, p.tensor, 1e-5, 16);
      EXPECT_LT(r.max_rel, 1e-4) << to_string(v) << " " << p.name << " a=" << r.worst_analytic
                                 << " n=" << r.worst_numeric;
    }
  }
}

TEST(Model, AttributeFusionGradients) {
  Rng rng(7);
  ModelConfig c = tiny_config(EncodingVariant::kAbs);
  const std::vector<double> attrs = random_values(12 * 3, rng);
  SequentialRecommender model(c, 12, rng, attrs, 3);
  const SequenceBatch batch = random_batch(c, 12, 3, rng);
  auto loss = [&] { return model.loss(batch, nullptr, false); };
  for (const auto& p : model.parameters()) {
    if (p.name.rfind("fusion", 0) != 0 && p.name != "item_table") continue;
    EXPECT_LT(check_gradient(loss, p.tensor, 1e-5, 16).max_rel, 1e-4) << p.name;
  }
}

TEST(Model, LossInvariantToUserOrder) {
  Rng rng(8);
  ModelConfig c = tiny_config(EncodingVariant::kRotatory);
  SequentialRecommender model(c, 15, rng);
  const SequenceBatch batch = random_batch(c, 15, 4, rng);
  SequenceBatch reversed(c.max_len);
  for (std::size_t b = batch.batch; b-- > 0;) {
    SequenceRow row;
    const std::size_t L = c.max_len;
    auto slice = [&](const auto& v) { return std::vector(v.begin() + b * L, v.begin() + (b + 1) * L); };
    row.inputs = slice(batch.inputs);
    row.positives = slice(batch.positives);
    row.negatives = slice(batch.negatives);
    row.valid = slice(batch.valid);
    reversed.append(row);
  }
  EXPECT_NEAR(model.loss(batch, nullptr, false).item(), model.loss(reversed, nullptr, false).item(), 1e-12);
}

TEST(Model, ScoreCandidatesMatchesBatchedHidden) {
  Rng rng(9);
  SequentialRecommender model(tiny_config(EncodingVariant::kRoPE), 10, rng);
  const std::vector<std::int64_t> ctx = {1, 4, 2};
  const std::vector<std::int64_t> cands = {3, 7, 0};
  const auto scores = model.score_candidates(ctx, cands);
  const auto h = model.final_hidden(context_window(ctx, 5), 1);
  const auto items = model.item_matrix();
  for (std::size_t c = 0; c < 3; ++c) {
    const auto e = std::span<const double>(items).subspan(static_cast<std::size_t>(cands[c] + 1) * 8, 8);
    EXPECT_NEAR(scores[c], testing::dot(h, e), 1e-12);
  }
}

TEST(Model, MaxNormBoundsFlaggedTablesOnly) {
  Rng rng(10);
  ModelConfig c = tiny_config(EncodingVariant::kLearntCon);
  c.nmax = 1e-3;
  SequentialRecommender model(c, 10, rng);
  model.apply_max_norm();
  for (const auto& p : model.parameters()) {
    const std::size_t cols = p.tensor.dim(-1);
    double worst = 0.0;
    for (std::size_t r = 0; r * cols < p.tensor.numel(); ++r) {
      double sq = 0.0;
      for (std::size_t k = 0; k < cols; ++k) sq += std::pow(p.tensor.values()[r * cols + k], 2);
      worst = std::max(worst, std::sqrt(sq));
    }
    if (p.max_norm) {
      EXPECT_LE(worst, 1e-3 * (1 + 1e-12)) << p.name;
    } else if (p.name == "encoding.concat.weight") {
      EXPECT_GT(worst, 1e-3);
    }
  }
}

TEST(Train, EvalScheduleIsLogarithmic) {
  EXPECT_EQ(eval_schedule(10), (std::vector<int>{1, 2, 3, 4, 6, 8, 10}));
  EXPECT_EQ(eval_schedule(1), (std::vector<int>{1}));
  const auto s = eval_schedule(200);
  EXPECT_EQ(s.back(), 200);
  for (std::size_t i = 1; i + 1 < s.size(); ++i) EXPECT_GE(s[i], 1.3 * s[i - 1]);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  const InteractionDataset data = memorizable();
  ModelConfig c = tiny_config();
  c.lr = 0.0;
  c.epochs = 1;
  Rng init(c.seed, 0);
  SequentialRecommender fresh(c, data.num_items(), init);
  const TrainOutcome out = train(c, data);
  const auto a = snapshot(fresh);
  const auto b = snapshot(*out.model);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Train, SameSeedSameHistory) {
  const InteractionDataset data = memorizable();
  ModelConfig c = tiny_config(EncodingVariant::kRotatoryCon);
  c.dropout = 0.2;
  std::stringstream a, b;
  write_history_tsv(a, train(c, data).history);
  write_history_tsv(b, train(c, data).history);
  EXPECT_EQ(a.str(), b.str());
  c.seed = 7;
  std::stringstream other;
  write_history_tsv(other, train(c, data).history);
  EXPECT_NE(a.str(), other.str());
}

TEST(Train, DivergenceNamesEpochAndConfig) {
  const InteractionDataset data = memorizable();
  ModelConfig c = tiny_config();
  c.lr = 1e300;
  c.loss_reduction = LossReduction::kSum;
  try {
    train(c, data);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_GE(e.epoch(), 1);
    EXPECT_NE(std::string(e.what()).find("encoding=Learnt"), std::string::npos) << e.what();
  }
}

TEST(Train, HistoryHasValidationRowsAndOneTestRow) {
  const InteractionDataset data = memorizable();
  ModelConfig c = tiny_config();
  c.epochs = 4;
  const TrainOutcome out = train(c, data);
  ASSERT_EQ(out.history.size(), 5u);
  EXPECT_EQ(out.history.back().split, "test");
  EXPECT_EQ(out.history.back().epoch, out.best_epoch);
  EXPECT_EQ(out.test.users(), data.num_users());
}

TEST(Checkpoint, RoundTripPreservesScores) {
  const auto dir = std::filesystem::temp_directory_path() / "posenc_ckpt_test";
  std::filesystem::create_directories(dir);
  Rng rng(11);
  ModelConfig c = tiny_config(EncodingVariant::kRMHA4);
  c.nmax = 0.5;
  std::vector<double> attrs = random_values(10 * 2, rng);
  SequentialRecommender model(c, 10, rng, attrs, 2);
  save_checkpoint(model, dir / "m.ckpt");
  const auto back = load_checkpoint(dir / "m.ckpt");
  const std::vector<std::int64_t> ctx = {3, 1, 4, 1, 5, 9};
  const std::vector<std::int64_t> cands = {2, 6, 5, 3};
  EXPECT_EQ(model.score_candidates(ctx, cands), back->score_candidates(ctx, cands));
  EXPECT_EQ(to_json(back->config()), to_json(model.config()));

  // Truncation and garbage are reported, not crashed on.
  const auto size = std::filesystem::file_size(dir / "m.ckpt");
  std::filesystem::resize_file(dir / "m.ckpt", size - 9);
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt"), DataError);
  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), DataError);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace posenc
