#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <gtest/gtest.h>

#include "posenc/errors.hpp"
#include "posenc/stability.hpp"

namespace posenc {
namespace {

TEST(ConfidenceInterval, TableAnchors) {
  const auto ci = confidence_interval(56.00, 0.96, 9);
  EXPECT_NEAR(ci.low, 55.37, 1e-9);
  EXPECT_NEAR(ci.high, 56.63, 1e-9);
  const auto s = summary_from_moments(56.00, 0.96, 40.0, 1.0, 9);
  EXPECT_NEAR(s.ci_length, 1.26, 1e-9);
  EXPECT_NEAR(summary_from_moments(50.0, 4.17, 40.0, 1.0, 5).ci_length, 7.32, 1e-9);
}

TEST(Aggregate, SingleRunIsDegenerate) {
  const std::vector<SeedResult> one = {{1, true, 0.4321, 0.2, 3, ""}};
  const auto s = aggregate(one);
  EXPECT_EQ(s.runs, 1u);
  EXPECT_EQ(s.hit_dev, 0.0);
  EXPECT_NEAR(s.ci.low, 43.21, 1e-9);
  EXPECT_NEAR(s.ci.high, 43.21, 1e-9);
  EXPECT_EQ(s.ci_length, 0.0);
}

TEST(Aggregate, SampleDeviationAndFailedSeeds) {
  std::vector<SeedResult> rs = {{1, true, 0.50, 0.30, 1, ""},
                                {2, true, 0.52, 0.31, 1, ""},
                                {3, false, 0.0, 0.0, 0, "diverged"},
                                {4, true, 0.57, 0.35, 1, ""}};
  const auto s = aggregate(rs);
  EXPECT_EQ(s.runs, 3u);
  EXPECT_EQ(s.results.size(), 4u);
  const double mean = (50.0 + 52.0 + 57.0) / 3.0;
  const double var = (std::pow(50 - mean, 2) + std::pow(52 - mean, 2) + std::pow(57 - mean, 2)) / 2.0;
  EXPECT_NEAR(s.hit_mean, mean, 1e-9);
  EXPECT_NEAR(s.hit_dev, std::sqrt(var), 1e-9);
  EXPECT_GE(s.ci_length, 0.0);
  EXPECT_NEAR(s.ci_length, round2(s.ci.high - s.ci.low), 1e-12);
}

TEST(Aggregate, PermutationInvariant) {
  std::vector<SeedResult> rs;
  for (std::uint64_t k = 0; k < 7; ++k) rs.push_back({k, true, 0.1 * static_cast<double>(k % 4), 0.05 * k, 1, ""});
  const auto a = aggregate(rs);
  std::reverse(rs.begin(), rs.end());
  std::swap(rs[1], rs[4]);
  const auto b = aggregate(rs);
  EXPECT_NEAR(a.hit_mean, b.hit_mean, 1e-12);
  EXPECT_NEAR(a.hit_dev, b.hit_dev, 1e-12);
  EXPECT_NEAR(a.ndcg_dev, b.ndcg_dev, 1e-12);
  EXPECT_EQ(a.ci.low, b.ci.low);
}

SweepSummary row(const std::string& enc, double hit_dev, double ndcg_dev, std::size_t runs) {
  SweepSummary s = summary_from_moments(50.0, hit_dev, 30.0, ndcg_dev, runs);
  s.encoding = enc;
  return s;
}

TEST(AvgDev, GroupMeans) {
  const std::vector<SweepSummary> rows = {row("None", 1.0, 0.5, 5), row("RMHA4", 2.0, 1.0, 5),
                                          row("None", 3.0, 1.5, 9)};
  const auto g = avg_dev(rows);
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[0].encoding, "None");
  EXPECT_NEAR(g[0].avg_dev_hit, 2.0, 1e-12);
  EXPECT_NEAR(g[0].avg_dev_ndcg, 1.0, 1e-12);
  EXPECT_NEAR(g[0].avg_runs, 7.0, 1e-12);
  EXPECT_NEAR(g[0].avg_ci_length, (rows[0].ci_length + rows[2].ci_length) / 2.0, 1e-12);
  EXPECT_NEAR(g[1].avg_dev_hit, 2.0, 1e-12);
  EXPECT_EQ(g[1].summaries, 1u);
}

TEST(Recommend, DecisionRule) {
  EXPECT_EQ(recommend_encoding(row("None", 3.54, 1, 5)).variant, EncodingVariant::kRMHA4);
  EXPECT_EQ(recommend_encoding(row("None", 1.25, 1, 5)).variant, EncodingVariant::kRotatoryCon);
  EXPECT_EQ(recommend_encoding(row("None", 3.0, 1, 5)).variant, EncodingVariant::kRotatoryCon);
  EXPECT_EQ(recommend_encoding(row("None", 2.0, 1, 5), 1.5).variant, EncodingVariant::kRMHA4);
  try {
    recommend_encoding(row("None", 9.0, 1, 2));
    FAIL();
  } catch (const UserError& e) {
    EXPECT_NE(std::string(e.what()).find("insufficient runs"), std::string::npos);
  }
  EXPECT_THROW(recommend_encoding(row("RMHA4", 9.0, 1, 5)), ConfigError);
}

TEST(SummaryTsv, RoundTrip) {
  std::vector<SweepSummary> rows = {row("None", 0.96, 0.5, 9), row("RotatoryCon", 4.17, 2.0, 5)};
  rows[1].nmax = "0.0001";
  std::stringstream ss;
  write_summary_tsv(ss, rows);
  const std::string text = ss.str();
  EXPECT_EQ(text.substr(0, text.find('\n')),
            "Act\tencoding\tnmax\tHit Mean\tHit Dev\tNDCG Mean\tNDCG Dev\truns\tCI\tCI-length");
  EXPECT_NE(text.find("(49.37, 50.63)"), std::string::npos) << text;
  const auto back = read_summary_tsv(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].encoding, "RotatoryCon");
  EXPECT_EQ(back[1].nmax, "0.0001");
  EXPECT_NEAR(back[1].hit_dev, 4.17, 1e-9);
  EXPECT_EQ(back[0].runs, 9u);
  EXPECT_NEAR(back[1].ci_length, 7.32, 1e-9);
}

// Fake runner: metrics are a fixed function of the seed.
SeedResult fake_result(const ModelConfig& c) {
  SeedResult r;
  r.seed = c.seed;
  r.hit = 0.3 + 0.01 * static_cast<double>(c.seed % 7);
  r.ndcg = r.hit / 2;
  r.best_epoch = 1;
  return r;
}

class SweepTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("posenc_sweep_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    std::filesystem::remove_all(dir_);
    config_.epochs = 2;
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::filesystem::path dir_;
  ModelConfig config_;
  InteractionDataset data_;
};

TEST_F(SweepTest, RejectsRepeatedSeeds) {
  SweepOptions o;
  o.seeds = {42, 42};
  o.runner = fake_result;
  EXPECT_THROW(sweep(config_, data_, o), ConfigError);
}

TEST_F(SweepTest, PersistsEveryRun) {
  SweepOptions o;
  o.seeds = {3, 1};
  o.out_dir = dir_;
  o.runner = fake_result;
  const auto s = sweep(config_, data_, o);
  EXPECT_EQ(s.runs, 2u);
  EXPECT_EQ(s.results[0].seed, 3u);
  EXPECT_EQ(read_ledger(dir_ / "runs.jsonl", config_fingerprint(config_)).size(), 2u);
  EXPECT_TRUE(std::filesystem::exists(dir_ / "summary.tsv"));
}

TEST_F(SweepTest, ResumeSkipsCompletedSeedsAndMatchesUninterrupted) {
  std::atomic<int> calls{0};
  SweepOptions o;
  o.seeds = {1, 2, 3, 4, 5};
  o.out_dir = dir_;
  o.runner = [&](const ModelConfig& c) {
    if (++calls == 4) throw std::runtime_error("killed");
    return fake_result(c);
  };
  EXPECT_THROW(sweep(config_, data_, o), std::runtime_error);
  // Simulate a torn final write.
  std::ofstream(dir_ / "runs.jsonl", std::ios::app) << "{\"fingerprint\": \"";
  calls = 0;
  std::vector<std::uint64_t> computed;
  o.runner = [&](const ModelConfig& c) {
    computed.push_back(c.seed);
    return fake_result(c);
  };
  std::vector<std::string> warnings;
  o.warn = [&](const std::string& w) { warnings.push_back(w); };
  const auto resumed = sweep(config_, data_, o);
  EXPECT_EQ(computed, (std::vector<std::uint64_t>{4, 5}));
  EXPECT_FALSE(warnings.empty());

  SweepOptions clean;
  clean.seeds = o.seeds;
  clean.runner = fake_result;
  const auto whole = sweep(config_, data_, clean);
  std::stringstream a, b;
  write_summary_tsv(a, std::vector<SweepSummary>{resumed});
  write_summary_tsv(b, std::vector<SweepSummary>{whole});
  EXPECT_EQ(a.str(), b.str());
}

TEST_F(SweepTest, OtherFingerprintsAreNotReused) {
  SweepOptions o;
  o.seeds = {1, 2};
  o.out_dir = dir_;
  o.runner = fake_result;
  sweep(config_, data_, o);
  ModelConfig other = config_;
  other.lr = 0.5;
  int calls = 0;
  o.runner = [&](const ModelConfig& c) {
    ++calls;
    return fake_result(c);
  };
  sweep(other, data_, o);
  EXPECT_EQ(calls, 2);
}

TEST_F(SweepTest, FailedSeedsExcludedWithWarning) {
  SweepOptions o;
  o.seeds = {1, 2, 3};
  o.runner = [](const ModelConfig& c) {
    SeedResult r = fake_result(c);
    if (c.seed == 2) {
      r.ok = false;
      r.error = "training diverged at epoch 3";
    }
    return r;
  };
  std::vector<std::string> warnings;
  o.warn = [&](const std::string& w) { warnings.push_back(w); };
  const auto s = sweep(config_, data_, o);
  EXPECT_EQ(s.runs, 2u);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("seed 2"), std::string::npos);
}

TEST_F(SweepTest, ParallelMatchesSerial) {
  SweepOptions o;
  o.seeds = {9, 8, 7, 6, 5, 4};
  o.runner = fake_result;
  const auto serial = sweep(config_, data_, o);
  o.jobs = 3;
  const auto parallel = sweep(config_, data_, o);
  EXPECT_EQ(serial.hit_mean, parallel.hit_mean);
  EXPECT_EQ(serial.hit_dev, parallel.hit_dev);
  for (std::size_t k = 0; k < serial.results.size(); ++k) EXPECT_EQ(serial.results[k].seed, parallel.results[k].seed);
}

}  // namespace
}  // namespace posenc
