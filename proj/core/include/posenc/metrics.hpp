#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "posenc/dataset.hpp"

namespace posenc {

class SequentialRecommender;

inline constexpr std::size_t kRankCutoff = 10;

struct EvalResult {
  double hit_at_10 = 0.0;  // fractions in [0, 1]; tables print them x100
  double ndcg = 0.0;
  std::vector<std::size_t> ranks;  // 1-based, one per user
  std::size_t candidate_count = 0;  // truth + negatives per user
  std::uint64_t seed = 0;
  std::size_t users() const { return ranks.size(); }
};

// 1 + number of negatives scoring at least as high as the truth, so ties
// count against the truth.
std::size_t rank_of_truth(double truth_score, std::span<const double> negative_scores);

// 1 / log2(rank + 1) for rank <= cutoff, else 0.
double ndcg_single(std::size_t rank, std::size_t cutoff = kRankCutoff);

// Averages hit and NDCG over the ranks.
EvalResult summarize_ranks(std::vector<std::size_t> ranks, std::size_t candidate_count, std::uint64_t seed);

// Rank of `truth` among truth + negatives under the model's scores.
std::size_t rank_candidates(const SequentialRecommender& model, std::span<const std::int64_t> context,
                            std::int64_t truth, std::span<const std::int64_t> negatives);

struct EvalOptions {
  std::size_t negatives = 100;
  std::uint64_t seed = 0;
  bool full_ranking = false;  // every item outside the user's history
  std::size_t batch_size = 256;
};

// Negatives for one user: sampled with replacement from items outside
// `history`, from a stream fixed by (seed, user).
std::vector<std::int64_t> eval_negatives(std::span<const std::int64_t> history, std::size_t num_items,
                                         std::size_t count, std::uint64_t seed, std::size_t user);

// Ranks each case's target against its negatives. `histories` holds every
// user's full sequence (the negative exclusion set). Throws DataError for
// an empty case list.
EvalResult evaluate(const SequentialRecommender& model, std::span<const EvalCase> cases,
                    const std::vector<std::vector<std::int64_t>>& histories, const EvalOptions& options);

// "Hit\tNDCG\tusers\tcandidates\tseed" header and row, metrics x100.
void write_eval_tsv(std::ostream& out, const EvalResult& r, bool header = true);

}  // namespace posenc
