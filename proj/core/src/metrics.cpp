#include "posenc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "posenc/errors.hpp"
#include "posenc/model.hpp"
#include "posenc/rng.hpp"
#include "posenc/sequences.hpp"

namespace posenc {
namespace {

constexpr std::uint64_t kEvalSalt = 0x6576616c6e656773ULL;

}  // namespace

std::size_t rank_of_truth(double truth_score, std::span<const double> negative_scores) {
  std::size_t rank = 1;
  for (double s : negative_scores) {
    if (!(s < truth_score)) ++rank;  // NaN scores also count against the truth
  }
  return rank;
}

double ndcg_single(std::size_t rank, std::size_t cutoff) {
  if (rank == 0) throw Error("ndcg_single: rank is 1-based");
  if (rank > cutoff) return 0.0;
  return 1.0 / std::log2(static_cast<double>(rank) + 1.0);
}

EvalResult summarize_ranks(std::vector<std::size_t> ranks, std::size_t candidate_count, std::uint64_t seed) {
  EvalResult r;
  r.candidate_count = candidate_count;
  r.seed = seed;
  double hit = 0.0;
  double ndcg = 0.0;
  for (std::size_t rank : ranks) {
    if (rank <= kRankCutoff) hit += 1.0;
    ndcg += ndcg_single(rank);
  }
  if (!ranks.empty()) {
    r.hit_at_10 = hit / static_cast<double>(ranks.size());
    r.ndcg = ndcg / static_cast<double>(ranks.size());
  }
  r.ranks = std::move(ranks);
  return r;
}

std::size_t rank_candidates(const SequentialRecommender& model, std::span<const std::int64_t> context,
                            std::int64_t truth, std::span<const std::int64_t> negatives) {
  std::vector<std::int64_t> candidates;
  candidates.reserve(negatives.size() + 1);
  candidates.push_back(truth);
  candidates.insert(candidates.end(), negatives.begin(), negatives.end());
  const auto scores = model.score_candidates(context, candidates);
  return rank_of_truth(scores[0], std::span<const double>(scores).subspan(1));
}

std::vector<std::int64_t> eval_negatives(std::span<const std::int64_t> history, std::size_t num_items,
                                         std::size_t count, std::uint64_t seed, std::size_t user) {
  const auto excluded = exclusion_set(history);
  Rng rng(mix64(seed ^ kEvalSalt), user);
  std::vector<std::int64_t> out(count);
  for (auto& item : out) item = sample_negative(excluded, num_items, rng);
  return out;
}

EvalResult evaluate(const SequentialRecommender& model, std::span<const EvalCase> cases,
                    const std::vector<std::vector<std::int64_t>>& histories, const EvalOptions& options) {
  if (cases.empty()) throw DataError("evaluate: no users to evaluate");
  const std::size_t n = model.num_items();
  const std::size_t d = model.config().d;
  const std::size_t len = model.config().max_len;
  const auto items = model.item_matrix();
  const std::size_t batch = std::max<std::size_t>(1, options.batch_size);

  std::vector<std::size_t> ranks(cases.size());
  std::size_t candidate_count = options.negatives + 1;
  for (std::size_t start = 0; start < cases.size(); start += batch) {
    const std::size_t count = std::min(batch, cases.size() - start);
    std::vector<std::int64_t> tokens;
    tokens.reserve(count * len);
    for (std::size_t b = 0; b < count; ++b) {
      const auto w = context_window(cases[start + b].context, len);
      tokens.insert(tokens.end(), w.begin(), w.end());
    }
    const auto hidden = model.final_hidden(tokens, count);
    for (std::size_t b = 0; b < count; ++b) {
      const EvalCase& c = cases[start + b];
      if (c.user >= histories.size()) throw DataError("evaluate: user without history");
      const double* h = hidden.data() + b * d;
      auto logit = [&](std::int64_t item) {
        const double* e = items.data() + static_cast<std::size_t>(item + 1) * d;
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += h[k] * e[k];
        return s;
      };
      std::vector<std::int64_t> negatives;
      if (options.full_ranking) {
        const auto excluded = exclusion_set(histories[c.user]);
        for (std::size_t i = 0; i < n; ++i) {
          const auto item = static_cast<std::int64_t>(i);
          if (!std::binary_search(excluded.begin(), excluded.end(), item)) negatives.push_back(item);
        }
        candidate_count = 0;  // varies per user
      } else {
        negatives = eval_negatives(histories[c.user], n, options.negatives, options.seed, c.user);
      }
      std::vector<double> scores(negatives.size());
      for (std::size_t k = 0; k < negatives.size(); ++k) scores[k] = logit(negatives[k]);
      ranks[start + b] = rank_of_truth(logit(c.target), scores);
    }
  }
  return summarize_ranks(std::move(ranks), candidate_count, options.seed);
}

void write_eval_tsv(std::ostream& out, const EvalResult& r, bool header) {
  if (header) out << "Hit\tNDCG\tusers\tcandidates\tseed\n";
  char buf[128];
  std::snprintf(buf, sizeof buf, "%.4f\t%.4f\t%zu\t%zu\t%llu\n", 100.0 * r.hit_at_10, 100.0 * r.ndcg,
                r.users(), r.candidate_count, static_cast<unsigned long long>(r.seed));
  out << buf;
}

}  // namespace posenc
