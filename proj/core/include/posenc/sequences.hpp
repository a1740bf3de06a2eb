#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace posenc {

class Rng;

// Tokens are item id + 1; 0 marks padding. Rows are left-padded so the most
// recent interaction sits at the last position.
struct SequenceRow {
  std::vector<std::int64_t> inputs;
  std::vector<std::int64_t> positives;
  std::vector<std::int64_t> negatives;
  std::vector<double> valid;  // 1 where the position holds a real input
};

struct SequenceBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<std::int64_t> inputs;     // [batch x length]
  std::vector<std::int64_t> positives;
  std::vector<std::int64_t> negatives;
  std::vector<double> valid;
  std::size_t skipped = 0;  // histories too short to train on

  explicit SequenceBatch(std::size_t max_len = 0) : length(max_len) {}
  void append(const SequenceRow& row);
  std::size_t positions() const;  // number of valid positions
};

// Sorted unique item ids, for negative-sampling exclusion.
std::vector<std::int64_t> exclusion_set(std::span<const std::int64_t> history);

// Item drawn uniformly from [0, num_items) outside `excluded` (sorted).
// Throws DataError when every item is excluded.
std::int64_t sample_negative(std::span<const std::int64_t> excluded, std::size_t num_items, Rng& rng);

// Shift-by-one training row from a chronological history (item ids):
// inputs = history[0..N-1], positives = history[1..N], one negative per
// position. Only the most recent max_len steps are kept. Returns nullopt
// for histories shorter than 2.
std::optional<SequenceRow> build_sequence(std::span<const std::int64_t> history, std::size_t max_len,
                                          std::size_t num_items, std::span<const std::int64_t> excluded,
                                          Rng& rng);

// Left-padded token window of the last max_len items of `context`.
std::vector<std::int64_t> context_window(std::span<const std::int64_t> context, std::size_t max_len);

}  // namespace posenc
