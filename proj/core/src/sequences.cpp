#include "posenc/sequences.hpp"

#include <algorithm>

#include "posenc/errors.hpp"
#include "posenc/rng.hpp"

namespace posenc {

void SequenceBatch::append(const SequenceRow& row) {
  if (row.inputs.size() != length) {
    throw ShapeError("sequence row of length " + std::to_string(row.inputs.size()) +
                     " appended to batch of length " + std::to_string(length));
  }
  inputs.insert(inputs.end(), row.inputs.begin(), row.inputs.end());
  positives.insert(positives.end(), row.positives.begin(), row.positives.end());
  negatives.insert(negatives.end(), row.negatives.begin(), row.negatives.end());
  valid.insert(valid.end(), row.valid.begin(), row.valid.end());
  ++batch;
}

std::size_t SequenceBatch::positions() const {
  return static_cast<std::size_t>(std::count_if(valid.begin(), valid.end(), [](double v) { return v != 0.0; }));
}

std::vector<std::int64_t> exclusion_set(std::span<const std::int64_t> history) {
  std::vector<std::int64_t> out(history.begin(), history.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::int64_t sample_negative(std::span<const std::int64_t> excluded, std::size_t num_items, Rng& rng) {
  if (excluded.size() >= num_items) {
    throw DataError("cannot sample a negative: the user has interacted with all " +
                    std::to_string(num_items) + " items");
  }
  while (true) {
    const auto item = static_cast<std::int64_t>(rng.below(num_items));
    if (!std::binary_search(excluded.begin(), excluded.end(), item)) return item;
  }
}

std::optional<SequenceRow> build_sequence(std::span<const std::int64_t> history, std::size_t max_len,
                                          std::size_t num_items, std::span<const std::int64_t> excluded,
                                          Rng& rng) {
  if (history.size() < 2) return std::nullopt;
  SequenceRow row;
  row.inputs.assign(max_len, 0);
  row.positives.assign(max_len, 0);
  row.negatives.assign(max_len, 0);
  row.valid.assign(max_len, 0.0);
  const std::size_t steps = std::min(history.size() - 1, max_len);
  const std::size_t first = history.size() - 1 - steps;
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t slot = max_len - steps + k;
    row.inputs[slot] = history[first + k] + 1;
    row.positives[slot] = history[first + k + 1] + 1;
    row.negatives[slot] = sample_negative(excluded, num_items, rng) + 1;
    row.valid[slot] = 1.0;
  }
  return row;
}

std::vector<std::int64_t> context_window(std::span<const std::int64_t> context, std::size_t max_len) {
  std::vector<std::int64_t> out(max_len, 0);
  const std::size_t n = std::min(context.size(), max_len);
  for (std::size_t k = 0; k < n; ++k) out[max_len - n + k] = context[context.size() - n + k] + 1;
  return out;
}

}  // namespace posenc
