#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace posenc {

// Deterministic interaction logs for tests and desk-scale experiments.
//
//   memorizable  every user's sequence is a run of consecutive items from one
//                global cycle (a seeded permutation), starting at a random
//                offset; the next item depends only on the current one.
//   positional   two interleaved runs of the global cycle: x_t is the cycle
//                successor of x_{t-2}, except that with probability `noise`
//                it is a uniformly random item instead, which starts a new
//                run. x_{t-1} carries no information about x_t, and the
//                history holds many run ends whose successors are all
//                plausible as a set; predicting x_t means locating the item
//                exactly two positions back.
//   random       exactly `users` users, `items` items and `interactions`
//                rows; every user has at least two rows and every item
//                appears at least once.
enum class SynthProfile { kMemorizable, kPositional, kRandom };

std::string_view to_string(SynthProfile p);
SynthProfile parse_synth_profile(std::string_view name);

struct SynthOptions {
  SynthProfile profile = SynthProfile::kMemorizable;
  std::size_t users = 200;
  std::size_t items = 50;
  std::size_t length = 12;        // memorizable, positional: items per user
  std::size_t interactions = 0;   // random: total rows
  double noise = 0.5;             // positional: probability of a run break
  std::uint64_t seed = 0;
};

struct SynthRow {
  std::size_t user;
  std::size_t item;
  std::int64_t timestamp;
};

std::vector<SynthRow> synthesize(const SynthOptions& options);

// The seeded permutation used as the global cycle.
std::vector<std::size_t> synth_cycle(std::size_t items, std::uint64_t seed);

// Header plus "u<user>\ti<item>\t<timestamp>" rows.
void write_synth_log(std::ostream& out, const std::vector<SynthRow>& rows);

}  // namespace posenc
