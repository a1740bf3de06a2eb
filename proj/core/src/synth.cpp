#include "posenc/synth.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>
#include <string>

#include "posenc/errors.hpp"
#include "posenc/rng.hpp"

namespace posenc {
namespace {

constexpr std::uint64_t kCycleStream = 1;
constexpr std::uint64_t kStartStream = 2;
constexpr std::uint64_t kRandomStream = 3;

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("synth: " + what);
}

}  // namespace

std::string_view to_string(SynthProfile p) {
  switch (p) {
    case SynthProfile::kMemorizable: return "memorizable";
    case SynthProfile::kPositional: return "positional";
    case SynthProfile::kRandom: return "random";
  }
  return "?";
}

SynthProfile parse_synth_profile(std::string_view name) {
  if (name == "memorizable") return SynthProfile::kMemorizable;
  if (name == "positional") return SynthProfile::kPositional;
  if (name == "random") return SynthProfile::kRandom;
  throw ConfigError("unknown synth profile '" + std::string(name) +
                    "' (memorizable, positional, random)");
}

std::vector<std::size_t> synth_cycle(std::size_t items, std::uint64_t seed) {
  std::vector<std::size_t> cycle(items);
  std::iota(cycle.begin(), cycle.end(), 0);
  Rng rng(seed, kCycleStream);
  rng.shuffle(std::span<std::size_t>(cycle));
  return cycle;
}

std::vector<SynthRow> synthesize(const SynthOptions& o) {
  require(o.users > 0 && o.items > 0, "users and items must be positive");
  std::vector<SynthRow> rows;
  switch (o.profile) {
    case SynthProfile::kMemorizable:
    case SynthProfile::kPositional: {
      require(o.length >= 2, "length must be at least 2");
      require(o.noise >= 0.0 && o.noise <= 1.0, "noise must lie in [0, 1]");
      const auto cycle = synth_cycle(o.items, o.seed);
      Rng rng(o.seed, kStartStream);
      rows.reserve(o.users * o.length);
      for (std::size_t u = 0; u < o.users; ++u) {
        if (o.profile == SynthProfile::kMemorizable) {
          const std::size_t start = static_cast<std::size_t>(rng.below(o.items));
          for (std::size_t t = 0; t < o.length; ++t) {
            rows.push_back({u, cycle[(start + t) % o.items], static_cast<std::int64_t>(t)});
          }
        } else {
          // Positions along the cycle, so the successor is just +1.
          std::vector<std::size_t> pos(o.length);
          for (std::size_t t = 0; t < o.length; ++t) {
            if (t < 2 || rng.uniform() < o.noise) {
              pos[t] = static_cast<std::size_t>(rng.below(o.items));
            } else {
              pos[t] = (pos[t - 2] + 1) % o.items;
            }
            rows.push_back({u, cycle[pos[t]], static_cast<std::int64_t>(t)});
          }
        }
      }
      break;
    }
    case SynthProfile::kRandom: {
      require(o.interactions >= 2 * o.users, "random profile needs interactions >= 2 * users");
      require(o.interactions >= o.items, "random profile needs interactions >= items");
      Rng rng(o.seed, kRandomStream);
      std::vector<std::size_t> per_user(o.users, 2);
      for (std::size_t k = 2 * o.users; k < o.interactions; ++k) ++per_user[rng.below(o.users)];
      std::vector<std::size_t> items(o.interactions);
      for (std::size_t k = 0; k < o.interactions; ++k) {
        items[k] = k < o.items ? k : static_cast<std::size_t>(rng.below(o.items));
      }
      rng.shuffle(std::span<std::size_t>(items));
      rows.reserve(o.interactions);
      std::size_t next = 0;
      for (std::size_t u = 0; u < o.users; ++u) {
        for (std::size_t t = 0; t < per_user[u]; ++t) {
          rows.push_back({u, items[next++], static_cast<std::int64_t>(t)});
        }
      }
      break;
    }
  }
  return rows;
}

void write_synth_log(std::ostream& out, const std::vector<SynthRow>& rows) {
  out << "user_id\titem_id\ttimestamp\n";
  std::string line;
  for (const auto& r : rows) {
    line.clear();
    line += 'u';
    line += std::to_string(r.user);
    line += "\ti";
    line += std::to_string(r.item);
    line += '\t';
    line += std::to_string(r.timestamp);
    line += '\n';
    out << line;
  }
}

}  // namespace posenc
