#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace posenc {

class Rng;

// Per-user chronological item sequences with contiguous ids. Users are
// numbered 0..U-1 and items 0..I-1 in order of first appearance in the
// source; user_names/item_names hold the inverse mapping back to raw ids.
struct InteractionDataset {
  std::vector<std::string> user_names;
  std::vector<std::string> item_names;
  std::vector<std::vector<std::int64_t>> sequences;  // item ids, oldest first
  std::vector<std::vector<double>> timestamps;       // parallel to sequences

  // Optional dense attributes, row-major [items x attribute_dims].
  std::size_t attribute_dims = 0;
  std::vector<double> attributes;

  struct Provenance {
    std::string source;
    std::size_t min_interactions = 2;
    std::optional<std::size_t> user_budget;
    std::optional<std::size_t> item_budget;
    std::size_t source_users = 0;  // counts before subsetting
    std::size_t source_items = 0;
  } provenance;

  std::size_t num_users() const { return sequences.size(); }
  std::size_t num_items() const { return item_names.size(); }
  std::size_t num_interactions() const;
};

struct DatasetStats {
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t interactions = 0;
  double density = 0.0;  // interactions / (users * items)
  std::size_t attributes = 0;
  // Subsets only: density measured against the requested budgets.
  std::optional<std::size_t> budget_users;
  std::optional<std::size_t> budget_items;
  std::optional<double> budget_density;
};

struct LoadOptions {
  std::string format = "auto";  // auto | tsv | csv | ws
  std::size_t min_interactions = 2;
};

// Reads user_id, item_id, timestamp rows. A first row whose timestamp field
// is not numeric is taken as a header. Sequences are sorted by timestamp
// (stable, so ties keep file order); duplicate rows are kept. Users with
// fewer than min_interactions rows are dropped, then items are re-indexed.
// Throws DataError naming the line for malformed rows and for empty input.
InteractionDataset load_interactions(const std::filesystem::path& path, const LoadOptions& options = {});
InteractionDataset parse_interactions(std::istream& in, const LoadOptions& options = {},
                                      const std::string& source = "<stream>");

// Sidecar with header "item_id, a_0, ..., a_{A-1}". Items absent from the
// sidecar get zero vectors; sidecar rows for unknown items are ignored.
void load_attributes(InteractionDataset& ds, const std::filesystem::path& path);

// Writes "user_id\titem_id\ttimestamp" rows with the original raw ids.
void write_interactions(std::ostream& out, const InteractionDataset& ds);
// user_index.tsv and item_index.tsv: contiguous id -> raw id.
void save_index_maps(const InteractionDataset& ds, const std::filesystem::path& dir);

DatasetStats stats(const InteractionDataset& ds);
void write_stats_tsv(std::ostream& out, const DatasetStats& s);
DatasetStats read_stats_tsv(std::istream& in);
std::string format_stats_table(const DatasetStats& s);

// Held-out target with the history that precedes it.
struct EvalCase {
  std::size_t user = 0;
  std::vector<std::int64_t> context;
  std::int64_t target = 0;
};

// Last item per user is the test target, the second to last the validation
// target (only when the user has >= 3 items); training keeps the rest.
struct LeaveOneOutSplit {
  std::vector<std::vector<std::int64_t>> train;  // per user
  std::vector<EvalCase> validation;
  std::vector<EvalCase> test;
};

LeaveOneOutSplit leave_one_out(const InteractionDataset& ds);

struct SubsetOptions {
  std::optional<std::size_t> item_budget;
  std::optional<std::size_t> user_budget;
};

// Keeps the item_budget most popular items (ties to the lower id) and/or a
// uniform sample of user_budget users, drops interactions outside both sets,
// re-filters users to min_interactions and re-indexes. Budgets and source
// counts are recorded in provenance.
InteractionDataset subset(const InteractionDataset& ds, const SubsetOptions& options, Rng& rng);

// Item ids ordered by descending interaction count, ties by id.
std::vector<std::int64_t> items_by_popularity(const InteractionDataset& ds);

}  // namespace posenc
