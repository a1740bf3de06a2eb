#include "posenc/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "posenc/errors.hpp"
#include "posenc/rng.hpp"

namespace posenc {
namespace {

struct RawRow {
  std::size_t user;  // index into raw user names
  std::size_t item;  // index into raw item names
  double timestamp;
};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

char pick_delimiter(std::string_view line, const std::string& format) {
  if (format == "tsv") return '\t';
  if (format == "csv") return ',';
  if (format == "ws") return ' ';
  if (format != "auto") throw DataError("unknown interaction format '" + format + "' (auto, tsv, csv, ws)");
  if (line.find('\t') != std::string_view::npos) return '\t';
  if (line.find(',') != std::string_view::npos) return ',';
  return ' ';
}

std::vector<std::string_view> split(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  if (delim == ' ') {
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
      if (i >= line.size()) break;
      std::size_t j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
      out.push_back(line.substr(i, j - i));
      i = j;
    }
    return out;
  }
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delim, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

// Builds the dataset from rows in file order: stable timestamp sort per
// user, min_interactions filter, then first-appearance re-indexing.
InteractionDataset assemble(const std::vector<RawRow>& rows, const std::vector<std::string>& raw_users,
                            const std::vector<std::string>& raw_items, std::size_t min_interactions,
                            const std::string& source) {
  std::vector<std::size_t> count(raw_users.size(), 0);
  for (const auto& r : rows) ++count[r.user];

  InteractionDataset ds;
  ds.provenance.source = source;
  ds.provenance.min_interactions = min_interactions;
  std::vector<std::int64_t> user_map(raw_users.size(), -1);
  std::vector<std::int64_t> item_map(raw_items.size(), -1);
  std::vector<std::vector<std::pair<double, std::int64_t>>> per_user;
  for (const auto& r : rows) {
    if (count[r.user] < min_interactions) continue;
    if (user_map[r.user] < 0) {
      user_map[r.user] = static_cast<std::int64_t>(ds.user_names.size());
      ds.user_names.push_back(raw_users[r.user]);
      per_user.emplace_back();
    }
    if (item_map[r.item] < 0) {
      item_map[r.item] = static_cast<std::int64_t>(ds.item_names.size());
      ds.item_names.push_back(raw_items[r.item]);
    }
    per_user[static_cast<std::size_t>(user_map[r.user])].emplace_back(r.timestamp, item_map[r.item]);
  }
  if (ds.user_names.empty()) {
    throw DataError(source + ": no users with at least " + std::to_string(min_interactions) +
                    " interactions");
  }
  ds.sequences.resize(per_user.size());
  ds.timestamps.resize(per_user.size());
  for (std::size_t u = 0; u < per_user.size(); ++u) {
    auto& events = per_user[u];
    std::stable_sort(events.begin(), events.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    ds.sequences[u].reserve(events.size());
    ds.timestamps[u].reserve(events.size());
    for (const auto& [ts, item] : events) {
      ds.timestamps[u].push_back(ts);
      ds.sequences[u].push_back(item);
    }
  }
  return ds;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::size_t InteractionDataset::num_interactions() const {
  std::size_t n = 0;
  for (const auto& s : sequences) n += s.size();
  return n;
}

InteractionDataset parse_interactions(std::istream& in, const LoadOptions& options,
                                      const std::string& source) {
  std::vector<RawRow> rows;
  std::vector<std::string> raw_users;
  std::vector<std::string> raw_items;
  std::unordered_map<std::string, std::size_t> user_ids;
  std::unordered_map<std::string, std::size_t> item_ids;
  std::string line;
  std::size_t line_no = 0;
  char delim = 0;
  bool first_content = true;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim(line);
    if (view.empty() || view.front() == '#') continue;
    if (delim == 0) delim = pick_delimiter(view, options.format);
    const auto fields = split(view, delim);
    if (fields.size() != 3) {
      throw DataError(source + ":" + std::to_string(line_no) + ": expected 3 fields (user_id, item_id, timestamp), got " +
                      std::to_string(fields.size()));
    }
    double ts = 0.0;
    if (!parse_double(fields[2], ts)) {
      if (first_content) {
        first_content = false;
        continue;  // header
      }
      throw DataError(source + ":" + std::to_string(line_no) + ": timestamp '" + std::string(fields[2]) +
                      "' is not a number");
    }
    first_content = false;
    if (fields[0].empty() || fields[1].empty()) {
      throw DataError(source + ":" + std::to_string(line_no) + ": empty user or item id");
    }
    auto [uit, unew] = user_ids.try_emplace(std::string(fields[0]), raw_users.size());
    if (unew) raw_users.emplace_back(fields[0]);
    auto [iit, inew] = item_ids.try_emplace(std::string(fields[1]), raw_items.size());
    if (inew) raw_items.emplace_back(fields[1]);
    rows.push_back({uit->second, iit->second, ts});
  }
  if (rows.empty()) throw DataError(source + ": no interactions");
  return assemble(rows, raw_users, raw_items, options.min_interactions, source);
}

InteractionDataset load_interactions(const std::filesystem::path& path, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open interaction file " + path.string());
  return parse_interactions(in, options, path.string());
}

void load_attributes(InteractionDataset& ds, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open attribute file " + path.string());
  std::unordered_map<std::string_view, std::size_t> item_ids;
  for (std::size_t i = 0; i < ds.item_names.size(); ++i) item_ids.emplace(ds.item_names[i], i);
  std::string line;
  std::size_t line_no = 0;
  char delim = 0;
  std::size_t dims = 0;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim(line);
    if (view.empty()) continue;
    if (delim == 0) {
      delim = pick_delimiter(view, "auto");
      const auto header = split(view, delim);
      if (header.size() < 2) throw DataError(path.string() + ":1: attribute header needs item_id and a_0..");
      dims = header.size() - 1;
      values.assign(ds.num_items() * dims, 0.0);
      continue;
    }
    const auto fields = split(view, delim);
    if (fields.size() != dims + 1) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(dims + 1) + " fields, got " + std::to_string(fields.size()));
    }
    const auto it = item_ids.find(fields[0]);
    if (it == item_ids.end()) continue;
    for (std::size_t a = 0; a < dims; ++a) {
      double v = 0.0;
      if (!parse_double(fields[a + 1], v)) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": attribute '" +
                        std::string(fields[a + 1]) + "' is not a number");
      }
      values[it->second * dims + a] = v;
    }
  }
  if (dims == 0) throw DataError(path.string() + ": empty attribute file");
  ds.attribute_dims = dims;
  ds.attributes = std::move(values);
}

void write_interactions(std::ostream& out, const InteractionDataset& ds) {
  out << "user_id\titem_id\ttimestamp\n";
  for (std::size_t u = 0; u < ds.num_users(); ++u) {
    for (std::size_t k = 0; k < ds.sequences[u].size(); ++k) {
      out << ds.user_names[u] << '\t' << ds.item_names[static_cast<std::size_t>(ds.sequences[u][k])] << '\t'
          << format_double(ds.timestamps[u][k]) << '\n';
    }
  }
}

void save_index_maps(const InteractionDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream users(dir / "user_index.tsv");
  users << "index\tuser_id\n";
  for (std::size_t u = 0; u < ds.user_names.size(); ++u) users << u << '\t' << ds.user_names[u] << '\n';
  std::ofstream items(dir / "item_index.tsv");
  items << "index\titem_id\n";
  for (std::size_t i = 0; i < ds.item_names.size(); ++i) items << i << '\t' << ds.item_names[i] << '\n';
}

DatasetStats stats(const InteractionDataset& ds) {
  DatasetStats s;
  s.users = ds.num_users();
  s.items = ds.num_items();
  s.interactions = ds.num_interactions();
  s.attributes = ds.attribute_dims;
  if (s.users && s.items) {
    s.density = static_cast<double>(s.interactions) /
                (static_cast<double>(s.users) * static_cast<double>(s.items));
  }
  const auto& p = ds.provenance;
  if (p.user_budget || p.item_budget) {
    s.budget_users = p.user_budget.value_or(p.source_users);
    s.budget_items = p.item_budget.value_or(p.source_items);
    if (*s.budget_users && *s.budget_items) {
      s.budget_density = static_cast<double>(s.interactions) /
                         (static_cast<double>(*s.budget_users) * static_cast<double>(*s.budget_items));
    }
  }
  return s;
}

void write_stats_tsv(std::ostream& out, const DatasetStats& s) {
  out << "users\titems\tinteractions\tdensity\tattributes";
  if (s.budget_density) out << "\tbudget_users\tbudget_items\tbudget_density";
  out << '\n';
  out << s.users << '\t' << s.items << '\t' << s.interactions << '\t' << format_double(s.density) << '\t'
      << s.attributes;
  if (s.budget_density) {
    out << '\t' << *s.budget_users << '\t' << *s.budget_items << '\t' << format_double(*s.budget_density);
  }
  out << '\n';
}

DatasetStats read_stats_tsv(std::istream& in) {
  std::string header;
  std::string row;
  if (!std::getline(in, header) || !std::getline(in, row)) throw DataError("stats TSV: missing rows");
  const auto names = split(header, '\t');
  const auto values = split(row, '\t');
  if (names.size() != values.size()) throw DataError("stats TSV: header and row widths differ");
  DatasetStats s;
  for (std::size_t k = 0; k < names.size(); ++k) {
    double v = 0.0;
    if (!parse_double(values[k], v)) throw DataError("stats TSV: bad value '" + std::string(values[k]) + "'");
    const auto n = names[k];
    const auto as_count = static_cast<std::size_t>(v);
    if (n == "users") s.users = as_count;
    else if (n == "items") s.items = as_count;
    else if (n == "interactions") s.interactions = as_count;
    else if (n == "density") s.density = v;
    else if (n == "attributes") s.attributes = as_count;
    else if (n == "budget_users") s.budget_users = as_count;
    else if (n == "budget_items") s.budget_items = as_count;
    else if (n == "budget_density") s.budget_density = v;
    else throw DataError("stats TSV: unknown column '" + std::string(n) + "'");
  }
  return s;
}

std::string format_stats_table(const DatasetStats& s) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "Users         %zu\nItems         %zu\nInteractions  %zu\nAttributes    %zu\nDensity       %.3e\n",
                s.users, s.items, s.interactions, s.attributes, s.density);
  std::string out = buf;
  if (s.budget_density) {
    std::snprintf(buf, sizeof buf, "Budget        %zu users x %zu items\nBudget density %.3e\n",
                  *s.budget_users, *s.budget_items, *s.budget_density);
    out += buf;
  }
  return out;
}

LeaveOneOutSplit leave_one_out(const InteractionDataset& ds) {
  LeaveOneOutSplit split;
  split.train.resize(ds.num_users());
  for (std::size_t u = 0; u < ds.num_users(); ++u) {
    const auto& seq = ds.sequences[u];
    if (seq.size() < 2) continue;
    const std::size_t n = seq.size();
    split.test.push_back({u, std::vector<std::int64_t>(seq.begin(), seq.end() - 1), seq[n - 1]});
    if (n >= 3) {
      split.validation.push_back({u, std::vector<std::int64_t>(seq.begin(), seq.end() - 2), seq[n - 2]});
      split.train[u].assign(seq.begin(), seq.end() - 2);
    } else {
      split.train[u].assign(seq.begin(), seq.end() - 1);
    }
  }
  return split;
}

std::vector<std::int64_t> items_by_popularity(const InteractionDataset& ds) {
  std::vector<std::size_t> count(ds.num_items(), 0);
  for (const auto& seq : ds.sequences) {
    for (auto item : seq) ++count[static_cast<std::size_t>(item)];
  }
  std::vector<std::int64_t> order(ds.num_items());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
    return count[static_cast<std::size_t>(a)] > count[static_cast<std::size_t>(b)];
  });
  return order;
}

InteractionDataset subset(const InteractionDataset& ds, const SubsetOptions& options, Rng& rng) {
  if (options.item_budget && *options.item_budget > ds.num_items()) {
    throw DataError("subset: item budget " + std::to_string(*options.item_budget) + " exceeds " +
                    std::to_string(ds.num_items()) + " items");
  }
  if (options.user_budget && *options.user_budget > ds.num_users()) {
    throw DataError("subset: user budget " + std::to_string(*options.user_budget) + " exceeds " +
                    std::to_string(ds.num_users()) + " users");
  }
  std::vector<bool> keep_item(ds.num_items(), !options.item_budget.has_value());
  if (options.item_budget) {
    const auto order = items_by_popularity(ds);
    for (std::size_t k = 0; k < *options.item_budget; ++k) keep_item[static_cast<std::size_t>(order[k])] = true;
  }
  std::vector<bool> keep_user(ds.num_users(), !options.user_budget.has_value());
  if (options.user_budget) {
    std::vector<std::size_t> users(ds.num_users());
    std::iota(users.begin(), users.end(), 0);
    // partial Fisher-Yates: the first user_budget slots are a uniform sample
    for (std::size_t k = 0; k < *options.user_budget; ++k) {
      const std::size_t j = k + static_cast<std::size_t>(rng.below(users.size() - k));
      std::swap(users[k], users[j]);
      keep_user[users[k]] = true;
    }
  }

  // Re-run assembly on the surviving rows so filtering and re-indexing
  // follow the same rules as loading.
  std::vector<RawRow> rows;
  for (std::size_t u = 0; u < ds.num_users(); ++u) {
    if (!keep_user[u]) continue;
    for (std::size_t k = 0; k < ds.sequences[u].size(); ++k) {
      const auto item = static_cast<std::size_t>(ds.sequences[u][k]);
      if (keep_item[item]) rows.push_back({u, item, ds.timestamps[u][k]});
    }
  }
  if (rows.empty()) throw DataError("subset: no interactions left");
  InteractionDataset out;
  try {
    out = assemble(rows, ds.user_names, ds.item_names, ds.provenance.min_interactions, ds.provenance.source);
  } catch (const DataError&) {
    throw DataError("subset: resulting dataset is empty");
  }
  if (ds.attribute_dims) {
    std::unordered_map<std::string_view, std::size_t> old_ids;
    for (std::size_t i = 0; i < ds.item_names.size(); ++i) old_ids.emplace(ds.item_names[i], i);
    out.attribute_dims = ds.attribute_dims;
    out.attributes.assign(out.num_items() * ds.attribute_dims, 0.0);
    for (std::size_t i = 0; i < out.num_items(); ++i) {
      const std::size_t old = old_ids.at(out.item_names[i]);
      std::copy_n(ds.attributes.begin() + static_cast<std::ptrdiff_t>(old * ds.attribute_dims),
                  ds.attribute_dims, out.attributes.begin() + static_cast<std::ptrdiff_t>(i * ds.attribute_dims));
    }
  }
  out.provenance.user_budget = options.user_budget;
  out.provenance.item_budget = options.item_budget;
  out.provenance.source_users = ds.num_users();
  out.provenance.source_items = ds.num_items();
  return out;
}

}  // namespace posenc
