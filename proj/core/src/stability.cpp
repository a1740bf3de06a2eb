#include "posenc/stability.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "posenc/checkpoint.hpp"
#include "posenc/errors.hpp"
#include "posenc/train.hpp"

namespace posenc {
namespace {

const char* const kSummaryHeader =
    "Act\tencoding\tnmax\tHit Mean\tHit Dev\tNDCG Mean\tNDCG Dev\truns\tCI\tCI-length";

struct Moments {
  double mean = 0.0;
  double dev = 0.0;
};

Moments moments(const std::vector<double>& xs) {
  Moments m;
  if (xs.empty()) return m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - m.mean) * (x - m.mean);
    m.dev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return m;
}

void fill_interval(SweepSummary& s) {
  s.ci = confidence_interval(s.hit_mean, s.hit_dev, s.runs);
  s.ci_length = round2(s.ci.high - s.ci.low);
}

nlohmann::json ledger_line(const std::string& fingerprint, const SeedResult& r) {
  nlohmann::json j = {{"fingerprint", fingerprint}, {"seed", r.seed}, {"status", r.ok ? "ok" : "failed"}};
  if (r.ok) {
    j["hit"] = r.hit;
    j["ndcg"] = r.ndcg;
    j["best_epoch"] = r.best_epoch;
  } else {
    j["error"] = r.error;
  }
  return j;
}

std::string format2(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("summary: bad " + what + " value '" + s + "'");
  }
}

}  // namespace

double round2(double x) { return std::round(x * 100.0) / 100.0; }

ConfidenceInterval confidence_interval(double mean, double dev, std::size_t runs, double z) {
  if (runs == 0) return {mean, mean};
  const double half = z * dev / std::sqrt(static_cast<double>(runs));
  return {round2(mean - half), round2(mean + half)};
}

SweepSummary aggregate(std::span<const SeedResult> results) {
  SweepSummary s;
  s.results.assign(results.begin(), results.end());
  std::vector<double> hits;
  std::vector<double> ndcgs;
  for (const auto& r : results) {
    if (!r.ok) continue;
    hits.push_back(100.0 * r.hit);
    ndcgs.push_back(100.0 * r.ndcg);
  }
  s.runs = hits.size();
  const Moments h = moments(hits);
  const Moments n = moments(ndcgs);
  s.hit_mean = h.mean;
  s.hit_dev = h.dev;
  s.ndcg_mean = n.mean;
  s.ndcg_dev = n.dev;
  fill_interval(s);
  return s;
}

SweepSummary summary_from_moments(double hit_mean, double hit_dev, double ndcg_mean, double ndcg_dev,
                                  std::size_t runs) {
  SweepSummary s;
  s.hit_mean = hit_mean;
  s.hit_dev = hit_dev;
  s.ndcg_mean = ndcg_mean;
  s.ndcg_dev = ndcg_dev;
  s.runs = runs;
  fill_interval(s);
  return s;
}

std::vector<DeviationSummary> avg_dev(std::span<const SweepSummary> summaries) {
  std::vector<DeviationSummary> out;
  for (const auto& s : summaries) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& d) { return d.encoding == s.encoding; });
    if (it == out.end()) {
      out.push_back({s.encoding});
      it = out.end() - 1;
    }
    it->avg_dev_hit += s.hit_dev;
    it->avg_dev_ndcg += s.ndcg_dev;
    it->avg_runs += static_cast<double>(s.runs);
    it->avg_ci_length += s.ci_length;
    ++it->summaries;
  }
  for (auto& d : out) {
    const double n = static_cast<double>(d.summaries);
    d.avg_dev_hit /= n;
    d.avg_dev_ndcg /= n;
    d.avg_runs /= n;
    d.avg_ci_length /= n;
  }
  return out;
}

Recommendation recommend_encoding(const SweepSummary& baseline, double threshold) {
  if (!baseline.encoding.empty() && parse_encoding(baseline.encoding) != EncodingVariant::kNone) {
    throw ConfigError("recommend-encoding needs the encoding = None baseline, got " + baseline.encoding);
  }
  if (baseline.runs < 3) {
    throw UserError("insufficient runs: the baseline has " + std::to_string(baseline.runs) +
                    " successful seeds, at least 3 are needed");
  }
  Recommendation r;
  r.hit_dev = baseline.hit_dev;
  r.threshold = threshold;
  r.runs = baseline.runs;
  char buf[160];
  if (baseline.hit_dev > threshold) {
    r.variant = EncodingVariant::kRMHA4;
    std::snprintf(buf, sizeof buf, "Hit Dev %.2f over %zu runs > threshold %.2f: high-deviation dataset",
                  baseline.hit_dev, baseline.runs, threshold);
  } else {
    r.variant = EncodingVariant::kRotatoryCon;
    std::snprintf(buf, sizeof buf, "Hit Dev %.2f over %zu runs <= threshold %.2f: low-deviation dataset",
                  baseline.hit_dev, baseline.runs, threshold);
  }
  r.reason = buf;
  return r;
}

SeedResult run_seed(const ModelConfig& config, const InteractionDataset& data, const std::filesystem::path& run_dir) {
  SeedResult r;
  r.seed = config.seed;
  try {
    const TrainOutcome out = train(config, data);
    r.hit = out.test.hit_at_10;
    r.ndcg = out.test.ndcg;
    r.best_epoch = out.best_epoch;
    if (!run_dir.empty()) {
      std::filesystem::create_directories(run_dir);
      std::ofstream(run_dir / "config.json") << to_json(config).dump(2) << '\n';
      std::ofstream history(run_dir / "history.tsv");
      write_history_tsv(history, out.history);
      save_checkpoint(*out.model, run_dir / "model.ckpt");
      std::ofstream metrics(run_dir / "metrics.tsv");
      write_eval_tsv(metrics, out.test);
    }
  } catch (const TrainingDiverged& e) {
    r.ok = false;
    r.error = e.what();
  }
  return r;
}

std::vector<SeedResult> read_ledger(const std::filesystem::path& path, const std::string& fingerprint,
                                    const std::function<void(const std::string&)>& warn) {
  std::vector<SeedResult> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.at("fingerprint").get<std::string>() != fingerprint) continue;
      SeedResult r;
      r.seed = j.at("seed").get<std::uint64_t>();
      r.ok = j.at("status").get<std::string>() == "ok";
      if (r.ok) {
        r.hit = j.at("hit").get<double>();
        r.ndcg = j.at("ndcg").get<double>();
        r.best_epoch = j.value("best_epoch", 0);
      } else {
        r.error = j.value("error", std::string());
      }
      out.push_back(r);
    } catch (const nlohmann::json::exception&) {
      if (warn) warn(path.string() + ":" + std::to_string(lineno) + ": skipping unreadable ledger line");
    }
  }
  return out;
}

SweepSummary sweep(const ModelConfig& config, const InteractionDataset& data, const SweepOptions& options) {
  if (options.seeds.empty()) throw ConfigError("sweep: no seeds given");
  {
    std::set<std::uint64_t> seen;
    for (auto s : options.seeds) {
      if (!seen.insert(s).second) throw ConfigError("sweep: seed " + std::to_string(s) + " is repeated");
    }
  }
  config.validate();
  const std::string fingerprint = config_fingerprint(config);
  const auto warn = [&](const std::string& msg) {
    if (options.warn) options.warn(msg);
  };

  std::map<std::uint64_t, SeedResult> done;
  std::filesystem::path ledger_path;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    ledger_path = options.out_dir / "runs.jsonl";
    std::vector<SeedResult> previous;
    std::vector<std::string> keep_lines;
    if (std::filesystem::exists(ledger_path)) {
      previous = read_ledger(ledger_path, fingerprint, warn);
      // Rewrite without damaged lines so later appends start on a fresh line.
      std::ifstream in(ledger_path);
      std::string line;
      while (std::getline(in, line)) {
        if (nlohmann::json::accept(line)) keep_lines.push_back(line);
      }
      in.close();
      std::ofstream rewrite(ledger_path, std::ios::trunc);
      for (const auto& l : keep_lines) rewrite << l << '\n';
    }
    for (const auto& r : previous) {
      if (std::find(options.seeds.begin(), options.seeds.end(), r.seed) != options.seeds.end()) done[r.seed] = r;
    }
  }

  std::vector<std::uint64_t> pending;
  for (auto s : options.seeds) {
    if (!done.count(s)) pending.push_back(s);
  }

  const SeedRunner runner = options.runner ? options.runner : [&](const ModelConfig& c) {
    const auto dir = options.out_dir.empty() ? std::filesystem::path()
                                             : options.out_dir / ("seed-" + std::to_string(c.seed));
    return run_seed(c, data, dir);
  };

  std::mutex mu;
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  auto worker = [&] {
    while (true) {
      const std::size_t k = next.fetch_add(1);
      if (k >= pending.size()) return;
      ModelConfig c = config;
      c.seed = pending[k];
      SeedResult r;
      try {
        r = runner(c);
        r.seed = c.seed;
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        next.store(pending.size());
        return;
      }
      std::lock_guard lock(mu);
      if (!ledger_path.empty()) {
        std::ofstream ledger(ledger_path, std::ios::app);
        ledger << ledger_line(fingerprint, r).dump() << '\n';
        ledger.flush();
      }
      done[r.seed] = r;
    }
  };
  const std::size_t jobs = std::clamp<std::size_t>(options.jobs, 1, std::max<std::size_t>(1, pending.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t j = 0; j < jobs; ++j) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<SeedResult> ordered;
  for (auto s : options.seeds) {
    const SeedResult& r = done.at(s);
    if (!r.ok) warn("seed " + std::to_string(s) + " failed and is excluded: " + r.error);
    ordered.push_back(r);
  }
  SweepSummary summary = aggregate(ordered);
  summary.fingerprint = fingerprint;
  summary.activation = std::string(to_string(config.activation));
  summary.encoding = std::string(to_string(config.encoding.variant));
  summary.nmax = format_nmax(config.nmax);
  if (!options.out_dir.empty()) {
    std::ofstream out(options.out_dir / "summary.tsv");
    write_summary_tsv(out, std::span<const SweepSummary>(&summary, 1));
  }
  return summary;
}

void write_summary_tsv(std::ostream& out, std::span<const SweepSummary> rows) {
  out << kSummaryHeader << '\n';
  for (const auto& s : rows) {
    out << s.activation << '\t' << s.encoding << '\t' << s.nmax << '\t' << format2(s.hit_mean) << '\t'
        << format2(s.hit_dev) << '\t' << format2(s.ndcg_mean) << '\t' << format2(s.ndcg_dev) << '\t' << s.runs
        << '\t' << '(' << format2(s.ci.low) << ", " << format2(s.ci.high) << ')' << '\t' << format2(s.ci_length)
        << '\n';
  }
}

std::vector<SweepSummary> read_summary_tsv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kSummaryHeader) {
    throw DataError("summary: expected header '" + std::string(kSummaryHeader) + "'");
  }
  std::vector<SweepSummary> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, '\t')) f.push_back(cell);
    if (f.size() != 10) {
      throw DataError("summary line " + std::to_string(lineno) + ": expected 10 columns, got " +
                      std::to_string(f.size()));
    }
    SweepSummary s;
    s.activation = f[0];
    s.encoding = f[1];
    s.nmax = f[2];
    s.hit_mean = parse_double(f[3], "Hit Mean");
    s.hit_dev = parse_double(f[4], "Hit Dev");
    s.ndcg_mean = parse_double(f[5], "NDCG Mean");
    s.ndcg_dev = parse_double(f[6], "NDCG Dev");
    s.runs = static_cast<std::size_t>(parse_double(f[7], "runs"));
    const auto comma = f[8].find(',');
    if (f[8].size() < 5 || f[8].front() != '(' || f[8].back() != ')' || comma == std::string::npos) {
      throw DataError("summary line " + std::to_string(lineno) + ": bad CI '" + f[8] + "'");
    }
    s.ci.low = parse_double(f[8].substr(1, comma - 1), "CI");
    s.ci.high = parse_double(f[8].substr(comma + 2, f[8].size() - comma - 3), "CI");
    s.ci_length = parse_double(f[9], "CI-length");
    out.push_back(s);
  }
  return out;
}

}  // namespace posenc
