#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "posenc/dataset.hpp"
#include "posenc/model_config.hpp"

namespace posenc::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUserError = 1;
inline constexpr int kExitInternal = 2;

inline constexpr const char* kOutRootEnv = "POSENC_OUT_ROOT";

struct DatasetRef {
  std::string path;
  std::string format = "auto";
  std::string attributes;
  std::size_t min_interactions = 2;
};

// Parsed --config document. Unknown keys anywhere raise ConfigError.
struct RunConfigFile {
  DatasetRef dataset;
  ModelConfig model;
  std::vector<std::uint64_t> seeds;
  std::size_t jobs = 1;
  std::string output;
  std::string source_text;  // the file exactly as read
};

RunConfigFile parse_run_config(const std::string& text);
RunConfigFile load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfigFile& cfg);

// "42,43,44" -> {42, 43, 44}; throws ConfigError on malformed input.
std::vector<std::uint64_t> parse_seed_list(const std::string& csv);

InteractionDataset load_dataset(const DatasetRef& ref);

// Entry point shared by the executable and the tests. Returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace posenc::cli
