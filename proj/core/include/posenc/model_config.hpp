#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "posenc/encodings.hpp"
#include "posenc/ops.hpp"

namespace posenc {

enum class LossReduction { kSum, kMean };

// Architecture and training hyperparameters for one run.
struct ModelConfig {
  std::size_t d = 64;          // embedding dimension
  std::size_t g = 256;         // feed-forward hidden dimension
  std::size_t blocks = 3;
  std::size_t heads = 1;
  double dropout = 0.2;
  std::size_t max_len = 50;
  Activation activation = Activation::kLeakyRelu;
  double leaky_slope = 0.01;
  EncodingSpec encoding;       // model_dim/max_len are taken from d/max_len

  double lr = 1e-3;
  std::optional<double> nmax;  // per-row norm bound; nullopt disables it
  double l2 = 0.0;             // L2 weight on embedding tables
  int epochs = 200;
  int extra_epochs = 0;        // appended epochs ("-Longer" runs use 400)
  std::size_t batch_size = 128;
  std::uint64_t seed = 42;
  std::size_t eval_negatives = 100;
  bool full_ranking = false;   // rank against every item instead of sampling
  LossReduction loss_reduction = LossReduction::kMean;

  int total_epochs() const { return epochs + extra_epochs; }
  // EncodingSpec with the model-level fields filled in.
  EncodingSpec resolved_encoding() const;
  // Throws ConfigError on any violated invariant.
  void validate() const;
};

// Defaults for the four benchmark datasets (Men, Fashion, Games, Beauty).
// Throws ConfigError for an unknown name.
ModelConfig preset(std::string_view dataset);

// JSON form. Parsing is strict: unknown keys raise ConfigError. Keys absent
// from the document keep the values of `base`.
nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j, const ModelConfig& base = {});

// "none", "nan", "null" (any case) and 0 mean no bound.
std::optional<double> parse_nmax(std::string_view text);
std::string format_nmax(const std::optional<double>& nmax);

// Stable 16-hex-digit hash of the config with the seed removed; identifies
// runs that belong to the same sweep cell.
std::string config_fingerprint(const ModelConfig& config);

}  // namespace posenc
