#include "posenc/model_config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <string>

#include "posenc/errors.hpp"
#include "posenc/rng.hpp"

namespace posenc {
namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<std::string_view> known,
                    const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown key '" + key + "' in " + where);
    }
  }
}

}  // namespace

EncodingSpec ModelConfig::resolved_encoding() const {
  EncodingSpec spec = encoding;
  spec.model_dim = d;
  spec.max_len = max_len;
  spec.concat_activation = activation;
  return spec;
}

void ModelConfig::validate() const {
  if (d == 0 || d % 2 != 0) throw ConfigError("d must be a positive even number, got " + std::to_string(d));
  if (g == 0) throw ConfigError("g must be positive");
  if (blocks == 0) throw ConfigError("blocks must be positive");
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("heads (" + std::to_string(heads) + ") must divide d (" + std::to_string(d) + ")");
  }
  if (is_rotary_encoding(encoding.variant) && (d / heads) % 2 != 0) {
    throw ConfigError("RoPE variants need an even head dimension, got " + std::to_string(d / heads));
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  if (max_len < 2) throw ConfigError("max_len must be at least 2");
  if (lr < 0.0 || !std::isfinite(lr)) throw ConfigError("lr must be a finite non-negative number");
  if (nmax && !(*nmax > 0.0)) throw ConfigError("nmax must be positive or none");
  if (l2 < 0.0) throw ConfigError("l2 must be non-negative");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (extra_epochs < 0) throw ConfigError("extra_epochs must be non-negative");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (eval_negatives == 0 && !full_ranking) throw ConfigError("eval_negatives must be positive");
  resolved_encoding().validate();
}

ModelConfig preset(std::string_view dataset) {
  ModelConfig c;
  c.blocks = 3;
  const std::string name = lower(dataset);
  if (name == "men" || name == "fashion") {
    c.lr = name == "men" ? 0.000006 : 0.00001;
    c.max_len = 35;
    c.heads = 3;
    c.dropout = 0.3;
    c.nmax = 0.0001;
    c.d = 390;
    c.g = 1950;
  } else if (name == "games") {
    c.lr = 0.0001;
    c.max_len = 50;
    c.heads = 3;
    c.dropout = 0.5;
    c.nmax = std::nullopt;
    c.d = 90;
    c.g = 450;
  } else if (name == "beauty") {
    c.lr = 0.0001;
    c.max_len = 75;
    c.heads = 1;
    c.dropout = 0.5;
    c.nmax = 0.0001;
    c.d = 90;
    c.g = 450;
  } else {
    throw ConfigError("unknown preset '" + std::string(dataset) + "' (Men, Fashion, Games, Beauty)");
  }
  return c;
}

std::optional<double> parse_nmax(std::string_view text) {
  const std::string t = lower(text);
  if (t == "none" || t == "nan" || t == "null" || t.empty()) return std::nullopt;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) {
    throw ConfigError("nmax must be a number or 'none', got '" + std::string(text) + "'");
  }
  if (v == 0.0 || std::isnan(v)) return std::nullopt;
  if (v < 0.0) throw ConfigError("nmax must be positive or none");
  return v;
}

std::string format_nmax(const std::optional<double>& nmax) {
  if (!nmax) return "NaN";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *nmax);
  return buf;
}

nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json enc = {
      {"variant", std::string(to_string(c.encoding.variant))},
      {"clip_distance", c.encoding.clip_distance},
      {"value_bias", c.encoding.value_bias},
      {"rope_base", c.encoding.rope_base},
      {"angle_init_high", c.encoding.angle_init_high},
  };
  return {
      {"d", c.d},
      {"g", c.g},
      {"blocks", c.blocks},
      {"heads", c.heads},
      {"dropout", c.dropout},
      {"max_len", c.max_len},
      {"activation", std::string(to_string(c.activation))},
      {"leaky_slope", c.leaky_slope},
      {"encoding", enc},
      {"lr", c.lr},
      {"nmax", c.nmax ? nlohmann::json(*c.nmax) : nlohmann::json(nullptr)},
      {"l2", c.l2},
      {"epochs", c.epochs},
      {"extra_epochs", c.extra_epochs},
      {"batch_size", c.batch_size},
      {"seed", c.seed},
      {"eval_negatives", c.eval_negatives},
      {"full_ranking", c.full_ranking},
      {"loss_reduction", c.loss_reduction == LossReduction::kMean ? "mean" : "sum"},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j, const ModelConfig& base) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  reject_unknown(j,
                 {"preset", "d", "g", "blocks", "heads", "dropout", "max_len", "activation", "leaky_slope",
                  "encoding", "lr", "nmax", "l2", "epochs", "extra_epochs", "batch_size", "seed",
                  "eval_negatives", "full_ranking", "loss_reduction"},
                 "model config");
  ModelConfig c = base;
  if (j.contains("preset")) c = preset(j.at("preset").get<std::string>());
  read(j, "d", c.d);
  read(j, "g", c.g);
  read(j, "blocks", c.blocks);
  read(j, "heads", c.heads);
  read(j, "dropout", c.dropout);
  read(j, "max_len", c.max_len);
  if (j.contains("activation")) c.activation = parse_activation(j.at("activation").get<std::string>());
  read(j, "leaky_slope", c.leaky_slope);
  read(j, "lr", c.lr);
  if (j.contains("nmax")) {
    const auto& n = j.at("nmax");
    if (n.is_null()) c.nmax = std::nullopt;
    else if (n.is_string()) c.nmax = parse_nmax(n.get<std::string>());
    else if (n.is_number()) c.nmax = parse_nmax(std::to_string(n.get<double>()));
    else throw ConfigError("config key 'nmax' must be a number, string or null");
  }
  read(j, "l2", c.l2);
  read(j, "epochs", c.epochs);
  read(j, "extra_epochs", c.extra_epochs);
  read(j, "batch_size", c.batch_size);
  read(j, "seed", c.seed);
  read(j, "eval_negatives", c.eval_negatives);
  read(j, "full_ranking", c.full_ranking);
  if (j.contains("loss_reduction")) {
    const auto r = j.at("loss_reduction").get<std::string>();
    if (r == "mean") c.loss_reduction = LossReduction::kMean;
    else if (r == "sum") c.loss_reduction = LossReduction::kSum;
    else throw ConfigError("loss_reduction must be 'mean' or 'sum'");
  }
  if (j.contains("encoding")) {
    const auto& e = j.at("encoding");
    if (e.is_string()) {
      c.encoding.variant = parse_encoding(e.get<std::string>());
    } else {
      if (!e.is_object()) throw ConfigError("'encoding' must be a name or an object");
      reject_unknown(e, {"variant", "clip_distance", "value_bias", "rope_base", "angle_init_high"},
                     "encoding config");
      if (e.contains("variant")) c.encoding.variant = parse_encoding(e.at("variant").get<std::string>());
      read(e, "clip_distance", c.encoding.clip_distance);
      read(e, "value_bias", c.encoding.value_bias);
      read(e, "rope_base", c.encoding.rope_base);
      read(e, "angle_init_high", c.encoding.angle_init_high);
    }
  }
  return c;
}

std::string config_fingerprint(const ModelConfig& config) {
  nlohmann::json j = to_json(config);
  j.erase("seed");
  const std::string text = j.dump();
  // FNV-1a followed by a finalizer so short edits spread over all digits.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  h = mix64(h);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace posenc
