#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "posenc/attention.hpp"
#include "posenc/encodings.hpp"
#include "posenc/model_config.hpp"
#include "posenc/sequences.hpp"
#include "posenc/tensor.hpp"

namespace posenc {

class Rng;

struct NamedParameter {
  std::string name;
  Tensor tensor;
  bool max_norm = false;  // rows bounded by nmax after each step
  bool l2 = false;        // included in the optional L2 penalty
};

// sigmoid(<hidden_t, target_t>) per position. hidden, target: [B x L x d].
Tensor score(const Tensor& hidden, const Tensor& target_emb);

// -sum over valid positions of log p + log(1 - q), with p, q clamped to
// [eps, 1 - eps]. kMean divides by the number of valid positions.
inline constexpr double kProbabilityEps = 1e-7;
Tensor bce_loss(const Tensor& positive_prob, const Tensor& negative_prob, const Tensor& valid,
                LossReduction reduction = LossReduction::kSum);

// Rescales every row of each [rows x cols] table whose Euclidean norm
// exceeds nmax to norm nmax. nullopt leaves the tables alone; nmax <= 0
// throws ConfigError.
void apply_max_norm(std::span<Tensor> tables, std::optional<double> nmax);

// Transformer encoder over item sequences, scored by dot product against the
// (shared) item representations.
class SequentialRecommender {
 public:
  // attributes: row-major [num_items x attribute_dims], may be empty.
  SequentialRecommender(const ModelConfig& config, std::size_t num_items, Rng& init_rng,
                        std::span<const double> attributes = {}, std::size_t attribute_dims = 0);

  const ModelConfig& config() const { return config_; }
  std::size_t num_items() const { return num_items_; }
  std::size_t attribute_dims() const { return attribute_dims_; }

  // Item representations for tokens (0 = padding), shape ids_shape + [d].
  Tensor embed(std::span<const std::int64_t> tokens, const Shape& ids_shape) const;
  // Hidden states [B x L x d] for token windows [B x L].
  Tensor encode(std::span<const std::int64_t> tokens, std::size_t batch, std::size_t length,
                Rng* dropout_rng, bool train) const;
  // Scalar training loss for a batch, including the L2 term when enabled.
  Tensor loss(const SequenceBatch& batch, Rng* dropout_rng, bool train) const;

  // Last-position hidden state per window, row-major [B x d]. No graph.
  std::vector<double> final_hidden(std::span<const std::int64_t> tokens, std::size_t batch) const;
  // Representations of every token 0..num_items, row-major [(num_items+1) x d].
  std::vector<double> item_matrix() const;
  // Raw logits of candidate items (ids, not tokens) after `context`.
  std::vector<double> score_candidates(std::span<const std::int64_t> context,
                                       std::span<const std::int64_t> candidates) const;

  std::vector<NamedParameter> parameters() const;
  // Bounds the flagged tables by config().nmax.
  void apply_max_norm();

  Tensor& item_table() { return item_table_; }
  PositionalEncoding& encoding() { return encoding_; }
  const PositionalEncoding& encoding() const { return encoding_; }
  std::vector<TransformerBlock>& blocks() { return blocks_; }
  const Tensor& attribute_table() const { return attributes_; }

 private:
  ModelConfig config_;
  std::size_t num_items_;
  std::size_t attribute_dims_;
  Tensor item_table_;  // [(num_items+1) x d], row 0 = padding
  Tensor attributes_;  // [(num_items+1) x A] constant
  Tensor fusion_weight_, fusion_bias_;
  PositionalEncoding encoding_;
  std::vector<TransformerBlock> blocks_;
  Tensor final_gamma_, final_beta_;
};

// Parameter values, for snapshots and restores.
std::vector<std::vector<double>> snapshot(const SequentialRecommender& model);
void restore(SequentialRecommender& model, const std::vector<std::vector<double>>& values);

}  // namespace posenc
