#include "posenc/model.hpp"

#include <cmath>

#include "posenc/errors.hpp"
#include "posenc/ops.hpp"
#include "posenc/rng.hpp"

namespace posenc {
namespace {

Tensor xavier_table(std::size_t rows, std::size_t cols, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::vector<double> v(rows * cols);
  for (double& x : v) x = rng.uniform(-a, a);
  return Tensor::parameter({rows, cols}, std::move(v));
}

std::vector<double> to_mask(std::span<const std::int64_t> tokens) {
  std::vector<double> m(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) m[i] = tokens[i] != 0 ? 1.0 : 0.0;
  return m;
}

}  // namespace

Tensor score(const Tensor& hidden, const Tensor& target_emb) {
  if (hidden.shape() != target_emb.shape()) {
    throw ShapeError("score: hidden " + to_string(hidden.shape()) + " vs target " +
                     to_string(target_emb.shape()));
  }
  return sigmoid(sum_last(mul(hidden, target_emb)));
}

Tensor bce_loss(const Tensor& positive_prob, const Tensor& negative_prob, const Tensor& valid,
                LossReduction reduction) {
  if (positive_prob.shape() != negative_prob.shape() || positive_prob.shape() != valid.shape()) {
    throw ShapeError("bce_loss: shapes " + to_string(positive_prob.shape()) + ", " +
                     to_string(negative_prob.shape()) + ", " + to_string(valid.shape()));
  }
  constexpr double eps = kProbabilityEps;
  const Tensor lp = log(clamp(positive_prob, eps, 1.0 - eps));
  const Tensor ln = log(clamp(affine(negative_prob, -1.0, 1.0), eps, 1.0 - eps));
  Tensor total = scale(sum(mul(add(lp, ln), valid)), -1.0);
  if (reduction == LossReduction::kMean) {
    double count = 0.0;
    for (double v : valid.values()) count += v;
    if (count > 0.0) total = scale(total, 1.0 / count);
  }
  return total;
}

void apply_max_norm(std::span<Tensor> tables, std::optional<double> nmax) {
  if (!nmax) return;
  if (!(*nmax > 0.0)) throw ConfigError("nmax must be positive, got " + std::to_string(*nmax));
  for (Tensor& t : tables) {
    const std::size_t cols = t.rank() == 0 ? 1 : t.dim(-1);
    auto v = t.mutable_values();
    for (std::size_t r = 0; r * cols < v.size(); ++r) {
      double sq = 0.0;
      for (std::size_t c = 0; c < cols; ++c) sq += v[r * cols + c] * v[r * cols + c];
      const double norm = std::sqrt(sq);
      if (norm > *nmax) {
        const double f = *nmax / norm;
        for (std::size_t c = 0; c < cols; ++c) v[r * cols + c] *= f;
      }
    }
  }
}

SequentialRecommender::SequentialRecommender(const ModelConfig& config, std::size_t num_items,
                                             Rng& init_rng, std::span<const double> attributes,
                                             std::size_t attribute_dims)
    : config_(config), num_items_(num_items), attribute_dims_(attribute_dims) {
  config_.validate();
  if (num_items == 0) throw DataError("model needs at least one item");
  const std::size_t d = config_.d;
  item_table_ = xavier_table(num_items + 1, d, init_rng);
  auto rows = item_table_.mutable_values();
  std::fill(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(d), 0.0);

  if (attribute_dims > 0) {
    if (attributes.size() != num_items * attribute_dims) {
      throw ShapeError("attributes: expected " + std::to_string(num_items * attribute_dims) +
                       " values, got " + std::to_string(attributes.size()));
    }
    std::vector<double> padded((num_items + 1) * attribute_dims, 0.0);
    std::copy(attributes.begin(), attributes.end(), padded.begin() + static_cast<std::ptrdiff_t>(attribute_dims));
    attributes_ = Tensor::constant({num_items + 1, attribute_dims}, std::move(padded));
    fusion_weight_ = xavier_table(d + attribute_dims, d, init_rng);
    fusion_bias_ = Tensor::zeros({d}, true);
  }

  const EncodingSpec spec = config_.resolved_encoding();
  encoding_ = PositionalEncoding(spec, d / config_.heads, init_rng);
  for (std::size_t b = 0; b < config_.blocks; ++b) {
    BlockConfig bc;
    bc.model_dim = d;
    bc.heads = config_.heads;
    bc.ff_hidden = config_.g;
    bc.dropout = config_.dropout;
    bc.activation = config_.activation;
    bc.leaky_slope = config_.leaky_slope;
    bc.causal = true;
    bc.block_index = static_cast<int>(b);
    blocks_.emplace_back(bc, init_rng);
  }
  final_gamma_ = Tensor::parameter({d}, std::vector<double>(d, 1.0));
  final_beta_ = Tensor::zeros({d}, true);
}

Tensor SequentialRecommender::embed(std::span<const std::int64_t> tokens, const Shape& ids_shape) const {
  for (std::int64_t t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) > num_items_) {
      throw ShapeError("token " + std::to_string(t) + " outside [0, " + std::to_string(num_items_) + "]");
    }
  }
  const Tensor e = gather_rows(item_table_, tokens, ids_shape);
  if (attribute_dims_ == 0) return e;
  const Tensor a = gather_rows(attributes_, tokens, ids_shape);
  return add(matmul(concat_last(e, a), fusion_weight_), fusion_bias_);
}

Tensor SequentialRecommender::encode(std::span<const std::int64_t> tokens, std::size_t batch,
                                     std::size_t length, Rng* dropout_rng, bool train) const {
  if (tokens.size() != batch * length) throw ShapeError("encode: token count does not match B x L");
  if (length > config_.max_len) {
    throw ShapeError("encode: window length " + std::to_string(length) + " exceeds max_len " +
                     std::to_string(config_.max_len));
  }
  const bool drop = train && config_.dropout > 0.0;
  if (drop && dropout_rng == nullptr) throw Error("encode: training with dropout needs an Rng");

  const std::vector<double> valid = to_mask(tokens);
  const Tensor mask = Tensor::constant({batch, length, 1}, valid);
  const Tensor keep = attention_mask(valid, batch, length, true);

  Tensor x = embed(tokens, {batch, length});
  x = encoding_.apply(x);
  if (drop) x = dropout(x, config_.dropout, *dropout_rng, true);
  x = mul(x, mask);
  for (const auto& block : blocks_) {
    x = mul(block.forward(x, keep, encoding_, dropout_rng, train), mask);
  }
  return layer_norm(x, final_gamma_, final_beta_);
}

Tensor SequentialRecommender::loss(const SequenceBatch& batch, Rng* dropout_rng, bool train) const {
  if (batch.batch == 0) throw DataError("loss: empty batch");
  const Shape ids{batch.batch, batch.length};
  const Tensor hidden = encode(batch.inputs, batch.batch, batch.length, dropout_rng, train);
  const Tensor pos = score(hidden, embed(batch.positives, ids));
  const Tensor neg = score(hidden, embed(batch.negatives, ids));
  Tensor total = bce_loss(pos, neg, Tensor::constant(ids, batch.valid), config_.loss_reduction);
  if (config_.l2 > 0.0) {
    for (const auto& p : parameters()) {
      if (p.l2) total = add(total, scale(sum(mul(p.tensor, p.tensor)), config_.l2));
    }
  }
  return total;
}

std::vector<double> SequentialRecommender::final_hidden(std::span<const std::int64_t> tokens,
                                                        std::size_t batch) const {
  NoGradGuard no_grad;
  if (batch == 0) return {};
  const std::size_t length = tokens.size() / batch;
  const Tensor h = encode(tokens, batch, length, nullptr, false);
  const std::size_t d = config_.d;
  std::vector<double> out(batch * d);
  const auto v = h.values();
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t src = (b * length + length - 1) * d;
    std::copy(v.begin() + static_cast<std::ptrdiff_t>(src), v.begin() + static_cast<std::ptrdiff_t>(src + d),
              out.begin() + static_cast<std::ptrdiff_t>(b * d));
  }
  return out;
}

std::vector<double> SequentialRecommender::item_matrix() const {
  NoGradGuard no_grad;
  if (attribute_dims_ == 0) {
    const auto v = item_table_.values();
    return {v.begin(), v.end()};
  }
  std::vector<std::int64_t> all(num_items_ + 1);
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<std::int64_t>(i);
  const Tensor e = embed(all, {all.size()});
  return {e.values().begin(), e.values().end()};
}

std::vector<double> SequentialRecommender::score_candidates(std::span<const std::int64_t> context,
                                                            std::span<const std::int64_t> candidates) const {
  const auto window = context_window(context, config_.max_len);
  const auto h = final_hidden(window, 1);
  std::vector<std::int64_t> tokens(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) tokens[i] = candidates[i] + 1;
  NoGradGuard no_grad;
  const Tensor e = embed(tokens, {tokens.size()});
  const auto ev = e.values();
  const std::size_t d = config_.d;
  std::vector<double> out(candidates.size(), 0.0);
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    for (std::size_t k = 0; k < d; ++k) out[c] += h[k] * ev[c * d + k];
  }
  return out;
}

std::vector<NamedParameter> SequentialRecommender::parameters() const {
  std::vector<NamedParameter> out;
  out.push_back({"item_table", item_table_, true, true});
  if (attribute_dims_ > 0) {
    out.push_back({"fusion.weight", fusion_weight_, false, false});
    out.push_back({"fusion.bias", fusion_bias_, false, false});
  }
  for (const auto& p : encoding_.parameters()) out.push_back({p.name, p.tensor, p.max_norm, p.max_norm});
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    for (const auto& [name, t] : blocks_[b].parameters()) {
      out.push_back({"block" + std::to_string(b) + "." + name, t, false, false});
    }
  }
  out.push_back({"final_ln.gamma", final_gamma_, false, false});
  out.push_back({"final_ln.beta", final_beta_, false, false});
  return out;
}

void SequentialRecommender::apply_max_norm() {
  if (!config_.nmax) return;
  std::vector<Tensor> tables;
  for (const auto& p : parameters()) {
    if (p.max_norm) tables.push_back(p.tensor);
  }
  posenc::apply_max_norm(tables, config_.nmax);
}

std::vector<std::vector<double>> snapshot(const SequentialRecommender& model) {
  std::vector<std::vector<double>> out;
  for (const auto& p : model.parameters()) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

void restore(SequentialRecommender& model, const std::vector<std::vector<double>>& values) {
  auto params = model.parameters();
  if (params.size() != values.size()) throw ShapeError("restore: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].tensor.mutable_values();
    if (dst.size() != values[i].size()) throw ShapeError("restore: size mismatch for " + params[i].name);
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

}  // namespace posenc
