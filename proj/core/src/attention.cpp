#include "posenc/attention.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <string>

#include "posenc/errors.hpp"
#include "posenc/rng.hpp"

namespace posenc {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr std::array<std::size_t, 4> kSwapMiddle = {0, 2, 1, 3};

Tensor xavier(std::size_t rows, std::size_t cols, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = rng.uniform(-a, a);
  return Tensor::parameter({rows, cols}, std::move(v));
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add(matmul(x, w), b); }

void check_qkv(const Tensor& q, const Tensor& k, const Tensor& v, const char* op) {
  if (q.rank() != 4 || k.shape() != q.shape() || v.shape() != q.shape()) {
    throw ShapeError(std::string(op) + ": Q, K, V must share shape [B x h x L x d_h], got " +
                     to_string(q.shape()) + ", " + to_string(k.shape()) + ", " + to_string(v.shape()));
  }
}

}  // namespace

void BlockConfig::validate(bool rotary) const {
  if (heads == 0 || model_dim % heads != 0) {
    throw ConfigError("attention: heads (" + std::to_string(heads) + ") must divide model_dim (" +
                      std::to_string(model_dim) + ")");
  }
  if (rotary && head_dim() % 2 != 0) {
    throw ConfigError("attention: rotary encodings need an even head dimension, got " +
                      std::to_string(head_dim()));
  }
  if (ff_hidden == 0) throw ConfigError("attention: ff_hidden must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("attention: dropout must lie in [0, 1)");
}

Tensor attention_mask(std::span<const double> valid, std::size_t batch, std::size_t length,
                      bool causal) {
  if (valid.size() != batch * length) {
    throw ShapeError("attention_mask: expected " + std::to_string(batch * length) + " flags, got " +
                     std::to_string(valid.size()));
  }
  std::vector<double> keep(batch * length * length, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < length; ++i) {
      for (std::size_t j = 0; j < length; ++j) {
        const bool allowed = valid[b * length + j] != 0.0 && (!causal || j <= i);
        keep[(b * length + i) * length + j] = allowed ? 1.0 : 0.0;
      }
    }
  }
  return Tensor::constant({batch, 1, length, length}, std::move(keep));
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& keep) {
  check_qkv(q, k, v, "scaled_dot_attention");
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(q.dim(-1)));
  const Tensor logits = scale(matmul(q, k, /*transpose_b=*/true), inv_scale);
  const Tensor alpha = softmax_last(masked_fill(logits, keep, kNegInf));
  return matmul(alpha, v);
}

Tensor relative_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                          const RelativeTables& tables, const Tensor& keep) {
  check_qkv(q, k, v, "relative_attention");
  const std::size_t length = q.dim(-2);
  const std::size_t dh = q.dim(-1);
  const std::size_t rows = static_cast<std::size_t>(2 * tables.clip + 1);
  if (tables.keys.shape() != Shape{rows, dh} ||
      (tables.values.defined() && tables.values.shape() != Shape{rows, dh})) {
    throw ShapeError("relative_attention: tables must be [" + std::to_string(rows) + "x" +
                     std::to_string(dh) + "], got " + to_string(tables.keys.shape()));
  }
  const auto index = relative_index_table(length, tables.clip);
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  // Q_i . aK[r] for every bucket r, then pick bucket r(i, j) per key.
  const Tensor q_rel = index_select_last(matmul(q, tables.keys, /*transpose_b=*/true), index, length);
  const Tensor logits = scale(add(matmul(q, k, /*transpose_b=*/true), q_rel), inv_scale);
  const Tensor alpha = softmax_last(masked_fill(logits, keep, kNegInf));
  Tensor out = matmul(alpha, v);
  if (tables.values.defined()) {
    // sum_j alpha_ij aV[r(i,j)] = (alpha summed per bucket) @ aV
    out = add(out, matmul(index_add_last(alpha, index, rows), tables.values));
  }
  return out;
}

Tensor split_heads(const Tensor& x, std::size_t heads) {
  const std::size_t b = x.dim(0);
  const std::size_t l = x.dim(1);
  const std::size_t d = x.dim(2);
  return permute(reshape(x, {b, l, heads, d / heads}), kSwapMiddle);
}

Tensor merge_heads(const Tensor& x) {
  const std::size_t b = x.dim(0);
  const std::size_t h = x.dim(1);
  const std::size_t l = x.dim(2);
  const std::size_t dh = x.dim(3);
  return reshape(permute(x, kSwapMiddle), {b, l, h * dh});
}

TransformerBlock::TransformerBlock(const BlockConfig& config, Rng& init_rng) : config_(config) {
  config_.validate(false);
  const std::size_t d = config_.model_dim;
  const std::size_t g = config_.ff_hidden;
  auto ones = [](std::size_t n) { return Tensor::parameter({n}, std::vector<double>(n, 1.0)); };
  w_.ln1_gamma = ones(d);
  w_.ln1_beta = Tensor::zeros({d}, true);
  w_.wq = xavier(d, d, init_rng);
  w_.bq = Tensor::zeros({d}, true);
  w_.wk = xavier(d, d, init_rng);
  w_.bk = Tensor::zeros({d}, true);
  w_.wv = xavier(d, d, init_rng);
  w_.bv = Tensor::zeros({d}, true);
  w_.wo = xavier(d, d, init_rng);
  w_.bo = Tensor::zeros({d}, true);
  w_.ln2_gamma = ones(d);
  w_.ln2_beta = Tensor::zeros({d}, true);
  w_.w1 = xavier(d, g, init_rng);
  w_.b1 = Tensor::zeros({g}, true);
  w_.w2 = xavier(g, d, init_rng);
  w_.b2 = Tensor::zeros({d}, true);
}

Tensor TransformerBlock::forward(const Tensor& x, const Tensor& keep,
                                 const PositionalEncoding& encoding, Rng* dropout_rng,
                                 bool train) const {
  if (x.rank() != 3 || x.dim(2) != config_.model_dim) {
    throw ShapeError("transformer_block: expected [B x L x " + std::to_string(config_.model_dim) +
                     "], got " + to_string(x.shape()));
  }
  if (train && config_.dropout > 0.0 && dropout_rng == nullptr) {
    throw Error("transformer_block: training with dropout needs an Rng");
  }
  auto drop = [&](const Tensor& t) {
    return train && config_.dropout > 0.0 ? dropout(t, config_.dropout, *dropout_rng, true) : t;
  };

  const Tensor h = layer_norm(x, w_.ln1_gamma, w_.ln1_beta);
  Tensor q = split_heads(linear(h, w_.wq, w_.bq), config_.heads);
  Tensor k = split_heads(linear(h, w_.wk, w_.bk), config_.heads);
  const Tensor v = split_heads(linear(h, w_.wv, w_.bv), config_.heads);
  if (encoding.rotates_block(config_.block_index)) {
    q = rope_rotate(q, encoding.spec().rope_base);
    k = rope_rotate(k, encoding.spec().rope_base);
  }
  const RelativeTables* rel = encoding.relative();
  const Tensor attended = rel ? relative_attention(q, k, v, *rel, keep)
                              : scaled_dot_attention(q, k, v, keep);
  const Tensor y = add(x, drop(linear(merge_heads(attended), w_.wo, w_.bo)));

  const Tensor h2 = layer_norm(y, w_.ln2_gamma, w_.ln2_beta);
  const Tensor ff = linear(activate(linear(h2, w_.w1, w_.b1), config_.activation, config_.leaky_slope),
                           w_.w2, w_.b2);
  return add(y, drop(ff));
}

std::vector<std::pair<std::string, Tensor>> TransformerBlock::parameters() const {
  return {{"ln1.gamma", w_.ln1_gamma}, {"ln1.beta", w_.ln1_beta}, {"attn.wq", w_.wq},
          {"attn.bq", w_.bq},          {"attn.wk", w_.wk},        {"attn.bk", w_.bk},
          {"attn.wv", w_.wv},          {"attn.bv", w_.bv},        {"attn.wo", w_.wo},
          {"attn.bo", w_.bo},          {"ln2.gamma", w_.ln2_gamma}, {"ln2.beta", w_.ln2_beta},
          {"ff.w1", w_.w1},            {"ff.b1", w_.b1},          {"ff.w2", w_.w2},
          {"ff.b2", w_.b2}};
}

}  // namespace posenc
