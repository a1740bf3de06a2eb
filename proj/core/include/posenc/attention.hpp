#pragma once

#include <span>
#include <string>
#include <vector>

#include "posenc/encodings.hpp"
#include "posenc/ops.hpp"
#include "posenc/tensor.hpp"

namespace posenc {

class Rng;

struct BlockConfig {
  std::size_t model_dim = 64;
  std::size_t heads = 1;
  std::size_t ff_hidden = 256;
  double dropout = 0.0;
  Activation activation = Activation::kLeakyRelu;
  double leaky_slope = 0.01;
  bool causal = true;
  int block_index = 0;

  std::size_t head_dim() const { return model_dim / heads; }
  // Throws ConfigError when heads does not divide model_dim, or when
  // `rotary` is set and the head dimension is odd.
  void validate(bool rotary) const;
};

// Attention keep-mask [B x 1 x L x L]: entry (b, i, j) is 1 when query i of
// sequence b may attend to key j (key j is a real item and, if causal,
// j <= i). `valid` holds B*L flags, nonzero for real items.
Tensor attention_mask(std::span<const double> valid, std::size_t batch, std::size_t length,
                      bool causal = true);

// Q, K, V: [B x h x L x d_h]; keep broadcastable to [B x h x L x L].
// alpha_ij = softmax_j(Q_i . K_j / sqrt(d_h)) over kept keys; a query with
// no kept key yields a zero output row.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& keep);

// As above with clipped relative terms:
//   alpha_ij = softmax_j(Q_i . (K_j + aK[r(i,j)]) / sqrt(d_h))
//   out_i    = sum_j alpha_ij (V_j + aV[r(i,j)])
// r(i,j) = clamp(j - i, -clip, clip) + clip. aV may be undefined.
Tensor relative_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                          const RelativeTables& tables, const Tensor& keep);

// [B x L x d] <-> [B x h x L x d_h]
Tensor split_heads(const Tensor& x, std::size_t heads);
Tensor merge_heads(const Tensor& x);

// Pre-layer-norm residual block:
//   x += dropout(MHA(LN1(x)))
//   x += dropout(W2 act(W1 LN2(x) + b1) + b2)
// RoPE rotates Q and K when the encoding asks for it in this block; RMHA4
// adds the shared relative tables.
class TransformerBlock {
 public:
  struct Weights {
    Tensor ln1_gamma, ln1_beta;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_gamma, ln2_beta;
    Tensor w1, b1, w2, b2;
  };

  TransformerBlock() = default;
  TransformerBlock(const BlockConfig& config, Rng& init_rng);

  const BlockConfig& config() const { return config_; }
  Weights& weights() { return w_; }
  const Weights& weights() const { return w_; }

  // dropout_rng may be null when !train.
  Tensor forward(const Tensor& x, const Tensor& keep, const PositionalEncoding& encoding,
                 Rng* dropout_rng, bool train) const;

  std::vector<std::pair<std::string, Tensor>> parameters() const;

 private:
  BlockConfig config_;
  Weights w_;
};

inline Tensor transformer_block(const Tensor& x, const TransformerBlock& block,
                                const PositionalEncoding& encoding, const Tensor& keep,
                                Rng* dropout_rng = nullptr, bool train = false) {
  return block.forward(x, keep, encoding, dropout_rng, train);
}

}  // namespace posenc
