#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "posenc/ops.hpp"
#include "posenc/tensor.hpp"

namespace posenc {

class Rng;

enum class EncodingVariant {
  kNone,
  kAbs,
  kAbsCon,
  kLearnt,
  kLearntCon,
  kRotatory,
  kRotatoryCon,
  kRMHA4,
  kRoPE,
  kRopeOne,
};

inline constexpr std::array<EncodingVariant, 10> kAllEncodings = {
    EncodingVariant::kNone,     EncodingVariant::kAbs,         EncodingVariant::kAbsCon,
    EncodingVariant::kLearnt,   EncodingVariant::kLearntCon,   EncodingVariant::kRotatory,
    EncodingVariant::kRotatoryCon, EncodingVariant::kRMHA4,    EncodingVariant::kRoPE,
    EncodingVariant::kRopeOne};

std::string_view to_string(EncodingVariant v);
// Exact names: None, Abs, AbsCon, Learnt, LearntCon, Rotatory, RotatoryCon,
// RMHA4, RoPE, RopeOne. Table spellings such as "Abs+Con" and "RMHA-4" are
// accepted too. Throws ConfigError listing the valid names.
EncodingVariant parse_encoding(std::string_view name);

// Variants that add or concatenate a per-position vector to the input.
bool is_vector_encoding(EncodingVariant v);
bool is_concat_encoding(EncodingVariant v);
// Variants that rotate Q and K inside attention.
bool is_rotary_encoding(EncodingVariant v);

struct EncodingSpec {
  EncodingVariant variant = EncodingVariant::kNone;
  std::size_t max_len = 50;
  std::size_t model_dim = 64;
  int clip_distance = 4;          // RMHA4
  bool value_bias = true;         // RMHA4: also add a^V to the values
  double rope_base = 10000.0;     // RoPE, RopeOne
  double angle_init_high = 1.0;   // Rotatory: E_pos ~ U[0, angle_init_high)
  Activation concat_activation = Activation::kLeakyRelu;  // Con variants

  // Throws ConfigError on an odd model_dim, clip_distance < 1 or a
  // non-positive max_len.
  void validate() const;
};

// Fixed sinusoidal table [L x d]: (pos, 2i) -> sin(pos / 10000^(2i/d)),
// (pos, 2i+1) -> cos(pos / 10000^(2i/d)).
Tensor sinusoidal_table(std::size_t length, std::size_t dim);

// Learnable-angle table [L x 2H] from angles E_pos [L x H]:
//   theta(pos, i)   = E_pos[pos, i] / 10000^(2i/d) * 2*pi,  d = 2H
//   out(pos, 2i)    = (-1)^i sin(theta)
//   out(pos, 2i+1)  = cos(theta)
// Differentiable with respect to E_pos.
Tensor rotatory_table(const Tensor& angles);

// Rotates consecutive pairs of the last axis of X [..., L, d_h]: the pair
// (2i, 2i+1) at position m turns by m / base^(2i/d_h). `first_position`
// offsets m.
Tensor rope_rotate(const Tensor& x, double base = 10000.0, std::size_t first_position = 0);

// Learnable a^K and a^V, each [(2*clip+1) x d_h], indexed by
// clamp(j - i, -clip, clip) + clip.
struct RelativeTables {
  int clip = 4;
  Tensor keys;
  Tensor values;  // undefined when the value bias is disabled
};

RelativeTables relative_bias_tables(int clip, std::size_t head_dim, Rng* rng = nullptr,
                                    bool value_bias = true);

// Row of the relative table used for query i and key j.
std::size_t relative_index(std::size_t i, std::size_t j, int clip);
// Row-major [n x n] table of relative_index(i, j) for i, j < n.
std::vector<std::size_t> relative_index_table(std::size_t n, int clip);

// Projection back to d after concatenating [x, PE]: activation(cat @ W + b)
// with W [2d x d] and b [d].
struct ConcatProjection {
  Tensor weight;
  Tensor bias;
  Activation activation = Activation::kLeakyRelu;
};

// Parameters and fixed tables of one model's positional encoding.
class PositionalEncoding {
 public:
  PositionalEncoding() = default;
  PositionalEncoding(const EncodingSpec& spec, std::size_t head_dim, Rng& init_rng);

  const EncodingSpec& spec() const { return spec_; }
  EncodingVariant variant() const { return spec_.variant; }

  // PE rows for positions [0, length), shape [length x d]. Only for vector
  // variants.
  Tensor position_rows(std::size_t length) const;

  // Vector hook. x: [B x L x d]. None and in-attention variants return x.
  Tensor apply(const Tensor& x) const;

  // In-attention hooks.
  bool rotates_block(int block_index) const;
  const RelativeTables* relative() const {
    return relative_ ? &*relative_ : nullptr;
  }

  struct NamedTensor {
    std::string name;
    Tensor tensor;
    bool max_norm;  // subject to the per-row norm bound
  };
  std::vector<NamedTensor> parameters() const;

  // Direct access for tests and checkpoints.
  Tensor& position_table() { return position_table_; }
  Tensor& angle_table() { return angle_table_; }
  ConcatProjection& projection() { return projection_; }
  RelativeTables* mutable_relative() { return relative_ ? &*relative_ : nullptr; }

 private:
  EncodingSpec spec_;
  Tensor fixed_table_;     // Abs, AbsCon
  Tensor position_table_;  // Learnt, LearntCon
  Tensor angle_table_;     // Rotatory, RotatoryCon
  ConcatProjection projection_;
  std::optional<RelativeTables> relative_;
};

// Vector hook with strict checking: None returns x, add/concat follows the
// variant, and in-attention variants (RMHA4, RoPE, RopeOne) are rejected.
Tensor apply_vector_encoding(const Tensor& x, const PositionalEncoding& encoding);

// x: [B x L x d]; pe: [L' x d] with L' >= L. Adds (or concatenates and
// projects) the first L rows of pe. Throws ShapeError when L > L'.
Tensor add_position_rows(const Tensor& x, const Tensor& pe);
Tensor concat_position_rows(const Tensor& x, const Tensor& pe, const ConcatProjection& proj);

}  // namespace posenc
