#pragma once

#include <cstdint>
#include <span>
#include <string_view>

#include "posenc/tensor.hpp"

namespace posenc {

class Rng;

// Differentiable tensor operations. Elementwise binary ops follow numpy
// broadcasting: shapes are right-aligned and a dimension of size 1 (or a
// missing leading dimension) stretches to match the other operand.

Shape broadcast_shapes(const Shape& a, const Shape& b, std::string_view op);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// y = scale * x + shift
Tensor affine(const Tensor& x, double scale, double shift = 0.0);
Tensor scale(const Tensor& x, double factor);
Tensor pow_const(const Tensor& x, double exponent);

// a: [..., m, k]; b: [k, n] (shared across the batch) or [..., k, n] with the
// same leading dimensions as a. With transpose_b, b is read as [..., n, k].
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

Tensor concat_last(const Tensor& a, const Tensor& b);

// Rows whose entries are all -inf produce all-zero output.
Tensor softmax_last(const Tensor& x);

Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sin(const Tensor& x);
Tensor cos(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.01);
Tensor silu(const Tensor& x);
// Gradient is zero outside the open interval (lo, hi).
Tensor clamp(const Tensor& x, double lo, double hi);

enum class Activation { kIdentity, kLeakyRelu, kSilu };
std::string_view to_string(Activation act);
// Accepts "leaky", "silu", "identity".
Activation parse_activation(std::string_view name);
Tensor activate(const Tensor& x, Activation act, double leaky_slope = 0.01);

// Normalizes over the last axis; gamma and beta have shape [d].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-8);

// Inverted dropout: kept entries are scaled by 1/(1-p). Identity when
// !train or p == 0.
Tensor dropout(const Tensor& x, double p, Rng& rng, bool train);

// table: [n, d]; result shape is ids_shape + [d].
Tensor gather_rows(const Tensor& table, std::span<const std::int64_t> ids, const Shape& ids_shape);

// Entries where `keep` (broadcast to x) is zero are replaced by `fill`.
Tensor masked_fill(const Tensor& x, const Tensor& keep, double fill);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Reduces the last axis away.
Tensor sum_last(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, std::span<const std::size_t> axes);
// Rows [begin, end) of the leading axis.
Tensor slice_leading(const Tensor& x, std::size_t begin, std::size_t end);

// x: [..., n, r]; index: n*m entries in [0, r).
// out[..., i, j] = x[..., i, index[i*m + j]], shape [..., n, m].
Tensor index_select_last(const Tensor& x, std::span<const std::size_t> index, std::size_t m);
// Adjoint of index_select_last. x: [..., n, m]; out: [..., n, r] with
// out[..., i, c] = sum over j with index[i*m + j] == c of x[..., i, j].
Tensor index_add_last(const Tensor& x, std::span<const std::size_t> index, std::size_t r);

}  // namespace posenc
