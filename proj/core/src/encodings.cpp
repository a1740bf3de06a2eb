#include "posenc/encodings.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "posenc/errors.hpp"
#include "posenc/rng.hpp"

namespace posenc {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

Tensor uniform_parameter(Shape shape, double lo, double hi, Rng& rng) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::parameter(std::move(shape), std::move(v));
}

Tensor xavier_parameter(std::size_t rows, std::size_t cols, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  return uniform_parameter({rows, cols}, -a, a, rng);
}

}  // namespace

std::string_view to_string(EncodingVariant v) {
  switch (v) {
    case EncodingVariant::kNone: return "None";
    case EncodingVariant::kAbs: return "Abs";
    case EncodingVariant::kAbsCon: return "AbsCon";
    case EncodingVariant::kLearnt: return "Learnt";
    case EncodingVariant::kLearntCon: return "LearntCon";
    case EncodingVariant::kRotatory: return "Rotatory";
    case EncodingVariant::kRotatoryCon: return "RotatoryCon";
    case EncodingVariant::kRMHA4: return "RMHA4";
    case EncodingVariant::kRoPE: return "RoPE";
    case EncodingVariant::kRopeOne: return "RopeOne";
  }
  return "?";
}

EncodingVariant parse_encoding(std::string_view name) {
  for (auto v : kAllEncodings) {
    if (name == to_string(v)) return v;
  }
  if (name == "Abs+Con" || name == "Abs + Con") return EncodingVariant::kAbsCon;
  if (name == "Learnt+Con" || name == "Learnt + Con") return EncodingVariant::kLearntCon;
  if (name == "Rotatory+Con" || name == "Rotatory + Con") return EncodingVariant::kRotatoryCon;
  if (name == "RMHA-4") return EncodingVariant::kRMHA4;
  std::string valid;
  for (auto v : kAllEncodings) {
    if (!valid.empty()) valid += ", ";
    valid += to_string(v);
  }
  throw ConfigError("unknown encoding '" + std::string(name) + "'; valid encodings: " + valid);
}

bool is_vector_encoding(EncodingVariant v) {
  switch (v) {
    case EncodingVariant::kAbs:
    case EncodingVariant::kAbsCon:
    case EncodingVariant::kLearnt:
    case EncodingVariant::kLearntCon:
    case EncodingVariant::kRotatory:
    case EncodingVariant::kRotatoryCon:
      return true;
    default:
      return false;
  }
}

bool is_concat_encoding(EncodingVariant v) {
  return v == EncodingVariant::kAbsCon || v == EncodingVariant::kLearntCon ||
         v == EncodingVariant::kRotatoryCon;
}

bool is_rotary_encoding(EncodingVariant v) {
  return v == EncodingVariant::kRoPE || v == EncodingVariant::kRopeOne;
}

void EncodingSpec::validate() const {
  if (model_dim == 0 || model_dim % 2 != 0) {
    throw ConfigError("encoding: model dimension must be a positive even number, got " +
                      std::to_string(model_dim));
  }
  if (max_len == 0) throw ConfigError("encoding: max_len must be positive");
  if (clip_distance < 1) {
    throw ConfigError("encoding: clip_distance must be >= 1, got " + std::to_string(clip_distance));
  }
  if (!(rope_base > 0.0)) throw ConfigError("encoding: rope_base must be positive");
}

Tensor sinusoidal_table(std::size_t length, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) {
    throw ConfigError("sinusoidal_table: dimension must be even, got " + std::to_string(dim));
  }
  std::vector<double> v(length * dim);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < dim / 2; ++i) {
      const double angle = static_cast<double>(pos) /
                           std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(dim));
      v[pos * dim + 2 * i] = std::sin(angle);
      v[pos * dim + 2 * i + 1] = std::cos(angle);
    }
  }
  return Tensor::constant({length, dim}, std::move(v));
}

Tensor rotatory_table(const Tensor& angles) {
  if (angles.rank() != 2) throw ShapeError("rotatory_table: expected [L x H], got " + to_string(angles.shape()));
  const std::size_t length = angles.dim(0);
  const std::size_t half = angles.dim(1);
  const std::size_t dim = 2 * half;
  const auto ev = angles.values();
  for (double e : ev) {
    if (!std::isfinite(e)) throw NumericError("rotatory_table: non-finite angle entry");
  }
  std::vector<double> freq(half);
  for (std::size_t i = 0; i < half; ++i) {
    freq[i] = kTwoPi / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(dim));
  }
  std::vector<double> v(length * dim);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < half; ++i) {
      const double theta = ev[pos * half + i] * freq[i];
      const double sign = (i % 2 == 0) ? 1.0 : -1.0;
      v[pos * dim + 2 * i] = sign * std::sin(theta);
      v[pos * dim + 2 * i + 1] = std::cos(theta);
    }
  }
  return make_result("rotatory_table", {length, dim}, std::move(v), {angles},
                     [=, freq = std::move(freq)](Node& self) {
                       Node& in = *self.inputs[0];
                       auto& ge = in.grad_buffer();
                       for (std::size_t pos = 0; pos < length; ++pos) {
                         for (std::size_t i = 0; i < half; ++i) {
                           const double theta = in.value[pos * half + i] * freq[i];
                           const double sign = (i % 2 == 0) ? 1.0 : -1.0;
                           const double g_sin = self.grad[pos * dim + 2 * i];
                           const double g_cos = self.grad[pos * dim + 2 * i + 1];
                           ge[pos * half + i] +=
                               freq[i] * (g_sin * sign * std::cos(theta) - g_cos * std::sin(theta));
                         }
                       }
                     });
}

Tensor rope_rotate(const Tensor& x, double base, std::size_t first_position) {
  if (x.rank() < 2) throw ShapeError("rope_rotate: expected [..., L, d_h], got " + to_string(x.shape()));
  const std::size_t length = x.dim(-2);
  const std::size_t dh = x.dim(-1);
  if (dh % 2 != 0) {
    throw ConfigError("rope_rotate: head dimension must be even, got " + std::to_string(dh));
  }
  // cos/sin expanded so each pair shares its angle: y = x*c + rot(x)*s with
  // rot(x) = (-x1, x0) per pair.
  std::vector<double> c(length * dh);
  std::vector<double> s(length * dh);
  for (std::size_t m = 0; m < length; ++m) {
    const double pos = static_cast<double>(first_position + m);
    for (std::size_t i = 0; i < dh / 2; ++i) {
      const double angle =
          pos / std::pow(base, static_cast<double>(2 * i) / static_cast<double>(dh));
      c[m * dh + 2 * i] = c[m * dh + 2 * i + 1] = std::cos(angle);
      s[m * dh + 2 * i] = s[m * dh + 2 * i + 1] = std::sin(angle);
    }
  }
  const std::size_t block = length * dh;
  const std::size_t batch = x.numel() / block;
  const auto xv = x.values();
  std::vector<double> v(xv.size());
  std::vector<double> rotated(dh);
  for (std::size_t t = 0; t < batch; ++t) {
    for (std::size_t m = 0; m < length; ++m) {
      const double* in = xv.data() + t * block + m * dh;
      double* out = v.data() + t * block + m * dh;
      for (std::size_t i = 0; i < dh; i += 2) {
        rotated[i] = -in[i + 1];
        rotated[i + 1] = in[i];
      }
      const double* cm = c.data() + m * dh;
      const double* sm = s.data() + m * dh;
      for (std::size_t k = 0; k < dh; ++k) out[k] = in[k] * cm[k] + rotated[k] * sm[k];
    }
  }
  return make_result("rope_rotate", x.shape(), std::move(v), {x},
                     [=, c = std::move(c), s = std::move(s)](Node& self) {
                       auto& gi = self.inputs[0]->grad_buffer();
                       for (std::size_t t = 0; t < batch; ++t) {
                         for (std::size_t m = 0; m < length; ++m) {
                           const double* g = self.grad.data() + t * block + m * dh;
                           double* dx = gi.data() + t * block + m * dh;
                           const double* cm = c.data() + m * dh;
                           const double* sm = s.data() + m * dh;
                           for (std::size_t i = 0; i < dh; i += 2) {
                             // transpose of the pair rotation
                             dx[i] += g[i] * cm[i] + g[i + 1] * sm[i + 1];
                             dx[i + 1] += g[i + 1] * cm[i + 1] - g[i] * sm[i];
                           }
                         }
                       }
                     });
}

RelativeTables relative_bias_tables(int clip, std::size_t head_dim, Rng* rng, bool value_bias) {
  if (clip < 1) throw ConfigError("relative_bias_tables: clip must be >= 1");
  const std::size_t rows = static_cast<std::size_t>(2 * clip + 1);
  RelativeTables tables;
  tables.clip = clip;
  auto make = [&] {
    if (rng == nullptr) return Tensor::zeros({rows, head_dim}, true);
    return xavier_parameter(rows, head_dim, *rng);
  };
  tables.keys = make();
  if (value_bias) tables.values = make();
  return tables;
}

std::size_t relative_index(std::size_t i, std::size_t j, int clip) {
  const auto offset = static_cast<long long>(j) - static_cast<long long>(i);
  return static_cast<std::size_t>(std::clamp<long long>(offset, -clip, clip) + clip);
}

std::vector<std::size_t> relative_index_table(std::size_t n, int clip) {
  std::vector<std::size_t> idx(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) idx[i * n + j] = relative_index(i, j, clip);
  }
  return idx;
}

PositionalEncoding::PositionalEncoding(const EncodingSpec& spec, std::size_t head_dim, Rng& init_rng)
    : spec_(spec) {
  spec_.validate();
  const std::size_t L = spec_.max_len;
  const std::size_t d = spec_.model_dim;
  switch (spec_.variant) {
    case EncodingVariant::kAbs:
    case EncodingVariant::kAbsCon:
      fixed_table_ = sinusoidal_table(L, d);
      break;
    case EncodingVariant::kLearnt:
    case EncodingVariant::kLearntCon:
      position_table_ = xavier_parameter(L, d, init_rng);
      break;
    case EncodingVariant::kRotatory:
    case EncodingVariant::kRotatoryCon:
      angle_table_ = uniform_parameter({L, d / 2}, 0.0, spec_.angle_init_high, init_rng);
      break;
    case EncodingVariant::kRMHA4:
      relative_ = relative_bias_tables(spec_.clip_distance, head_dim, &init_rng, spec_.value_bias);
      break;
    case EncodingVariant::kRoPE:
    case EncodingVariant::kRopeOne:
      if (head_dim % 2 != 0) {
        throw ConfigError("encoding " + std::string(to_string(spec_.variant)) +
                          " needs an even head dimension, got " + std::to_string(head_dim));
      }
      break;
    case EncodingVariant::kNone:
      break;
  }
  if (is_concat_encoding(spec_.variant)) {
    projection_.weight = xavier_parameter(2 * d, d, init_rng);
    projection_.bias = Tensor::zeros({d}, true);
    projection_.activation = spec_.concat_activation;
  }
}

Tensor PositionalEncoding::position_rows(std::size_t length) const {
  if (length > spec_.max_len) {
    throw ShapeError("positional encoding: sequence length " + std::to_string(length) +
                     " exceeds max_len " + std::to_string(spec_.max_len));
  }
  switch (spec_.variant) {
    case EncodingVariant::kAbs:
    case EncodingVariant::kAbsCon:
      return slice_leading(fixed_table_, 0, length);
    case EncodingVariant::kLearnt:
    case EncodingVariant::kLearntCon:
      return slice_leading(position_table_, 0, length);
    case EncodingVariant::kRotatory:
    case EncodingVariant::kRotatoryCon:
      return rotatory_table(slice_leading(angle_table_, 0, length));
    default:
      throw ConfigError("encoding " + std::string(to_string(spec_.variant)) +
                        " has no position vectors");
  }
}

Tensor PositionalEncoding::apply(const Tensor& x) const {
  if (!is_vector_encoding(spec_.variant)) return x;
  const Tensor rows = position_rows(x.dim(-2));
  return is_concat_encoding(spec_.variant) ? concat_position_rows(x, rows, projection_)
                                           : add_position_rows(x, rows);
}

bool PositionalEncoding::rotates_block(int block_index) const {
  return spec_.variant == EncodingVariant::kRoPE ||
         (spec_.variant == EncodingVariant::kRopeOne && block_index == 0);
}

std::vector<PositionalEncoding::NamedTensor> PositionalEncoding::parameters() const {
  std::vector<NamedTensor> out;
  if (position_table_.defined()) out.push_back({"encoding.position_table", position_table_, true});
  if (angle_table_.defined()) out.push_back({"encoding.angle_table", angle_table_, true});
  if (projection_.weight.defined()) {
    out.push_back({"encoding.concat.weight", projection_.weight, false});
    out.push_back({"encoding.concat.bias", projection_.bias, false});
  }
  if (relative_) {
    out.push_back({"encoding.relative.keys", relative_->keys, false});
    if (relative_->values.defined()) out.push_back({"encoding.relative.values", relative_->values, false});
  }
  return out;
}

Tensor apply_vector_encoding(const Tensor& x, const PositionalEncoding& encoding) {
  const auto v = encoding.variant();
  if (v == EncodingVariant::kNone) return x;
  if (!is_vector_encoding(v)) {
    throw ConfigError("encoding " + std::string(to_string(v)) +
                      " acts inside attention and has no vector form");
  }
  return encoding.apply(x);
}

Tensor add_position_rows(const Tensor& x, const Tensor& pe) {
  if (x.rank() != 3 || pe.rank() != 2 || pe.dim(1) != x.dim(2)) {
    throw ShapeError("add_position_rows: incompatible shapes " + to_string(x.shape()) + " and " +
                     to_string(pe.shape()));
  }
  const std::size_t length = x.dim(1);
  if (length > pe.dim(0)) {
    throw ShapeError("add_position_rows: sequence length " + std::to_string(length) +
                     " exceeds table length " + std::to_string(pe.dim(0)));
  }
  const Tensor rows = length == pe.dim(0) ? pe : slice_leading(pe, 0, length);
  return add(x, rows);
}

Tensor concat_position_rows(const Tensor& x, const Tensor& pe, const ConcatProjection& proj) {
  if (x.rank() != 3 || pe.rank() != 2 || pe.dim(1) != x.dim(2)) {
    throw ShapeError("concat_position_rows: incompatible shapes " + to_string(x.shape()) + " and " +
                     to_string(pe.shape()));
  }
  const std::size_t length = x.dim(1);
  const std::size_t d = x.dim(2);
  if (length > pe.dim(0)) {
    throw ShapeError("concat_position_rows: sequence length " + std::to_string(length) +
                     " exceeds table length " + std::to_string(pe.dim(0)));
  }
  if (proj.weight.shape() != Shape{2 * d, d} || proj.bias.shape() != Shape{d}) {
    throw ShapeError("concat_position_rows: projection must be [2d x d] + [d], got " +
                     to_string(proj.weight.shape()));
  }
  const Tensor rows = length == pe.dim(0) ? pe : slice_leading(pe, 0, length);
  // [x, pe] @ W == x @ W[:d] + pe @ W[d:]; the PE half is shared over the batch.
  const Tensor item_part = matmul(x, slice_leading(proj.weight, 0, d));
  const Tensor pos_part = matmul(rows, slice_leading(proj.weight, d, 2 * d));
  return activate(add(add(item_part, pos_part), proj.bias), proj.activation);
}

}  // namespace posenc
