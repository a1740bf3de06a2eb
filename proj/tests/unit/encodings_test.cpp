#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "posenc/errors.hpp"
#include "posenc/encodings.hpp"
#include "posenc/rng.hpp"

namespace posenc {
namespace {

using testing::check_gradient;
using testing::random_values;

EncodingSpec spec_for(EncodingVariant v, std::size_t L = 6, std::size_t d = 8) {
  EncodingSpec s;
  s.variant = v;
  s.max_len = L;
  s.model_dim = d;
  return s;
}

TEST(EncodingNames, RoundTripAndAliases) {
  for (auto v : kAllEncodings) EXPECT_EQ(parse_encoding(to_string(v)), v);
  EXPECT_EQ(parse_encoding("Abs+Con"), EncodingVariant::kAbsCon);
  EXPECT_EQ(parse_encoding("Rotatory+Con"), EncodingVariant::kRotatoryCon);
  EXPECT_EQ(parse_encoding("RMHA-4"), EncodingVariant::kRMHA4);
}

TEST(EncodingNames, UnknownNameListsAllTen) {
  try {
    parse_encoding("Sinusoid");
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    for (auto v : kAllEncodings) EXPECT_NE(msg.find(std::string(to_string(v))), std::string::npos) << msg;
  }
}

TEST(Sinusoidal, KnownEntries) {
  const Tensor t = sinusoidal_table(3, 4);
  EXPECT_DOUBLE_EQ(t.at({0, 0}), 0.0);
  EXPECT_DOUBLE_EQ(t.at({0, 1}), 1.0);
  EXPECT_NEAR(t.at({1, 0}), std::sin(1.0), 1e-15);
  EXPECT_NEAR(t.at({2, 2}), std::sin(2.0 / 100.0), 1e-15);
  EXPECT_NEAR(t.at({2, 3}), std::cos(2.0 / 100.0), 1e-15);
  EXPECT_THROW(sinusoidal_table(3, 5), ConfigError);
}

TEST(Rotatory, EntriesFollowAlternatingSignRule) {
  Rng rng(2);
  const std::size_t L = 4, H = 3;
  const Tensor e = Tensor::constant({L, H}, random_values(L * H, rng));
  const Tensor t = rotatory_table(e);
  const double d = 2.0 * H;
  for (std::size_t p = 0; p < L; ++p) {
    for (std::size_t i = 0; i < H; ++i) {
      const double theta = e.at({p, i}) / std::pow(10000.0, 2.0 * i / d) * 2.0 * std::numbers::pi;
      EXPECT_NEAR(t.at({p, 2 * i}), (i % 2 == 0 ? 1.0 : -1.0) * std::sin(theta), 1e-14);
      EXPECT_NEAR(t.at({p, 2 * i + 1}), std::cos(theta), 1e-14);
    }
  }
}

TEST(Rotatory, ZeroAnglesGiveZeroSineUnitCosine) {
  const Tensor t = rotatory_table(Tensor::zeros({2, 2}));
  for (std::size_t p = 0; p < 2; ++p) {
    EXPECT_EQ(t.at({p, 0}), 0.0);
    EXPECT_EQ(t.at({p, 1}), 1.0);
    EXPECT_EQ(t.at({p, 3}), 1.0);
  }
}

TEST(Rotatory, NonFiniteAngleRaises) {
  const Tensor e = Tensor::constant({1, 1}, {std::nan("")});
  EXPECT_THROW(rotatory_table(e), NumericError);
}

TEST(Rotatory, PairNormIsOne) {
  Rng rng(3);
  for (std::size_t L : {1, 35, 75}) {
    const Tensor t = rotatory_table(Tensor::constant({L, 45}, random_values(L * 45, rng, 10.0)));
    for (std::size_t p = 0; p < L; ++p)
      for (std::size_t i = 0; i < 45; ++i) {
        const double a = t.at({p, 2 * i}), b = t.at({p, 2 * i + 1});
        EXPECT_NEAR(a * a + b * b, 1.0, 1e-12);
      }
  }
}

TEST(Rope, MatchesPairwiseRotationOracle) {
  Rng rng(4);
  const std::size_t L = 5, D = 8;
  const Tensor x = Tensor::constant({1, L, D}, random_values(L * D, rng));
  const Tensor y = rope_rotate(x);
  for (std::size_t m = 0; m < L; ++m) {
    const auto row = std::span<const double>(x.values()).subspan(m * D, D);
    const auto ref = testing::naive_rope(row, static_cast<double>(m));
    for (std::size_t k = 0; k < D; ++k) EXPECT_NEAR(y.at({0, m, k}), ref[k], 1e-14);
  }
}

TEST(Rope, PositionZeroIsIdentityAndNormPreserved) {
  Rng rng(5);
  const Tensor x = Tensor::constant({3, 4}, random_values(12, rng));
  const Tensor y = rope_rotate(x);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(y.at({0, k}), x.at({0, k}));
  for (std::size_t m = 0; m < 3; ++m) {
    double nx = 0.0, ny = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
      nx += x.at({m, k}) * x.at({m, k});
      ny += y.at({m, k}) * y.at({m, k});
    }
    EXPECT_NEAR(nx, ny, 1e-12);
  }
}

TEST(Rope, OddHeadDimensionRejected) {
  EXPECT_THROW(rope_rotate(Tensor::zeros({2, 3})), ConfigError);
}

TEST(Relative, IndexClampsAtClip) {
  EXPECT_EQ(relative_index(0, 0, 4), 4u);
  EXPECT_EQ(relative_index(0, 9, 4), 8u);
  EXPECT_EQ(relative_index(9, 0, 4), 0u);
  EXPECT_EQ(relative_index(3, 5, 4), 6u);
}

TEST(PositionalEncoding, NoneIsIdentity) {
  Rng rng(6);
  PositionalEncoding enc(spec_for(EncodingVariant::kNone), 8, rng);
  const Tensor x = Tensor::constant({2, 6, 8}, random_values(96, rng));
  const Tensor y = apply_vector_encoding(x, enc);
  for (std::size_t i = 0; i < 96; ++i) EXPECT_EQ(y.values()[i], x.values()[i]);
}

TEST(PositionalEncoding, AbsAddsSinusoidalRows) {
  Rng rng(7);
  PositionalEncoding enc(spec_for(EncodingVariant::kAbs), 8, rng);
  const Tensor x = Tensor::zeros({1, 6, 8});
  const Tensor y = enc.apply(x);
  const Tensor t = sinusoidal_table(6, 8);
  for (std::size_t i = 0; i < 48; ++i) EXPECT_DOUBLE_EQ(y.values()[i], t.values()[i]);
}

TEST(PositionalEncoding, ConcatEqualsExplicitConcatenation) {
  Rng rng(8);
  PositionalEncoding enc(spec_for(EncodingVariant::kLearntCon, 4, 4), 4, rng);
  const Tensor x = Tensor::constant({2, 3, 4}, random_values(24, rng));
  const Tensor y = enc.apply(x);
  const Tensor pe = enc.position_rows(3);
  const auto& proj = enc.projection();
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t l = 0; l < 3; ++l)
      for (std::size_t o = 0; o < 4; ++o) {
        double s = proj.bias.at({o});
        for (std::size_t k = 0; k < 4; ++k) {
          s += x.at({b, l, k}) * proj.weight.at({k, o});
          s += pe.at({l, k}) * proj.weight.at({4 + k, o});
        }
        const double expect = s > 0 ? s : 0.01 * s;
        EXPECT_NEAR(y.at({b, l, o}), expect, 1e-13);
      }
}

TEST(PositionalEncoding, TooLongSequenceRejected) {
  Rng rng(9);
  PositionalEncoding enc(spec_for(EncodingVariant::kLearnt, 4, 4), 4, rng);
  EXPECT_THROW(enc.apply(Tensor::zeros({1, 5, 4})), ShapeError);
}

TEST(PositionalEncoding, InAttentionVariantsHaveNoVectorForm) {
  Rng rng(10);
  for (auto v : {EncodingVariant::kRMHA4, EncodingVariant::kRoPE, EncodingVariant::kRopeOne}) {
    PositionalEncoding enc(spec_for(v), 4, rng);
    EXPECT_THROW(apply_vector_encoding(Tensor::zeros({1, 2, 8}), enc), ConfigError);
  }
}

TEST(PositionalEncoding, RotationFlagsPerBlock) {
  Rng rng(11);
  PositionalEncoding rope(spec_for(EncodingVariant::kRoPE), 4, rng);
  PositionalEncoding one(spec_for(EncodingVariant::kRopeOne), 4, rng);
  EXPECT_TRUE(rope.rotates_block(0));
  EXPECT_TRUE(rope.rotates_block(2));
  EXPECT_TRUE(one.rotates_block(0));
  EXPECT_FALSE(one.rotates_block(1));
}

TEST(PositionalEncoding, ParameterSetsPerVariant) {
  Rng rng(12);
  auto names = [&](EncodingVariant v) {
    std::vector<std::string> out;
    PositionalEncoding enc(spec_for(v), 4, rng);
    for (const auto& p : enc.parameters()) out.push_back(p.name);
    return out;
  };
  EXPECT_TRUE(names(EncodingVariant::kNone).empty());
  EXPECT_TRUE(names(EncodingVariant::kAbs).empty());
  EXPECT_EQ(names(EncodingVariant::kAbsCon).size(), 2u);
  EXPECT_EQ(names(EncodingVariant::kLearnt), std::vector<std::string>{"encoding.position_table"});
  EXPECT_EQ(names(EncodingVariant::kRotatoryCon).size(), 3u);
  EXPECT_EQ(names(EncodingVariant::kRMHA4).size(), 2u);
  EXPECT_TRUE(names(EncodingVariant::kRoPE).empty());
}

TEST(PositionalEncoding, GradientsMatchFiniteDifferences) {
  Rng rng(13);
  for (auto v : {EncodingVariant::kLearnt, EncodingVariant::kLearntCon, EncodingVariant::kAbsCon,
                 EncodingVariant::kRotatory, EncodingVariant::kRotatoryCon}) {
    PositionalEncoding enc(spec_for(v, 5, 6), 6, rng);
    const Tensor x = Tensor::constant({2, 5, 6}, random_values(60, rng));
    const Tensor w = Tensor::constant({2, 5, 6}, random_values(60, rng));
    auto loss = [&] { return sum(mul(enc.apply(x), w)); };
    for (const auto& p : enc.parameters()) {
      const auto r = check_gradient(loss, p.tensor);
      EXPECT_LT(r.max_rel, 1e-6) << to_string(v) << " " << p.name;
    }
  }
}

TEST(Rope, GradientMatchesFiniteDifferences) {
  Rng rng(14);
  Tensor x = Tensor::parameter({2, 5, 6}, random_values(60, rng));
  const Tensor w = Tensor::constant({2, 5, 6}, random_values(60, rng));
  EXPECT_LT(check_gradient([&] { return sum(mul(rope_rotate(x), w)); }, x).max_rel, 1e-6);
}

}  // namespace
}  // namespace posenc
