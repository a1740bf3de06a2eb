#include <benchmark/benchmark.h>

#include "posenc/attention.hpp"
#include "posenc/encodings.hpp"
#include "posenc/model.hpp"
#include "posenc/ops.hpp"
#include "posenc/rng.hpp"

namespace posenc {
namespace {

std::vector<double> noise(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

struct Qkv {
  Tensor q, k, v, keep;
};

Qkv make_qkv(std::size_t L, std::size_t D) {
  Rng rng(1);
  const std::size_t B = 8, H = 1, n = B * H * L * D;
  std::vector<double> valid(B * L, 1.0);
  return {Tensor::constant({B, H, L, D}, noise(n, rng)), Tensor::constant({B, H, L, D}, noise(n, rng)),
          Tensor::constant({B, H, L, D}, noise(n, rng)), attention_mask(valid, B, L, true)};
}

// Standard attention, the None/APE path.
void BM_ScaledDotAttention(benchmark::State& state) {
  const auto s = make_qkv(static_cast<std::size_t>(state.range(0)), 64);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(scaled_dot_attention(s.q, s.k, s.v, s.keep));
}
BENCHMARK(BM_ScaledDotAttention)->Arg(20)->Arg(50);

// Clipped relative attention, the RMHA4 path.
void BM_RelativeAttention(benchmark::State& state) {
  const auto s = make_qkv(static_cast<std::size_t>(state.range(0)), 64);
  Rng rng(2);
  const RelativeTables t = relative_bias_tables(4, 64, &rng);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(relative_attention(s.q, s.k, s.v, t, s.keep));
}
BENCHMARK(BM_RelativeAttention)->Arg(20)->Arg(50);

void BM_RopeRotate(benchmark::State& state) {
  Rng rng(3);
  const Tensor x = Tensor::constant({8, 1, 50, 64}, noise(8 * 50 * 64, rng));
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(rope_rotate(x));
}
BENCHMARK(BM_RopeRotate);

// One forward + backward over a batch of 32 sequences.
void BM_TrainStep(benchmark::State& state) {
  ModelConfig c;
  c.d = 32;
  c.g = 64;
  c.blocks = 2;
  c.max_len = 20;
  c.encoding.variant = static_cast<EncodingVariant>(state.range(0));
  Rng rng(4);
  SequentialRecommender model(c, 100, rng);
  SequenceBatch batch(c.max_len);
  for (int u = 0; u < 32; ++u) {
    std::vector<std::int64_t> h;
    for (int t = 0; t < 21; ++t) h.push_back(static_cast<std::int64_t>(rng.below(80)));
    batch.append(*build_sequence(h, c.max_len, 100, exclusion_set(h), rng));
  }
  for (auto _ : state) {
    Tensor loss = model.loss(batch, &rng, true);
    backward(loss);
    for (auto& p : model.parameters()) p.tensor.zero_grad();
  }
  state.SetLabel(std::string(to_string(c.encoding.variant)));
}
BENCHMARK(BM_TrainStep)
    ->Arg(static_cast<int>(EncodingVariant::kNone))
    ->Arg(static_cast<int>(EncodingVariant::kRotatoryCon))
    ->Arg(static_cast<int>(EncodingVariant::kRMHA4))
    ->Arg(static_cast<int>(EncodingVariant::kRoPE))
    ->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace posenc

BENCHMARK_MAIN();
