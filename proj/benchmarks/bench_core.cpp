#include <benchmark/benchmark.h>

#include "metaseg/caf_decoder.hpp"
#include "metaseg/data.hpp"
#include "metaseg/model.hpp"

using namespace metaseg;

namespace {

void BM_matmul(benchmark::State& state) {
  set_default_dtype(Dtype::f32);
  int64_t n = state.range(0);
  Rng rng(1);
  Tensor a = Tensor::randn({n, n}, rng);
  Tensor b = Tensor::randn({n, n}, rng);
  NoGradGuard ng;
  for (auto _ : state) {
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c.impl());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_attention_block_forward(benchmark::State& state) {
  set_default_dtype(Dtype::f32);
  int64_t tokens = state.range(0);
  int c = 32;
  Rng rng(2);
  AttnBlock blk = make_attn_block(c, 4, 4, rng);
  Tensor x = Tensor::randn({2, tokens, c}, rng);
  NoGradGuard ng;
  for (auto _ : state) {
    Tensor y = self_attention_block(blk, x);
    benchmark::DoNotOptimize(y.impl());
  }
}
BENCHMARK(BM_attention_block_forward)->Arg(64)->Arg(250)->Arg(314);

void BM_attention_block_backward(benchmark::State& state) {
  set_default_dtype(Dtype::f32);
  int64_t tokens = state.range(0);
  int c = 32;
  Rng rng(3);
  AttnBlock blk = make_attn_block(c, 4, 4, rng);
  Tensor x = Tensor::randn({2, tokens, c}, rng, 1.0, true);
  for (auto _ : state) {
    tape_clear();
    x.zero_grad();
    backward(sum_all(self_attention_block(blk, x)));
    benchmark::DoNotOptimize(x.impl());
  }
}
BENCHMARK(BM_attention_block_backward)->Arg(64)->Arg(250);

void BM_scene_generation(benchmark::State& state) {
  ClimateZone z{"Cfb", "temperate oceanic climate zone"};
  uint64_t seed = 0;
  for (auto _ : state) {
    auto s = generate_scene(seed++, z, static_cast<int>(state.range(0)), 5);
    benchmark::DoNotOptimize(s.labels.data());
  }
}
BENCHMARK(BM_scene_generation)->Arg(64)->Arg(128);

void BM_model_forward(benchmark::State& state) {
  set_default_dtype(Dtype::f32);
  ModelConfig mc;
  mc.enc.channels = 32;
  mc.enc.heads = 4;
  mc.enc.img_size = 64;
  mc.enc.vocab_size = 256;
  mc.num_classes = 5;
  MetaSegNet model(mc, 7);
  Rng rng(8);
  Tensor images = Tensor::rand_uniform({2, 3, 64, 64}, rng, 0, 1);
  TextBatch tb;
  tb.batch = 2;
  tb.len = mc.enc.text_len;
  for (int i = 0; i < tb.batch * tb.len; ++i) {
    tb.tokens.push_back(2 + i % 200);
    tb.pad_mask.push_back(i % tb.len >= 120 ? 1 : 0);
  }
  NoGradGuard ng;
  for (auto _ : state) {
    auto out = model.forward(images, &tb);
    benchmark::DoNotOptimize(out.logits.impl());
  }
}
BENCHMARK(BM_model_forward);

}  // namespace

BENCHMARK_MAIN();
