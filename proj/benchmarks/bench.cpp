#include <benchmark/benchmark.h>

#include <vector>

#include "fedstage/codec.hpp"
#include "fedstage/mim.hpp"
#include "fedstage/model.hpp"
#include "fedstage/protocol.hpp"
#include "fedstage/rng.hpp"
#include "fedstage/stats.hpp"

using namespace fedstage;

namespace {

ModelArchitecture bench_arch() {
  ModelArchitecture arch;
  arch.patch_size = 4;
  arch.image_side = 16;
  arch.embed_dim = 16;
  arch.encoder_hidden = 32;
  return arch;
}

void BM_Forward(benchmark::State& state) {
  const ModelArchitecture arch = bench_arch().with_head(4);
  const ParameterSet model =
      attach_head(bench_arch(), init_model(bench_arch(), 1), 4, 2);
  SplitMix64 rng(3);
  std::vector<double> image(256);
  for (double& v : image) v = rng.next_double();
  for (auto _ : state) {
    benchmark::DoNotOptimize(forward(arch, model, image));
  }
}
BENCHMARK(BM_Forward);

void BM_Aggregate(benchmark::State& state) {
  const auto n = static_cast<size_t>(state.range(0));
  const ParameterSet base = init_model(bench_arch(), 7);
  std::vector<ClientUpdate> updates;
  for (size_t i = 0; i < n; ++i) {
    ParameterSet p = base;
    for (double& v : p.values) v += 0.001 * static_cast<double>(i);
    updates.push_back({"client-" + std::to_string(i), std::move(p),
                       static_cast<int64_t>(i + 1)});
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(aggregate(updates));
  }
}
BENCHMARK(BM_Aggregate)->Arg(2)->Arg(8)->Arg(32);

void BM_StudentTP(benchmark::State& state) {
  double t = 0.1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(p_value_two_tailed(t, 5));
    t += 0.001;
    if (t > 10.0) t = 0.1;
  }
}
BENCHMARK(BM_StudentTP);

void BM_EncodeParams(benchmark::State& state) {
  const ParameterSet model = init_model(bench_arch(), 5);
  for (auto _ : state) {
    benchmark::DoNotOptimize(encode_params(model));
  }
}
BENCHMARK(BM_EncodeParams);

void BM_DecodeParams(benchmark::State& state) {
  const auto bytes = encode_params(init_model(bench_arch(), 5));
  for (auto _ : state) {
    benchmark::DoNotOptimize(decode_params(bytes));
  }
}
BENCHMARK(BM_DecodeParams);

void BM_MimEpochStep(benchmark::State& state) {
  const ModelArchitecture arch = bench_arch();
  const int dh = 16;
  const ParameterSet model = init_mim_model(arch, dh, 9);
  SplitMix64 rng(4);
  std::vector<double> image(256);
  for (double& v : image) v = rng.next_double();
  const auto patches = patchify(image, arch.image_side, arch.patch_size);
  const MaskPlan plan = sample_mask(16, 0.25, rng);
  std::vector<double> grad(model.values.size(), 0.0);
  for (auto _ : state) {
    std::fill(grad.begin(), grad.end(), 0.0);
    mim_loss_gradient(arch, dh, model, patches, plan, grad, 1.0);
    benchmark::DoNotOptimize(grad.data());
  }
}
BENCHMARK(BM_MimEpochStep);

}  // namespace

BENCHMARK_MAIN();
