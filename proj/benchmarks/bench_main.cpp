#include <benchmark/benchmark.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "plcmos/features.hpp"
#include "plcmos/metrics.hpp"
#include "plcmos/model.hpp"
#include "plcmos/random.hpp"
#include "plcmos/traces.hpp"

namespace {

using namespace plcmos;

AudioClip tone(std::size_t n)
{
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i)
    s[i] = 0.3 * std::sin(2.0 * std::numbers::pi * 220.0 * static_cast<double>(i) / sample_rate_hz);
  return AudioClip{std::move(s)};
}

void BM_Spectrogram(benchmark::State& state)
{
  const auto clip = tone(static_cast<std::size_t>(state.range(0)) * sample_rate_hz);
  for (auto _ : state)
    benchmark::DoNotOptimize(logpow_spectrogram(clip));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(frame_count(clip.size())));
}
BENCHMARK(BM_Spectrogram)->Arg(1)->Arg(10)->Unit(benchmark::kMillisecond);

// Release architecture, float weights.
void BM_EncodeAudio(benchmark::State& state)
{
  const auto w = ModelWeights<float>::random(ModelConfig{}, 1);
  const auto spec = logpow_spectrogram(tone(static_cast<std::size_t>(state.range(0)) * sample_rate_hz));
  for (auto _ : state)
    benchmark::DoNotOptimize(encode_audio(spec, w));
}
BENCHMARK(BM_EncodeAudio)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_InferMos(benchmark::State& state)
{
  const auto w = ModelWeights<float>::random(ModelConfig{}, 1);
  const auto spec = logpow_spectrogram(tone(2 * sample_rate_hz));
  for (auto _ : state)
    benchmark::DoNotOptimize(infer_mos(spec, w, 0));
}
BENCHMARK(BM_InferMos)->Unit(benchmark::kMillisecond);

void BM_BurstStats(benchmark::State& state)
{
  const auto trace = synth_gilbert(GilbertParams{0.05, 0.3, 1.0, 0.0, 7}, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state)
    benchmark::DoNotOptimize(burst_stats(trace));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_BurstStats)->Arg(500)->Arg(100'000);

void BM_Pearson(benchmark::State& state)
{
  Rng rng{3};
  std::vector<double> x(static_cast<std::size_t>(state.range(0))), y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
  {
    x[i] = standard_normal(rng);
    y[i] = x[i] + standard_normal(rng);
  }
  for (auto _ : state)
    benchmark::DoNotOptimize(pearson(x, y));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Pearson)->Arg(200)->Arg(10'000);

void BM_Spearman(benchmark::State& state)
{
  Rng rng{4};
  std::vector<double> x(static_cast<std::size_t>(state.range(0))), y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
  {
    x[i] = standard_normal(rng);
    y[i] = x[i] + standard_normal(rng);
  }
  for (auto _ : state)
    benchmark::DoNotOptimize(spearman(x, y));
}
BENCHMARK(BM_Spearman)->Arg(200)->Arg(10'000);

void BM_Bootstrap(benchmark::State& state)
{
  Rng rng{5};
  std::vector<double> x(200), y(200);
  for (std::size_t i = 0; i < x.size(); ++i)
  {
    x[i] = standard_normal(rng);
    y[i] = 0.8 * x[i] + 0.6 * standard_normal(rng);
  }
  for (auto _ : state)
    benchmark::DoNotOptimize(bootstrap_ci(x, y, Statistic::pcc, 1000, 0));
}
BENCHMARK(BM_Bootstrap)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
