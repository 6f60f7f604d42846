// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "affseq/audio_io.hpp"
#include "affseq/dsp.hpp"
#include "affseq/recurrent.hpp"
#include "affseq/tensor.hpp"

using namespace affseq;

namespace {

void BM_Fft(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  std::vector<std::complex<double>> x(n);
  for (auto& v : x) v = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
  for (auto _ : state) benchmark::DoNotOptimize(dsp::fft(x));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Fft)->RangeMultiplier(4)->Range(64, 4096)->Complexity(benchmark::oNLogN);

void BM_GruForward(benchmark::State& state) {
  const auto units = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  GruLayer gru("gru", 168, units, rng);
  Tensor x({32, 15, 168});
  for (auto& v : x.values()) v = rng.uniform(-1.0, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(gru.forward(x, Mode::infer));
}
BENCHMARK(BM_GruForward)->Arg(32)->Arg(128);

void BM_FrameFeatures(benchmark::State& state) {
  AudioClip clip;
  clip.sample_rate = 44100;
  clip.samples.resize(44100);
  for (std::size_t i = 0; i < clip.samples.size(); ++i) {
    clip.samples[i] = 0.5 * std::sin(2.0 * std::numbers::pi * 440.0 * i / 44100.0);
  }
  const dsp::DspParams params;
  const auto length = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(dsp::frame_features(clip, 0, length, params));
}
BENCHMARK(BM_FrameFeatures)->Arg(1470)->Arg(2940)->Arg(8192);

}  // namespace

BENCHMARK_MAIN();
