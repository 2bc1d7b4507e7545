// Serial reference kernels against their OpenMP counterparts. Set
// OMP_NUM_THREADS to control the parallel side.

#include <benchmark/benchmark.h>

#include <cmath>

#include "cavf/audio.hpp"
#include "cavf/postproc.hpp"
#include "cavf/trainer.hpp"

using namespace cavf;

namespace {

Matrix random_matrix(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(n, n);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

Waveform noise(double seconds) {
  Rng rng(3);
  Waveform w{Vector(static_cast<std::size_t>(seconds * 16000.0)), 16000.0};
  for (double& v : w.samples) v = 0.2 * rng.normal();
  return w;
}

struct Traces {
  PredictionTrace pred, ref;
};

Traces traces(std::size_t n) {
  Rng rng(4);
  Traces t;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = std::sin(0.01 * static_cast<double>(i));
    t.ref.values.push_back(s);
    t.pred.values.push_back(0.5 * s + 1.0 + 0.2 * rng.normal());
  }
  return t;
}

void matmul_serial(benchmark::State& st) {
  const Matrix a = random_matrix(st.range(0), 1), b = random_matrix(st.range(0), 2);
  for (auto _ : st) benchmark::DoNotOptimize(serial::matmul(a, b));
}
void matmul_parallel(benchmark::State& st) {
  const Matrix a = random_matrix(st.range(0), 1), b = random_matrix(st.range(0), 2);
  for (auto _ : st) benchmark::DoNotOptimize(matmul(a, b));
}

void spectrogram_serial(benchmark::State& st) {
  const Waveform w = noise(60.0);
  for (auto _ : st) benchmark::DoNotOptimize(serial::spectrogram(w, 1024));
}
void spectrogram_parallel(benchmark::State& st) {
  const Waveform w = noise(60.0);
  for (auto _ : st) benchmark::DoNotOptimize(spectrogram(w, 1024));
}

void chain_search_serial(benchmark::State& st) {
  const Traces t = traces(7500);
  for (auto _ : st) benchmark::DoNotOptimize(serial::chain_search(t.pred, t.ref));
}
void chain_search_parallel(benchmark::State& st) {
  const Traces t = traces(7500);
  for (auto _ : st) benchmark::DoNotOptimize(chain_search(t.pred, t.ref));
}

struct BatchFixture {
  Dataset data;
  FusionParams params;
  std::vector<const LabeledSequence*> batch;
  std::vector<Matrix> masks;

  BatchFixture() {
    SyntheticSpec spec;
    spec.n_sequences = 16;
    spec.feature_dim = 128;
    data = generate(spec);
    Rng rng(5);
    params = init_params(Variant::cross_attention, 128, 64, 1.0, rng);
    for (const auto& s : data.sequences) {
      batch.push_back(&s);
      masks.push_back(dropout_mask(256, s.xa.length(), 0.5, rng));
    }
  }
};

void batch_gradient_serial(benchmark::State& st) {
  const BatchFixture f;
  for (auto _ : st) benchmark::DoNotOptimize(serial::batch_gradient(f.params, f.batch, Target::valence, f.masks));
}
void batch_gradient_parallel(benchmark::State& st) {
  const BatchFixture f;
  for (auto _ : st) benchmark::DoNotOptimize(batch_gradient(f.params, f.batch, Target::valence, f.masks));
}

}  // namespace

BENCHMARK(matmul_serial)->Arg(128)->Arg(384)->Unit(benchmark::kMillisecond);
BENCHMARK(matmul_parallel)->Arg(128)->Arg(384)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(spectrogram_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(spectrogram_parallel)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(chain_search_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(chain_search_parallel)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(batch_gradient_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(batch_gradient_parallel)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
