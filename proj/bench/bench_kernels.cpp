// Serial reference kernels vs their OpenMP counterparts on graph-sized inputs.
#include <benchmark/benchmark.h>

#include "gncd/kernels.hpp"
#include "gncd/rng.hpp"

namespace {

using namespace gncd;
using kernels::Neighborhoods;

Matrix unit_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(n, d);
  for (double& x : m.data()) x = rng.normal();
  normalize_rows(m);
  return m;
}

Matrix row_stochastic(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += (m(i, j) = rng.uniform() < 0.1 ? rng.uniform() : 0.0);
    if (s > 0.0)
      for (std::size_t j = 0; j < n; ++j) m(i, j) /= s;
  }
  return m;
}

template <Matrix (*Gram)(const Matrix&)>
void BM_Gram(benchmark::State& state) {
  const Matrix x = unit_rows(static_cast<std::size_t>(state.range(0)), 64, 1);
  for (auto _ : state) benchmark::DoNotOptimize(Gram(x));
}

template <Neighborhoods (*TopK)(const Matrix&, std::size_t)>
void BM_TopK(benchmark::State& state) {
  const Matrix s = kernels::serial::gram(unit_rows(static_cast<std::size_t>(state.range(0)), 64, 2));
  for (auto _ : state) benchmark::DoNotOptimize(TopK(s, 32));
}

template <CountMatrix (*Counts)(const Neighborhoods&)>
void BM_Consensus(benchmark::State& state) {
  const Matrix s = kernels::serial::gram(unit_rows(static_cast<std::size_t>(state.range(0)), 64, 3));
  const Neighborhoods nb = kernels::serial::top_k(s, 32);
  for (auto _ : state) benchmark::DoNotOptimize(Counts(nb));
}

template <Matrix (*Sandwich)(const Matrix&, const Matrix&)>
void BM_Sandwich(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix g = row_stochastic(n, 4);
  for (auto _ : state) benchmark::DoNotOptimize(Sandwich(g, g));
}

template <std::vector<int> (*Nearest)(const Matrix&, const Matrix&)>
void BM_NearestCentroid(benchmark::State& state) {
  const Matrix x = unit_rows(static_cast<std::size_t>(state.range(0)), 64, 5);
  const Matrix c = unit_rows(100, 64, 6);
  for (auto _ : state) benchmark::DoNotOptimize(Nearest(x, c));
}

namespace ks = kernels::serial;
namespace ko = kernels::omp;

BENCHMARK(BM_Gram<ks::gram>)->Name("gram/serial")->Arg(512)->Arg(2048);
BENCHMARK(BM_Gram<ko::gram>)->Name("gram/omp")->Arg(512)->Arg(2048);
BENCHMARK(BM_TopK<ks::top_k>)->Name("top_k/serial")->Arg(512)->Arg(2048);
BENCHMARK(BM_TopK<ko::top_k>)->Name("top_k/omp")->Arg(512)->Arg(2048);
BENCHMARK(BM_Consensus<ks::consensus_counts>)->Name("consensus/serial")->Arg(512)->Arg(2048);
BENCHMARK(BM_Consensus<ko::consensus_counts>)->Name("consensus/omp")->Arg(512)->Arg(2048);
BENCHMARK(BM_Sandwich<ks::sandwich>)->Name("sandwich/serial")->Arg(256)->Arg(512);
BENCHMARK(BM_Sandwich<ko::sandwich>)->Name("sandwich/omp")->Arg(256)->Arg(512);
BENCHMARK(BM_NearestCentroid<ks::nearest_centroid>)->Name("nearest_centroid/serial")->Arg(20000);
BENCHMARK(BM_NearestCentroid<ko::nearest_centroid>)->Name("nearest_centroid/omp")->Arg(20000);

}  // namespace

BENCHMARK_MAIN();
