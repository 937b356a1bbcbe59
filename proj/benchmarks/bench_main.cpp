#include <map>

#include <benchmark/benchmark.h>

#include "echoslice/codec.hpp"
#include "echoslice/container.hpp"
#include "echoslice/landmarks.hpp"
#include "echoslice/phantom.hpp"
#include "echoslice/resampler.hpp"
#include "echoslice/search.hpp"

namespace {

using namespace echoslice;

const Phantom& phantom(std::size_t n) {
  static std::map<std::size_t, Phantom> cache;
  auto it = cache.find(n);
  if (it == cache.end()) {
    PhantomSpec s = PhantomSpec::defaults();
    s.meta.dims = {n, n, n, 2};
    it = cache.emplace(n, generate_phantom(s)).first;
  }
  return it->second;
}

// Slice edge length in pixels is the benchmark argument.
void BM_RenderSlice(benchmark::State& state) {
  const Phantom& p = phantom(128);
  const auto shell = boundary_shell(p.volume.meta());
  RenderOptions opts;
  opts.shell = shell;
  const PlaneAD plane{0.5, 10, 80};
  const SliceExtent e = slice_extent(shell, plane_basis(plane_ad_to_pn(plane)));
  const double px = static_cast<double>(state.range(0));
  const ViewRenderConfig cfg{std::max(e.s_max - e.s_min, e.t_max - e.t_min) / (px - 1)};
  for (auto _ : state) benchmark::DoNotOptimize(render_slice(p.volume, plane, 0, cfg, opts));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_RenderSlice)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_RenderRotated(benchmark::State& state) {
  const Phantom& p = phantom(128);
  const ViewRenderConfig cfg{0.05, false, false, 70.0};
  for (auto _ : state) benchmark::DoNotOptimize(render_slice(p.volume, a4c_plane(), 0, cfg));
}
BENCHMARK(BM_RenderRotated)->Unit(benchmark::kMillisecond);

void BM_DecodeContainer(benchmark::State& state) {
  const auto bytes = encode_container(phantom(static_cast<std::size_t>(state.range(0))).volume);
  DecodeOptions opts;
  opts.threads = static_cast<unsigned>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(decode_container(bytes, opts));
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * bytes.size()));
}
BENCHMARK(BM_DecodeContainer)->Args({64, 1})->Args({128, 1})->Args({128, 2})->Unit(benchmark::kMillisecond);

void BM_EncodeVolume(benchmark::State& state) {
  const Phantom& p = phantom(64);
  for (auto _ : state) benchmark::DoNotOptimize(encode_volume(p.volume));
}
BENCHMARK(BM_EncodeVolume)->Unit(benchmark::kMillisecond);

void BM_ExtractConstantScorer(benchmark::State& state) {
  const Phantom& p = phantom(64);
  ExtractionConfig cfg = ExtractionConfig::defaults();
  cfg.render_videos = false;
  cfg.parallelism = static_cast<unsigned>(state.range(0));
  for (auto _ : state) {
    auto provider = phantom_landmark_provider(p.truth);
    auto scorer = constant_scorer(0.5);
    benchmark::DoNotOptimize(extract_standard_views(p.volume, *provider, *scorer, cfg));
  }
}
BENCHMARK(BM_ExtractConstantScorer)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
