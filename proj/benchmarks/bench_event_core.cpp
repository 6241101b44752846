#include <benchmark/benchmark.h>

#include <random>

#include "evrecon/representations.hpp"
#include "evrecon/windowing.hpp"

namespace {

using namespace evrecon;

EventStream synthetic_stream(int count, const SensorGeometry& geo) {
  std::mt19937_64 rng(1);
  EventStream stream;
  stream.geometry = geo;
  stream.events.reserve(count);
  int64_t t = 0;
  for (int i = 0; i < count; ++i) {
    t += rng() % 20;
    stream.events.push_back(Event{t, uint16_t(rng() % geo.width),
                                  uint16_t(rng() % geo.height),
                                  (rng() & 1) ? int8_t(1) : int8_t(-1)});
  }
  return stream;
}

void BM_WindowByCount(benchmark::State& state) {
  const SensorGeometry geo{346, 260};
  const EventStream stream = synthetic_stream(1'000'000, geo);
  for (auto _ : state) {
    auto windows = window_by_count(stream, int(state.range(0)));
    benchmark::DoNotOptimize(windows);
  }
  state.SetItemsProcessed(state.iterations() * stream.size());
}
BENCHMARK(BM_WindowByCount)->Arg(10'000)->Arg(31'486);

void BM_EncodeVoxelGrid(benchmark::State& state) {
  const SensorGeometry geo{346, 260};
  const EventStream stream = synthetic_stream(int(state.range(0)), geo);
  EventWindow window;
  window.events = stream.events;
  for (auto _ : state) {
    auto grid = encode_voxel_grid(window, geo, 5);
    benchmark::DoNotOptimize(grid);
  }
  state.SetItemsProcessed(state.iterations() * window.events.size());
}
BENCHMARK(BM_EncodeVoxelGrid)->Arg(31'486)->Arg(100'000);

void BM_AccumulateFrame(benchmark::State& state) {
  const SensorGeometry geo{346, 260};
  const EventStream stream = synthetic_stream(31'486, geo);
  EventWindow window;
  window.events = stream.events;
  for (auto _ : state) {
    auto frame = accumulate_frame(window, geo);
    benchmark::DoNotOptimize(frame);
  }
  state.SetItemsProcessed(state.iterations() * window.events.size());
}
BENCHMARK(BM_AccumulateFrame);

}  // namespace

BENCHMARK_MAIN();
