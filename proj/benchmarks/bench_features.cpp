#include <benchmark/benchmark.h>

#include <cmath>

#include "evrecon/features.hpp"
#include "evrecon/matching.hpp"
#include "evrecon/simulator.hpp"

namespace {

using namespace evrecon;

// DAVIS346-sized rendered view of the default box scene.
ImageF rendered_image(uint64_t seed, double arc_start) {
  SyntheticScene scene;
  scene.kind = SyntheticScene::Kind::Box;
  scene.box_min = Eigen::Vector3d(-2, -2, -2);
  scene.box_max = Eigen::Vector3d(2, 2, 2);
  scene.geometry = {346, 260};
  scene.intrinsics = {311.0, 311.0, 172.5, 129.5, 0.0};
  scene.texture_seed = seed;
  scene.trajectory =
      orbit_trajectory(Eigen::Vector3d::Zero(), 6.0, 2.0, 5.0, 4, 1'000'000,
                       arc_start);
  const RenderedSequence seq = render_sequence(scene, 2, 10.0);
  ImageF image(346, 260);
  for (int y = 0; y < 260; ++y) {
    for (int x = 0; x < 346; ++x) {
      image(x, y) = float(std::exp(seq.frames[0].values(x, y)));
    }
  }
  return image;
}

void BM_DetectFeatures(benchmark::State& state) {
  const ImageF image = rendered_image(7, 25.0);
  SiftParams params;
  params.contrast_threshold = 0.005;
  size_t features = 0;
  for (auto _ : state) {
    FeatureSet set = detect_features(image, 0, params);
    features = set.features.size();
    benchmark::DoNotOptimize(set);
  }
  state.counters["features"] = double(features);
}
BENCHMARK(BM_DetectFeatures)->Unit(benchmark::kMillisecond);

void BM_MatchExhaustive(benchmark::State& state) {
  SiftParams params;
  params.contrast_threshold = 0.005;
  const FeatureSet fa = detect_features(rendered_image(7, 25.0), 0, params);
  const FeatureSet fb = detect_features(rendered_image(7, 30.0), 1, params);
  size_t matches = 0;
  for (auto _ : state) {
    MatchSet set = match_exhaustive(fa, fb, 0.8);
    matches = set.matches.size();
    benchmark::DoNotOptimize(set);
  }
  state.counters["pairs"] = double(fa.features.size() * fb.features.size());
  state.counters["matches"] = double(matches);
}
BENCHMARK(BM_MatchExhaustive)->Unit(benchmark::kMillisecond);

}  // namespace
