#include <benchmark/benchmark.h>

#include <cmath>

#include "evrecon/mvs.hpp"
#include "evrecon/simulator.hpp"

namespace {

using namespace evrecon;

struct PlanePair {
  SyntheticScene scene;
  RenderedSequence seq;
  ImageF image0, image1;
};

PlanePair make_pair(int width, int height) {
  PlanePair out;
  out.scene.kind = SyntheticScene::Kind::Plane;
  out.scene.plane_depth = 5.0;
  out.scene.geometry = {width, height};
  out.scene.intrinsics = {0.9 * width, 0.9 * width, 0.5 * (width - 1),
                          0.5 * (height - 1), 0.0};
  out.scene.texture_frequency = 2.0;
  Pose a, b;
  b.t = Eigen::Vector3d(-0.4, 0.0, 0.0);
  out.scene.trajectory = {{0, a}, {1'000'000, b}};
  out.seq = render_sequence(out.scene, 2, 2.0);
  const auto to_image = [](const ImageD& frame) {
    ImageF image(frame.width(), frame.height());
    for (int y = 0; y < frame.height(); ++y) {
      for (int x = 0; x < frame.width(); ++x) {
        image(x, y) = float(std::exp(frame(x, y)));
      }
    }
    return image;
  };
  out.image0 = to_image(out.seq.frames[0].values);
  out.image1 = to_image(out.seq.frames[1].values);
  return out;
}

void BM_PatchMatchDepth(benchmark::State& state) {
  const int width = int(state.range(0));
  const PlanePair pair = make_pair(width, (width * 3) / 4);
  const StereoView ref{0, &pair.image0, pair.seq.poses[0].pose};
  const StereoView src{1, &pair.image1, pair.seq.poses[1].pose};
  StereoParams params;
  params.d_min = 2.0;
  params.d_max = 12.0;
  params.iterations = 2;
  for (auto _ : state) {
    DepthMap dm = patchmatch_depth(ref, {src}, pair.scene.intrinsics, params);
    benchmark::DoNotOptimize(dm);
  }
  state.SetItemsProcessed(state.iterations() * int64_t(width) * (width * 3) / 4);
}
BENCHMARK(BM_PatchMatchDepth)->Arg(96)->Arg(160)->Unit(benchmark::kMillisecond);

void BM_FuseDepthMaps(benchmark::State& state) {
  const PlanePair pair = make_pair(160, 120);
  std::vector<DepthMap> maps(2);
  for (int v = 0; v < 2; ++v) {
    maps[v].ref_id = v;
    maps[v].depth = pair.seq.depth_maps[v];
    maps[v].normal =
        Grid<Eigen::Vector3f>(160, 120, Eigen::Vector3f(0, 0, -1));
    maps[v].cost = ImageF(160, 120, 0.0f);
  }
  const std::vector<StereoView> views = {
      {0, &pair.image0, pair.seq.poses[0].pose},
      {1, &pair.image1, pair.seq.poses[1].pose}};
  for (auto _ : state) {
    DensePointCloud cloud =
        fuse_depth_maps(maps, views, pair.scene.intrinsics);
    benchmark::DoNotOptimize(cloud);
  }
  state.SetItemsProcessed(state.iterations() * 160 * 120);
}
BENCHMARK(BM_FuseDepthMaps)->Unit(benchmark::kMillisecond);

}  // namespace
