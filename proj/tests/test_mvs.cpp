#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "evrecon/errors.hpp"
#include "evrecon/mvs.hpp"
#include "evrecon/ply.hpp"
#include "evrecon/simulator.hpp"
#include "test_utils.hpp"

using namespace evrecon;
using namespace evrecon::testutil;

namespace {

// Two rendered views of a fronto-parallel textured plane, with ground-truth
// depth maps from the renderer.
struct PlanePair {
  SyntheticScene scene;
  RenderedSequence seq;
  ImageF image0, image1;
};

PlanePair make_plane_pair(int width, int height, double fx) {
  PlanePair out;
  out.scene.kind = SyntheticScene::Kind::Plane;
  out.scene.plane_depth = 5.0;
  out.scene.geometry = {width, height};
  out.scene.intrinsics = {fx, fx, 0.5 * (width - 1), 0.5 * (height - 1), 0.0};
  out.scene.texture_frequency = 2.0;
  Pose a;
  Pose b;
  b.t = Eigen::Vector3d(-0.4, 0.0, 0.0);  // camera center at (0.4, 0, 0)
  out.scene.trajectory = {{0, a}, {1'000'000, b}};
  out.seq = render_sequence(out.scene, 2, 2.0);

  const auto to_image = [](const ImageD& log_frame) {
    ImageF image(log_frame.width(), log_frame.height());
    for (int y = 0; y < log_frame.height(); ++y) {
      for (int x = 0; x < log_frame.width(); ++x) {
        image(x, y) = float(std::exp(log_frame(x, y)));
      }
    }
    return image;
  };
  out.image0 = to_image(out.seq.frames[0].values);
  out.image1 = to_image(out.seq.frames[1].values);
  return out;
}

}  // namespace

TEST_CASE("plane homography matches direct projection") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const CameraIntrinsics k{250.0, 250.0, 120.0, 90.0, 0.0};
  for (int trial = 0; trial < 50; ++trial) {
    Pose rel;
    rel.q = Eigen::Quaterniond(1.0, 0.05 * u(rng), 0.05 * u(rng),
                               0.05 * u(rng))
                .normalized();
    rel.t = Eigen::Vector3d(0.3 * u(rng), 0.3 * u(rng), 0.1 * u(rng));

    Eigen::Vector3d normal(0.3 * u(rng), 0.3 * u(rng), -1.0);
    normal.normalize();
    const double depth = 4.0 + u(rng);
    const Eigen::Vector3d anchor =
        depth * (k.matrix().inverse() * Eigen::Vector3d(120.0, 90.0, 1.0));
    const Eigen::Matrix3d hom = plane_homography(k, rel, anchor, normal);

    for (int i = 0; i < 20; ++i) {
      const Eigen::Vector2d px(120.0 + 60.0 * u(rng), 90.0 + 45.0 * u(rng));
      // Intersect the pixel ray with the plane, project into the source.
      const Eigen::Vector3d dir = k.matrix().inverse() * px.homogeneous();
      const double denom = normal.dot(dir);
      if (std::abs(denom) < 1e-6) continue;
      const double d = normal.dot(anchor) / denom;
      const Eigen::Vector3d x_ref = d * dir;
      const Eigen::Vector3d x_src = rel.apply(x_ref);
      if (x_src.z() < 0.1) continue;
      const Eigen::Vector2d direct = project_camera(k, x_src);
      const Eigen::Vector2d warped =
          (hom * px.homogeneous()).hnormalized();
      CHECK((direct - warped).norm() < 1e-9);
    }
  }
}

TEST_CASE("patchmatch recovers a fronto-parallel plane") {
  const PlanePair pair = make_plane_pair(96, 72, 90.0);

  StereoView ref{0, &pair.image0, pair.seq.poses[0].pose};
  StereoView src{1, &pair.image1, pair.seq.poses[1].pose};
  StereoParams params;
  params.d_min = 2.0;
  params.d_max = 12.0;
  params.seed = 5;
  const DepthMap dm = patchmatch_depth(ref, {src}, pair.scene.intrinsics,
                                       params);

  int valid = 0, good = 0;
  for (int y = 0; y < dm.depth.height(); ++y) {
    for (int x = 0; x < dm.depth.width(); ++x) {
      CHECK(dm.cost(x, y) >= 0.0f);
      CHECK(dm.cost(x, y) <= 2.0f);
      if (dm.depth(x, y) <= 0.0f) continue;
      CHECK(dm.cost(x, y) <= float(params.cost_gate));
      ++valid;
      const float truth = pair.seq.depth_maps[0](x, y);
      if (std::abs(dm.depth(x, y) - truth) <= 0.01f * truth) ++good;
      // Normals face the camera.
      CHECK(dm.normal(x, y).z() < 0.0f);
      CHECK(dm.normal(x, y).norm() == doctest::Approx(1.0f).epsilon(1e-4));
    }
  }
  CHECK(valid > int(0.5 * dm.depth.size()));
  CHECK(double(good) >= 0.9 * double(valid));

  SUBCASE("deterministic under a fixed seed") {
    const DepthMap again = patchmatch_depth(ref, {src}, pair.scene.intrinsics,
                                            params);
    CHECK(again.depth == dm.depth);
    CHECK(again.cost == dm.cost);
  }

  SUBCASE("more iterations never worsen any pixel") {
    StereoParams one = params;
    one.iterations = 1;
    const DepthMap first = patchmatch_depth(ref, {src}, pair.scene.intrinsics,
                                            one);
    for (int y = 0; y < dm.cost.height(); ++y) {
      for (int x = 0; x < dm.cost.width(); ++x) {
        CHECK(dm.cost(x, y) <= first.cost(x, y) + 1e-7f);
      }
    }
  }
}

TEST_CASE("zero-texture images are fully invalidated") {
  const ImageF flat(64, 48, 0.5f);
  Pose a, b;
  b.t = Eigen::Vector3d(-0.3, 0.0, 0.0);
  StereoView ref{0, &flat, a};
  StereoView src{1, &flat, b};
  StereoParams params;
  params.d_min = 1.0;
  params.d_max = 10.0;
  const CameraIntrinsics k{60.0, 60.0, 31.5, 23.5, 0.0};
  const DepthMap dm = patchmatch_depth(ref, {src}, k, params);
  for (float d : dm.depth) CHECK(d == 0.0f);
}

TEST_CASE("stereo neighbor selection follows shared counts and angles") {
  const SyntheticRig rig = make_rig(8, 200, 71);
  Reconstruction recon = reconstruction_from_rig(rig);

  const auto neighbors = select_stereo_neighbors(recon, 0, 4);
  REQUIRE(!neighbors.empty());
  CHECK(neighbors.size() <= 4);
  // Adjacent orbit views share the most points; view 1 must rank first.
  CHECK(neighbors[0] == 1);

  SUBCASE("depth range follows the sparse points") {
    const auto [lo, hi] = sparse_depth_range(recon, 0);
    CHECK(lo > 0.0);
    CHECK(hi > lo);
    // Contains the actual depth of every observed point (by construction
    // [0.25 min, 4 max]).
    for (const auto& [id, point] : recon.points) {
      for (const Observation& obs : point.track) {
        if (obs.image_id != 0) continue;
        const double z = recon.images.at(0).apply(point.xyz).z();
        CHECK(z >= lo);
        CHECK(z <= hi);
      }
    }
  }

  SUBCASE("lone registered image has no neighbors") {
    Reconstruction lonely = recon;
    for (int i = 1; i < 8; ++i) lonely.images.erase(i);
    CHECK_THROWS_AS(select_stereo_neighbors(lonely, 0, 4), NoUsableNeighbors);
  }
}

TEST_CASE("neighbors outside the angle band are excluded") {
  // Two cameras ~60 degrees apart at the shared points: outside [2, 45].
  Reconstruction recon;
  recon.intrinsics = {100.0, 100.0, 50.0, 50.0, 0.0};
  recon.base_image = 0;
  recon.gauge_image = 1;
  Pose a;  // center at origin looking +z
  Pose b;  // center far to the side
  b.q = Eigen::Quaterniond(Eigen::AngleAxisd(-1.0, Eigen::Vector3d::UnitY()))
            .normalized();
  b.t = -(b.q * Eigen::Vector3d(5.5, 0.0, 1.5));
  recon.images[0] = a;
  recon.images[1] = b;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 30; ++i) {
    Point3D point;
    point.xyz = Eigen::Vector3d(0.5 * u(rng), 0.5 * u(rng), 5.0 + 0.5 * u(rng));
    const double angle =
        triangulation_angle(a.center(), b.center(), point.xyz) * 180.0 /
        std::numbers::pi;
    REQUIRE(angle > 45.0);
    point.track.push_back(Observation{0, i, project(recon.intrinsics, a, point.xyz)});
    point.track.push_back(Observation{1, i, project(recon.intrinsics, b, point.xyz)});
    recon.add_point(std::move(point));
  }
  CHECK_THROWS_AS(select_stereo_neighbors(recon, 0, 4), NoUsableNeighbors);
}

TEST_CASE("fusion accepts mutually consistent pixels and consumes them") {
  const PlanePair pair = make_plane_pair(64, 48, 60.0);

  // Ground-truth depth maps with fronto-parallel normals.
  std::vector<DepthMap> maps(2);
  for (int v = 0; v < 2; ++v) {
    maps[v].ref_id = v;
    maps[v].depth = pair.seq.depth_maps[v];
    maps[v].normal = Grid<Eigen::Vector3f>(64, 48, Eigen::Vector3f(0, 0, -1));
    maps[v].cost = ImageF(64, 48, 0.0f);
  }
  const std::vector<StereoView> views = {
      {0, &pair.image0, pair.seq.poses[0].pose},
      {1, &pair.image1, pair.seq.poses[1].pose}};

  const DensePointCloud cloud =
      fuse_depth_maps(maps, views, pair.scene.intrinsics);
  // Nearly every pixel of view 0 fuses against view 1.
  CHECK(int(cloud.points.size()) > int(0.9 * 64 * 48));
  for (const DensePoint& p : cloud.points) {
    CHECK(p.support >= 2);
    // Fused plane points lie on z = 5 (world).
    CHECK(p.xyz.z() == doctest::Approx(5.0).epsilon(1e-3));
  }

  // Post-hoc consistency: every point re-projects within tolerance into at
  // least `support` views.
  const FusionParams params;
  for (size_t i = 0; i < cloud.points.size(); i += 97) {
    const DensePoint& p = cloud.points[i];
    int consistent = 0;
    for (int v = 0; v < 2; ++v) {
      const Eigen::Vector3d x_cam = views[v].pose.apply(p.xyz);
      if (x_cam.z() <= 0.0) continue;
      const Eigen::Vector2d q = project_camera(pair.scene.intrinsics, x_cam);
      const int qx = int(std::lround(q.x())), qy = int(std::lround(q.y()));
      if (!maps[v].depth.contains(qx, qy)) continue;
      const float d = maps[v].depth(qx, qy);
      if (d <= 0.0f) continue;
      if (std::abs(d - x_cam.z()) <= params.max_rel_depth_diff * d) {
        ++consistent;
      }
    }
    CHECK(consistent >= p.support);
  }

  SUBCASE("a single depth map cannot reach the support minimum") {
    const DensePointCloud lone = fuse_depth_maps(
        {maps[0]}, {views[0]}, pair.scene.intrinsics);
    CHECK(lone.points.empty());
  }

  SUBCASE("pixels occluded in the other view are rejected") {
    // Invalidate the region of view 1 that sees the first rows of view 0.
    std::vector<DepthMap> poked = maps;
    for (int y = 0; y < 20; ++y) {
      for (int x = 0; x < 64; ++x) poked[1].depth(x, y) = 0.0f;
    }
    const DensePointCloud fewer =
        fuse_depth_maps(poked, views, pair.scene.intrinsics);
    CHECK(fewer.points.size() < cloud.points.size());
  }
}

TEST_CASE("ply round trip is bitwise exact in binary mode") {
  std::mt19937_64 rng(4242);
  std::uniform_real_distribution<double> u(-1000.0, 1000.0);
  PlyCloud cloud;
  for (int i = 0; i < 1000; ++i) {
    cloud.points.emplace_back(u(rng), u(rng), u(rng));
    cloud.colors.push_back({uint8_t(rng() % 256), uint8_t(rng() % 256),
                            uint8_t(rng() % 256)});
    cloud.normals.push_back(
        Eigen::Vector3f(float(u(rng)), float(u(rng)), float(u(rng)))
            .normalized());
  }
  const auto path =
      std::filesystem::temp_directory_path() / "evrecon_cloud.ply";
  write_ply(cloud, path.string(), /*binary=*/true);
  const PlyCloud loaded = read_ply(path.string());
  std::filesystem::remove(path);

  REQUIRE(loaded.points.size() == 1000);
  for (int i = 0; i < 1000; ++i) {
    CHECK(loaded.points[i] == cloud.points[i]);  // bitwise
    CHECK(loaded.colors[i] == cloud.colors[i]);
    CHECK(loaded.normals[i] == cloud.normals[i]);
  }
}

TEST_CASE("ply ascii writes a parsable header and data") {
  PlyCloud cloud;
  cloud.points.emplace_back(0.0, 0.0, 0.0);
  const auto path = std::filesystem::temp_directory_path() / "evrecon_one.ply";
  write_ply(cloud, path.string(), /*binary=*/false);

  std::ifstream in(path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  CHECK(text.find("element vertex 1") != std::string::npos);
  CHECK(text.find("format ascii 1.0") != std::string::npos);

  const PlyCloud loaded = read_ply(path.string());
  std::filesystem::remove(path);
  REQUIRE(loaded.points.size() == 1);
  CHECK(loaded.points[0] == Eigen::Vector3d(0, 0, 0));

  SUBCASE("empty clouds are valid") {
    const auto empty_path =
        std::filesystem::temp_directory_path() / "evrecon_empty.ply";
    write_ply(PlyCloud{}, empty_path.string(), false);
    const PlyCloud empty = read_ply(empty_path.string());
    std::filesystem::remove(empty_path);
    CHECK(empty.points.empty());
  }
  SUBCASE("non-finite points are rejected") {
    PlyCloud bad;
    bad.points.emplace_back(std::nan(""), 0.0, 0.0);
    CHECK_THROWS_AS(write_ply(bad, "/tmp/evrecon_nan.ply", true),
                    std::invalid_argument);
  }
}
