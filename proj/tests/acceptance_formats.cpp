// Criteria 7-8: dense stage quality, determinism and file formats.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "acceptance_criteria.hpp"
#include "evrecon/errors.hpp"
#include "evrecon/event_io.hpp"
#include "evrecon/image_io.hpp"
#include "evrecon/mvs.hpp"
#include "evrecon/pipeline.hpp"
#include "evrecon/ply.hpp"
#include "evrecon/simulator.hpp"

namespace evrecon::acceptance {

namespace fs = std::filesystem;

namespace {

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

}  // namespace

bool dense_stage(std::string& detail) {
  SyntheticScene scene;
  scene.kind = SyntheticScene::Kind::Plane;
  scene.plane_depth = 5.0;
  scene.geometry = {240, 180};
  scene.intrinsics = {220.0, 220.0, 119.5, 89.5, 0.0};
  scene.texture_frequency = 2.0;
  scene.texture_seed = 3;
  Pose a;
  Pose b;
  b.t = Eigen::Vector3d(-0.45, 0.0, 0.0);
  scene.trajectory = {{0, a}, {1'000'000, b}};
  const RenderedSequence seq = render_sequence(scene, 2, 2.0);

  std::vector<ImageF> intensity(2);
  for (int v = 0; v < 2; ++v) {
    intensity[v] = ImageF(scene.geometry.width, scene.geometry.height);
    for (int y = 0; y < intensity[v].height(); ++y) {
      for (int x = 0; x < intensity[v].width(); ++x) {
        intensity[v](x, y) = float(std::exp(seq.frames[v].values(x, y)));
      }
    }
  }

  const std::vector<StereoView> views = {
      {0, &intensity[0], seq.poses[0].pose}, {1, &intensity[1], seq.poses[1].pose}};
  StereoParams params;
  params.d_min = 2.0;
  params.d_max = 12.0;
  params.seed = 7;

  std::vector<DepthMap> maps(2);
  maps[0] = patchmatch_depth(views[0], {views[1]}, scene.intrinsics, params);
  maps[1] = patchmatch_depth(views[1], {views[0]}, scene.intrinsics, params);

  size_t valid = 0, good = 0;
  for (int y = 0; y < maps[0].depth.height(); ++y) {
    for (int x = 0; x < maps[0].depth.width(); ++x) {
      const float depth = maps[0].depth(x, y);
      if (depth <= 0.0f) continue;
      ++valid;
      const float truth = seq.depth_maps[0](x, y);
      if (std::abs(depth - truth) <= 0.01f * truth) ++good;
    }
  }
  const double good_fraction = valid == 0 ? 0.0 : double(good) / double(valid);

  const FusionParams fusion_params;
  const DensePointCloud cloud =
      fuse_depth_maps(maps, views, scene.intrinsics, fusion_params);

  // Every fused point must re-project within tolerance into at least
  // `support` views (its supporting set).
  size_t consistent_points = 0;
  for (const DensePoint& point : cloud.points) {
    int consistent = 0;
    for (int v = 0; v < 2; ++v) {
      const Eigen::Vector3d x_cam = views[v].pose.apply(point.xyz);
      if (x_cam.z() <= 0.0) continue;
      const Eigen::Vector2d q = project_camera(scene.intrinsics, x_cam);
      const int qx = int(std::lround(q.x()));
      const int qy = int(std::lround(q.y()));
      if (!maps[v].depth.contains(qx, qy)) continue;
      const float depth = maps[v].depth(qx, qy);
      if (depth <= 0.0f) continue;
      if ((q - Eigen::Vector2d(qx, qy)).norm() <= fusion_params.max_reproj_px &&
          std::abs(depth - x_cam.z()) <=
              fusion_params.max_rel_depth_diff * depth) {
        ++consistent;
      }
    }
    if (consistent >= point.support) ++consistent_points;
  }

  detail = std::to_string(100.0 * good_fraction) + "% of " +
           std::to_string(valid) + " valid depths within 1%, " +
           std::to_string(cloud.points.size()) + " fused points, " +
           std::to_string(consistent_points) + " re-project consistently";
  return good_fraction >= 0.9 && !cloud.points.empty() &&
         consistent_points == cloud.points.size();
}

bool determinism_and_formats(std::string& detail) {
  const fs::path dir =
      fs::temp_directory_path() / "evrecon_acceptance_formats";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::string notes;

  // DAVIS346 geometry bounds checks.
  {
    const SensorGeometry davis{346, 260};
    std::istringstream ok("0.5 345 259 1\n");
    if (parse_events(ok, davis).size() != 1) {
      detail = "346x260 in-range event rejected";
      return false;
    }
    std::istringstream bad("0.5 346 100 1\n");
    bool rejected = false;
    try {
      parse_events(bad, davis);
    } catch (const CoordinateOutOfRange&) {
      rejected = true;
    }
    if (!rejected) {
      detail = "out-of-range event accepted for 346x260";
      return false;
    }
    notes += "DAVIS bounds ok";
  }

  // PGM quantization bound, PFM exactness, binary PLY bitwise round trip.
  {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    std::uniform_real_distribution<double> wide(-1e3, 1e3);

    ImageF image(64, 48);
    for (float& v : image) v = unit(rng);
    write_pgm((dir / "a.pgm").string(), image);
    const ImageF pgm = read_pgm((dir / "a.pgm").string());
    for (int y = 0; y < 48; ++y) {
      for (int x = 0; x < 64; ++x) {
        if (std::abs(pgm(x, y) - image(x, y)) > 1.0f / 510.0f + 1e-7f) {
          detail = "PGM round trip outside the quantization bound";
          return false;
        }
      }
    }
    for (float& v : image) v = float(wide(rng));
    write_pfm((dir / "a.pfm").string(), image);
    if (read_pfm((dir / "a.pfm").string()) != image) {
      detail = "PFM round trip not exact";
      return false;
    }

    PlyCloud cloud;
    for (int i = 0; i < 1000; ++i) {
      cloud.points.emplace_back(wide(rng), wide(rng), wide(rng));
    }
    write_ply(cloud, (dir / "a.ply").string(), true);
    const PlyCloud reread = read_ply((dir / "a.ply").string());
    if (reread.points.size() != cloud.points.size()) {
      detail = "PLY round trip lost points";
      return false;
    }
    for (size_t i = 0; i < cloud.points.size(); ++i) {
      if (reread.points[i] != cloud.points[i]) {
        detail = "PLY binary round trip not bitwise";
        return false;
      }
    }
    notes += ", PGM/PFM/PLY round trips ok";
  }

  // Identical config + seed: byte-identical binary PLY pipeline outputs.
  {
    SyntheticScene scene;
    scene.kind = SyntheticScene::Kind::Box;
    scene.box_min = Eigen::Vector3d(-2, -2, -2);
    scene.box_max = Eigen::Vector3d(2, 2, 2);
    scene.geometry = {128, 96};
    scene.intrinsics = {110.0, 110.0, 63.5, 47.5, 0.0};
    scene.texture_frequency = 1.2;
    scene.texture_seed = 9;
    scene.trajectory = orbit_trajectory(Eigen::Vector3d::Zero(), 6.0, 2.0,
                                        40.0, 32, 1'000'000, 25.0);
    const RenderedSequence seq = render_sequence(scene, 30, 30.0);
    const EventStream events = generate_events(seq.frames);
    write_events_file((dir / "events.txt").string(), events, EventFormat::Text);
    {
      std::ofstream manifest(dir / "frames.txt");
      for (int i = 0; i < 30; ++i) {
        ImageF frame(128, 96);
        for (int y = 0; y < 96; ++y) {
          for (int x = 0; x < 128; ++x) {
            frame(x, y) = float(std::exp(seq.frames[i].values(x, y)));
          }
        }
        char name[32];
        std::snprintf(name, sizeof(name), "f%03d.pgm", i);
        write_pgm((dir / name).string(), frame);
        manifest << seq.frames[i].t_us * 1e-6 << " " << name << "\n";
      }
    }

    PipelineConfig config;
    config.events_path = (dir / "events.txt").string();
    config.geometry = scene.geometry;
    config.reconstructor = PipelineConfig::Reconstructor::External;
    config.external_manifest = (dir / "frames.txt").string();
    config.image_skip = 2;
    config.image_stride = 6;
    config.image_limit = 4;
    config.sift.contrast_threshold = 0.005;
    config.intrinsics = scene.intrinsics;
    config.stereo.iterations = 2;
    config.stereo_neighbors = 2;
    config.binary_ply = true;
    config.seed = 77;

    config.output_dir = (dir / "run1").string();
    run_pipeline(config);
    config.output_dir = (dir / "run2").string();
    run_pipeline(config);

    const std::string sparse1 = read_bytes(dir / "run1" / "sparse.ply");
    const std::string sparse2 = read_bytes(dir / "run2" / "sparse.ply");
    const std::string dense1 = read_bytes(dir / "run1" / "dense.ply");
    const std::string dense2 = read_bytes(dir / "run2" / "dense.ply");
    if (sparse1.empty() || dense1.empty()) {
      detail = "pipeline produced empty PLY output";
      return false;
    }
    if (sparse1 != sparse2 || dense1 != dense2) {
      detail = "same config + seed gave different PLY bytes";
      return false;
    }
    notes += ", pipeline outputs byte-identical across runs";
  }

  fs::remove_all(dir);
  detail = notes;
  return true;
}

}  // namespace evrecon::acceptance
