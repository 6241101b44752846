#include "evrecon/mvs.hpp"

#include <cmath>

#include "evrecon/errors.hpp"

namespace evrecon {

namespace {

Eigen::Vector3d pixel_to_world(const CameraIntrinsics& intrinsics,
                               const Pose& pose, int x, int y, double depth) {
  const Eigen::Vector3d x_cam = backproject(intrinsics, {double(x), double(y)},
                                            depth);
  return pose.inverse().apply(x_cam);
}

}  // namespace

DensePointCloud fuse_depth_maps(const std::vector<DepthMap>& depth_maps,
                                const std::vector<StereoView>& views,
                                const CameraIntrinsics& intrinsics,
                                const FusionParams& params) {
  if (views.size() != depth_maps.size()) {
    throw std::invalid_argument("one view per depth map required");
  }
  const size_t num_views = depth_maps.size();

  std::vector<Grid<uint8_t>> consumed;
  consumed.reserve(num_views);
  for (const DepthMap& dm : depth_maps) {
    consumed.emplace_back(dm.depth.width(), dm.depth.height(), uint8_t{0});
  }

  DensePointCloud cloud;
  struct Supporter {
    size_t view;
    int px, py;
    Eigen::Vector3d xyz;
  };

  for (size_t v = 0; v < num_views; ++v) {
    const DepthMap& dm = depth_maps[v];
    const Pose& pose = views[v].pose;
    const Pose world_from_cam = pose.inverse();
    for (int y = 0; y < dm.depth.height(); ++y) {
      for (int x = 0; x < dm.depth.width(); ++x) {
        if (consumed[v](x, y) || dm.depth(x, y) <= 0.0f) continue;
        const Eigen::Vector3d x_world =
            pixel_to_world(intrinsics, pose, x, y, dm.depth(x, y));

        std::vector<Supporter> supporters;
        for (size_t w = 0; w < num_views; ++w) {
          if (w == v) continue;
          const Pose& pose_w = views[w].pose;
          const Eigen::Vector3d x_cam_w = pose_w.apply(x_world);
          if (x_cam_w.z() <= 0.0) continue;
          const Eigen::Vector2d q = project_camera(intrinsics, x_cam_w);
          const int qx = int(std::lround(q.x()));
          const int qy = int(std::lround(q.y()));
          if (!depth_maps[w].depth.contains(qx, qy)) continue;
          if (consumed[w](qx, qy)) continue;
          const float depth_w = depth_maps[w].depth(qx, qy);
          if (depth_w <= 0.0f) continue;
          // Relative depth agreement at the supporting pixel.
          if (std::abs(depth_w - x_cam_w.z()) >
              params.max_rel_depth_diff * depth_w) {
            continue;
          }
          // The supporter's own point must land back on this pixel.
          const Eigen::Vector3d x_w =
              pixel_to_world(intrinsics, pose_w, qx, qy, depth_w);
          const Eigen::Vector3d back = pose.apply(x_w);
          if (back.z() <= 0.0) continue;
          if ((project_camera(intrinsics, back) -
               Eigen::Vector2d(double(x), double(y)))
                  .norm() > params.max_reproj_px) {
            continue;
          }
          supporters.push_back(Supporter{w, qx, qy, x_w});
        }
        // Support counts the reference view plus every consistent other
        // view; a lone depth map can never reach the minimum of 2.
        if (int(supporters.size()) + 1 < params.min_support) continue;

        // Average the mutually consistent points, then verify the result
        // still re-projects inside the tolerances; fall back to the
        // reference point if averaging broke a supporter.
        Eigen::Vector3d fused = x_world;
        for (const Supporter& s : supporters) fused += s.xyz;
        fused /= double(supporters.size() + 1);

        bool average_ok = true;
        for (const Supporter& s : supporters) {
          const Eigen::Vector3d x_cam_w = views[s.view].pose.apply(fused);
          if (x_cam_w.z() <= 0.0) {
            average_ok = false;
            break;
          }
          const Eigen::Vector2d q = project_camera(intrinsics, x_cam_w);
          const float depth_w = depth_maps[s.view].depth(s.px, s.py);
          if ((q - Eigen::Vector2d(s.px, s.py)).norm() > params.max_reproj_px ||
              std::abs(depth_w - x_cam_w.z()) >
                  params.max_rel_depth_diff * depth_w) {
            average_ok = false;
            break;
          }
        }
        if (!average_ok) fused = x_world;

        DensePoint point;
        point.xyz = fused;
        point.support = int(supporters.size()) + 1;
        // Normal in world coordinates, averaged over supporters.
        Eigen::Vector3f normal =
            (world_from_cam.q.cast<float>() * dm.normal(x, y));
        for (const Supporter& s : supporters) {
          normal += views[s.view].pose.q.conjugate().cast<float>() *
                    depth_maps[s.view].normal(s.px, s.py);
        }
        if (normal.norm() > 1e-6f) normal.normalize();
        point.normal = normal;
        const float gray =
            views[v].image != nullptr ? (*views[v].image)(x, y) : 0.5f;
        const auto channel =
            uint8_t(std::lround(std::clamp(gray, 0.0f, 1.0f) * 255.0f));
        point.color = {channel, channel, channel};
        cloud.points.push_back(point);

        consumed[v](x, y) = 1;
        for (const Supporter& s : supporters) {
          consumed[s.view](s.px, s.py) = 1;
        }
      }
    }
  }
  return cloud;
}

}  // namespace evrecon
