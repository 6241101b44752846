#include "evrecon/triangulation.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/Dense>

namespace evrecon {

std::optional<Eigen::Vector3d> triangulate_point(
    const std::vector<Pose>& poses, const CameraIntrinsics& intrinsics,
    const std::vector<Eigen::Vector2d>& observations) {
  const size_t n = poses.size();
  if (n < 2 || observations.size() != n) return std::nullopt;

  Eigen::MatrixXd a(2 * n, 4);
  for (size_t i = 0; i < n; ++i) {
    // Undistorted normalized coordinates make the DLT independent of K.
    const Eigen::Vector2d uv = undistort(
        intrinsics, {(observations[i].x() - intrinsics.cx) / intrinsics.fx,
                     (observations[i].y() - intrinsics.cy) / intrinsics.fy});
    Eigen::Matrix<double, 3, 4> p;
    p.leftCols<3>() = poses[i].q.toRotationMatrix();
    p.col(3) = poses[i].t;
    a.row(2 * i) = uv.x() * p.row(2) - p.row(0);
    a.row(2 * i + 1) = uv.y() * p.row(2) - p.row(1);
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::Vector4d x = svd.matrixV().col(3);
  if (std::abs(x(3)) < 1e-12) return std::nullopt;
  const Eigen::Vector3d point = x.head<3>() / x(3);
  if (!point.allFinite()) return std::nullopt;
  return point;
}

int triangulate_tracks(Reconstruction& recon, const SceneGraph& graph,
                       const TriangulationOptions& options) {
  const double min_angle_rad = options.min_angle_deg * std::numbers::pi / 180.0;
  int added = 0;

  for (size_t track_index = 0; track_index < graph.tracks.size();
       ++track_index) {
    if (recon.track_to_point.count(int(track_index))) continue;
    const Track& track = graph.tracks[track_index];

    std::vector<Pose> poses;
    std::vector<Eigen::Vector2d> observations;
    std::vector<const TrackObservation*> used;
    for (const TrackObservation& obs : track.observations) {
      const auto it = recon.images.find(obs.image_id);
      if (it == recon.images.end()) continue;
      poses.push_back(it->second);
      observations.push_back(obs.xy);
      used.push_back(&obs);
    }
    if (poses.size() < 2) continue;

    const auto point = triangulate_point(poses, recon.intrinsics, observations);
    if (!point) continue;

    // Cheirality in every observing camera.
    bool ok = true;
    for (const Pose& pose : poses) {
      if (pose.apply(*point).z() <= 0.0) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;

    // Reprojection gate.
    for (size_t i = 0; i < poses.size() && ok; ++i) {
      const double err =
          (project(recon.intrinsics, poses[i], *point) - observations[i])
              .norm();
      ok = err <= options.max_reproj_px;
    }
    if (!ok) continue;

    // Minimum pairwise triangulation angle.
    double min_angle = std::numeric_limits<double>::max();
    for (size_t i = 0; i < poses.size(); ++i) {
      for (size_t j = i + 1; j < poses.size(); ++j) {
        min_angle = std::min(min_angle,
                             triangulation_angle(poses[i].center(),
                                                 poses[j].center(), *point));
      }
    }
    if (min_angle < min_angle_rad) continue;

    Point3D new_point;
    new_point.xyz = *point;
    for (const TrackObservation* obs : used) {
      new_point.track.push_back(
          Observation{obs->image_id, obs->feature_index, obs->xy});
    }
    recon.add_point(std::move(new_point), int(track_index));
    ++added;
  }
  recon.update_point_errors();
  return added;
}

}  // namespace evrecon
