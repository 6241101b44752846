#pragma once

// Synthetic multi-view rigs shared by the SfM, MVS and acceptance tests.

#include <random>
#include <vector>

#include <Eigen/Dense>

#include "evrecon/reconstruction.hpp"
#include "evrecon/scene_graph.hpp"
#include "evrecon/simulator.hpp"
#include "evrecon/two_view.hpp"

namespace evrecon::testutil {

struct SyntheticRig {
  CameraIntrinsics intrinsics;
  SensorGeometry geometry;
  std::vector<Pose> poses;              // world-to-camera, camera 0 = identity
  std::vector<Eigen::Vector3d> points;  // world points
};

// Orbit of cameras around a random point cloud. Poses are re-expressed so
// camera 0 is the identity and the 0-1 baseline has unit length.
inline SyntheticRig make_rig(int num_cameras, int num_points, uint64_t seed,
                             double arc_deg = 60.0) {
  SyntheticRig rig;
  rig.geometry = {346, 260};
  rig.intrinsics = {320.0, 320.0, 172.5, 129.5, 0.0};

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Eigen::Vector3d target(0.0, 0.0, 0.0);
  const auto trajectory =
      orbit_trajectory(target, 6.0, 1.0, arc_deg, num_cameras, 1'000'000);
  for (const TimedPose& tp : trajectory) rig.poses.push_back(tp.pose);

  for (int i = 0; i < num_points; ++i) {
    rig.points.emplace_back(2.0 * u(rng), 2.0 * u(rng), 2.0 * u(rng));
  }

  // Gauge normalization: express the world in camera 0's frame and scale
  // the 0-1 baseline to unit length. Points follow the same similarity.
  const Pose p0 = rig.poses[0];
  const Pose inv0 = p0.inverse();
  for (Pose& pose : rig.poses) pose = pose.compose(inv0);
  const double baseline = rig.poses[1].t.norm();
  for (Pose& pose : rig.poses) pose.t /= baseline;
  for (Eigen::Vector3d& x : rig.points) x = p0.apply(x) / baseline;
  return rig;
}

inline bool visible(const SyntheticRig& rig, int camera, int point,
                    Eigen::Vector2d* px = nullptr) {
  const Eigen::Vector3d x_cam = rig.poses[camera].apply(rig.points[point]);
  if (x_cam.z() <= 0.1) return false;
  const Eigen::Vector2d p = project_camera(rig.intrinsics, x_cam);
  if (p.x() < 1.0 || p.x() > rig.geometry.width - 2.0 || p.y() < 1.0 ||
      p.y() > rig.geometry.height - 2.0) {
    return false;
  }
  if (px) *px = p;
  return true;
}

// Ground-truth reconstruction with exact (optionally noised) observations.
// Feature indices match scene_graph_from_rig (per-image running count over
// visible points).
inline Reconstruction reconstruction_from_rig(const SyntheticRig& rig,
                                              double noise_px = 0.0,
                                              uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, noise_px);
  Reconstruction recon;
  recon.intrinsics = rig.intrinsics;
  recon.base_image = 0;
  recon.gauge_image = 1;
  for (size_t c = 0; c < rig.poses.size(); ++c) {
    recon.images[int(c)] = rig.poses[c];
  }
  std::vector<int> feature_counter(rig.poses.size(), 0);
  for (size_t p = 0; p < rig.points.size(); ++p) {
    Point3D point;
    point.xyz = rig.points[p];
    for (size_t c = 0; c < rig.poses.size(); ++c) {
      Eigen::Vector2d px;
      if (!visible(rig, int(c), int(p), &px)) continue;
      const int feature_index = feature_counter[c]++;
      if (noise_px > 0.0) px += Eigen::Vector2d(noise(rng), noise(rng));
      point.track.push_back(Observation{int(c), feature_index, px});
    }
    if (point.track.size() >= 2) {
      recon.add_point(std::move(point));
    }
  }
  recon.update_point_errors();
  return recon;
}

// Connects reconstruction points to the graph's tracks through their first
// observation, enabling registration and triangulation bookkeeping.
inline void link_tracks(Reconstruction& recon, const SceneGraph& graph) {
  for (const auto& [point_id, point] : recon.points) {
    for (const Observation& obs : point.track) {
      const auto& map = graph.feature_to_track[obs.image_id];
      const auto it = map.find(obs.feature_index);
      if (it != map.end()) {
        recon.track_to_point[it->second] = point_id;
        break;
      }
    }
  }
}

// Scene graph with ground-truth correspondences: every co-visible image
// pair becomes an Essential edge whose inliers are the shared points.
inline SceneGraph scene_graph_from_rig(const SyntheticRig& rig) {
  const int num_cameras = int(rig.poses.size());
  const int num_points = int(rig.points.size());

  // Feature indices: per image, visible points in point order.
  std::vector<std::vector<int>> feature_of(num_cameras,
                                           std::vector<int>(num_points, -1));
  std::vector<std::vector<Eigen::Vector2d>> pixel_of(num_cameras);
  std::vector<FeatureSet> features(num_cameras);
  for (int c = 0; c < num_cameras; ++c) {
    features[c].image_id = c;
    for (int p = 0; p < num_points; ++p) {
      Eigen::Vector2d px;
      if (!visible(rig, c, p, &px)) continue;
      feature_of[c][p] = int(features[c].features.size());
      Feature f;
      f.x = px.x();
      f.y = px.y();
      f.descriptor.fill(0.0f);
      f.descriptor[0] = 1.0f;
      features[c].features.push_back(f);
      pixel_of[c].push_back(px);
    }
  }

  std::vector<VerifiedPair> pairs;
  for (int a = 0; a < num_cameras; ++a) {
    for (int b = a + 1; b < num_cameras; ++b) {
      VerifiedPair pair;
      pair.matches.image_a = a;
      pair.matches.image_b = b;
      for (int p = 0; p < num_points; ++p) {
        if (feature_of[a][p] < 0 || feature_of[b][p] < 0) continue;
        pair.matches.matches.emplace_back(feature_of[a][p], feature_of[b][p]);
      }
      if (pair.matches.matches.size() < 15) continue;
      pair.geometry.model = TwoViewModel::Essential;
      pair.geometry.matrix =
          essential_from_pose(relative_pose(rig.poses[a], rig.poses[b]));
      pair.geometry.inliers.resize(pair.matches.matches.size());
      for (size_t i = 0; i < pair.geometry.inliers.size(); ++i) {
        pair.geometry.inliers[i] = int(i);
      }
      pair.geometry.num_ef_inliers = int(pair.geometry.inliers.size());
      pairs.push_back(std::move(pair));
    }
  }
  return build_scene_graph(num_cameras, pairs, features);
}

// Similarity alignment (rotation, translation, scale) of estimated camera
// centers onto ground truth, via Umeyama.
struct Alignment {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double scale = 1.0;

  Eigen::Vector3d apply(const Eigen::Vector3d& x) const {
    return scale * (rotation * x) + translation;
  }
};

inline Alignment align_similarity(const std::vector<Eigen::Vector3d>& from,
                                  const std::vector<Eigen::Vector3d>& to) {
  Eigen::Matrix3Xd src(3, from.size()), dst(3, to.size());
  for (size_t i = 0; i < from.size(); ++i) src.col(i) = from[i];
  for (size_t i = 0; i < to.size(); ++i) dst.col(i) = to[i];
  const Eigen::Matrix4d t = Eigen::umeyama(src, dst, true);
  Alignment out;
  const Eigen::Matrix3d sr = t.topLeftCorner<3, 3>();
  out.scale = std::cbrt(sr.determinant());
  out.rotation = sr / out.scale;
  out.translation = t.topRightCorner<3, 1>();
  return out;
}

// Gauge similarity anchored on the camera orientations (orthogonal
// Procrustes over rotations, then scale/translation from the centers).
// Center-only fits twist freely about near-collinear trajectories, which
// makes orientation comparisons meaningless there.
inline Alignment align_similarity_with_rotations(
    const std::vector<Pose>& estimated, const std::vector<Pose>& truth) {
  Eigen::Matrix3d acc = Eigen::Matrix3d::Zero();
  for (size_t i = 0; i < estimated.size(); ++i) {
    acc += truth[i].q.toRotationMatrix().transpose() *
           estimated[i].q.toRotationMatrix();
  }
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      acc, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0
                ? -1.0
                : 1.0;
  Alignment out;
  out.rotation = svd.matrixU() * d * svd.matrixV().transpose();

  Eigen::Vector3d mean_e = Eigen::Vector3d::Zero();
  Eigen::Vector3d mean_t = Eigen::Vector3d::Zero();
  for (size_t i = 0; i < estimated.size(); ++i) {
    mean_e += estimated[i].center();
    mean_t += truth[i].center();
  }
  mean_e /= double(estimated.size());
  mean_t /= double(truth.size());
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < estimated.size(); ++i) {
    num += (truth[i].center() - mean_t)
               .dot(out.rotation * (estimated[i].center() - mean_e));
    den += (estimated[i].center() - mean_e).squaredNorm();
  }
  out.scale = den > 0.0 ? num / den : 1.0;
  out.translation = mean_t - out.scale * (out.rotation * mean_e);
  return out;
}

}  // namespace evrecon::testutil
