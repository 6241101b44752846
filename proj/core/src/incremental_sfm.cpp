#include "evrecon/incremental_sfm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "evrecon/errors.hpp"
#include "evrecon/two_view.hpp"

namespace evrecon {

namespace {

Eigen::Matrix3d edge_essential(const SceneEdge& edge,
                               const CameraIntrinsics& intrinsics) {
  if (edge.geometry.model == TwoViewModel::Essential) {
    return edge.geometry.matrix;
  }
  const Eigen::Matrix3d k = intrinsics.matrix();
  return project_to_essential(k.transpose() * edge.geometry.matrix * k);
}

struct CandidateScore {
  int cheirality_votes = 0;
  double median_angle_rad = 0.0;
};

// Triangulates the edge correspondences under one pose candidate and counts
// the points in front of both cameras.
CandidateScore score_candidate(const SceneEdge& edge, const Pose& pose_b,
                               const CameraIntrinsics& intrinsics) {
  CandidateScore score;
  const Pose pose_a;  // identity
  const std::vector<Pose> poses = {pose_a, pose_b};
  std::vector<double> angles;
  for (const auto& [xa, xb] : edge.points) {
    const auto point =
        triangulate_point(poses, intrinsics, {xa, xb});
    if (!point) continue;
    if (point->z() <= 0.0 || pose_b.apply(*point).z() <= 0.0) continue;
    ++score.cheirality_votes;
    angles.push_back(
        triangulation_angle(pose_a.center(), pose_b.center(), *point));
  }
  if (!angles.empty()) {
    std::nth_element(angles.begin(), angles.begin() + angles.size() / 2,
                     angles.end());
    score.median_angle_rad = angles[angles.size() / 2];
  }
  return score;
}

// Best (R, t) for an edge by cheirality vote; returns the winning pose,
// vote counts of best and runner-up, and the winner's median angle.
struct DecompositionResult {
  Pose pose;
  int best_votes = 0;
  int second_votes = 0;
  double median_angle_rad = 0.0;
};

DecompositionResult decompose_edge(const SceneEdge& edge,
                                   const CameraIntrinsics& intrinsics) {
  const Eigen::Matrix3d essential = edge_essential(edge, intrinsics);
  DecompositionResult result;
  for (const Pose& candidate : decompose_essential(essential)) {
    const CandidateScore score = score_candidate(edge, candidate, intrinsics);
    if (score.cheirality_votes > result.best_votes) {
      result.second_votes = result.best_votes;
      result.best_votes = score.cheirality_votes;
      result.pose = candidate;
      result.median_angle_rad = score.median_angle_rad;
    } else if (score.cheirality_votes > result.second_votes) {
      result.second_votes = score.cheirality_votes;
    }
  }
  return result;
}

}  // namespace

std::pair<int, int> select_initial_pair(const SceneGraph& graph,
                                        const CameraIntrinsics& intrinsics,
                                        const SfmOptions& options) {
  const double min_angle =
      options.init_min_median_angle_deg * std::numbers::pi / 180.0;

  std::pair<int, int> best_pair{-1, -1};
  size_t best_inliers = 0;
  double best_angle = 0.0;
  for (const auto& [key, edge] : graph.edges) {
    if (edge.geometry.init_degenerate) continue;
    const DecompositionResult decomposition =
        decompose_edge(edge, intrinsics);
    if (decomposition.best_votes == 0) continue;
    if (decomposition.median_angle_rad < min_angle) continue;

    const size_t inliers = edge.points.size();
    const bool better =
        inliers > best_inliers ||
        (inliers == best_inliers &&
         (decomposition.median_angle_rad > best_angle ||
          (decomposition.median_angle_rad == best_angle && key < best_pair)));
    if (better) {
      best_pair = key;
      best_inliers = inliers;
      best_angle = decomposition.median_angle_rad;
    }
  }
  if (best_pair.first < 0) {
    throw NoValidInitialPair(
        "no non-degenerate edge clears the parallax gate");
  }
  return best_pair;
}

Reconstruction initialize_two_view(const SceneGraph& graph,
                                   const std::pair<int, int>& pair,
                                   const CameraIntrinsics& intrinsics,
                                   const SfmOptions& options) {
  const SceneEdge* edge = graph.edge(pair.first, pair.second);
  if (edge == nullptr) throw NoValidInitialPair("pair has no edge");

  const DecompositionResult decomposition = decompose_edge(*edge, intrinsics);
  if (decomposition.best_votes == 0) {
    throw CheiralityAmbiguity("no candidate places points in front");
  }
  if (double(decomposition.best_votes) <
      options.cheirality_margin * double(decomposition.second_votes)) {
    throw CheiralityAmbiguity(
        "cheirality vote margin below " +
        std::to_string(options.cheirality_margin) + " (" +
        std::to_string(decomposition.best_votes) + " vs " +
        std::to_string(decomposition.second_votes) + ")");
  }

  Reconstruction recon;
  recon.intrinsics = intrinsics;
  recon.base_image = pair.first;
  recon.gauge_image = pair.second;
  Pose pose_b = decomposition.pose;
  pose_b.t.normalize();  // unit baseline fixes the gauge scale
  recon.images[pair.first] = Pose{};
  recon.images[pair.second] = pose_b;

  // Triangulate the inlier correspondences through their tracks.
  const double min_angle_rad =
      options.min_angle_deg * std::numbers::pi / 180.0;
  const std::vector<Pose> poses = {Pose{}, pose_b};
  for (size_t i = 0; i < edge->points.size(); ++i) {
    const auto& [xa, xb] = edge->points[i];
    const auto& [fa, fb] = edge->feature_pairs[i];

    int track_index = -1;
    const auto& track_map = graph.feature_to_track[pair.first];
    const auto it = track_map.find(fa);
    if (it != track_map.end()) track_index = it->second;
    if (track_index >= 0 && recon.track_to_point.count(track_index)) continue;

    const auto point = triangulate_point(poses, intrinsics, {xa, xb});
    if (!point) continue;
    if (point->z() <= 0.0 || pose_b.apply(*point).z() <= 0.0) continue;
    if ((project(intrinsics, poses[0], *point) - xa).norm() >
            options.max_reproj_px ||
        (project(intrinsics, poses[1], *point) - xb).norm() >
            options.max_reproj_px) {
      continue;
    }
    if (triangulation_angle(poses[0].center(), poses[1].center(), *point) <
        min_angle_rad) {
      continue;
    }
    Point3D new_point;
    new_point.xyz = *point;
    new_point.track.push_back(Observation{pair.first, fa, xa});
    new_point.track.push_back(Observation{pair.second, fb, xb});
    recon.add_point(std::move(new_point), track_index);
  }
  recon.update_point_errors();
  return recon;
}

std::pair<int, Pose> register_next_image(Reconstruction& recon,
                                         const SceneGraph& graph,
                                         const SensorGeometry& geometry,
                                         const SfmOptions& options) {
  // 2D-3D correspondences per unregistered image.
  struct Candidate {
    int image_id;
    std::vector<int> point_ids;
    std::vector<int> feature_indices;
    std::vector<Eigen::Vector2d> pixels;
    std::vector<Eigen::Vector3d> world;
    int coverage = 0;
  };
  std::vector<Candidate> candidates;
  for (int image_id = 0; image_id < graph.num_images; ++image_id) {
    if (recon.is_registered(image_id)) continue;
    Candidate candidate;
    candidate.image_id = image_id;
    for (const auto& [feature, track_index] : graph.feature_to_track[image_id]) {
      const auto it = recon.track_to_point.find(track_index);
      if (it == recon.track_to_point.end()) continue;
      const auto point_it = recon.points.find(it->second);
      if (point_it == recon.points.end()) continue;
      // Locate this image's observation inside the track.
      for (const TrackObservation& obs :
           graph.tracks[track_index].observations) {
        if (obs.image_id != image_id) continue;
        candidate.point_ids.push_back(it->second);
        candidate.feature_indices.push_back(obs.feature_index);
        candidate.pixels.push_back(obs.xy);
        candidate.world.push_back(point_it->second.xyz);
        break;
      }
    }
    if (int(candidate.point_ids.size()) >= options.min_2d3d) {
      // 4x4 grid occupancy; spreads ties toward well-covered images.
      std::set<int> cells;
      for (const auto& px : candidate.pixels) {
        const int cx = std::clamp(int(4.0 * px.x() / geometry.width), 0, 3);
        const int cy = std::clamp(int(4.0 * px.y() / geometry.height), 0, 3);
        cells.insert(cy * 4 + cx);
      }
      candidate.coverage = int(cells.size());
      candidates.push_back(std::move(candidate));
    }
  }
  if (candidates.empty()) {
    throw NoRegistrableImage("no unregistered image sees enough points");
  }

  std::sort(candidates.begin(), candidates.end(),
            [](const Candidate& a, const Candidate& b) {
              if (a.point_ids.size() != b.point_ids.size()) {
                return a.point_ids.size() > b.point_ids.size();
              }
              if (a.coverage != b.coverage) return a.coverage > b.coverage;
              return a.image_id < b.image_id;
            });

  for (const Candidate& candidate : candidates) {
    PnpParams pnp = options.pnp;
    pnp.threshold_px = options.max_reproj_px;
    pnp.min_inliers = options.min_2d3d;
    pnp.seed = options.seed ^ (uint64_t(candidate.image_id) << 17);
    const auto result = estimate_pose(candidate.pixels, candidate.world,
                                      recon.intrinsics, pnp);
    if (!result) continue;

    recon.images[candidate.image_id] = result->pose;
    for (int idx : result->inliers) {
      Point3D& point = recon.points.at(candidate.point_ids[idx]);
      bool present = false;
      for (const Observation& obs : point.track) {
        present = present || obs.image_id == candidate.image_id;
      }
      if (!present) {
        point.track.push_back(Observation{candidate.image_id,
                                          candidate.feature_indices[idx],
                                          candidate.pixels[idx]});
      }
    }
    recon.update_point_errors();
    return {candidate.image_id, result->pose};
  }
  throw NoRegistrableImage("pose estimation failed for every candidate");
}

FilterCounts filter_outliers(Reconstruction& recon, double max_reproj_px,
                             double min_angle_deg) {
  FilterCounts counts;
  const double min_angle_rad = min_angle_deg * std::numbers::pi / 180.0;

  for (auto& [point_id, point] : recon.points) {
    auto& track = point.track;
    const auto out_of_bounds = [&](const Observation& obs) {
      const auto it = recon.images.find(obs.image_id);
      if (it == recon.images.end()) return false;  // unregistered: keep
      if (it->second.apply(point.xyz).z() <= 0.0) return true;
      return (project(recon.intrinsics, it->second, point.xyz) - obs.xy)
                 .norm() > max_reproj_px;
    };
    const auto removed = std::remove_if(track.begin(), track.end(),
                                        out_of_bounds);
    counts.observations_removed += int(track.end() - removed);
    track.erase(removed, track.end());
  }

  std::vector<int> to_remove;
  for (const auto& [point_id, point] : recon.points) {
    int registered = 0;
    for (const Observation& obs : point.track) {
      registered += recon.is_registered(obs.image_id) ? 1 : 0;
    }
    if (registered < 2 ||
        min_pairwise_triangulation_angle(recon, point) < min_angle_rad) {
      to_remove.push_back(point_id);
    }
  }
  for (int point_id : to_remove) recon.remove_point(point_id);
  counts.points_removed = int(to_remove.size());
  recon.update_point_errors();
  return counts;
}

Reconstruction run_incremental(const SceneGraph& graph,
                               const std::optional<CameraIntrinsics>& intrinsics,
                               const SensorGeometry& geometry,
                               const SfmOptions& options) {
  CameraIntrinsics k;
  if (intrinsics) {
    k = *intrinsics;
  } else {
    // Self-calibration prior: generic focal, principal point at center.
    k.fx = k.fy = 1.2 * std::max(geometry.width, geometry.height);
    k.cx = 0.5 * (geometry.width - 1);
    k.cy = 0.5 * (geometry.height - 1);
    k.k1 = 0.0;
  }

  const auto pair = select_initial_pair(graph, k, options);
  Reconstruction recon = initialize_two_view(graph, pair, k, options);
  recon.intrinsics_known = intrinsics.has_value();

  BundleOptions global_ba = options.ba;
  global_ba.refine_intrinsics = !recon.intrinsics_known;
  bundle_adjust(recon, global_ba);
  filter_outliers(recon, options.max_reproj_px, options.min_angle_deg);

  TriangulationOptions tri;
  tri.max_reproj_px = options.max_reproj_px;
  tri.min_angle_deg = options.min_angle_deg;

  size_t last_global_size = recon.images.size();
  while (true) {
    int new_image = -1;
    try {
      new_image = register_next_image(recon, graph, geometry, options).first;
    } catch (const NoRegistrableImage&) {
      break;
    }
    triangulate_tracks(recon, graph, tri);

    // Local refinement over the cameras sharing the most points with the
    // newly registered image.
    std::map<int, int> shared;
    for (const auto& [point_id, point] : recon.points) {
      bool sees_new = false;
      for (const Observation& obs : point.track) {
        sees_new = sees_new || obs.image_id == new_image;
      }
      if (!sees_new) continue;
      for (const Observation& obs : point.track) {
        if (obs.image_id != new_image && recon.is_registered(obs.image_id)) {
          shared[obs.image_id]++;
        }
      }
    }
    std::vector<std::pair<int, int>> ranked(shared.begin(), shared.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    std::set<int> free_cameras = {new_image};
    for (const auto& [image_id, count] : ranked) {
      if (int(free_cameras.size()) >= options.local_ba_cameras) break;
      free_cameras.insert(image_id);
    }

    BundleOptions local_ba = options.ba;
    local_ba.refine_intrinsics = false;
    for (const auto& [image_id, pose] : recon.images) {
      if (!free_cameras.count(image_id)) {
        local_ba.constant_cameras.insert(image_id);
      }
    }
    for (const auto& [point_id, point] : recon.points) {
      for (const Observation& obs : point.track) {
        if (free_cameras.count(obs.image_id)) {
          local_ba.variable_points.insert(point_id);
          break;
        }
      }
    }
    if (!local_ba.variable_points.empty() && recon.points.size() >= 4) {
      bundle_adjust(recon, local_ba);
    }
    filter_outliers(recon, options.max_reproj_px, options.min_angle_deg);

    if (double(recon.images.size()) >=
        options.global_ba_growth * double(last_global_size)) {
      bundle_adjust(recon, global_ba);
      filter_outliers(recon, options.max_reproj_px, options.min_angle_deg);
      triangulate_tracks(recon, graph, tri);
      last_global_size = recon.images.size();
    }
  }

  bundle_adjust(recon, global_ba);
  filter_outliers(recon, options.max_reproj_px, options.min_angle_deg);
  return recon;
}

}  // namespace evrecon
