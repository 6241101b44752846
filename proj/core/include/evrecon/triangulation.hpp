#pragma once

#include <optional>
#include <vector>

#include <Eigen/Core>

#include "evrecon/geometry.hpp"
#include "evrecon/reconstruction.hpp"
#include "evrecon/scene_graph.hpp"

namespace evrecon {

// Multi-view linear (DLT) triangulation from pixel observations. Returns
// nullopt for ill-conditioned systems.
std::optional<Eigen::Vector3d> triangulate_point(
    const std::vector<Pose>& poses, const CameraIntrinsics& intrinsics,
    const std::vector<Eigen::Vector2d>& observations);

struct TriangulationOptions {
  double max_reproj_px = 4.0;
  double min_angle_deg = 1.5;
};

// Triangulates every track with >= 2 registered observations and no point
// yet. New points must pass the reprojection, angle and cheirality gates.
// Returns the number of points added.
int triangulate_tracks(Reconstruction& recon, const SceneGraph& graph,
                       const TriangulationOptions& options = {});

}  // namespace evrecon
