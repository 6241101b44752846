#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "evrecon/geometry.hpp"

namespace evrecon {

// Minimal absolute-pose solver (three 2D-3D correspondences): distances
// from the classical quartic, then rigid alignment. Returns up to four
// world-to-camera candidates.
std::vector<Pose> solve_p3p(const std::array<Eigen::Vector3d, 3>& world,
                            const std::array<Eigen::Vector3d, 3>& bearings);

struct PnpParams {
  double threshold_px = 4.0;
  double confidence = 0.999;
  int max_iterations = 10000;
  int min_iterations = 50;
  int min_inliers = 12;
  uint64_t seed = 0;
};

struct PnpResult {
  Pose pose;
  std::vector<int> inliers;
};

// P3P within RANSAC over 2D-3D correspondences, followed by a per-image
// Levenberg-Marquardt refinement on the inliers.
std::optional<PnpResult> estimate_pose(
    const std::vector<Eigen::Vector2d>& pixels,
    const std::vector<Eigen::Vector3d>& world,
    const CameraIntrinsics& intrinsics, const PnpParams& params = {});

// Minimizes the reprojection error of one pose over the given
// correspondences (plain least squares, fixed intrinsics and points).
Pose refine_pose(const Pose& initial, const std::vector<Eigen::Vector2d>& pixels,
                 const std::vector<Eigen::Vector3d>& world,
                 const CameraIntrinsics& intrinsics, int max_iterations = 30);

}  // namespace evrecon
