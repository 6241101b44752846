#pragma once

#include <vector>

#include <Eigen/Core>

namespace evrecon {

// Minimal essential-matrix solver. Takes >= 5 correspondences in normalized
// camera coordinates (x_b^T E x_a = 0) and returns up to 10 real candidates.
std::vector<Eigen::Matrix3d> five_point_essential(
    const std::vector<Eigen::Vector2d>& points_a,
    const std::vector<Eigen::Vector2d>& points_b);

}  // namespace evrecon
