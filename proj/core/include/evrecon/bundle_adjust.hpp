#pragma once

#include <set>
#include <vector>

#include "evrecon/reconstruction.hpp"

namespace evrecon {

struct BundleOptions {
  int max_iterations = 100;
  double function_tolerance = 1e-6;   // relative cost decrease
  double gradient_tolerance = 1e-10;  // infinity norm of the gradient
  double cauchy_scale_px = 2.0;       // robust loss scale
  bool refine_intrinsics = false;     // shared fx fy cx cy k1 block
  // Freeze the base image and hold the base-to-gauge baseline length.
  bool fix_gauge = true;
  std::set<int> constant_cameras;
  // Empty means every point is variable.
  std::set<int> variable_points;
};

struct BundleSummary {
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  bool converged = false;
  // Costs after each accepted step; non-increasing by construction.
  std::vector<double> accepted_costs;
};

// Joint Levenberg-Marquardt refinement of poses, points and (optionally)
// shared intrinsics under a Cauchy robust loss, solved through point-block
// elimination (reduced camera system). Throws NumericalFailure if the
// normal equations stay indefinite through the full damping escalation.
BundleSummary bundle_adjust(Reconstruction& recon,
                            const BundleOptions& options = {});

// Robust cost of the current configuration, as used by bundle_adjust.
double bundle_cost(const Reconstruction& recon, double cauchy_scale_px);

// Analytic linearization of one pixel residual r = project(P, X) - x.
// Rotation uses the left axis-angle chart R(d) = exp([d]x) R; intrinsics
// order is [fx, fy, cx, cy, k1].
struct ResidualJacobian {
  Eigen::Vector2d residual = Eigen::Vector2d::Zero();
  Eigen::Matrix<double, 2, 3> d_rotation;
  Eigen::Matrix<double, 2, 3> d_translation;
  Eigen::Matrix<double, 2, 3> d_point;
  Eigen::Matrix<double, 2, 5> d_intrinsics;
  bool valid = false;  // false when the point sits behind the camera
};

ResidualJacobian evaluate_residual_jacobian(const CameraIntrinsics& intrinsics,
                                            const Pose& pose,
                                            const Eigen::Vector3d& point,
                                            const Eigen::Vector2d& measured);

}  // namespace evrecon
