#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "evrecon/features.hpp"
#include "evrecon/geometry.hpp"
#include "evrecon/matching.hpp"

namespace evrecon {

enum class TwoViewModel { Homography, Essential, Fundamental };

// Verified relation of an image pair. The matrix maps a -> b:
// homographies as x_b ~ H x_a, epipolar models as x_b^T M x_a = 0
// (E in normalized camera coordinates, F in pixels).
struct TwoViewGeometry {
  TwoViewModel model = TwoViewModel::Fundamental;
  Eigen::Matrix3d matrix = Eigen::Matrix3d::Zero();
  std::vector<int> inliers;  // indices into the match list
  // H explains (almost) as much as E/F: rotation-only or planar pair,
  // unusable for initialization.
  bool init_degenerate = false;
  int num_h_inliers = 0;
  int num_ef_inliers = 0;
};

struct VerifyParams {
  double h_threshold_px = 2.0;    // symmetric transfer error
  double ef_threshold_px = 1.5;   // Sampson distance
  double confidence = 0.999;
  int max_iterations = 10000;
  int min_iterations = 50;
  int min_inliers = 15;
  double h_dominance = 0.9;       // H count >= 0.9 * EF count flags the pair
  uint64_t seed = 0;
};

// RANSAC verification of tentative matches. Runs a homography hypothesis
// and an epipolar hypothesis (essential when intrinsics are given, else
// fundamental) and keeps the epipolar model unless the pair is
// H-dominated. Returns nullopt when the best model has too few inliers.
// Throws DegenerateConfiguration when the correspondences are collinear or
// coincident.
std::optional<TwoViewGeometry> verify_pair(
    const MatchSet& matches, const FeatureSet& fa, const FeatureSet& fb,
    const std::optional<CameraIntrinsics>& intrinsics,
    const VerifyParams& params = {});

// Point-set estimators, exposed for tests and refits.
std::optional<Eigen::Matrix3d> estimate_homography(
    const std::vector<Eigen::Vector2d>& a, const std::vector<Eigen::Vector2d>& b);
std::optional<Eigen::Matrix3d> estimate_fundamental(
    const std::vector<Eigen::Vector2d>& a, const std::vector<Eigen::Vector2d>& b);

// Residuals in pixels.
double homography_transfer_error(const Eigen::Matrix3d& h,
                                 const Eigen::Vector2d& a,
                                 const Eigen::Vector2d& b);
double sampson_error(const Eigen::Matrix3d& f, const Eigen::Vector2d& a,
                     const Eigen::Vector2d& b);

// Projects an arbitrary 3x3 matrix onto the essential manifold (two equal
// singular values, third zero).
Eigen::Matrix3d project_to_essential(const Eigen::Matrix3d& e);

// The four (R, t) factorizations of an essential matrix, ||t|| = 1.
std::vector<Pose> decompose_essential(const Eigen::Matrix3d& e);

// Composes E = [t]x R from the relative pose a -> b.
Eigen::Matrix3d essential_from_pose(const Pose& relative);

}  // namespace evrecon
