#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "evrecon/image.hpp"
#include "evrecon/reconstruction.hpp"

namespace evrecon {

// Per-pixel depth, normal (reference-camera frame, facing the camera) and
// matching cost. Depth 0 marks invalid pixels.
struct DepthMap {
  int ref_id = -1;
  ImageF depth;
  Grid<Eigen::Vector3f> normal;
  ImageF cost;
};

struct StereoParams {
  int window_radius = 5;
  int iterations = 3;
  double d_min = 0.0;
  double d_max = 0.0;
  double cost_gate = 0.6;  // invalidate pixels whose final cost exceeds this
  uint64_t seed = 0;
};

// One registered view handed to the stereo stage.
struct StereoView {
  int image_id = -1;
  const ImageF* image = nullptr;
  Pose pose;
};

// Top-k source views by shared sparse-point count, restricted to median
// triangulation angles inside [2, 45] degrees. Throws NoUsableNeighbors.
std::vector<int> select_stereo_neighbors(const Reconstruction& recon,
                                         int ref_id, int k = 4);

// Depth search range for a reference view: [0.25x, 4x] the depth range of
// its visible sparse points.
std::pair<double, double> sparse_depth_range(const Reconstruction& recon,
                                             int ref_id);

// PatchMatch stereo: random slanted-plane initialization, alternating
// forward/backward raster propagation and shrinking random refinement.
// Cost is the mean over neighbors of 1 - NCC computed through the
// plane-induced homography.
DepthMap patchmatch_depth(const StereoView& ref,
                          const std::vector<StereoView>& neighbors,
                          const CameraIntrinsics& intrinsics,
                          const StereoParams& params);

// Homography mapping reference pixels to source pixels for the plane with
// the given camera-frame anchor point and normal.
Eigen::Matrix3d plane_homography(const CameraIntrinsics& intrinsics,
                                 const Pose& ref_to_src,
                                 const Eigen::Vector3d& anchor_ref_cam,
                                 const Eigen::Vector3d& normal_ref_cam);

struct FusionParams {
  int min_support = 2;            // other views agreeing with the pixel
  double max_reproj_px = 1.0;
  double max_rel_depth_diff = 0.01;
};

struct DensePoint {
  Eigen::Vector3d xyz = Eigen::Vector3d::Zero();
  Eigen::Vector3f normal = Eigen::Vector3f::Zero();
  std::array<uint8_t, 3> color = {0, 0, 0};
  int support = 0;
};

struct DensePointCloud {
  std::vector<DensePoint> points;
};

// Multi-view consistency fusion: a pixel becomes a point when enough other
// views re-project it within tolerance; supporting pixels are consumed so
// each surface patch is emitted once.
DensePointCloud fuse_depth_maps(const std::vector<DepthMap>& depth_maps,
                                const std::vector<StereoView>& views,
                                const CameraIntrinsics& intrinsics,
                                const FusionParams& params = {});

}  // namespace evrecon
