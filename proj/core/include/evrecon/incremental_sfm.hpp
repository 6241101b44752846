#pragma once

#include <optional>
#include <utility>

#include "evrecon/bundle_adjust.hpp"
#include "evrecon/events.hpp"
#include "evrecon/pnp.hpp"
#include "evrecon/reconstruction.hpp"
#include "evrecon/scene_graph.hpp"
#include "evrecon/triangulation.hpp"

namespace evrecon {

struct SfmOptions {
  double init_min_median_angle_deg = 3.0;  // initial-pair parallax gate
  double cheirality_margin = 1.2;          // best/second candidate vote ratio
  int min_2d3d = 12;                       // registration correspondence floor
  double max_reproj_px = 4.0;
  double min_angle_deg = 1.5;
  int local_ba_cameras = 5;
  double global_ba_growth = 1.25;  // global BA when the model grows this much
  uint64_t seed = 0;
  PnpParams pnp;
  BundleOptions ba;
};

// The edge maximizing inlier count among edges whose median triangulation
// angle clears the gate; ties broken by larger median angle, then lower
// image-id pair. Throws NoValidInitialPair.
std::pair<int, int> select_initial_pair(const SceneGraph& graph,
                                        const CameraIntrinsics& intrinsics,
                                        const SfmOptions& options = {});

// Two-view seed: essential decomposition with a cheirality vote, gauge
// fixed at camera a = identity and unit baseline. Throws
// CheiralityAmbiguity when no candidate wins by the required margin.
Reconstruction initialize_two_view(const SceneGraph& graph,
                                   const std::pair<int, int>& pair,
                                   const CameraIntrinsics& intrinsics,
                                   const SfmOptions& options = {});

// Registers the best next image by P3P within RANSAC + pose refinement and
// extends the observation lists. Throws NoRegistrableImage.
std::pair<int, Pose> register_next_image(Reconstruction& recon,
                                         const SceneGraph& graph,
                                         const SensorGeometry& geometry,
                                         const SfmOptions& options = {});

struct FilterCounts {
  int observations_removed = 0;
  int points_removed = 0;
};

// Drops observations over the reprojection bound and points whose track
// falls under two registered observations or under the angle floor.
FilterCounts filter_outliers(Reconstruction& recon, double max_reproj_px = 4.0,
                             double min_angle_deg = 1.5);

// Full incremental loop: initialize, then register/triangulate/local-BA/
// filter with periodic global refinement. Unregistered images are simply
// absent from the result.
Reconstruction run_incremental(const SceneGraph& graph,
                               const std::optional<CameraIntrinsics>& intrinsics,
                               const SensorGeometry& geometry,
                               const SfmOptions& options = {});

}  // namespace evrecon
