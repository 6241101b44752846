#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "evrecon/geometry.hpp"

namespace evrecon {

// One 2D measurement of a 3D point.
struct Observation {
  int image_id = -1;
  int feature_index = -1;
  Eigen::Vector2d xy = Eigen::Vector2d::Zero();
};

struct Point3D {
  Eigen::Vector3d xyz = Eigen::Vector3d::Zero();
  std::vector<Observation> track;  // length >= 2
  double mean_reproj_error = 0.0;
};

// Registered poses, triangulated points and their observations. The gauge
// is fixed by the base image (identity, frozen in refinement) and the
// gauge image whose baseline to the base is held at its initial length.
struct Reconstruction {
  CameraIntrinsics intrinsics;
  bool intrinsics_known = true;

  std::map<int, Pose> images;       // image id -> world-to-camera
  std::map<int, Point3D> points;    // point id -> point
  std::map<int, int> track_to_point;  // scene-graph track -> point id
  int next_point_id = 0;
  int base_image = -1;
  int gauge_image = -1;

  bool is_registered(int image_id) const { return images.count(image_id) > 0; }
  size_t num_observations() const;
  double mean_reprojection_error() const;

  int add_point(Point3D point, int track_index = -1);
  void remove_point(int point_id);

  // Recomputes the cached per-point mean reprojection errors.
  void update_point_errors();
};

double reprojection_error(const Reconstruction& recon, const Point3D& point,
                          const Observation& obs);

// Angle (radians) subtended at the point by the closest camera pair; pi for
// single-observation tracks is never returned (requires >= 2 registered
// observations, else 0).
double min_pairwise_triangulation_angle(const Reconstruction& recon,
                                        const Point3D& point);

// Text export: cameras.txt (id, model, w, h, fx fy cx cy k1), images.txt
// (id, qw qx qy qz, tx ty tz, name + observation list) and points3D.txt
// (id, xyz, error, track pairs).
void write_reconstruction_text(const std::string& directory,
                               const Reconstruction& recon, int sensor_width,
                               int sensor_height);

// Reads the text export back. The base/gauge images default to the two
// lowest registered ids.
Reconstruction read_reconstruction_text(const std::string& directory);

}  // namespace evrecon
