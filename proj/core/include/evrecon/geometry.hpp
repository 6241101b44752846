#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace evrecon {

// Pinhole camera with a single radial distortion coefficient.
struct CameraIntrinsics {
  double fx = 0, fy = 0;
  double cx = 0, cy = 0;
  double k1 = 0;

  Eigen::Matrix3d matrix() const {
    Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
    k(0, 0) = fx;
    k(1, 1) = fy;
    k(0, 2) = cx;
    k(1, 2) = cy;
    return k;
  }
};

// World-to-camera transform: x_cam = q * X + t.
struct Pose {
  Eigen::Quaterniond q = Eigen::Quaterniond::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  Eigen::Vector3d apply(const Eigen::Vector3d& x_world) const {
    return q * x_world + t;
  }
  Pose inverse() const {
    Pose inv;
    inv.q = q.conjugate();
    inv.t = -(inv.q * t);
    return inv;
  }
  // this ∘ other (apply other first).
  Pose compose(const Pose& other) const {
    Pose out;
    out.q = (q * other.q).normalized();
    out.t = q * other.t + t;
    return out;
  }
  Eigen::Vector3d center() const { return -(q.conjugate() * t); }

  static Pose identity() { return Pose{}; }
};

// Relative transform mapping camera a coordinates into camera b coordinates.
inline Pose relative_pose(const Pose& a, const Pose& b) {
  return b.compose(a.inverse());
}

// Applies the radial model to normalized camera coordinates.
inline Eigen::Vector2d distort(const CameraIntrinsics& intr,
                               const Eigen::Vector2d& uv) {
  const double r2 = uv.squaredNorm();
  return (1.0 + intr.k1 * r2) * uv;
}

// Inverts the radial model by fixed-point iteration (exact for k1 = 0).
Eigen::Vector2d undistort(const CameraIntrinsics& intr,
                          const Eigen::Vector2d& uv_distorted);

// Projects a camera-frame point to pixel coordinates. The caller is
// responsible for checking positive depth.
inline Eigen::Vector2d project_camera(const CameraIntrinsics& intr,
                                      const Eigen::Vector3d& x_cam) {
  const Eigen::Vector2d uv = x_cam.hnormalized();
  const Eigen::Vector2d d = distort(intr, uv);
  return {intr.fx * d.x() + intr.cx, intr.fy * d.y() + intr.cy};
}

// Projects a world point through a pose. see project_camera.
inline Eigen::Vector2d project(const CameraIntrinsics& intr, const Pose& pose,
                               const Eigen::Vector3d& x_world) {
  return project_camera(intr, pose.apply(x_world));
}

inline double depth_in_camera(const Pose& pose, const Eigen::Vector3d& x_world) {
  return pose.apply(x_world).z();
}

// Pixel to unit bearing in the camera frame (undistorts first).
inline Eigen::Vector3d pixel_to_bearing(const CameraIntrinsics& intr,
                                        const Eigen::Vector2d& px) {
  const Eigen::Vector2d d((px.x() - intr.cx) / intr.fx,
                          (px.y() - intr.cy) / intr.fy);
  const Eigen::Vector2d uv = undistort(intr, d);
  return Eigen::Vector3d(uv.x(), uv.y(), 1.0).normalized();
}

// Pixel + depth (camera-frame z) to a camera-frame point.
inline Eigen::Vector3d backproject(const CameraIntrinsics& intr,
                                   const Eigen::Vector2d& px, double depth) {
  const Eigen::Vector2d d((px.x() - intr.cx) / intr.fx,
                          (px.y() - intr.cy) / intr.fy);
  const Eigen::Vector2d uv = undistort(intr, d);
  return depth * Eigen::Vector3d(uv.x(), uv.y(), 1.0);
}

// Angle at X between the rays to two camera centers, in radians.
double triangulation_angle(const Eigen::Vector3d& center_a,
                           const Eigen::Vector3d& center_b,
                           const Eigen::Vector3d& x);

// Rodrigues exponential map.
Eigen::Matrix3d axis_angle_to_matrix(const Eigen::Vector3d& axis_angle);

// Skew-symmetric cross-product matrix [v]x.
inline Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d s;
  s << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return s;
}

// Spherical-linear pose interpolation between two timestamped poses.
Pose interpolate_pose(const Pose& a, const Pose& b, double alpha);

}  // namespace evrecon
