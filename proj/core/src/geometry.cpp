#include "evrecon/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace evrecon {

Eigen::Vector2d undistort(const CameraIntrinsics& intr,
                          const Eigen::Vector2d& uv_distorted) {
  if (intr.k1 == 0.0) return uv_distorted;
  Eigen::Vector2d uv = uv_distorted;
  for (int i = 0; i < 20; ++i) {
    const double r2 = uv.squaredNorm();
    const Eigen::Vector2d next = uv_distorted / (1.0 + intr.k1 * r2);
    if ((next - uv).squaredNorm() < 1e-24) return next;
    uv = next;
  }
  return uv;
}

double triangulation_angle(const Eigen::Vector3d& center_a,
                           const Eigen::Vector3d& center_b,
                           const Eigen::Vector3d& x) {
  const Eigen::Vector3d ray_a = (center_a - x).normalized();
  const Eigen::Vector3d ray_b = (center_b - x).normalized();
  const double c = std::clamp(ray_a.dot(ray_b), -1.0, 1.0);
  return std::acos(c);
}

Eigen::Matrix3d axis_angle_to_matrix(const Eigen::Vector3d& axis_angle) {
  const double angle = axis_angle.norm();
  if (angle < 1e-12) {
    return Eigen::Matrix3d::Identity() + skew(axis_angle);
  }
  return Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix();
}

Pose interpolate_pose(const Pose& a, const Pose& b, double alpha) {
  Pose out;
  out.q = a.q.slerp(alpha, b.q).normalized();
  // Interpolate the camera center, then rebuild the translation.
  const Eigen::Vector3d center = (1.0 - alpha) * a.center() + alpha * b.center();
  out.t = -(out.q * center);
  return out;
}

}  // namespace evrecon
