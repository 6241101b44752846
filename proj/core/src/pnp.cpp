#include "evrecon/pnp.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

namespace evrecon {

namespace {

// Real roots of a polynomial given by descending coefficients, via the
// companion matrix of the deflated monic polynomial.
std::vector<double> real_roots(std::vector<double> coeffs) {
  // Strip (near-)zero leading coefficients.
  size_t first = 0;
  const double lead_scale = std::max(
      1e-300, std::abs(*std::max_element(coeffs.begin(), coeffs.end(),
                                         [](double a, double b) {
                                           return std::abs(a) < std::abs(b);
                                         })));
  while (first + 1 < coeffs.size() &&
         std::abs(coeffs[first]) < 1e-12 * lead_scale) {
    ++first;
  }
  coeffs.erase(coeffs.begin(), coeffs.begin() + first);
  const int degree = int(coeffs.size()) - 1;
  if (degree < 1) return {};

  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(degree, degree);
  for (int i = 0; i < degree; ++i) {
    companion(0, i) = -coeffs[i + 1] / coeffs[0];
    if (i + 1 < degree) companion(i + 1, i) = 1.0;
  }
  const Eigen::EigenSolver<Eigen::MatrixXd> eig(companion);
  std::vector<double> roots;
  for (int i = 0; i < degree; ++i) {
    const auto root = eig.eigenvalues()(i);
    if (std::abs(root.imag()) < 1e-8 * std::max(1.0, std::abs(root.real()))) {
      // Newton polish against the original polynomial.
      double x = root.real();
      for (int step = 0; step < 3; ++step) {
        double value = 0.0, derivative = 0.0;
        for (const double c : coeffs) {
          derivative = derivative * x + value;
          value = value * x + c;
        }
        if (std::abs(derivative) < 1e-300) break;
        x -= value / derivative;
      }
      roots.push_back(x);
    }
  }
  return roots;
}

// Rigid transform aligning world points onto camera-frame points
// (x_cam = R x_world + t), least squares over the three pairs.
std::optional<Pose> rigid_align(const std::array<Eigen::Vector3d, 3>& world,
                                const std::array<Eigen::Vector3d, 3>& cam) {
  Eigen::Vector3d cw = Eigen::Vector3d::Zero(), cc = Eigen::Vector3d::Zero();
  for (int i = 0; i < 3; ++i) {
    cw += world[i];
    cc += cam[i];
  }
  cw /= 3.0;
  cc /= 3.0;
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (int i = 0; i < 3; ++i) {
    h += (world[i] - cw) * (cam[i] - cc).transpose();
  }
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0
                ? -1.0
                : 1.0;
  const Eigen::Matrix3d r = svd.matrixV() * d * svd.matrixU().transpose();
  if (!r.allFinite()) return std::nullopt;
  Pose pose;
  pose.q = Eigen::Quaterniond(r).normalized();
  pose.t = cc - r * cw;
  return pose;
}

}  // namespace

std::vector<Pose> solve_p3p(const std::array<Eigen::Vector3d, 3>& world,
                            const std::array<Eigen::Vector3d, 3>& bearings) {
  const double aa = (world[1] - world[2]).squaredNorm();
  const double bb = (world[0] - world[2]).squaredNorm();
  const double cc = (world[0] - world[1]).squaredNorm();
  if (aa < 1e-16 || bb < 1e-16 || cc < 1e-16) return {};

  const Eigen::Vector3d f1 = bearings[0].normalized();
  const Eigen::Vector3d f2 = bearings[1].normalized();
  const Eigen::Vector3d f3 = bearings[2].normalized();
  const double ca = f2.dot(f3);  // angle opposite side a
  const double cb = f1.dot(f3);  // opposite b
  const double cg = f1.dot(f2);  // opposite c

  // Quartic in v = s3/s1 from eliminating u = s2/s1 out of the two law-of-
  // cosines ratios (resultant of the Grunert system).
  const double a4 = aa * aa - 2 * aa * bb - 2 * aa * cc + bb * bb -
                    4 * bb * ca * ca * cc + 2 * bb * cc + cc * cc;
  const double a3 =
      4 * (-aa * aa * cb + aa * bb * ca * cg + aa * bb * cb + 2 * aa * cb * cc -
           bb * bb * ca * cg + 2 * bb * ca * ca * cb * cc + bb * ca * cc * cg -
           bb * cb * cc - cb * cc * cc);
  const double a2 =
      2 * (2 * aa * aa * cb * cb + aa * aa - 4 * aa * bb * ca * cb * cg -
           2 * aa * bb * cg * cg - 4 * aa * cb * cb * cc - 2 * aa * cc +
           2 * bb * bb * ca * ca + 2 * bb * bb * cg * cg - bb * bb -
           2 * bb * ca * ca * cc - 4 * bb * ca * cb * cc * cg +
           2 * cb * cb * cc * cc + cc * cc);
  const double a1 =
      4 * (-aa * aa * cb + aa * bb * ca * cg + 2 * aa * bb * cb * cg * cg -
           aa * bb * cb + 2 * aa * cb * cc - bb * bb * ca * cg +
           bb * ca * cc * cg + bb * cb * cc - cb * cc * cc);
  const double a0 = aa * aa - 4 * aa * bb * cg * cg + 2 * aa * bb - 2 * aa * cc +
                    bb * bb - 2 * bb * cc + cc * cc;

  std::vector<Pose> poses;
  for (const double v : real_roots({a4, a3, a2, a1, a0})) {
    if (v <= 0.0) continue;
    const double k = 1.0 + v * v - 2.0 * v * cb;
    if (k <= 1e-14) continue;
    const double s1 = std::sqrt(bb / k);

    // u from the (1,2) constraint: u^2 - 2 u cg + 1 - cc/(s1^2) = 0.
    const double q = 1.0 - cc / (s1 * s1);
    const double disc = cg * cg - q;
    if (disc < 0.0) continue;
    const double root = std::sqrt(disc);
    for (double u : {cg + root, cg - root}) {
      if (u <= 0.0) continue;

      // The resultant coefficients lose precision; polish (u, v) on the
      // original two constraints with a few Newton steps.
      double uu = u, vv = v;
      for (int step = 0; step < 5; ++step) {
        const double kk = 1.0 + vv * vv - 2.0 * vv * cb;
        const double fa_val = (1.0 + uu * uu - 2.0 * uu * cg) * bb - cc * kk;
        const double fb_val =
            (uu * uu + vv * vv - 2.0 * uu * vv * ca) * bb - aa * kk;
        const double ja_u = (2.0 * uu - 2.0 * cg) * bb;
        const double ja_v = -cc * (2.0 * vv - 2.0 * cb);
        const double jb_u = (2.0 * uu - 2.0 * vv * ca) * bb;
        const double jb_v = (2.0 * vv - 2.0 * uu * ca) * bb - aa * (2.0 * vv - 2.0 * cb);
        const double det = ja_u * jb_v - ja_v * jb_u;
        if (std::abs(det) < 1e-300) break;
        uu -= (fa_val * jb_v - ja_v * fb_val) / det;
        vv -= (ja_u * fb_val - fa_val * jb_u) / det;
      }
      if (uu <= 0.0 || vv <= 0.0) continue;
      const double kk = 1.0 + vv * vv - 2.0 * vv * cb;
      if (kk <= 1e-14) continue;
      const double s1p = std::sqrt(bb / kk);

      // Consistency with the remaining (2,3) constraint.
      const double lhs = (uu * uu + vv * vv - 2 * uu * vv * ca) * s1p * s1p;
      if (std::abs(lhs - aa) > 1e-6 * std::max(1.0, aa)) continue;

      const std::array<Eigen::Vector3d, 3> cam = {s1p * f1, (uu * s1p) * f2,
                                                  (vv * s1p) * f3};
      if (auto pose = rigid_align(world, cam)) {
        poses.push_back(*pose);
      }
    }
  }
  return poses;
}

std::optional<PnpResult> estimate_pose(
    const std::vector<Eigen::Vector2d>& pixels,
    const std::vector<Eigen::Vector3d>& world,
    const CameraIntrinsics& intrinsics, const PnpParams& params) {
  const int n = int(pixels.size());
  if (n < 3 || world.size() != pixels.size()) return std::nullopt;

  std::vector<Eigen::Vector3d> bearings(n);
  for (int i = 0; i < n; ++i) {
    bearings[i] = pixel_to_bearing(intrinsics, pixels[i]);
  }

  std::mt19937_64 rng(params.seed ^ 0x503);
  std::uniform_int_distribution<int> index_dist(0, n - 1);

  PnpResult best;
  bool found = false;
  int max_iterations = params.max_iterations;
  for (int iteration = 0;
       iteration < max_iterations || iteration < params.min_iterations;
       ++iteration) {
    if (iteration >= params.max_iterations) break;
    int ia = index_dist(rng), ib = index_dist(rng), ic = index_dist(rng);
    if (ia == ib || ib == ic || ia == ic) continue;

    const std::array<Eigen::Vector3d, 3> sample_world = {world[ia], world[ib],
                                                         world[ic]};
    const std::array<Eigen::Vector3d, 3> sample_bearings = {
        bearings[ia], bearings[ib], bearings[ic]};
    for (const Pose& pose : solve_p3p(sample_world, sample_bearings)) {
      std::vector<int> inliers;
      for (int i = 0; i < n; ++i) {
        const Eigen::Vector3d x_cam = pose.apply(world[i]);
        if (x_cam.z() <= 0.0) continue;
        if ((project_camera(intrinsics, x_cam) - pixels[i]).norm() <=
            params.threshold_px) {
          inliers.push_back(i);
        }
      }
      if (inliers.size() > best.inliers.size()) {
        best.pose = pose;
        best.inliers = std::move(inliers);
        found = true;
        const double w = double(best.inliers.size()) / double(n);
        const double p3 = w * w * w;
        if (p3 > 1.0 - 1e-12) {
          max_iterations = 0;
        } else if (p3 > 0.0) {
          max_iterations = int(std::min(
              double(params.max_iterations),
              std::ceil(std::log(1.0 - params.confidence) /
                        std::log(1.0 - p3))));
        }
      }
    }
  }

  if (!found || int(best.inliers.size()) < params.min_inliers) {
    return std::nullopt;
  }

  // Refine on the inliers, then re-collect them once.
  std::vector<Eigen::Vector2d> in_px;
  std::vector<Eigen::Vector3d> in_world;
  for (int i : best.inliers) {
    in_px.push_back(pixels[i]);
    in_world.push_back(world[i]);
  }
  best.pose = refine_pose(best.pose, in_px, in_world, intrinsics);
  std::vector<int> inliers;
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d x_cam = best.pose.apply(world[i]);
    if (x_cam.z() <= 0.0) continue;
    if ((project_camera(intrinsics, x_cam) - pixels[i]).norm() <=
        params.threshold_px) {
      inliers.push_back(i);
    }
  }
  if (inliers.size() >= best.inliers.size()) best.inliers = std::move(inliers);
  return best;
}

Pose refine_pose(const Pose& initial, const std::vector<Eigen::Vector2d>& pixels,
                 const std::vector<Eigen::Vector3d>& world,
                 const CameraIntrinsics& intrinsics, int max_iterations) {
  const int n = int(pixels.size());
  Pose pose = initial;
  if (n < 3) return pose;

  const auto cost_of = [&](const Pose& p) {
    double cost = 0.0;
    for (int i = 0; i < n; ++i) {
      const Eigen::Vector3d x_cam = p.apply(world[i]);
      if (x_cam.z() <= 1e-9) return std::numeric_limits<double>::max();
      cost += (project_camera(intrinsics, x_cam) - pixels[i]).squaredNorm();
    }
    return cost;
  };

  double lambda = 1e-4;
  double cost = cost_of(pose);
  for (int iteration = 0; iteration < max_iterations; ++iteration) {
    Eigen::Matrix<double, 6, 6> jtj = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> jtr = Eigen::Matrix<double, 6, 1>::Zero();
    const Eigen::Matrix3d r_mat = pose.q.toRotationMatrix();
    for (int i = 0; i < n; ++i) {
      const Eigen::Vector3d x_cam = pose.apply(world[i]);
      if (x_cam.z() <= 1e-9) continue;
      const double z_inv = 1.0 / x_cam.z();
      const Eigen::Vector2d uv = x_cam.hnormalized();
      const double r2 = uv.squaredNorm();
      const double dist = 1.0 + intrinsics.k1 * r2;

      Eigen::Matrix<double, 2, 3> j_uv;
      j_uv << z_inv, 0, -uv.x() * z_inv, 0, z_inv, -uv.y() * z_inv;
      const Eigen::Matrix2d j_dist =
          dist * Eigen::Matrix2d::Identity() +
          2.0 * intrinsics.k1 * uv * uv.transpose();
      Eigen::Matrix2d j_focal = Eigen::Matrix2d::Zero();
      j_focal(0, 0) = intrinsics.fx;
      j_focal(1, 1) = intrinsics.fy;
      const Eigen::Matrix<double, 2, 3> j_cam = j_focal * j_dist * j_uv;

      Eigen::Matrix<double, 2, 6> jac;
      jac.leftCols<3>() = j_cam * (-skew(r_mat * world[i]));
      jac.rightCols<3>() = j_cam;
      const Eigen::Vector2d residual =
          project_camera(intrinsics, x_cam) - pixels[i];
      jtj += jac.transpose() * jac;
      jtr += jac.transpose() * residual;
    }

    bool stepped = false;
    for (int attempt = 0; attempt < 10; ++attempt) {
      Eigen::Matrix<double, 6, 6> damped = jtj;
      damped.diagonal() += lambda * jtj.diagonal();
      const Eigen::Matrix<double, 6, 1> delta = damped.ldlt().solve(-jtr);
      if (!delta.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      Pose trial;
      trial.q = (Eigen::Quaterniond(
                     Eigen::AngleAxisd(delta.head<3>().norm(),
                                       delta.head<3>().norm() > 1e-15
                                           ? delta.head<3>().normalized()
                                           : Eigen::Vector3d::UnitX())) *
                 pose.q)
                    .normalized();
      trial.t = pose.t + delta.tail<3>();
      const double trial_cost = cost_of(trial);
      if (trial_cost < cost) {
        pose = trial;
        const double decrease = (cost - trial_cost) / std::max(cost, 1e-30);
        cost = trial_cost;
        lambda = std::max(lambda * 0.4, 1e-12);
        stepped = true;
        if (decrease < 1e-10) return pose;
        break;
      }
      lambda *= 10.0;
    }
    if (!stepped) break;
  }
  return pose;
}

}  // namespace evrecon
