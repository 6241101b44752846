#include "evrecon/bundle_adjust.hpp"

#include <cmath>
#include <unordered_map>

#include <Eigen/Dense>

#include "evrecon/errors.hpp"

namespace evrecon {

namespace {

// Cauchy loss rho(s) = c^2 log(1 + s/c^2) on squared residual norms; the
// IRLS weight is rho'(s) = 1 / (1 + s/c^2).
double cauchy_cost(double squared_norm, double scale) {
  const double c2 = scale * scale;
  return c2 * std::log1p(squared_norm / c2);
}
double cauchy_weight(double squared_norm, double scale) {
  const double c2 = scale * scale;
  return 1.0 / (1.0 + squared_norm / c2);
}

struct CameraBlock {
  int image_id = -1;
  int offset = 0;   // column offset in the reduced system
  int size = 0;     // 0 frozen, 5 gauge (rot + baseline direction), 6 free
  Eigen::Vector3d gauge_b1, gauge_b2;  // tangent basis for the gauge chart
};

struct ObservationRef {
  int camera_index;   // into camera blocks
  int point_id;
  Eigen::Vector2d measured;
};

struct State {
  std::unordered_map<int, Pose> poses;
  std::unordered_map<int, Eigen::Vector3d> points;
  CameraIntrinsics intrinsics;
};

State capture(const Reconstruction& recon) {
  State state;
  state.intrinsics = recon.intrinsics;
  for (const auto& [id, pose] : recon.images) state.poses[id] = pose;
  for (const auto& [id, point] : recon.points) state.points[id] = point.xyz;
  return state;
}

void restore(Reconstruction& recon, const State& state) {
  recon.intrinsics = state.intrinsics;
  for (auto& [id, pose] : recon.images) pose = state.poses.at(id);
  for (auto& [id, point] : recon.points) point.xyz = state.points.at(id);
}

double evaluate_cost(const Reconstruction& recon,
                     const std::vector<ObservationRef>& observations,
                     const std::vector<CameraBlock>& cameras, double scale) {
  double cost = 0.0;
  for (const ObservationRef& obs : observations) {
    const Pose& pose = recon.images.at(cameras[obs.camera_index].image_id);
    const Eigen::Vector3d x_cam = pose.apply(recon.points.at(obs.point_id).xyz);
    if (x_cam.z() <= 1e-9) {
      // A point crossing the image plane makes this step unusable.
      return std::numeric_limits<double>::max();
    }
    const Eigen::Vector2d r =
        project_camera(recon.intrinsics, x_cam) - obs.measured;
    cost += cauchy_cost(r.squaredNorm(), scale);
  }
  return cost;
}

}  // namespace

ResidualJacobian evaluate_residual_jacobian(const CameraIntrinsics& intrinsics,
                                            const Pose& pose,
                                            const Eigen::Vector3d& point,
                                            const Eigen::Vector2d& measured) {
  ResidualJacobian out;
  const Eigen::Vector3d x_cam = pose.apply(point);
  if (x_cam.z() <= 1e-9) return out;

  const double z_inv = 1.0 / x_cam.z();
  const Eigen::Vector2d uv = x_cam.hnormalized();
  const double r2 = uv.squaredNorm();
  const double dist = 1.0 + intrinsics.k1 * r2;

  Eigen::Matrix<double, 2, 3> j_uv;
  j_uv << z_inv, 0, -uv.x() * z_inv, 0, z_inv, -uv.y() * z_inv;
  const Eigen::Matrix2d j_dist = dist * Eigen::Matrix2d::Identity() +
                                 2.0 * intrinsics.k1 * uv * uv.transpose();
  Eigen::Matrix2d j_focal = Eigen::Matrix2d::Zero();
  j_focal(0, 0) = intrinsics.fx;
  j_focal(1, 1) = intrinsics.fy;
  const Eigen::Matrix<double, 2, 3> j_xcam = j_focal * j_dist * j_uv;

  out.residual = project_camera(intrinsics, x_cam) - measured;
  out.d_rotation = j_xcam * (-skew(x_cam - pose.t));
  out.d_translation = j_xcam;
  out.d_point = j_xcam * pose.q.toRotationMatrix();
  const Eigen::Vector2d pd = dist * uv;
  out.d_intrinsics.setZero();
  out.d_intrinsics(0, 0) = pd.x();
  out.d_intrinsics(1, 1) = pd.y();
  out.d_intrinsics(0, 2) = 1.0;
  out.d_intrinsics(1, 3) = 1.0;
  out.d_intrinsics(0, 4) = intrinsics.fx * r2 * uv.x();
  out.d_intrinsics(1, 4) = intrinsics.fy * r2 * uv.y();
  out.valid = true;
  return out;
}

double bundle_cost(const Reconstruction& recon, double cauchy_scale_px) {
  double cost = 0.0;
  for (const auto& [id, point] : recon.points) {
    for (const Observation& obs : point.track) {
      const auto it = recon.images.find(obs.image_id);
      if (it == recon.images.end()) continue;
      const Eigen::Vector3d x_cam = it->second.apply(point.xyz);
      if (x_cam.z() <= 1e-9) {
        cost += cauchy_cost(1e12, cauchy_scale_px);
        continue;
      }
      const Eigen::Vector2d r =
          project_camera(recon.intrinsics, x_cam) - obs.xy;
      cost += cauchy_cost(r.squaredNorm(), cauchy_scale_px);
    }
  }
  return cost;
}

BundleSummary bundle_adjust(Reconstruction& recon,
                            const BundleOptions& options) {
  BundleSummary summary;
  if (recon.images.size() < 2 || recon.points.size() < 4) {
    throw std::invalid_argument("bundle adjustment needs >= 2 cameras, >= 4 points");
  }

  // Camera parameter blocks. The base image is frozen; the gauge image
  // keeps its translation norm (baseline) through a 2-parameter tangent
  // chart on the sphere.
  std::vector<CameraBlock> camera_blocks;
  std::unordered_map<int, int> camera_index;
  int offset = 0;
  for (const auto& [id, pose] : recon.images) {
    CameraBlock block;
    block.image_id = id;
    const bool frozen =
        options.constant_cameras.count(id) > 0 ||
        (options.fix_gauge && id == recon.base_image);
    const bool gauge = options.fix_gauge && id == recon.gauge_image &&
                       pose.t.norm() > 1e-9 && !frozen;
    block.size = frozen ? 0 : (gauge ? 5 : 6);
    block.offset = offset;
    offset += block.size;
    camera_index[id] = int(camera_blocks.size());
    camera_blocks.push_back(block);
  }
  const int intrinsics_offset = offset;
  const int intrinsics_size = options.refine_intrinsics ? 5 : 0;
  const int reduced_size = offset + intrinsics_size;

  const auto point_variable = [&](int point_id) {
    return options.variable_points.empty() ||
           options.variable_points.count(point_id) > 0;
  };

  // Flatten observations of registered images.
  std::vector<ObservationRef> observations;
  for (const auto& [point_id, point] : recon.points) {
    for (const Observation& obs : point.track) {
      const auto it = camera_index.find(obs.image_id);
      if (it == camera_index.end()) continue;
      observations.push_back(ObservationRef{it->second, point_id, obs.xy});
    }
  }
  if (observations.empty()) return summary;

  const double scale = options.cauchy_scale_px;
  double cost = evaluate_cost(recon, observations, camera_blocks, scale);
  summary.initial_cost = cost;
  summary.accepted_costs.push_back(cost);

  // Point bookkeeping: contiguous indices for variable points.
  std::vector<int> point_ids;
  std::unordered_map<int, int> point_slot;
  for (const auto& [id, point] : recon.points) {
    if (point_variable(id)) {
      point_slot[id] = int(point_ids.size());
      point_ids.push_back(id);
    }
  }

  double lambda = 1e-4;

  for (int iteration = 0; iteration < options.max_iterations; ++iteration) {
    // Refresh the gauge tangent basis at the linearization point.
    for (CameraBlock& block : camera_blocks) {
      if (block.size != 5) continue;
      const Eigen::Vector3d t = recon.images.at(block.image_id).t;
      const Eigen::Vector3d unit = t.normalized();
      block.gauge_b1 = unit.unitOrthogonal();
      block.gauge_b2 = unit.cross(block.gauge_b1);
    }

    // Linearize every observation.
    struct LinearizedObs {
      int camera_index;
      int point_id;
      Eigen::Matrix<double, 2, 6> j_cam;  // only leading block.size columns used
      Eigen::Matrix<double, 2, 3> j_point;
      Eigen::Matrix<double, 2, 5> j_intr;
      Eigen::Vector2d residual;
    };
    std::vector<LinearizedObs> linearized;
    linearized.reserve(observations.size());

    Eigen::VectorXd gradient_cameras = Eigen::VectorXd::Zero(reduced_size);
    std::vector<Eigen::Vector3d> gradient_points(point_ids.size(),
                                                 Eigen::Vector3d::Zero());

    const CameraIntrinsics& intr = recon.intrinsics;
    for (const ObservationRef& obs : observations) {
      const CameraBlock& block = camera_blocks[obs.camera_index];
      const Pose& pose = recon.images.at(block.image_id);
      const Eigen::Vector3d x_world = recon.points.at(obs.point_id).xyz;
      const ResidualJacobian rj =
          evaluate_residual_jacobian(intr, pose, x_world, obs.measured);
      if (!rj.valid) continue;

      LinearizedObs lin;
      lin.camera_index = obs.camera_index;
      lin.point_id = obs.point_id;
      lin.residual = rj.residual;

      const double weight = cauchy_weight(lin.residual.squaredNorm(), scale);
      const double sw = std::sqrt(weight);

      lin.j_point = sw * rj.d_point;
      if (block.size > 0) {
        lin.j_cam.setZero();
        lin.j_cam.leftCols<3>() = sw * rj.d_rotation;
        if (block.size == 6) {
          lin.j_cam.middleCols<3>(3) = sw * rj.d_translation;
        } else {  // gauge chart: t rotates about two tangent axes
          lin.j_cam.col(3) =
              sw * rj.d_translation * block.gauge_b1.cross(pose.t);
          lin.j_cam.col(4) =
              sw * rj.d_translation * block.gauge_b2.cross(pose.t);
        }
      }
      if (intrinsics_size > 0) {
        lin.j_intr = sw * rj.d_intrinsics;
      }
      lin.residual *= sw;

      if (block.size > 0) {
        gradient_cameras.segment(block.offset, block.size) +=
            lin.j_cam.leftCols(block.size).transpose() * lin.residual;
      }
      if (intrinsics_size > 0) {
        gradient_cameras.segment(intrinsics_offset, 5) +=
            lin.j_intr.transpose() * lin.residual;
      }
      const auto slot = point_slot.find(obs.point_id);
      if (slot != point_slot.end()) {
        gradient_points[slot->second] += lin.j_point.transpose() * lin.residual;
      }
      linearized.push_back(std::move(lin));
    }

    // Gradient convergence check (infinity norm over all parameters).
    double gradient_max = gradient_cameras.size() > 0
                              ? gradient_cameras.cwiseAbs().maxCoeff()
                              : 0.0;
    for (const Eigen::Vector3d& g : gradient_points) {
      gradient_max = std::max(gradient_max, g.cwiseAbs().maxCoeff());
    }
    if (gradient_max < options.gradient_tolerance) {
      summary.converged = true;
      break;
    }

    // Raw normal-equation pieces (undamped), assembled once per iteration.
    Eigen::MatrixXd u = Eigen::MatrixXd::Zero(reduced_size, reduced_size);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(reduced_size);
    struct PointSystem {
      Eigen::Matrix3d v = Eigen::Matrix3d::Zero();
      Eigen::Vector3d g = Eigen::Vector3d::Zero();
      // Coupling blocks against camera/intrinsics columns.
      std::vector<std::pair<int, Eigen::Matrix<double, -1, 3>>> couplings;
    };
    std::unordered_map<int, PointSystem> point_systems;
    point_systems.reserve(point_ids.size());

    for (const LinearizedObs& lin : linearized) {
      const CameraBlock& block = camera_blocks[lin.camera_index];
      const bool var_point = point_slot.count(lin.point_id) > 0;

      if (block.size > 0) {
        const auto jc = lin.j_cam.leftCols(block.size);
        u.block(block.offset, block.offset, block.size, block.size) +=
            jc.transpose() * jc;
        rhs.segment(block.offset, block.size) -= jc.transpose() * lin.residual;
        if (intrinsics_size > 0) {
          u.block(block.offset, intrinsics_offset, block.size, 5) +=
              jc.transpose() * lin.j_intr;
        }
      }
      if (intrinsics_size > 0) {
        u.block(intrinsics_offset, intrinsics_offset, 5, 5) +=
            lin.j_intr.transpose() * lin.j_intr;
        rhs.segment(intrinsics_offset, 5) -=
            lin.j_intr.transpose() * lin.residual;
      }

      if (var_point) {
        PointSystem& ps = point_systems[lin.point_id];
        ps.v += lin.j_point.transpose() * lin.j_point;
        ps.g -= lin.j_point.transpose() * lin.residual;
        if (block.size > 0) {
          Eigen::Matrix<double, -1, 3> coupling =
              lin.j_cam.leftCols(block.size).transpose() * lin.j_point;
          bool merged = false;
          for (auto& [off, mat] : ps.couplings) {
            if (off == block.offset) {
              mat += coupling;
              merged = true;
              break;
            }
          }
          if (!merged) ps.couplings.emplace_back(block.offset, coupling);
        }
        if (intrinsics_size > 0) {
          Eigen::Matrix<double, -1, 3> coupling =
              lin.j_intr.transpose() * lin.j_point;
          bool merged = false;
          for (auto& [off, mat] : ps.couplings) {
            if (off == intrinsics_offset) {
              mat += coupling;
              merged = true;
              break;
            }
          }
          if (!merged) ps.couplings.emplace_back(intrinsics_offset, coupling);
        }
      }
    }
    // Mirror the upper camera/intrinsics coupling.
    const Eigen::MatrixXd u_full = u.selfadjointView<Eigen::Upper>();
    u = u_full;

    // Damped solve, escalating lambda until the step decreases the cost.
    bool accepted = false;
    bool numerical_ok = false;
    const State saved = capture(recon);
    while (lambda <= 1e12) {
      Eigen::MatrixXd s = u;
      Eigen::VectorXd b = rhs;
      for (int i = 0; i < reduced_size; ++i) {
        s(i, i) += lambda * std::max(u(i, i), 1e-12);
      }

      // Schur complement: eliminate the point blocks.
      bool point_solve_ok = true;
      std::unordered_map<int, Eigen::Matrix3d> v_inverses;
      v_inverses.reserve(point_systems.size());
      for (const auto& [point_id, ps] : point_systems) {
        Eigen::Matrix3d v = ps.v;
        for (int i = 0; i < 3; ++i) {
          v(i, i) += lambda * std::max(ps.v(i, i), 1e-12);
        }
        const Eigen::Matrix3d v_inv = v.inverse();
        if (!v_inv.allFinite()) {
          point_solve_ok = false;
          break;
        }
        v_inverses[point_id] = v_inv;
        for (const auto& [off_a, mat_a] : ps.couplings) {
          const Eigen::MatrixXd wv = mat_a * v_inv;
          b.segment(off_a, mat_a.rows()) -= wv * ps.g;
          for (const auto& [off_b, mat_b] : ps.couplings) {
            s.block(off_a, off_b, mat_a.rows(), mat_b.rows()) -=
                wv * mat_b.transpose();
          }
        }
      }
      if (!point_solve_ok) {
        lambda *= 4.0;
        continue;
      }

      Eigen::VectorXd delta = Eigen::VectorXd::Zero(reduced_size);
      if (reduced_size > 0) {
        const Eigen::LDLT<Eigen::MatrixXd> ldlt(s);
        if (ldlt.info() != Eigen::Success) {
          lambda *= 4.0;
          continue;
        }
        delta = ldlt.solve(b);
        if (!delta.allFinite()) {
          lambda *= 4.0;
          continue;
        }
      }
      numerical_ok = true;

      // Apply camera and intrinsics updates.
      for (const CameraBlock& block : camera_blocks) {
        if (block.size == 0) continue;
        Pose& pose = recon.images.at(block.image_id);
        const Eigen::Vector3d rot_delta = delta.segment<3>(block.offset);
        pose.q = (Eigen::Quaterniond(axis_angle_to_matrix(rot_delta)) * pose.q)
                     .normalized();
        if (block.size == 6) {
          pose.t += delta.segment<3>(block.offset + 3);
        } else {
          const Eigen::Vector3d omega =
              block.gauge_b1 * delta(block.offset + 3) +
              block.gauge_b2 * delta(block.offset + 4);
          pose.t = axis_angle_to_matrix(omega) * pose.t;
        }
      }
      if (intrinsics_size > 0) {
        recon.intrinsics.fx += delta(intrinsics_offset + 0);
        recon.intrinsics.fy += delta(intrinsics_offset + 1);
        recon.intrinsics.cx += delta(intrinsics_offset + 2);
        recon.intrinsics.cy += delta(intrinsics_offset + 3);
        recon.intrinsics.k1 += delta(intrinsics_offset + 4);
      }
      // Back-substitute the point updates.
      for (const auto& [point_id, ps] : point_systems) {
        Eigen::Vector3d g = ps.g;
        for (const auto& [off, mat] : ps.couplings) {
          g -= mat.transpose() * delta.segment(off, mat.rows());
        }
        recon.points.at(point_id).xyz += v_inverses.at(point_id) * g;
      }

      const double new_cost =
          evaluate_cost(recon, observations, camera_blocks, scale);
      if (new_cost < cost) {
        const double decrease = (cost - new_cost) / std::max(cost, 1e-300);
        cost = new_cost;
        summary.accepted_costs.push_back(cost);
        lambda = std::max(lambda * 0.4, 1e-12);
        accepted = true;
        if (decrease < options.function_tolerance) {
          summary.converged = true;
        }
        break;
      }
      restore(recon, saved);
      lambda *= 4.0;
    }

    ++summary.iterations;
    if (!accepted) {
      if (!numerical_ok) {
        throw NumericalFailure(
            "normal equations indefinite through the damping escalation");
      }
      // Cannot decrease further: treat as converged at this cost.
      summary.converged = true;
      break;
    }
    if (summary.converged) break;
  }

  summary.final_cost = cost;
  recon.update_point_errors();
  return summary;
}

}  // namespace evrecon
