#include "evrecon/mvs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <random>

#include <Eigen/Dense>

#include "evrecon/errors.hpp"

namespace evrecon {

namespace {

constexpr double kMinAngleDeg = 2.0;
constexpr double kMaxAngleDeg = 45.0;
constexpr float kMaxCost = 2.0f;

float bilinear(const ImageF& image, double x, double y, bool* valid) {
  const int x0 = int(std::floor(x));
  const int y0 = int(std::floor(y));
  if (x0 < 0 || y0 < 0 || x0 + 1 >= image.width() || y0 + 1 >= image.height()) {
    *valid = false;
    return 0.0f;
  }
  *valid = true;
  const double fx = x - x0, fy = y - y0;
  return float((1 - fx) * (1 - fy) * image(x0, y0) +
               fx * (1 - fy) * image(x0 + 1, y0) +
               (1 - fx) * fy * image(x0, y0 + 1) +
               fx * fy * image(x0 + 1, y0 + 1));
}

struct Hypothesis {
  double depth = 0.0;
  Eigen::Vector3d normal = Eigen::Vector3d(0, 0, -1);
};

class PatchMatcher {
 public:
  PatchMatcher(const StereoView& ref, const std::vector<StereoView>& neighbors,
               const CameraIntrinsics& intrinsics, const StereoParams& params)
      : ref_(ref), intrinsics_(intrinsics), params_(params) {
    for (const StereoView& neighbor : neighbors) {
      neighbors_.push_back(neighbor);
      relative_.push_back(relative_pose(ref.pose, neighbor.pose));
    }
    k_inv_ = intrinsics.matrix().inverse();
  }

  // Ray direction with unit z so that X = depth * dir.
  Eigen::Vector3d ray(int x, int y) const {
    return k_inv_ * Eigen::Vector3d(x, y, 1.0);
  }

  double cost(int x, int y, const Hypothesis& h) const {
    const Eigen::Vector3d anchor = h.depth * ray(x, y);
    double total = 0.0;
    for (size_t n = 0; n < neighbors_.size(); ++n) {
      const Eigen::Matrix3d hom =
          plane_homography(intrinsics_, relative_[n], anchor, h.normal);
      total += ncc_cost(x, y, *neighbors_[n].image, hom);
    }
    return total / double(neighbors_.size());
  }

  double ncc_cost(int x, int y, const ImageF& src,
                  const Eigen::Matrix3d& hom) const {
    const int r = params_.window_radius;
    const ImageF& ref = *ref_.image;

    double sum_r = 0, sum_s = 0, sum_rr = 0, sum_ss = 0, sum_rs = 0;
    int count = 0;
    int attempted = 0;
    for (int dy = -r; dy <= r; ++dy) {
      const int yy = y + dy;
      if (yy < 0 || yy >= ref.height()) continue;
      for (int dx = -r; dx <= r; ++dx) {
        const int xx = x + dx;
        if (xx < 0 || xx >= ref.width()) continue;
        ++attempted;
        const Eigen::Vector3d warped = hom * Eigen::Vector3d(xx, yy, 1.0);
        if (warped.z() <= 1e-12) continue;
        bool valid = false;
        const float s = bilinear(src, warped.x() / warped.z(),
                                 warped.y() / warped.z(), &valid);
        if (!valid) continue;
        const float rv = ref(xx, yy);
        sum_r += rv;
        sum_s += s;
        sum_rr += double(rv) * rv;
        sum_ss += double(s) * s;
        sum_rs += double(rv) * s;
        ++count;
      }
    }
    if (attempted == 0 || count < (7 * attempted) / 10 || count < 9) {
      return kMaxCost;
    }
    const double inv = 1.0 / count;
    const double mean_r = sum_r * inv;
    const double mean_s = sum_s * inv;
    const double var_r = sum_rr * inv - mean_r * mean_r;
    const double var_s = sum_ss * inv - mean_s * mean_s;
    if (var_r < 1e-8 || var_s < 1e-8) return kMaxCost;  // untextured window
    const double ncc =
        (sum_rs * inv - mean_r * mean_s) / std::sqrt(var_r * var_s);
    return std::clamp(1.0 - ncc, 0.0, double(kMaxCost));
  }

  // Depth of this pixel's ray against a neighbor pixel's plane.
  double propagate_depth(int x, int y, int nx, int ny,
                         const Hypothesis& neighbor_h) const {
    const Eigen::Vector3d anchor = neighbor_h.depth * ray(nx, ny);
    const Eigen::Vector3d dir = ray(x, y);
    const double denom = neighbor_h.normal.dot(dir);
    if (std::abs(denom) < 1e-12) return -1.0;
    return neighbor_h.normal.dot(anchor) / denom;
  }

  const StereoView& ref_;
  std::vector<StereoView> neighbors_;
  std::vector<Pose> relative_;
  CameraIntrinsics intrinsics_;
  Eigen::Matrix3d k_inv_;
  StereoParams params_;
};

Eigen::Vector3d random_facing_normal(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Vector3d normal(n(rng), n(rng), n(rng));
  if (normal.norm() < 1e-9) normal = Eigen::Vector3d(0, 0, -1);
  normal.normalize();
  if (normal.z() > 0) normal.z() = -normal.z();
  if (normal.z() > -0.2) {
    // Pull grazing planes toward fronto-parallel.
    normal.z() -= 0.4;
    normal.normalize();
  }
  return normal;
}

Eigen::Vector3d perturb_normal(const Eigen::Vector3d& normal, double scale,
                               std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, scale);
  Eigen::Vector3d out = normal + Eigen::Vector3d(n(rng), n(rng), n(rng));
  if (out.norm() < 1e-9) return normal;
  out.normalize();
  if (out.z() > -0.05) return normal;
  return out;
}

}  // namespace

Eigen::Matrix3d plane_homography(const CameraIntrinsics& intrinsics,
                                 const Pose& ref_to_src,
                                 const Eigen::Vector3d& anchor_ref_cam,
                                 const Eigen::Vector3d& normal_ref_cam) {
  // Plane n.X = n.X0 in the reference frame; for X on the plane,
  // X_src = (R - t n^T / (-n.X0)) X.
  const double plane_d = -normal_ref_cam.dot(anchor_ref_cam);
  const Eigen::Matrix3d k = intrinsics.matrix();
  const Eigen::Matrix3d h =
      ref_to_src.q.toRotationMatrix() -
      ref_to_src.t * normal_ref_cam.transpose() / plane_d;
  return k * h * k.inverse();
}

std::vector<int> select_stereo_neighbors(const Reconstruction& recon,
                                         int ref_id, int k) {
  if (!recon.is_registered(ref_id)) {
    throw NoUsableNeighbors("reference image is not registered");
  }
  const Eigen::Vector3d ref_center = recon.images.at(ref_id).center();

  struct Candidate {
    int shared = 0;
    std::vector<double> angles;
  };
  std::map<int, Candidate> candidates;
  for (const auto& [point_id, point] : recon.points) {
    bool sees_ref = false;
    for (const Observation& obs : point.track) {
      sees_ref = sees_ref || obs.image_id == ref_id;
    }
    if (!sees_ref) continue;
    for (const Observation& obs : point.track) {
      if (obs.image_id == ref_id || !recon.is_registered(obs.image_id)) {
        continue;
      }
      Candidate& candidate = candidates[obs.image_id];
      candidate.shared++;
      candidate.angles.push_back(triangulation_angle(
          ref_center, recon.images.at(obs.image_id).center(), point.xyz));
    }
  }

  std::vector<std::pair<int, int>> ranked;  // (shared, id)
  for (auto& [id, candidate] : candidates) {
    std::nth_element(candidate.angles.begin(),
                     candidate.angles.begin() + candidate.angles.size() / 2,
                     candidate.angles.end());
    const double median_deg = candidate.angles[candidate.angles.size() / 2] *
                              180.0 / std::numbers::pi;
    if (median_deg < kMinAngleDeg || median_deg > kMaxAngleDeg) continue;
    ranked.emplace_back(candidate.shared, id);
  }
  if (ranked.empty()) {
    throw NoUsableNeighbors("no source view shares points in the angle band");
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<int> out;
  for (const auto& [shared, id] : ranked) {
    if (int(out.size()) >= k) break;
    out.push_back(id);
  }
  return out;
}

std::pair<double, double> sparse_depth_range(const Reconstruction& recon,
                                             int ref_id) {
  double lo = std::numeric_limits<double>::max();
  double hi = 0.0;
  const Pose& pose = recon.images.at(ref_id);
  for (const auto& [point_id, point] : recon.points) {
    for (const Observation& obs : point.track) {
      if (obs.image_id != ref_id) continue;
      const double z = pose.apply(point.xyz).z();
      if (z > 0.0) {
        lo = std::min(lo, z);
        hi = std::max(hi, z);
      }
      break;
    }
  }
  if (hi <= 0.0) throw NoUsableNeighbors("no sparse depth for reference view");
  return {0.25 * lo, 4.0 * hi};
}

DepthMap patchmatch_depth(const StereoView& ref,
                          const std::vector<StereoView>& neighbors,
                          const CameraIntrinsics& intrinsics,
                          const StereoParams& params) {
  if (neighbors.empty()) throw NoUsableNeighbors("no source views");
  if (params.d_min <= 0.0 || params.d_max <= params.d_min) {
    throw std::invalid_argument("bad depth range");
  }
  const int w = ref.image->width();
  const int h = ref.image->height();

  PatchMatcher matcher(ref, neighbors, intrinsics, params);
  std::mt19937_64 rng(params.seed ^ (uint64_t(ref.image_id) << 32));
  std::uniform_real_distribution<double> depth_dist(params.d_min, params.d_max);

  Grid<Hypothesis> state(w, h);
  ImageF cost(w, h, kMaxCost);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Hypothesis hyp{depth_dist(rng), random_facing_normal(rng)};
      state(x, y) = hyp;
      cost(x, y) = float(matcher.cost(x, y, hyp));
    }
  }

  const auto try_improve = [&](int x, int y, const Hypothesis& candidate) {
    if (candidate.depth < params.d_min || candidate.depth > params.d_max) {
      return;
    }
    const double c = matcher.cost(x, y, candidate);
    if (c < cost(x, y)) {  // strict improvement only
      cost(x, y) = float(c);
      state(x, y) = candidate;
    }
  };

  const auto propagate_from = [&](int x, int y, int nx, int ny) {
    if (nx < 0 || ny < 0 || nx >= w || ny >= h) return;
    const Hypothesis& neighbor = state(nx, ny);
    const double depth = matcher.propagate_depth(x, y, nx, ny, neighbor);
    if (depth <= 0.0) return;
    try_improve(x, y, Hypothesis{depth, neighbor.normal});
  };

  const auto refine = [&](int x, int y) {
    double span = 0.5 * (params.d_max - params.d_min);
    double normal_scale = 0.5;
    const double min_span = (params.d_max - params.d_min) / 1024.0;
    while (span > min_span) {
      std::uniform_real_distribution<double> d_offset(-span, span);
      const Hypothesis current = state(x, y);
      try_improve(x, y,
                  Hypothesis{current.depth + d_offset(rng), current.normal});
      try_improve(
          x, y,
          Hypothesis{current.depth,
                     perturb_normal(current.normal, normal_scale, rng)});
      try_improve(
          x, y,
          Hypothesis{current.depth + d_offset(rng),
                     perturb_normal(current.normal, normal_scale, rng)});
      span *= 0.5;
      normal_scale *= 0.5;
    }
  };

  for (int iteration = 0; iteration < params.iterations; ++iteration) {
    for (int y = 0; y < h; ++y) {  // forward raster sweep
      for (int x = 0; x < w; ++x) {
        propagate_from(x, y, x - 1, y);
        propagate_from(x, y, x, y - 1);
        refine(x, y);
      }
    }
    for (int y = h - 1; y >= 0; --y) {  // backward sweep
      for (int x = w - 1; x >= 0; --x) {
        propagate_from(x, y, x + 1, y);
        propagate_from(x, y, x, y + 1);
      }
    }
  }

  DepthMap out;
  out.ref_id = ref.image_id;
  out.depth = ImageF(w, h, 0.0f);
  out.normal = Grid<Eigen::Vector3f>(w, h, Eigen::Vector3f(0, 0, -1));
  out.cost = cost;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (cost(x, y) <= params.cost_gate) {
        out.depth(x, y) = float(state(x, y).depth);
        out.normal(x, y) = state(x, y).normal.cast<float>();
      }
    }
  }
  return out;
}

}  // namespace evrecon
