#include "evrecon/two_view.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "evrecon/errors.hpp"
#include "evrecon/five_point.hpp"
#include "evrecon/triangulation.hpp"

namespace evrecon {

namespace {

// Hartley normalization: centroid to origin, mean distance sqrt(2).
Eigen::Matrix3d normalizing_transform(const std::vector<Eigen::Vector2d>& pts) {
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  for (const auto& p : pts) centroid += p;
  centroid /= double(pts.size());
  double mean_dist = 0.0;
  for (const auto& p : pts) mean_dist += (p - centroid).norm();
  mean_dist /= double(pts.size());
  const double scale = mean_dist > 1e-12 ? std::sqrt(2.0) / mean_dist : 1.0;
  Eigen::Matrix3d t = Eigen::Matrix3d::Identity();
  t(0, 0) = t(1, 1) = scale;
  t(0, 2) = -scale * centroid.x();
  t(1, 2) = -scale * centroid.y();
  return t;
}

bool collinear(const Eigen::Vector2d& a, const Eigen::Vector2d& b,
               const Eigen::Vector2d& c, double tol = 1e-8) {
  const Eigen::Vector2d u = b - a;
  const Eigen::Vector2d v = c - a;
  return std::abs(u.x() * v.y() - u.y() * v.x()) <
         tol * std::max(1.0, u.norm() * v.norm());
}

// True when the whole point set is (near) a single line or point, so that
// no non-degenerate minimal sample exists.
bool point_set_degenerate(const std::vector<Eigen::Vector2d>& pts) {
  if (pts.size() < 3) return true;
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  for (const auto& p : pts) centroid += p;
  centroid /= double(pts.size());
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto& p : pts) {
    const Eigen::Vector2d d = p - centroid;
    cov += d * d.transpose();
  }
  cov /= double(pts.size());
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
  return eig.eigenvalues()(0) < 1e-10 * std::max(1.0, eig.eigenvalues()(1));
}

struct RansacResult {
  Eigen::Matrix3d model = Eigen::Matrix3d::Zero();
  std::vector<int> inliers;
  double score = std::numeric_limits<double>::max();  // truncated quadratic
  bool valid = false;
};

// Generic adaptive RANSAC over a minimal solver returning candidate models.
template <typename SolveFn, typename ResidualFn>
RansacResult ransac(const std::vector<Eigen::Vector2d>& a,
                    const std::vector<Eigen::Vector2d>& b, int sample_size,
                    double threshold, const VerifyParams& params,
                    uint64_t seed_salt, const SolveFn& solve,
                    const ResidualFn& residual) {
  RansacResult best;
  const int n = int(a.size());
  if (n < sample_size) return best;

  std::mt19937_64 rng(params.seed ^ seed_salt);
  std::uniform_int_distribution<int> index_dist(0, n - 1);

  int max_iterations = params.max_iterations;
  std::vector<int> sample(sample_size);
  std::vector<Eigen::Vector2d> sa(sample_size), sb(sample_size);

  for (int iteration = 0;
       iteration < max_iterations || iteration < params.min_iterations;
       ++iteration) {
    if (iteration >= params.max_iterations) break;
    // Distinct random sample.
    for (int i = 0; i < sample_size;) {
      const int idx = index_dist(rng);
      bool dup = false;
      for (int j = 0; j < i; ++j) dup = dup || sample[j] == idx;
      if (!dup) sample[i++] = idx;
    }
    bool bad = false;
    for (int i = 0; i < sample_size && !bad; ++i) {
      sa[i] = a[sample[i]];
      sb[i] = b[sample[i]];
      for (int j = 0; j < i && !bad; ++j) {
        bad = (sa[i] - sa[j]).squaredNorm() < 1e-16 ||
              (sb[i] - sb[j]).squaredNorm() < 1e-16;
      }
    }
    if (bad) continue;

    for (const Eigen::Matrix3d& model : solve(sa, sb)) {
      // MSAC support: truncated squared residuals. A bent model that keeps
      // exact inliers barely inside the band while grabbing outliers loses
      // against the tight one.
      std::vector<int> inliers;
      double score = 0.0;
      for (int i = 0; i < n; ++i) {
        const double r = residual(model, a[i], b[i], i);
        if (r <= threshold) {
          inliers.push_back(i);
          score += r * r;
        } else {
          score += threshold * threshold;
        }
      }
      if (!inliers.empty() && score < best.score) {
        best.model = model;
        best.inliers = std::move(inliers);
        best.score = score;
        best.valid = true;

        // Adaptive iteration bound at the requested confidence.
        const double w = double(best.inliers.size()) / double(n);
        const double p_sample = std::pow(w, sample_size);
        if (p_sample > 1.0 - 1e-12) {
          max_iterations = 0;
        } else if (p_sample > 0.0) {
          const double needed =
              std::log(1.0 - params.confidence) / std::log(1.0 - p_sample);
          max_iterations =
              int(std::min(double(params.max_iterations), std::ceil(needed)));
        }
      }
    }
  }
  return best;
}

std::vector<Eigen::Vector2d> gather(const std::vector<Eigen::Vector2d>& pts,
                                    const std::vector<int>& idx) {
  std::vector<Eigen::Vector2d> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(pts[i]);
  return out;
}

// Weighted eight-point refit. Chance-consistent outliers inside the RANSAC
// band otherwise bias the plain least-squares solution; Cauchy-style IRLS
// weights push them out.
std::optional<Eigen::Matrix3d> weighted_fundamental(
    const std::vector<Eigen::Vector2d>& a, const std::vector<Eigen::Vector2d>& b,
    const std::vector<double>& weights) {
  const size_t n = a.size();
  if (n < 8) return std::nullopt;
  const Eigen::Matrix3d ta = normalizing_transform(a);
  const Eigen::Matrix3d tb = normalizing_transform(b);

  Eigen::MatrixXd m(n, 9);
  for (size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d pa = ta * a[i].homogeneous();
    const Eigen::Vector3d pb = tb * b[i].homogeneous();
    const double w = std::sqrt(weights[i]);
    m.row(i) << pb.x() * pa.x(), pb.x() * pa.y(), pb.x(), pb.y() * pa.x(),
        pb.y() * pa.y(), pb.y(), pa.x(), pa.y(), 1.0;
    m.row(i) *= w;
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeFullV);
  const Eigen::Matrix<double, 9, 1> f = svd.matrixV().col(8);
  Eigen::Matrix3d fn;
  fn << f(0), f(1), f(2), f(3), f(4), f(5), f(6), f(7), f(8);
  Eigen::JacobiSVD<Eigen::Matrix3d> fsvd(
      fn, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d s = fsvd.singularValues();
  s(2) = 0.0;
  fn = fsvd.matrixU() * s.asDiagonal() * fsvd.matrixV().transpose();
  Eigen::Matrix3d out = tb.transpose() * fn * ta;
  const double norm = out.norm();
  if (!(norm > 1e-15)) return std::nullopt;
  return out / norm;
}

// Weighted homography DLT, same purpose.
std::optional<Eigen::Matrix3d> weighted_homography(
    const std::vector<Eigen::Vector2d>& a, const std::vector<Eigen::Vector2d>& b,
    const std::vector<double>& weights) {
  const size_t n = a.size();
  if (n < 4) return std::nullopt;
  const Eigen::Matrix3d ta = normalizing_transform(a);
  const Eigen::Matrix3d tb = normalizing_transform(b);
  Eigen::MatrixXd m(2 * n, 9);
  for (size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d pa = ta * a[i].homogeneous();
    const Eigen::Vector3d pb = tb * b[i].homogeneous();
    const double w = std::sqrt(weights[i]);
    m.row(2 * i) << pa.x(), pa.y(), 1, 0, 0, 0, -pb.x() * pa.x(),
        -pb.x() * pa.y(), -pb.x();
    m.row(2 * i + 1) << 0, 0, 0, pa.x(), pa.y(), 1, -pb.y() * pa.x(),
        -pb.y() * pa.y(), -pb.y();
    m.row(2 * i) *= w;
    m.row(2 * i + 1) *= w;
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeFullV);
  const Eigen::Matrix<double, 9, 1> h = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  Eigen::Matrix3d out = tb.inverse() * hn * ta;
  if (std::abs(out(2, 2)) < 1e-12) return std::nullopt;
  return out / out(2, 2);
}

// Truncated-quadratic support at an arbitrary threshold.
template <typename ResidualFn>
double msac_score(int n, double threshold, const ResidualFn& residual) {
  double score = 0.0;
  for (int i = 0; i < n; ++i) {
    const double r = residual(i);
    score += std::min(r * r, threshold * threshold);
  }
  return score;
}

}  // namespace

std::optional<Eigen::Matrix3d> estimate_homography(
    const std::vector<Eigen::Vector2d>& a,
    const std::vector<Eigen::Vector2d>& b) {
  const size_t n = a.size();
  if (n < 4 || b.size() != n) return std::nullopt;
  const Eigen::Matrix3d ta = normalizing_transform(a);
  const Eigen::Matrix3d tb = normalizing_transform(b);

  Eigen::MatrixXd m(2 * n, 9);
  for (size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d pa = ta * a[i].homogeneous();
    const Eigen::Vector3d pb = tb * b[i].homogeneous();
    m.row(2 * i) << pa.x(), pa.y(), 1, 0, 0, 0, -pb.x() * pa.x(),
        -pb.x() * pa.y(), -pb.x();
    m.row(2 * i + 1) << 0, 0, 0, pa.x(), pa.y(), 1, -pb.y() * pa.x(),
        -pb.y() * pa.y(), -pb.y();
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeFullV);
  const Eigen::Matrix<double, 9, 1> h = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  Eigen::Matrix3d out = tb.inverse() * hn * ta;
  if (std::abs(out(2, 2)) < 1e-12) return std::nullopt;
  out /= out(2, 2);
  return out;
}

std::optional<Eigen::Matrix3d> estimate_fundamental(
    const std::vector<Eigen::Vector2d>& a,
    const std::vector<Eigen::Vector2d>& b) {
  const size_t n = a.size();
  if (n < 8 || b.size() != n) return std::nullopt;
  const Eigen::Matrix3d ta = normalizing_transform(a);
  const Eigen::Matrix3d tb = normalizing_transform(b);

  Eigen::MatrixXd m(n, 9);
  for (size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d pa = ta * a[i].homogeneous();
    const Eigen::Vector3d pb = tb * b[i].homogeneous();
    m.row(i) << pb.x() * pa.x(), pb.x() * pa.y(), pb.x(), pb.y() * pa.x(),
        pb.y() * pa.y(), pb.y(), pa.x(), pa.y(), 1.0;
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeFullV);
  const Eigen::Matrix<double, 9, 1> f = svd.matrixV().col(8);
  Eigen::Matrix3d fn;
  fn << f(0), f(1), f(2), f(3), f(4), f(5), f(6), f(7), f(8);

  // Rank-2 projection.
  Eigen::JacobiSVD<Eigen::Matrix3d> fsvd(
      fn, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d s = fsvd.singularValues();
  s(2) = 0.0;
  fn = fsvd.matrixU() * s.asDiagonal() * fsvd.matrixV().transpose();

  Eigen::Matrix3d out = tb.transpose() * fn * ta;
  const double norm = out.norm();
  if (!(norm > 1e-15)) return std::nullopt;
  return out / norm;
}

double homography_transfer_error(const Eigen::Matrix3d& h,
                                 const Eigen::Vector2d& a,
                                 const Eigen::Vector2d& b) {
  const Eigen::Vector3d fwd = h * a.homogeneous();
  if (std::abs(fwd.z()) < 1e-12) return std::numeric_limits<double>::max();
  const double err_fwd = (fwd.hnormalized() - b).norm();
  const Eigen::Vector3d bwd = h.inverse() * b.homogeneous();
  if (std::abs(bwd.z()) < 1e-12) return std::numeric_limits<double>::max();
  const double err_bwd = (bwd.hnormalized() - a).norm();
  return std::max(err_fwd, err_bwd);
}

double sampson_error(const Eigen::Matrix3d& f, const Eigen::Vector2d& a,
                     const Eigen::Vector2d& b) {
  const Eigen::Vector3d pa = a.homogeneous();
  const Eigen::Vector3d pb = b.homogeneous();
  const Eigen::Vector3d fa = f * pa;
  const Eigen::Vector3d ftb = f.transpose() * pb;
  const double c = pb.dot(fa);
  const double denom =
      fa.x() * fa.x() + fa.y() * fa.y() + ftb.x() * ftb.x() + ftb.y() * ftb.y();
  if (denom < 1e-24) return std::numeric_limits<double>::max();
  return std::sqrt(c * c / denom);
}

Eigen::Matrix3d project_to_essential(const Eigen::Matrix3d& e) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const double s = 0.5 * (svd.singularValues()(0) + svd.singularValues()(1));
  const Eigen::Vector3d sigma(s, s, 0.0);
  return svd.matrixU() * sigma.asDiagonal() * svd.matrixV().transpose();
}

std::vector<Pose> decompose_essential(const Eigen::Matrix3d& e) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU();
  Eigen::Matrix3d v = svd.matrixV();
  if (u.determinant() < 0) u.col(2) *= -1.0;
  if (v.determinant() < 0) v.col(2) *= -1.0;
  Eigen::Matrix3d w;
  w << 0, -1, 0, 1, 0, 0, 0, 0, 1;

  const Eigen::Matrix3d r1 = u * w * v.transpose();
  const Eigen::Matrix3d r2 = u * w.transpose() * v.transpose();
  const Eigen::Vector3d t = u.col(2).normalized();

  std::vector<Pose> poses;
  for (const Eigen::Matrix3d& r : {r1, r2}) {
    for (const double sign : {1.0, -1.0}) {
      Pose pose;
      pose.q = Eigen::Quaterniond(r).normalized();
      pose.t = sign * t;
      poses.push_back(pose);
    }
  }
  return poses;
}

Eigen::Matrix3d essential_from_pose(const Pose& relative) {
  return skew(relative.t) * relative.q.toRotationMatrix();
}

std::optional<TwoViewGeometry> verify_pair(
    const MatchSet& matches, const FeatureSet& fa, const FeatureSet& fb,
    const std::optional<CameraIntrinsics>& intrinsics,
    const VerifyParams& params) {
  const int n = int(matches.matches.size());
  const int min_sample = intrinsics ? 5 : 8;
  if (n < min_sample) return std::nullopt;

  std::vector<Eigen::Vector2d> pa(n), pb(n);
  for (int i = 0; i < n; ++i) {
    const auto& [ia, ib] = matches.matches[i];
    pa[i] = {fa.features[ia].x, fa.features[ia].y};
    pb[i] = {fb.features[ib].x, fb.features[ib].y};
  }
  if (point_set_degenerate(pa) || point_set_degenerate(pb)) {
    throw DegenerateConfiguration("matches are collinear or coincident");
  }

  // Homography hypothesis.
  RansacResult h_result = ransac(
      pa, pb, 4, params.h_threshold_px, params, 0x48u,
      [](const std::vector<Eigen::Vector2d>& sa,
         const std::vector<Eigen::Vector2d>& sb) {
        std::vector<Eigen::Matrix3d> models;
        // Any 3 collinear points make the DLT degenerate.
        for (int i = 0; i < 4; ++i) {
          for (int j = i + 1; j < 4; ++j) {
            for (int k = j + 1; k < 4; ++k) {
              if (collinear(sa[i], sa[j], sa[k]) ||
                  collinear(sb[i], sb[j], sb[k])) {
                return models;
              }
            }
          }
        }
        if (auto h = estimate_homography(sa, sb)) models.push_back(*h);
        return models;
      },
      [](const Eigen::Matrix3d& h, const Eigen::Vector2d& xa,
         const Eigen::Vector2d& xb, int) {
        return homography_transfer_error(h, xa, xb);
      });
  if (h_result.valid && int(h_result.inliers.size()) >= 4) {
    const auto in_a = gather(pa, h_result.inliers);
    const auto in_b = gather(pb, h_result.inliers);
    const double sigma = 0.5 * params.h_threshold_px;
    Eigen::Matrix3d refined = h_result.model;
    std::vector<double> weights(in_a.size(), 1.0);
    for (int round = 0; round < 5; ++round) {
      const auto fit = weighted_homography(in_a, in_b, weights);
      if (!fit) break;
      refined = *fit;
      for (size_t i = 0; i < in_a.size(); ++i) {
        const double r = homography_transfer_error(refined, in_a[i], in_b[i]);
        weights[i] = 1.0 / (1.0 + (r / sigma) * (r / sigma));
      }
    }
    std::vector<int> inliers;
    double score = 0.0;
    for (int i = 0; i < n; ++i) {
      const double r = homography_transfer_error(refined, pa[i], pb[i]);
      if (r <= params.h_threshold_px) {
        inliers.push_back(i);
        score += r * r;
      } else {
        score += params.h_threshold_px * params.h_threshold_px;
      }
    }
    if (score <= h_result.score) {
      h_result.model = refined;
      h_result.inliers = std::move(inliers);
      h_result.score = score;
    }
  }

  // Epipolar hypothesis: essential (calibrated) or fundamental.
  RansacResult ef_result;
  if (intrinsics) {
    const CameraIntrinsics k = *intrinsics;
    std::vector<Eigen::Vector2d> na(n), nb(n);
    for (int i = 0; i < n; ++i) {
      na[i] = undistort(k, {(pa[i].x() - k.cx) / k.fx, (pa[i].y() - k.cy) / k.fy});
      nb[i] = undistort(k, {(pb[i].x() - k.cx) / k.fx, (pb[i].y() - k.cy) / k.fy});
    }
    const Eigen::Matrix3d k_inv = k.matrix().inverse();
    const auto to_f = [&](const Eigen::Matrix3d& e) -> Eigen::Matrix3d {
      return k_inv.transpose() * e * k_inv;
    };
    // Residuals in pixels through the equivalent fundamental matrix.
    ef_result = ransac(
        na, nb, 5, params.ef_threshold_px, params, 0x45u,
        [](const std::vector<Eigen::Vector2d>& sa,
           const std::vector<Eigen::Vector2d>& sb) {
          return five_point_essential(sa, sb);
        },
        [&](const Eigen::Matrix3d& e, const Eigen::Vector2d&,
            const Eigen::Vector2d&, int i) {
          return sampson_error(to_f(e), pa[i], pb[i]);
        });
    if (ef_result.valid && int(ef_result.inliers.size()) >= 8) {
      // Robust refit on the inliers, projected onto the manifold.
      const auto in_na = gather(na, ef_result.inliers);
      const auto in_nb = gather(nb, ef_result.inliers);
      const auto in_pa = gather(pa, ef_result.inliers);
      const auto in_pb = gather(pb, ef_result.inliers);
      const double sigma = 0.5 * params.ef_threshold_px;
      Eigen::Matrix3d refined = ef_result.model;
      std::vector<double> weights(in_na.size(), 1.0);
      for (int round = 0; round < 5; ++round) {
        const auto fit = weighted_fundamental(in_na, in_nb, weights);
        if (!fit) break;
        refined = project_to_essential(*fit);
        for (size_t i = 0; i < in_na.size(); ++i) {
          const double r = sampson_error(to_f(refined), in_pa[i], in_pb[i]);
          weights[i] = 1.0 / (1.0 + (r / sigma) * (r / sigma));
        }
      }
      std::vector<int> inliers;
      double score = 0.0;
      for (int i = 0; i < n; ++i) {
        const double r = sampson_error(to_f(refined), pa[i], pb[i]);
        if (r <= params.ef_threshold_px) {
          inliers.push_back(i);
          score += r * r;
        } else {
          score += params.ef_threshold_px * params.ef_threshold_px;
        }
      }
      if (score <= ef_result.score) {
        ef_result.model = refined;
        ef_result.inliers = std::move(inliers);
        ef_result.score = score;
      }

      // Quasi-degenerate guard: a slightly bent model can hold every true
      // inlier just inside the band while pocketing an outlier. Refit on
      // the tight consensus and let the sharper support decide.
      // Quasi-degenerate guard: a slightly bent model can hold every true
      // inlier just inside the band and still pocket an outlier, which a
      // count- or MSAC-based comparison cannot see. Pocketed outliers do
      // not triangulate in front of the decomposed pose, so refit on the
      // cheirality-consistent subset and keep whichever model has sharper
      // support.
      {
        const CameraIntrinsics unit_k{1.0, 1.0, 0.0, 0.0, 0.0};
        int best_votes = -1;
        Pose best_pose;
        for (const Pose& candidate : decompose_essential(ef_result.model)) {
          int votes = 0;
          for (const int i : ef_result.inliers) {
            const auto point = triangulate_point({Pose{}, candidate}, unit_k,
                                                 {na[i], nb[i]});
            if (point && point->z() > 0.0 && candidate.apply(*point).z() > 0.0) {
              ++votes;
            }
          }
          if (votes > best_votes) {
            best_votes = votes;
            best_pose = candidate;
          }
        }
        std::vector<int> survivors;
        const double reproj_gate = 2.0 * params.ef_threshold_px;
        for (const int i : ef_result.inliers) {
          const auto point =
              triangulate_point({Pose{}, best_pose}, unit_k, {na[i], nb[i]});
          if (!point || point->z() <= 0.0) continue;
          const Eigen::Vector3d in_b = best_pose.apply(*point);
          if (in_b.z() <= 0.0) continue;
          // Skew outlier rays triangulate with large reprojection error even
          // when the midpoint lands in front.
          const double err_a =
              (intrinsics->fx * (point->hnormalized() - na[i])).norm();
          const double err_b =
              (intrinsics->fx * (in_b.hnormalized() - nb[i])).norm();
          if (err_a > reproj_gate || err_b > reproj_gate) continue;
          survivors.push_back(i);
        }
        if (int(survivors.size()) >= 8 &&
            survivors.size() < ef_result.inliers.size()) {
          if (auto fit = estimate_fundamental(gather(na, survivors),
                                              gather(nb, survivors))) {
            const Eigen::Matrix3d candidate = project_to_essential(*fit);
            // Physically screened support: an epipolar inlier that does not
            // triangulate in front with a sane reprojection counts as an
            // outlier. Plain truncated support always rewards absorbing
            // extra points; this does not.
            const auto physical_score = [&](const Eigen::Matrix3d& e) {
              std::vector<int> in;
              for (int i = 0; i < n; ++i) {
                if (sampson_error(to_f(e), pa[i], pb[i]) <=
                    params.ef_threshold_px) {
                  in.push_back(i);
                }
              }
              int top_votes = -1;
              Pose pose;
              for (const Pose& c : decompose_essential(e)) {
                int votes = 0;
                for (const int i : in) {
                  const auto pt =
                      triangulate_point({Pose{}, c}, unit_k, {na[i], nb[i]});
                  if (pt && pt->z() > 0.0 && c.apply(*pt).z() > 0.0) ++votes;
                }
                if (votes > top_votes) {
                  top_votes = votes;
                  pose = c;
                }
              }
              const double t2 =
                  params.ef_threshold_px * params.ef_threshold_px;
              double score = 0.0;
              for (int i = 0; i < n; ++i) {
                const double r = sampson_error(to_f(e), pa[i], pb[i]);
                if (r > params.ef_threshold_px) {
                  score += t2;
                  continue;
                }
                const auto pt =
                    triangulate_point({Pose{}, pose}, unit_k, {na[i], nb[i]});
                bool physical = pt && pt->z() > 0.0;
                if (physical) {
                  const Eigen::Vector3d in_b = pose.apply(*pt);
                  physical =
                      in_b.z() > 0.0 &&
                      (intrinsics->fx * (pt->hnormalized() - na[i])).norm() <=
                          reproj_gate &&
                      (intrinsics->fx * (in_b.hnormalized() - nb[i])).norm() <=
                          reproj_gate;
                }
                score += physical ? r * r : t2;
              }
              return score;
            };
            const double sharp_old = physical_score(ef_result.model);
            const double sharp_new = physical_score(candidate);
            if (sharp_new < sharp_old) {
              std::vector<int> refreshed;
              double refreshed_score = 0.0;
              for (int i = 0; i < n; ++i) {
                const double r = sampson_error(to_f(candidate), pa[i], pb[i]);
                if (r <= params.ef_threshold_px) {
                  refreshed.push_back(i);
                  refreshed_score += r * r;
                } else {
                  refreshed_score +=
                      params.ef_threshold_px * params.ef_threshold_px;
                }
              }
              ef_result.model = candidate;
              ef_result.inliers = std::move(refreshed);
              ef_result.score = refreshed_score;
            }
          }
        }
      }
    }
  } else {
    ef_result = ransac(
        pa, pb, 8, params.ef_threshold_px, params, 0x46u,
        [](const std::vector<Eigen::Vector2d>& sa,
           const std::vector<Eigen::Vector2d>& sb) {
          std::vector<Eigen::Matrix3d> models;
          if (auto f = estimate_fundamental(sa, sb)) models.push_back(*f);
          return models;
        },
        [](const Eigen::Matrix3d& f, const Eigen::Vector2d& xa,
           const Eigen::Vector2d& xb, int) {
          return sampson_error(f, xa, xb);
        });
    if (ef_result.valid && int(ef_result.inliers.size()) >= 8) {
      const auto in_pa = gather(pa, ef_result.inliers);
      const auto in_pb = gather(pb, ef_result.inliers);
      const double sigma = 0.5 * params.ef_threshold_px;
      Eigen::Matrix3d refined = ef_result.model;
      std::vector<double> weights(in_pa.size(), 1.0);
      for (int round = 0; round < 5; ++round) {
        const auto fit = weighted_fundamental(in_pa, in_pb, weights);
        if (!fit) break;
        refined = *fit;
        for (size_t i = 0; i < in_pa.size(); ++i) {
          const double r = sampson_error(refined, in_pa[i], in_pb[i]);
          weights[i] = 1.0 / (1.0 + (r / sigma) * (r / sigma));
        }
      }
      std::vector<int> inliers;
      double score = 0.0;
      for (int i = 0; i < n; ++i) {
        const double r = sampson_error(refined, pa[i], pb[i]);
        if (r <= params.ef_threshold_px) {
          inliers.push_back(i);
          score += r * r;
        } else {
          score += params.ef_threshold_px * params.ef_threshold_px;
        }
      }
      if (score <= ef_result.score) {
        ef_result.model = refined;
        ef_result.inliers = std::move(inliers);
        ef_result.score = score;
      }

      {
        std::vector<int> tight;
        for (int i = 0; i < n; ++i) {
          if (sampson_error(ef_result.model, pa[i], pb[i]) <=
              0.25 * params.ef_threshold_px) {
            tight.push_back(i);
          }
        }
        if (int(tight.size()) >= 8) {
        if (auto fit = estimate_fundamental(gather(pa, tight),
                                            gather(pb, tight))) {
          const double half = 0.5 * params.ef_threshold_px;
          const double sharp_old = msac_score(n, half, [&](int i) {
            return sampson_error(ef_result.model, pa[i], pb[i]);
          });
          const double sharp_new = msac_score(n, half, [&](int i) {
            return sampson_error(*fit, pa[i], pb[i]);
          });
          if (sharp_new < sharp_old) {
            std::vector<int> refreshed;
            double refreshed_score = 0.0;
            for (int i = 0; i < n; ++i) {
              const double r = sampson_error(*fit, pa[i], pb[i]);
              if (r <= params.ef_threshold_px) {
                refreshed.push_back(i);
                refreshed_score += r * r;
              } else {
                refreshed_score +=
                    params.ef_threshold_px * params.ef_threshold_px;
              }
            }
            ef_result.model = *fit;
            ef_result.inliers = std::move(refreshed);
            ef_result.score = refreshed_score;
          }
        }
        }
      }
    }
  }

  const int h_count = h_result.valid ? int(h_result.inliers.size()) : 0;
  const int ef_count = ef_result.valid ? int(ef_result.inliers.size()) : 0;
  if (std::max(h_count, ef_count) < params.min_inliers) return std::nullopt;

  TwoViewGeometry geometry;
  geometry.num_h_inliers = h_count;
  geometry.num_ef_inliers = ef_count;
  if (double(h_count) >= params.h_dominance * double(ef_count)) {
    geometry.model = TwoViewModel::Homography;
    geometry.matrix = h_result.model;
    geometry.inliers = h_result.inliers;
    geometry.init_degenerate = true;
  } else {
    geometry.model =
        intrinsics ? TwoViewModel::Essential : TwoViewModel::Fundamental;
    geometry.matrix = ef_result.model;
    geometry.inliers = ef_result.inliers;
    geometry.init_degenerate = false;
  }
  return geometry;
}

}  // namespace evrecon
