#include <doctest.h>

#include <cmath>
#include <random>

#include "evrecon/errors.hpp"
#include "evrecon/five_point.hpp"
#include "evrecon/two_view.hpp"

using namespace evrecon;

namespace {

FeatureSet points_to_features(int image_id,
                              const std::vector<Eigen::Vector2d>& points) {
  FeatureSet set;
  set.image_id = image_id;
  for (const auto& p : points) {
    Feature f;
    f.x = p.x();
    f.y = p.y();
    f.descriptor.fill(0.0f);
    f.descriptor[0] = 1.0f;
    set.features.push_back(f);
  }
  return set;
}

MatchSet identity_matches(int n) {
  MatchSet matches;
  matches.image_a = 0;
  matches.image_b = 1;
  for (int i = 0; i < n; ++i) matches.matches.emplace_back(i, i);
  return matches;
}

// Test-side Sampson distance, kept independent of the library routine.
double reference_sampson(const Eigen::Matrix3d& f, const Eigen::Vector2d& a,
                         const Eigen::Vector2d& b) {
  const Eigen::Vector3d xa(a.x(), a.y(), 1.0);
  const Eigen::Vector3d xb(b.x(), b.y(), 1.0);
  const double c = xb.transpose() * f * xa;
  const Eigen::Vector3d fa = f * xa;
  const Eigen::Vector3d fb = f.transpose() * xb;
  return std::sqrt(c * c / (fa.head<2>().squaredNorm() +
                            fb.head<2>().squaredNorm()));
}

double matrix_distance_up_to_scale(const Eigen::Matrix3d& a,
                                   const Eigen::Matrix3d& b) {
  const Eigen::Matrix3d an = a / a.norm();
  const Eigen::Matrix3d bn = b / b.norm();
  return std::min((an - bn).norm(), (an + bn).norm());
}

}  // namespace

TEST_CASE("five-point solver recovers a known essential matrix") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  int recovered = 0;
  for (int trial = 0; trial < 25; ++trial) {
    Pose relative;
    relative.q = Eigen::Quaterniond(1.0, 0.2 * u(rng), 0.2 * u(rng),
                                    0.2 * u(rng))
                     .normalized();
    relative.t = Eigen::Vector3d(u(rng), u(rng), 0.3 * u(rng)).normalized();
    const Eigen::Matrix3d truth = essential_from_pose(relative);

    std::vector<Eigen::Vector2d> pa, pb;
    for (int i = 0; i < 5; ++i) {
      const Eigen::Vector3d x(2.0 * u(rng), 2.0 * u(rng), 4.0 + u(rng));
      const Eigen::Vector3d xb = relative.apply(x);
      pa.push_back(x.hnormalized());
      pb.push_back(xb.hnormalized());
    }
    const auto candidates = five_point_essential(pa, pb);
    REQUIRE(!candidates.empty());

    double best = 1e9;
    for (const Eigen::Matrix3d& e : candidates) {
      best = std::min(best, matrix_distance_up_to_scale(e, truth));

      // Internal constraints of an essential matrix.
      CHECK(std::abs(e.determinant()) < 1e-8);
      const Eigen::Matrix3d c =
          2.0 * e * e.transpose() * e - (e * e.transpose()).trace() * e;
      CHECK(c.norm() < 1e-7);

      // Epipolar constraint on the sample.
      for (size_t i = 0; i < pa.size(); ++i) {
        const double r = pb[i].homogeneous().transpose() * e *
                         pa[i].homogeneous();
        CHECK(std::abs(r) < 1e-9);
      }
    }
    if (best < 1e-8) ++recovered;
  }
  CHECK(recovered == 25);
}

TEST_CASE("homography RANSAC recovers the generating model") {
  std::mt19937_64 rng(5150);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::Matrix3d truth;
  truth << 1.05, 0.02, 4.0, -0.01, 0.98, -2.5, 1e-5, -2e-5, 1.0;

  std::vector<Eigen::Vector2d> pa, pb;
  for (int i = 0; i < 50; ++i) {
    const Eigen::Vector2d p(20.0 + 300.0 * u(rng), 20.0 + 220.0 * u(rng));
    pa.push_back(p);
    pb.push_back((truth * p.homogeneous()).hnormalized());
  }
  for (int i = 0; i < 10; ++i) {  // uniform outliers
    pa.emplace_back(346.0 * u(rng), 260.0 * u(rng));
    pb.emplace_back(346.0 * u(rng), 260.0 * u(rng));
  }

  const FeatureSet fa = points_to_features(0, pa);
  const FeatureSet fb = points_to_features(1, pb);
  VerifyParams params;
  params.seed = 99;
  const auto geometry =
      verify_pair(identity_matches(60), fa, fb, std::nullopt, params);
  REQUIRE(geometry.has_value());
  CHECK(geometry->num_h_inliers >= 50);
  CHECK(geometry->model == TwoViewModel::Homography);
  const Eigen::Matrix3d h = geometry->matrix / geometry->matrix(2, 2);
  CHECK((h - truth).norm() < 1e-3);
}

TEST_CASE("identity correspondences give the identity homography") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Eigen::Vector2d> points;
  for (int i = 0; i < 40; ++i) {
    points.emplace_back(320.0 * u(rng), 240.0 * u(rng));
  }
  const FeatureSet fa = points_to_features(0, points);
  const FeatureSet fb = points_to_features(1, points);
  const auto geometry =
      verify_pair(identity_matches(40), fa, fb, std::nullopt, {});
  REQUIRE(geometry.has_value());
  CHECK(geometry->model == TwoViewModel::Homography);
  CHECK(geometry->init_degenerate);
  const Eigen::Matrix3d h = geometry->matrix / geometry->matrix(2, 2);
  CHECK((h - Eigen::Matrix3d::Identity()).norm() < 1e-6);
}

TEST_CASE("essential matrix recovered from calibrated views") {
  std::mt19937_64 rng(31337);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const CameraIntrinsics k{300.0, 300.0, 173.0, 130.0, 0.0};

  Pose relative;
  relative.q =
      Eigen::Quaterniond(1.0, 0.05, -0.08, 0.03).normalized();
  relative.t = Eigen::Vector3d(0.8, 0.1, -0.2).normalized();
  const Eigen::Matrix3d truth = essential_from_pose(relative);

  std::vector<Eigen::Vector2d> pa, pb;
  while (pa.size() < 60) {
    const Eigen::Vector3d x(3.0 * u(rng), 2.0 * u(rng), 6.0 + 2.0 * u(rng));
    const Eigen::Vector3d xb = relative.apply(x);
    if (xb.z() <= 0.1) continue;
    const Eigen::Vector2d qa = project_camera(k, x);
    const Eigen::Vector2d qb = project_camera(k, xb);
    if (qa.x() < 0 || qa.x() > 346 || qa.y() < 0 || qa.y() > 260) continue;
    if (qb.x() < 0 || qb.x() > 346 || qb.y() < 0 || qb.y() > 260) continue;
    pa.push_back(qa);
    pb.push_back(qb);
  }
  // 20% outliers.
  std::uniform_real_distribution<double> px(0.0, 346.0), py(0.0, 260.0);
  for (int i = 0; i < 15; ++i) {
    pa.emplace_back(px(rng), py(rng));
    pb.emplace_back(px(rng), py(rng));
  }

  const FeatureSet fa = points_to_features(0, pa);
  const FeatureSet fb = points_to_features(1, pb);
  VerifyParams params;
  params.seed = 4;
  const auto geometry =
      verify_pair(identity_matches(int(pa.size())), fa, fb, k, params);
  REQUIRE(geometry.has_value());
  CHECK(geometry->model == TwoViewModel::Essential);
  CHECK(!geometry->init_degenerate);
  CHECK(geometry->num_ef_inliers >= 55);
  CHECK(matrix_distance_up_to_scale(geometry->matrix, truth) < 1e-3);

  SUBCASE("reported inliers satisfy the epipolar residual independently") {
    const Eigen::Matrix3d k_inv = k.matrix().inverse();
    const Eigen::Matrix3d f =
        k_inv.transpose() * geometry->matrix * k_inv;
    for (int idx : geometry->inliers) {
      CHECK(reference_sampson(f, pa[idx], pb[idx]) <= 1.5 + 1e-9);
    }
  }

  SUBCASE("verification is deterministic under a fixed seed") {
    const auto again =
        verify_pair(identity_matches(int(pa.size())), fa, fb, k, params);
    REQUIRE(again.has_value());
    CHECK(again->matrix == geometry->matrix);
    CHECK(again->inliers == geometry->inliers);
  }
}

TEST_CASE("fundamental path works uncalibrated") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const CameraIntrinsics k{250.0, 250.0, 160.0, 120.0, 0.0};
  Pose relative;
  relative.q = Eigen::Quaterniond(1.0, 0.02, 0.12, -0.01).normalized();
  relative.t = Eigen::Vector3d(0.5, -0.3, 0.1).normalized();

  std::vector<Eigen::Vector2d> pa, pb;
  while (pa.size() < 50) {
    const Eigen::Vector3d x(3.0 * u(rng), 2.0 * u(rng), 7.0 + 2.0 * u(rng));
    const Eigen::Vector3d xb = relative.apply(x);
    if (xb.z() <= 0.1) continue;
    pa.push_back(project_camera(k, x));
    pb.push_back(project_camera(k, xb));
  }
  const FeatureSet fa = points_to_features(0, pa);
  const FeatureSet fb = points_to_features(1, pb);
  const auto geometry =
      verify_pair(identity_matches(50), fa, fb, std::nullopt, {});
  REQUIRE(geometry.has_value());
  CHECK(geometry->model == TwoViewModel::Fundamental);
  // F inliers should cover essentially all correspondences.
  CHECK(geometry->num_ef_inliers >= 48);

  // The recovered F agrees with the one composed from ground truth.
  const Eigen::Matrix3d k_inv = k.matrix().inverse();
  const Eigen::Matrix3d truth =
      k_inv.transpose() * essential_from_pose(relative) * k_inv;
  CHECK(matrix_distance_up_to_scale(geometry->matrix, truth) < 1e-3);
}

TEST_CASE("too few matches are rejected, collinear throw") {
  std::vector<Eigen::Vector2d> points;
  for (int i = 0; i < 30; ++i) points.emplace_back(double(i), 2.0 * i + 1.0);
  const FeatureSet fa = points_to_features(0, points);
  const FeatureSet fb = points_to_features(1, points);

  SUBCASE("collinear configuration") {
    CHECK_THROWS_AS(
        verify_pair(identity_matches(30), fa, fb, std::nullopt, {}),
        DegenerateConfiguration);
  }
  SUBCASE("below the minimal sample") {
    CHECK(!verify_pair(identity_matches(5), fa, fb, std::nullopt, {})
               .has_value());
  }
}

TEST_CASE("essential decomposition contains the true pose") {
  Pose relative;
  relative.q = Eigen::Quaterniond(0.9, 0.1, -0.2, 0.3).normalized();
  relative.t = Eigen::Vector3d(0.3, -0.7, 0.2).normalized();
  const Eigen::Matrix3d e = essential_from_pose(relative);
  const auto poses = decompose_essential(e);
  REQUIRE(poses.size() == 4);
  double best_rot = 1e9, best_trans = 1e9;
  for (const Pose& p : poses) {
    best_rot = std::min(best_rot, p.q.angularDistance(relative.q));
    best_trans = std::min(best_trans, (p.t - relative.t).norm());
  }
  CHECK(best_rot < 1e-9);
  CHECK(best_trans < 1e-9);
}
