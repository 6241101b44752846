#include "evrecon/five_point.hpp"

#include <array>
#include <cmath>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

namespace evrecon {

namespace {

// Polynomials in (x, y, z) up to degree 3, in the fixed monomial orders
//   degree 1: x, y, z, 1
//   degree 2: x2, xy, y2, xz, yz, z2, x, y, z, 1
//   degree 3: x3, x2y, xy2, y3, x2z, xyz, y2z, xz2, yz2, z3,
//             x2, xy, y2, xz, yz, z2, x, y, z, 1
// The degree-3 leading block (first 10 columns) is what the Gauss-Jordan
// elimination solves for.
using Poly1 = Eigen::Matrix<double, 4, 1>;
using Poly2 = Eigen::Matrix<double, 10, 1>;
using Poly3 = Eigen::Matrix<double, 20, 1>;

struct Exponents {
  int x, y, z;
};

constexpr std::array<Exponents, 4> kMon1 = {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0, 0, 0}}};
constexpr std::array<Exponents, 10> kMon2 = {{{2, 0, 0},
                                              {1, 1, 0},
                                              {0, 2, 0},
                                              {1, 0, 1},
                                              {0, 1, 1},
                                              {0, 0, 2},
                                              {1, 0, 0},
                                              {0, 1, 0},
                                              {0, 0, 1},
                                              {0, 0, 0}}};
constexpr std::array<Exponents, 20> kMon3 = {{{3, 0, 0}, {2, 1, 0}, {1, 2, 0},
                                              {0, 3, 0}, {2, 0, 1}, {1, 1, 1},
                                              {0, 2, 1}, {1, 0, 2}, {0, 1, 2},
                                              {0, 0, 3}, {2, 0, 0}, {1, 1, 0},
                                              {0, 2, 0}, {1, 0, 1}, {0, 1, 1},
                                              {0, 0, 2}, {1, 0, 0}, {0, 1, 0},
                                              {0, 0, 1}, {0, 0, 0}}};

template <size_t N>
constexpr int find_monomial(const std::array<Exponents, N>& table,
                            const Exponents& e) {
  for (size_t i = 0; i < N; ++i) {
    if (table[i].x == e.x && table[i].y == e.y && table[i].z == e.z) {
      return int(i);
    }
  }
  return -1;
}

Poly2 multiply(const Poly1& a, const Poly1& b) {
  Poly2 out = Poly2::Zero();
  for (int i = 0; i < 4; ++i) {
    if (a[i] == 0.0) continue;
    for (int j = 0; j < 4; ++j) {
      if (b[j] == 0.0) continue;
      const Exponents e{kMon1[i].x + kMon1[j].x, kMon1[i].y + kMon1[j].y,
                        kMon1[i].z + kMon1[j].z};
      out[find_monomial(kMon2, e)] += a[i] * b[j];
    }
  }
  return out;
}

Poly3 multiply(const Poly2& a, const Poly1& b) {
  Poly3 out = Poly3::Zero();
  for (int i = 0; i < 10; ++i) {
    if (a[i] == 0.0) continue;
    for (int j = 0; j < 4; ++j) {
      if (b[j] == 0.0) continue;
      const Exponents e{kMon2[i].x + kMon1[j].x, kMon2[i].y + kMon1[j].y,
                        kMon2[i].z + kMon1[j].z};
      out[find_monomial(kMon3, e)] += a[i] * b[j];
    }
  }
  return out;
}

}  // namespace

std::vector<Eigen::Matrix3d> five_point_essential(
    const std::vector<Eigen::Vector2d>& points_a,
    const std::vector<Eigen::Vector2d>& points_b) {
  const size_t n = points_a.size();
  if (n < 5 || points_b.size() != n) return {};

  // Epipolar constraint matrix: rows are the Kronecker products for
  // x_b^T E x_a = 0 with E stacked row-major.
  Eigen::MatrixXd q(n, 9);
  for (size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d a = points_a[i].homogeneous();
    const Eigen::Vector3d b = points_b[i].homogeneous();
    q.row(i) << b.x() * a.x(), b.x() * a.y(), b.x(), b.y() * a.x(),
        b.y() * a.y(), b.y(), a.x(), a.y(), 1.0;
  }

  // Four-dimensional nullspace basis E = x E1 + y E2 + z E3 + E4.
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(
      q, Eigen::ComputeFullU | Eigen::ComputeFullV);
  std::array<Eigen::Matrix3d, 4> basis;
  for (int k = 0; k < 4; ++k) {
    const Eigen::Matrix<double, 9, 1> v = svd.matrixV().col(5 + k);
    basis[k] = Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(
        v.data());
  }

  // Entries of E as degree-1 polynomials.
  std::array<std::array<Poly1, 3>, 3> e;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      e[r][c] << basis[0](r, c), basis[1](r, c), basis[2](r, c), basis[3](r, c);
    }
  }

  Eigen::Matrix<double, 10, 20> constraints;
  int row = 0;

  // det(E) = 0.
  {
    const auto minor = [&](int r0, int r1, int c0, int c1) -> Poly2 {
      return multiply(e[r0][c0], e[r1][c1]) - multiply(e[r0][c1], e[r1][c0]);
    };
    Poly3 det = multiply(minor(1, 2, 1, 2), e[0][0]) -
                multiply(minor(1, 2, 0, 2), e[0][1]) +
                multiply(minor(1, 2, 0, 1), e[0][2]);
    constraints.row(row++) = det.transpose();
  }

  // 2 E E^T E - trace(E E^T) E = 0 (nine equations).
  {
    std::array<std::array<Poly2, 3>, 3> eet;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        eet[r][c] = multiply(e[r][0], e[c][0]) + multiply(e[r][1], e[c][1]) +
                    multiply(e[r][2], e[c][2]);
      }
    }
    const Poly2 trace = eet[0][0] + eet[1][1] + eet[2][2];
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        Poly3 expr = Poly3::Zero();
        for (int k = 0; k < 3; ++k) {
          expr += multiply(eet[r][k], e[k][c]);
        }
        expr = 2.0 * expr - multiply(trace, e[r][c]);
        constraints.row(row++) = expr.transpose();
      }
    }
  }

  // Eliminate the 10 leading degree-3 monomials.
  const Eigen::Matrix<double, 10, 10> lead = constraints.leftCols<10>();
  const Eigen::FullPivLU<Eigen::Matrix<double, 10, 10>> lu(lead);
  if (lu.rank() < 10) return {};
  const Eigen::Matrix<double, 10, 10> reduced =
      lu.solve(constraints.rightCols<10>());

  // Action matrix for multiplication by x on the quotient-ring basis
  // [x2, xy, y2, xz, yz, z2, x, y, z, 1].
  Eigen::Matrix<double, 10, 10> action = Eigen::Matrix<double, 10, 10>::Zero();
  action.row(0) = -reduced.row(0);  // x*x2  = x3
  action.row(1) = -reduced.row(1);  // x*xy  = x2y
  action.row(2) = -reduced.row(2);  // x*y2  = xy2
  action.row(3) = -reduced.row(4);  // x*xz  = x2z
  action.row(4) = -reduced.row(5);  // x*yz  = xyz
  action.row(5) = -reduced.row(7);  // x*z2  = xz2
  action(6, 0) = 1.0;               // x*x   = x2
  action(7, 1) = 1.0;               // x*y   = xy
  action(8, 3) = 1.0;               // x*z   = xz
  action(9, 6) = 1.0;               // x*1   = x
  const Eigen::EigenSolver<Eigen::Matrix<double, 10, 10>> eig(action);

  std::vector<Eigen::Matrix3d> solutions;
  for (int i = 0; i < 10; ++i) {
    if (std::abs(eig.eigenvalues()[i].imag()) > 1e-10) continue;
    const Eigen::Matrix<std::complex<double>, 10, 1> v =
        eig.eigenvectors().col(i);
    const std::complex<double> w = v[9];
    if (std::abs(w) < 1e-12) continue;
    const double x = (v[6] / w).real();
    const double y = (v[7] / w).real();
    const double z = (v[8] / w).real();

    Eigen::Matrix3d essential =
        x * basis[0] + y * basis[1] + z * basis[2] + basis[3];
    const double norm = essential.norm();
    if (!(norm > 1e-12) || !essential.allFinite()) continue;
    solutions.push_back(essential / norm);
  }
  return solutions;
}

}  // namespace evrecon
