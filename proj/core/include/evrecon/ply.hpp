#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "evrecon/mvs.hpp"
#include "evrecon/reconstruction.hpp"

namespace evrecon {

// Vertex-cloud PLY payload. Colors and normals are optional but must match
// the point count when present.
struct PlyCloud {
  std::vector<Eigen::Vector3d> points;
  std::vector<std::array<uint8_t, 3>> colors;
  std::vector<Eigen::Vector3f> normals;
};

// Writes PLY 1.0; binary variant is little-endian with double positions so
// round trips are bitwise exact.
void write_ply(const PlyCloud& cloud, const std::string& path, bool binary);

// Reads the vertex clouds this project writes (double or float positions,
// optional uchar colors and float normals, ascii or binary little-endian).
PlyCloud read_ply(const std::string& path);

PlyCloud to_ply_cloud(const DensePointCloud& dense);
PlyCloud to_ply_cloud(const Reconstruction& recon);

}  // namespace evrecon
