#include "evrecon/ply.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "evrecon/errors.hpp"

namespace evrecon {

namespace {

struct Property {
  std::string type;
  std::string name;
};

size_t type_size(const std::string& type) {
  if (type == "double" || type == "float64") return 8;
  if (type == "float" || type == "float32") return 4;
  if (type == "uchar" || type == "uint8") return 1;
  if (type == "int" || type == "int32" || type == "uint" || type == "uint32") {
    return 4;
  }
  if (type == "short" || type == "ushort") return 2;
  throw CorruptHeader("unsupported PLY property type: " + type);
}

double read_binary_scalar(std::istream& in, const std::string& type) {
  if (type == "double" || type == "float64") {
    double v;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
  }
  if (type == "float" || type == "float32") {
    float v;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
  }
  if (type == "uchar" || type == "uint8") {
    unsigned char v;
    in.read(reinterpret_cast<char*>(&v), 1);
    return v;
  }
  char skip[8];
  in.read(skip, type_size(type));
  return 0.0;
}

}  // namespace

void write_ply(const PlyCloud& cloud, const std::string& path, bool binary) {
  for (const auto& p : cloud.points) {
    if (!p.allFinite()) {
      throw std::invalid_argument("non-finite point coordinates");
    }
  }
  const bool has_color = !cloud.colors.empty();
  const bool has_normal = !cloud.normals.empty();
  if ((has_color && cloud.colors.size() != cloud.points.size()) ||
      (has_normal && cloud.normals.size() != cloud.points.size())) {
    throw std::invalid_argument("attribute count mismatch");
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot open for writing: " + path);
  out << "ply\n"
      << (binary ? "format binary_little_endian 1.0\n" : "format ascii 1.0\n")
      << "element vertex " << cloud.points.size() << "\n"
      << "property double x\nproperty double y\nproperty double z\n";
  if (has_normal) {
    out << "property float nx\nproperty float ny\nproperty float nz\n";
  }
  if (has_color) {
    out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  }
  out << "end_header\n";

  if (binary) {
    for (size_t i = 0; i < cloud.points.size(); ++i) {
      out.write(reinterpret_cast<const char*>(cloud.points[i].data()), 24);
      if (has_normal) {
        out.write(reinterpret_cast<const char*>(cloud.normals[i].data()), 12);
      }
      if (has_color) {
        out.write(reinterpret_cast<const char*>(cloud.colors[i].data()), 3);
      }
    }
  } else {
    char line[256];
    for (size_t i = 0; i < cloud.points.size(); ++i) {
      std::snprintf(line, sizeof(line), "%.17g %.17g %.17g",
                    cloud.points[i].x(), cloud.points[i].y(),
                    cloud.points[i].z());
      out << line;
      if (has_normal) {
        std::snprintf(line, sizeof(line), " %.9g %.9g %.9g",
                      cloud.normals[i].x(), cloud.normals[i].y(),
                      cloud.normals[i].z());
        out << line;
      }
      if (has_color) {
        std::snprintf(line, sizeof(line), " %d %d %d", cloud.colors[i][0],
                      cloud.colors[i][1], cloud.colors[i][2]);
        out << line;
      }
      out << "\n";
    }
  }
  if (!out) throw IoFailure("write failed: " + path);
}

PlyCloud read_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open: " + path);

  std::string line;
  if (!std::getline(in, line) || line != "ply") {
    throw CorruptHeader("not a PLY file: " + path);
  }
  bool binary = false;
  size_t vertex_count = 0;
  std::vector<Property> properties;
  bool in_vertex_element = false;

  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string token;
    ss >> token;
    if (token == "comment") continue;
    if (token == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt == "binary_little_endian") {
        binary = true;
      } else if (fmt == "ascii") {
        binary = false;
      } else {
        throw UnsupportedImageFormat("unsupported PLY format: " + fmt);
      }
    } else if (token == "element") {
      std::string name;
      size_t count = 0;
      ss >> name >> count;
      in_vertex_element = name == "vertex";
      if (in_vertex_element) {
        vertex_count = count;
      } else if (count != 0) {
        throw UnsupportedImageFormat("only vertex elements supported: " + name);
      }
    } else if (token == "property") {
      if (!in_vertex_element) continue;
      Property p;
      ss >> p.type >> p.name;
      if (p.type == "list") {
        throw UnsupportedImageFormat("list properties not supported");
      }
      properties.push_back(p);
    } else if (token == "end_header") {
      break;
    }
  }

  PlyCloud cloud;
  cloud.points.resize(vertex_count, Eigen::Vector3d::Zero());
  bool has_color = false, has_normal = false;
  for (const Property& p : properties) {
    has_color = has_color || p.name == "red";
    has_normal = has_normal || p.name == "nx";
  }
  if (has_color) cloud.colors.resize(vertex_count, {0, 0, 0});
  if (has_normal) cloud.normals.resize(vertex_count, Eigen::Vector3f::Zero());

  for (size_t i = 0; i < vertex_count; ++i) {
    std::istringstream row;
    if (!binary) {
      if (!std::getline(in, line)) {
        throw CorruptHeader("truncated PLY data: " + path);
      }
      row.str(line);
    }
    for (const Property& p : properties) {
      double value = 0.0;
      if (binary) {
        value = read_binary_scalar(in, p.type);
        if (!in) throw CorruptHeader("truncated PLY data: " + path);
      } else if (!(row >> value)) {
        throw CorruptHeader("bad PLY row: " + line);
      }
      if (p.name == "x") cloud.points[i].x() = value;
      else if (p.name == "y") cloud.points[i].y() = value;
      else if (p.name == "z") cloud.points[i].z() = value;
      else if (p.name == "nx") cloud.normals[i].x() = float(value);
      else if (p.name == "ny") cloud.normals[i].y() = float(value);
      else if (p.name == "nz") cloud.normals[i].z() = float(value);
      else if (p.name == "red") cloud.colors[i][0] = uint8_t(value);
      else if (p.name == "green") cloud.colors[i][1] = uint8_t(value);
      else if (p.name == "blue") cloud.colors[i][2] = uint8_t(value);
    }
  }
  return cloud;
}

PlyCloud to_ply_cloud(const DensePointCloud& dense) {
  PlyCloud cloud;
  cloud.points.reserve(dense.points.size());
  cloud.colors.reserve(dense.points.size());
  cloud.normals.reserve(dense.points.size());
  for (const DensePoint& p : dense.points) {
    cloud.points.push_back(p.xyz);
    cloud.colors.push_back(p.color);
    cloud.normals.push_back(p.normal);
  }
  return cloud;
}

PlyCloud to_ply_cloud(const Reconstruction& recon) {
  PlyCloud cloud;
  cloud.points.reserve(recon.points.size());
  for (const auto& [id, point] : recon.points) {
    cloud.points.push_back(point.xyz);
  }
  return cloud;
}

}  // namespace evrecon
