#include "evrecon/reconstruction.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "evrecon/errors.hpp"

namespace evrecon {

size_t Reconstruction::num_observations() const {
  size_t n = 0;
  for (const auto& [id, point] : points) n += point.track.size();
  return n;
}

double Reconstruction::mean_reprojection_error() const {
  double sum = 0.0;
  size_t n = 0;
  for (const auto& [id, point] : points) {
    for (const Observation& obs : point.track) {
      sum += reprojection_error(*this, point, obs);
      ++n;
    }
  }
  return n == 0 ? 0.0 : sum / double(n);
}

int Reconstruction::add_point(Point3D point, int track_index) {
  const int id = next_point_id++;
  points.emplace(id, std::move(point));
  if (track_index >= 0) track_to_point[track_index] = id;
  return id;
}

void Reconstruction::remove_point(int point_id) {
  points.erase(point_id);
  for (auto it = track_to_point.begin(); it != track_to_point.end();) {
    it = (it->second == point_id) ? track_to_point.erase(it) : std::next(it);
  }
}

void Reconstruction::update_point_errors() {
  for (auto& [id, point] : points) {
    double sum = 0.0;
    for (const Observation& obs : point.track) {
      sum += reprojection_error(*this, point, obs);
    }
    point.mean_reproj_error =
        point.track.empty() ? 0.0 : sum / double(point.track.size());
  }
}

double reprojection_error(const Reconstruction& recon, const Point3D& point,
                          const Observation& obs) {
  const auto it = recon.images.find(obs.image_id);
  if (it == recon.images.end()) return 0.0;
  const Eigen::Vector3d x_cam = it->second.apply(point.xyz);
  if (x_cam.z() <= 0.0) return std::numeric_limits<double>::max();
  return (project_camera(recon.intrinsics, x_cam) - obs.xy).norm();
}

double min_pairwise_triangulation_angle(const Reconstruction& recon,
                                        const Point3D& point) {
  std::vector<Eigen::Vector3d> centers;
  for (const Observation& obs : point.track) {
    const auto it = recon.images.find(obs.image_id);
    if (it != recon.images.end()) centers.push_back(it->second.center());
  }
  if (centers.size() < 2) return 0.0;
  double min_angle = std::numeric_limits<double>::max();
  for (size_t i = 0; i < centers.size(); ++i) {
    for (size_t j = i + 1; j < centers.size(); ++j) {
      min_angle = std::min(
          min_angle, triangulation_angle(centers[i], centers[j], point.xyz));
    }
  }
  return min_angle;
}

void write_reconstruction_text(const std::string& directory,
                               const Reconstruction& recon, int sensor_width,
                               int sensor_height) {
  namespace fs = std::filesystem;
  fs::create_directories(directory);

  {
    std::ofstream out(fs::path(directory) / "cameras.txt");
    if (!out) throw IoFailure("cannot write cameras.txt in " + directory);
    out << "# camera_id model width height fx fy cx cy k1\n";
    char line[256];
    std::snprintf(line, sizeof(line),
                  "1 PINHOLE_RADIAL %d %d %.12g %.12g %.12g %.12g %.12g\n",
                  sensor_width, sensor_height, recon.intrinsics.fx,
                  recon.intrinsics.fy, recon.intrinsics.cx, recon.intrinsics.cy,
                  recon.intrinsics.k1);
    out << line;
  }

  // Observation lists per image, ordered by point id.
  std::map<int, std::vector<std::pair<int, Eigen::Vector2d>>> image_obs;
  for (const auto& [point_id, point] : recon.points) {
    for (const Observation& obs : point.track) {
      image_obs[obs.image_id].emplace_back(point_id, obs.xy);
    }
  }

  {
    std::ofstream out(fs::path(directory) / "images.txt");
    if (!out) throw IoFailure("cannot write images.txt in " + directory);
    out << "# image_id qw qx qy qz tx ty tz camera_id name\n"
        << "# observations: x y point3d_id ...\n";
    char line[512];
    for (const auto& [image_id, pose] : recon.images) {
      std::snprintf(line, sizeof(line),
                    "%d %.12g %.12g %.12g %.12g %.12g %.12g %.12g 1 image%04d\n",
                    image_id, pose.q.w(), pose.q.x(), pose.q.y(), pose.q.z(),
                    pose.t.x(), pose.t.y(), pose.t.z(), image_id);
      out << line;
      const auto it = image_obs.find(image_id);
      if (it != image_obs.end()) {
        bool first = true;
        for (const auto& [point_id, xy] : it->second) {
          std::snprintf(line, sizeof(line), "%s%.6f %.6f %d", first ? "" : " ",
                        xy.x(), xy.y(), point_id);
          out << line;
          first = false;
        }
      }
      out << "\n";
    }
  }

  {
    std::ofstream out(fs::path(directory) / "points3D.txt");
    if (!out) throw IoFailure("cannot write points3D.txt in " + directory);
    out << "# point3d_id x y z error track: (image_id feature_idx) ...\n";
    char line[256];
    for (const auto& [point_id, point] : recon.points) {
      std::snprintf(line, sizeof(line), "%d %.12g %.12g %.12g %.6f", point_id,
                    point.xyz.x(), point.xyz.y(), point.xyz.z(),
                    point.mean_reproj_error);
      out << line;
      for (const Observation& obs : point.track) {
        std::snprintf(line, sizeof(line), " %d %d", obs.image_id,
                      obs.feature_index);
        out << line;
      }
      out << "\n";
    }
  }
}

Reconstruction read_reconstruction_text(const std::string& directory) {
  namespace fs = std::filesystem;
  Reconstruction recon;

  {
    std::ifstream in(fs::path(directory) / "cameras.txt");
    if (!in) throw IoFailure("cannot read cameras.txt in " + directory);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ss(line);
      int camera_id = 0, w = 0, h = 0;
      std::string model;
      if (!(ss >> camera_id >> model >> w >> h >> recon.intrinsics.fx >>
            recon.intrinsics.fy >> recon.intrinsics.cx >> recon.intrinsics.cy >>
            recon.intrinsics.k1)) {
        throw CorruptHeader("bad cameras.txt line: " + line);
      }
      break;
    }
  }

  // (image_id, point_id) -> observed pixel, from images.txt.
  std::map<std::pair<int, int>, Eigen::Vector2d> observed;
  {
    std::ifstream in(fs::path(directory) / "images.txt");
    if (!in) throw IoFailure("cannot read images.txt in " + directory);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ss(line);
      int image_id = 0, camera_id = 0;
      double qw, qx, qy, qz, tx, ty, tz;
      std::string name;
      if (!(ss >> image_id >> qw >> qx >> qy >> qz >> tx >> ty >> tz >>
            camera_id >> name)) {
        throw CorruptHeader("bad images.txt pose line: " + line);
      }
      Pose pose;
      pose.q = Eigen::Quaterniond(qw, qx, qy, qz).normalized();
      pose.t = Eigen::Vector3d(tx, ty, tz);
      recon.images[image_id] = pose;

      if (!std::getline(in, line)) break;
      std::istringstream obs(line);
      double x, y;
      int point_id;
      while (obs >> x >> y >> point_id) {
        observed[{image_id, point_id}] = Eigen::Vector2d(x, y);
      }
    }
  }

  {
    std::ifstream in(fs::path(directory) / "points3D.txt");
    if (!in) throw IoFailure("cannot read points3D.txt in " + directory);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ss(line);
      int point_id = 0;
      Point3D point;
      double error = 0.0;
      if (!(ss >> point_id >> point.xyz.x() >> point.xyz.y() >>
            point.xyz.z() >> error)) {
        throw CorruptHeader("bad points3D.txt line: " + line);
      }
      point.mean_reproj_error = error;
      int image_id, feature_index;
      while (ss >> image_id >> feature_index) {
        Observation obs;
        obs.image_id = image_id;
        obs.feature_index = feature_index;
        const auto it = observed.find({image_id, point_id});
        if (it != observed.end()) obs.xy = it->second;
        point.track.push_back(obs);
      }
      recon.points.emplace(point_id, std::move(point));
      recon.next_point_id = std::max(recon.next_point_id, point_id + 1);
    }
  }

  auto it = recon.images.begin();
  if (it != recon.images.end()) {
    recon.base_image = it->first;
    if (++it != recon.images.end()) recon.gauge_image = it->first;
  }
  return recon;
}

}  // namespace evrecon
