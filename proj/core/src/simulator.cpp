#include "evrecon/simulator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include "evrecon/errors.hpp"
#include "evrecon/parallel.hpp"

namespace evrecon {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr int kTextureComponents = 24;

struct TextureComponent {
  double fu, fv, phase, amplitude;
};

std::vector<TextureComponent> make_components(uint64_t seed, double base_freq) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * kPi);
  std::uniform_real_distribution<double> freq(0.4, 4.0);
  std::uniform_real_distribution<double> amp(0.4, 1.0);
  std::vector<TextureComponent> components(kTextureComponents);
  for (auto& c : components) {
    const double f = freq(rng) * base_freq * 2.0 * kPi;
    const double dir = angle(rng);
    c.fu = f * std::cos(dir);
    c.fv = f * std::sin(dir);
    c.phase = angle(rng);
    c.amplitude = amp(rng);
  }
  return components;
}

struct RayHit {
  double depth = -1.0;  // camera-frame z
  double u = 0.0, v = 0.0;
  double uv_offset = 0.0;  // decorrelates texture between surfaces
};

// Slab-method ray/box intersection; returns entry distance or -1.
double intersect_box(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                     const Eigen::Vector3d& lo, const Eigen::Vector3d& hi,
                     int* face_axis, double* face_sign) {
  double t_near = -1e300, t_far = 1e300;
  int axis = -1;
  double sign = 0.0;
  for (int k = 0; k < 3; ++k) {
    if (std::abs(dir[k]) < 1e-15) {
      if (origin[k] < lo[k] || origin[k] > hi[k]) return -1.0;
      continue;
    }
    double t0 = (lo[k] - origin[k]) / dir[k];
    double t1 = (hi[k] - origin[k]) / dir[k];
    double s = -1.0;
    if (t0 > t1) {
      std::swap(t0, t1);
      s = 1.0;
    }
    if (t0 > t_near) {
      t_near = t0;
      axis = k;
      sign = s;
    }
    t_far = std::min(t_far, t1);
    if (t_near > t_far) return -1.0;
  }
  if (axis < 0 || t_near <= 0.0) return -1.0;
  *face_axis = axis;
  *face_sign = sign;
  return t_near;
}

// Exit distance through a box the ray starts inside of; -1 if outside.
double exit_box(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                const Eigen::Vector3d& lo, const Eigen::Vector3d& hi,
                int* face_axis) {
  double t_far = 1e300;
  int axis = -1;
  for (int k = 0; k < 3; ++k) {
    if (std::abs(dir[k]) < 1e-15) {
      if (origin[k] < lo[k] || origin[k] > hi[k]) return -1.0;
      continue;
    }
    const double t0 = (lo[k] - origin[k]) / dir[k];
    const double t1 = (hi[k] - origin[k]) / dir[k];
    const double t_exit = std::max(t0, t1);
    if (t_exit < t_far) {
      t_far = t_exit;
      axis = k;
    }
  }
  if (axis < 0 || t_far <= 0.0) return -1.0;
  *face_axis = axis;
  return t_far;
}

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double hash01(uint64_t x) {
  return double(splitmix64(x) >> 11) * 0x1.0p-53;
}

class SceneRenderer {
 public:
  explicit SceneRenderer(const SyntheticScene& scene)
      : scene_(scene),
        components_(make_components(scene.texture_seed, scene.texture_frequency)),
        amplitude_sum_(0.0) {
    for (const auto& c : components_) amplitude_sum_ += c.amplitude;
  }

  // Low-frequency cosine field plus a grid of pseudo-random Gaussian bumps;
  // the bumps carry the local structure that feature detection and
  // photometric matching need.
  double albedo(double u, double v) const {
    double s = 0.0;
    for (const auto& c : components_) {
      s += c.amplitude * std::cos(c.fu * u + c.fv * v + c.phase);
    }
    const double waves = 0.5 + 0.5 * s / amplitude_sum_;
    const double bumps = bump_field(u, v);
    const double mixed = std::clamp(0.3 * waves + 0.7 * bumps, 0.0, 1.0);
    return scene_.min_intensity + (1.0 - scene_.min_intensity) * mixed;
  }

  double bump_field(double u, double v) const {
    const double cells_per_unit = 2.0 * scene_.texture_frequency;
    const double pu = u * cells_per_unit;
    const double pv = v * cells_per_unit;
    const auto iu = int64_t(std::floor(pu));
    const auto iv = int64_t(std::floor(pv));
    constexpr double sigma = 0.28;
    constexpr double inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);

    double value = 0.0;
    for (int64_t dj = -1; dj <= 1; ++dj) {
      for (int64_t di = -1; di <= 1; ++di) {
        const uint64_t cell = splitmix64(uint64_t(iu + di) * 0x100000001b3ull ^
                                         uint64_t(iv + dj)) ^
                              scene_.texture_seed;
        const double cx = double(iu + di) + hash01(cell);
        const double cy = double(iv + dj) + hash01(cell ^ 0x517cc1b727220a95ull);
        const double amp = 0.55 + 0.45 * hash01(cell ^ 0x2545f4914f6cdd1dull);
        const double du = pu - cx;
        const double dv = pv - cy;
        value += amp * std::exp(-(du * du + dv * dv) * inv_two_sigma2);
      }
    }
    return std::min(value, 1.0);
  }

  // Camera-frame depth and surface texture coordinates along one pixel ray.
  RayHit cast(const Pose& pose, double px, double py) const {
    const Eigen::Vector3d origin = pose.center();
    const Eigen::Matrix3d r_cw = pose.q.conjugate().toRotationMatrix();
    const Eigen::Vector3d dir_cam =
        backproject(scene_.intrinsics, {px, py}, 1.0);
    const Eigen::Vector3d dir = r_cw * dir_cam;  // depth = ray parameter

    RayHit hit;
    if (scene_.kind == SyntheticScene::Kind::Plane) {
      if (std::abs(dir.z()) < 1e-12) return hit;
      const double s = (scene_.plane_depth - origin.z()) / dir.z();
      if (s <= 1e-6) return hit;
      const Eigen::Vector3d x = origin + s * dir;
      hit.depth = s;
      hit.u = x.x();
      hit.v = x.y();
      return hit;
    }

    int face_axis = -1;
    double face_sign = 0.0;
    const double s_box = intersect_box(origin, dir, scene_.box_min,
                                       scene_.box_max, &face_axis, &face_sign);
    if (s_box > 0.0) {
      const Eigen::Vector3d x = origin + s_box * dir;
      hit.depth = s_box;
      hit.u = x[(face_axis + 1) % 3];
      hit.v = x[(face_axis + 2) % 3];
      hit.uv_offset = 37.0 * (face_axis + 1) + (face_sign > 0 ? 113.0 : 0.0);
      return hit;
    }

    // Misses the object: hit the inside of the textured enclosure so every
    // pixel sees a surface from any viewpoint around the box.
    const Eigen::Vector3d center = 0.5 * (scene_.box_min + scene_.box_max);
    const Eigen::Vector3d half =
        Eigen::Vector3d::Constant(backdrop_distance());
    const double s =
        exit_box(origin, dir, center - half, center + half, &face_axis);
    if (s <= 1e-6) return hit;
    const Eigen::Vector3d x = origin + s * dir;
    hit.depth = s;
    hit.u = x[(face_axis + 1) % 3];
    hit.v = x[(face_axis + 2) % 3];
    hit.uv_offset = 511.0 + 59.0 * face_axis;
    return hit;
  }

  double backdrop_distance() const {
    return 2.0 * (scene_.box_max - scene_.box_min).norm();
  }

  const SyntheticScene& scene_;
  std::vector<TextureComponent> components_;
  double amplitude_sum_;
};

}  // namespace

double SyntheticScene::texture(double u, double v) const {
  return SceneRenderer(*this).albedo(u, v);
}

RenderedSequence render_sequence(const SyntheticScene& scene, int frame_count,
                                 double frame_rate_hz) {
  if (frame_count < 2) throw std::invalid_argument("need at least 2 frames");
  if (frame_rate_hz <= 0.0) throw std::invalid_argument("bad frame rate");
  if (!scene.geometry.valid()) throw std::invalid_argument("bad geometry");
  if (scene.trajectory.empty()) throw std::invalid_argument("empty trajectory");

  const SceneRenderer renderer(scene);
  const int w = scene.geometry.width;
  const int h = scene.geometry.height;

  if (scene.kind == SyntheticScene::Kind::Box) {
    for (const TimedPose& tp : scene.trajectory) {
      const Eigen::Vector3d c = tp.pose.center();
      if ((c.array() >= scene.box_min.array()).all() &&
          (c.array() <= scene.box_max.array()).all()) {
        throw DegenerateTrajectory("camera center inside the box");
      }
    }
  }

  RenderedSequence out;
  out.frames.resize(frame_count);
  out.poses.resize(frame_count);
  out.depth_maps.resize(frame_count);

  std::atomic<bool> degenerate{false};
  parallel_for(0, frame_count, [&](int i) {
    const int64_t t_us = std::llround(i * 1e6 / frame_rate_hz);
    const Pose pose = pose_at_time(scene.trajectory, t_us);
    LogIntensityFrame frame;
    frame.t_us = t_us;
    frame.values = ImageD(w, h, 0.0);
    ImageF depth(w, h, 0.0f);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const RayHit hit = renderer.cast(pose, x, y);
        if (hit.depth <= 0.0) {
          degenerate = true;
          return;
        }
        const double intensity =
            renderer.albedo(hit.u + hit.uv_offset, hit.v + hit.uv_offset);
        frame.values(x, y) = std::log(intensity + kLogIntensityEpsilon);
        depth(x, y) = static_cast<float>(hit.depth);
      }
    }
    out.frames[i] = std::move(frame);
    out.poses[i] = TimedPose{t_us, pose};
    out.depth_maps[i] = std::move(depth);
  });
  if (degenerate) {
    throw DegenerateTrajectory("a pixel ray does not reach the scene");
  }
  return out;
}

EventStream generate_events(const std::vector<LogIntensityFrame>& frames,
                            const SimulatorConfig& config) {
  if (frames.size() < 2) throw std::invalid_argument("need at least 2 frames");
  if (config.contrast <= 0.0) throw std::invalid_argument("contrast must be > 0");
  const double c = config.contrast;
  const int w = frames[0].values.width();
  const int h = frames[0].values.height();
  for (size_t i = 1; i < frames.size(); ++i) {
    if (frames[i].values.width() != w || frames[i].values.height() != h) {
      throw std::invalid_argument("frame dimensions differ");
    }
    if (frames[i].t_us <= frames[i - 1].t_us) {
      throw std::invalid_argument("frame timestamps must strictly increase");
    }
  }

  std::vector<std::vector<Event>> per_row(h);
  parallel_for(0, h, [&](int y) {
    std::vector<Event>& row_events = per_row[y];
    for (int x = 0; x < w; ++x) {
      double reference = frames[0].values(x, y);
      for (size_t i = 0; i + 1 < frames.size(); ++i) {
        const double la = frames[i].values(x, y);
        const double lb = frames[i + 1].values(x, y);
        if (lb == la) continue;
        const int64_t ta = frames[i].t_us;
        const int64_t tb = frames[i + 1].t_us;
        const double dir = lb > la ? 1.0 : -1.0;
        while (true) {
          const double next = reference + dir * c;
          if (dir > 0 ? next > lb : next < lb) break;
          const double alpha = (next - la) / (lb - la);
          Event event;
          event.t = ta + std::llround(alpha * double(tb - ta));
          event.x = static_cast<uint16_t>(x);
          event.y = static_cast<uint16_t>(y);
          event.p = dir > 0 ? int8_t{1} : int8_t{-1};
          row_events.push_back(event);
          reference = next;
        }
      }
    }
  });

  EventStream stream;
  stream.geometry = SensorGeometry{w, h};
  size_t total = 0;
  for (const auto& row : per_row) total += row.size();
  stream.events.reserve(total);
  for (auto& row : per_row) {
    stream.events.insert(stream.events.end(), row.begin(), row.end());
  }
  std::stable_sort(stream.events.begin(), stream.events.end(),
                   [](const Event& a, const Event& b) { return a.t < b.t; });
  return stream;
}

Pose pose_at_time(const std::vector<TimedPose>& trajectory, int64_t t_us) {
  if (trajectory.empty()) throw std::invalid_argument("empty trajectory");
  if (t_us <= trajectory.front().t_us) return trajectory.front().pose;
  if (t_us >= trajectory.back().t_us) return trajectory.back().pose;
  const auto it = std::lower_bound(
      trajectory.begin(), trajectory.end(), t_us,
      [](const TimedPose& tp, int64_t t) { return tp.t_us < t; });
  const TimedPose& hi = *it;
  const TimedPose& lo = *(it - 1);
  if (hi.t_us == t_us) return hi.pose;
  const double alpha = double(t_us - lo.t_us) / double(hi.t_us - lo.t_us);
  return interpolate_pose(lo.pose, hi.pose, alpha);
}

void write_trajectory(const std::string& path,
                      const std::vector<TimedPose>& trajectory) {
  std::ofstream out(path);
  if (!out) throw IoFailure("cannot open for writing: " + path);
  char line[256];
  for (const TimedPose& tp : trajectory) {
    const Pose c2w = tp.pose.inverse();
    std::snprintf(line, sizeof(line),
                  "%.9f %.12g %.12g %.12g %.12g %.12g %.12g %.12g\n",
                  tp.t_us * 1e-6, c2w.t.x(), c2w.t.y(), c2w.t.z(), c2w.q.x(),
                  c2w.q.y(), c2w.q.z(), c2w.q.w());
    out << line;
  }
  if (!out) throw IoFailure("write failed: " + path);
}

std::vector<TimedPose> read_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open trajectory: " + path);
  std::vector<TimedPose> trajectory;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    double t, tx, ty, tz, qx, qy, qz, qw;
    if (!(ss >> t >> tx >> ty >> tz >> qx >> qy >> qz >> qw)) {
      throw CorruptHeader("bad trajectory line: " + line);
    }
    Pose c2w;
    c2w.t = Eigen::Vector3d(tx, ty, tz);
    c2w.q = Eigen::Quaterniond(qw, qx, qy, qz).normalized();
    trajectory.push_back(TimedPose{std::llround(t * 1e6), c2w.inverse()});
  }
  return trajectory;
}

std::vector<TimedPose> orbit_trajectory(const Eigen::Vector3d& target,
                                        double radius, double height,
                                        double arc_deg, int samples,
                                        int64_t duration_us,
                                        double start_deg) {
  if (samples < 2) throw std::invalid_argument("need at least 2 samples");
  std::vector<TimedPose> trajectory;
  trajectory.reserve(samples);
  const Eigen::Vector3d world_up(0.0, 1.0, 0.0);
  for (int i = 0; i < samples; ++i) {
    const double frac = double(i) / double(samples - 1);
    const double theta = (start_deg + frac * arc_deg) * kPi / 180.0;
    const Eigen::Vector3d position =
        target + Eigen::Vector3d(radius * std::sin(theta), height,
                                 -radius * std::cos(theta));
    const Eigen::Vector3d forward = (target - position).normalized();
    Eigen::Vector3d right = world_up.cross(forward);
    if (right.norm() < 1e-9) {
      throw std::invalid_argument("orbit looks along the world up axis");
    }
    right.normalize();
    const Eigen::Vector3d down = forward.cross(right);
    Eigen::Matrix3d r;
    r.row(0) = right;
    r.row(1) = down;
    r.row(2) = forward;
    Pose pose;
    pose.q = Eigen::Quaterniond(r).normalized();
    pose.t = -(pose.q * position);
    trajectory.push_back(
        TimedPose{std::llround(frac * double(duration_us)), pose});
  }
  return trajectory;
}

}  // namespace evrecon
