#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evrecon/events.hpp"
#include "evrecon/geometry.hpp"
#include "evrecon/image.hpp"

namespace evrecon {

// Log-intensity snapshot L = log(I + eps) at one instant.
struct LogIntensityFrame {
  ImageD values;
  int64_t t_us = 0;
};

constexpr double kLogIntensityEpsilon = 1e-3;

struct SimulatorConfig {
  double contrast = 0.1;  // threshold C, log-intensity units
};

struct TimedPose {
  int64_t t_us = 0;
  Pose pose;  // world-to-camera
};

// Procedurally textured scene observed by a pinhole camera along a
// timestamped trajectory. The texture is a seeded band-limited sum of
// cosines, smooth enough for photometric matching.
struct SyntheticScene {
  enum class Kind { Plane, Box };

  Kind kind = Kind::Plane;
  double plane_depth = 5.0;                            // plane z = depth (world)
  Eigen::Vector3d box_min{-0.5, -0.5, 4.5};
  Eigen::Vector3d box_max{0.5, 0.5, 5.5};
  uint64_t texture_seed = 1;
  double texture_frequency = 1.0;   // cycles per scene unit, base band
  double min_intensity = 0.05;      // texture intensity range [min, 1]
  SensorGeometry geometry{128, 96};
  CameraIntrinsics intrinsics{120.0, 120.0, 63.5, 47.5, 0.0};
  std::vector<TimedPose> trajectory;

  // Scene albedo at a world-surface point (plane uses x/y, box the two
  // coordinates tangent to the hit face).
  double texture(double u, double v) const;
};

struct RenderedSequence {
  std::vector<LogIntensityFrame> frames;
  std::vector<TimedPose> poses;    // ground-truth pose per frame
  std::vector<ImageF> depth_maps;  // ground-truth camera-frame depth per frame
};

// Renders frame_count frames at the given rate, sampling the scene
// trajectory by interpolation. Throws DegenerateTrajectory when a camera
// does not face the geometry (or sits inside the box).
RenderedSequence render_sequence(const SyntheticScene& scene, int frame_count,
                                 double frame_rate_hz);

// Per-pixel threshold crossing over linearly interpolated log intensity.
// Each crossing of +-C from the per-pixel reference emits one event and
// shifts the reference by p*C. Output is time-sorted and deterministic.
EventStream generate_events(const std::vector<LogIntensityFrame>& frames,
                            const SimulatorConfig& config = {});

// Ground-truth pose at an arbitrary timestamp by interpolating between the
// two nearest trajectory samples (clamped at the ends).
Pose pose_at_time(const std::vector<TimedPose>& trajectory, int64_t t_us);

// Trajectory text format: one "t tx ty tz qx qy qz qw" line per pose with t
// in seconds and the camera-to-world transform (TUM layout).
void write_trajectory(const std::string& path,
                      const std::vector<TimedPose>& trajectory);
std::vector<TimedPose> read_trajectory(const std::string& path);

// Circular orbit around `target`: cameras on a ring of the given radius in
// the world y = height plane, looking at the target, spanning arc_deg.
std::vector<TimedPose> orbit_trajectory(const Eigen::Vector3d& target,
                                        double radius, double height,
                                        double arc_deg, int samples,
                                        int64_t duration_us,
                                        double start_deg = 0.0);

}  // namespace evrecon
