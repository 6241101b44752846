#pragma once

#include <cstdint>
#include <vector>

#include "evrecon/events.hpp"
#include "evrecon/image.hpp"

namespace evrecon {

// Signed per-pixel polarity sums of one window (the event accumulator).
struct EventFrame {
  Grid<int32_t> values;
  int window_index = 0;
};

// B x h x w spatio-temporal tensor. Each event splits its polarity between
// the two temporal bins closest to its normalized timestamp
// t* = (B-1)/dT * (t - t0), so the tensor sum equals the window's polarity
// sum. A zero-span window maps every event to bin 0.
struct VoxelGrid {
  int bins = 0;
  int width = 0;
  int height = 0;
  int64_t dt_us = 0;  // window time span
  std::vector<double> values;  // indexed [bin][y][x]

  double& at(int bin, int x, int y) {
    return values[(static_cast<size_t>(bin) * height + y) * width + x];
  }
  double at(int bin, int x, int y) const {
    return values[(static_cast<size_t>(bin) * height + y) * width + x];
  }
};

constexpr int kDefaultVoxelBins = 5;

// Sums window polarities per pixel. Throws CoordinateOutOfRange if an event
// lies outside the sensor.
EventFrame accumulate_frame(const EventWindow& window,
                            const SensorGeometry& geometry);

// Encodes a window into a voxel grid with the given number of temporal bins.
VoxelGrid encode_voxel_grid(const EventWindow& window,
                            const SensorGeometry& geometry,
                            int bins = kDefaultVoxelBins);

}  // namespace evrecon
