#include "evrecon/representations.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "evrecon/errors.hpp"

namespace evrecon {

namespace {

void check_bounds(const EventWindow& window, const SensorGeometry& geometry) {
  for (const Event& event : window.events) {
    if (!geometry.contains(event.x, event.y)) {
      throw CoordinateOutOfRange("event at (" + std::to_string(event.x) + ", " +
                                 std::to_string(event.y) + ") outside sensor");
    }
  }
}

}  // namespace

EventFrame accumulate_frame(const EventWindow& window,
                            const SensorGeometry& geometry) {
  check_bounds(window, geometry);
  EventFrame frame;
  frame.window_index = window.index;
  frame.values = Grid<int32_t>(geometry.width, geometry.height, 0);
  for (const Event& event : window.events) {
    frame.values(event.x, event.y) += event.p;
  }
  return frame;
}

VoxelGrid encode_voxel_grid(const EventWindow& window,
                            const SensorGeometry& geometry, int bins) {
  if (bins < 1) throw std::invalid_argument("voxel bins must be >= 1");
  if (window.events.empty()) {
    throw std::invalid_argument("cannot encode an empty window");
  }
  check_bounds(window, geometry);

  VoxelGrid grid;
  grid.bins = bins;
  grid.width = geometry.width;
  grid.height = geometry.height;
  const int64_t t0 = window.t_begin();
  grid.dt_us = window.t_end() - t0;
  grid.values.assign(static_cast<size_t>(bins) * geometry.width * geometry.height,
                     0.0);

  const double scale =
      grid.dt_us > 0 ? double(bins - 1) / double(grid.dt_us) : 0.0;
  for (const Event& event : window.events) {
    const double t_star = scale * double(event.t - t0);
    const int lo = static_cast<int>(std::floor(t_star));
    // The event contributes max(0, 1 - |bin - t*|) to the two nearest bins.
    for (int bin = lo; bin <= lo + 1; ++bin) {
      if (bin < 0 || bin >= bins) continue;
      const double weight = 1.0 - std::abs(double(bin) - t_star);
      if (weight <= 0.0) continue;
      grid.at(bin, event.x, event.y) += event.p * weight;
    }
  }
  return grid;
}

}  // namespace evrecon
