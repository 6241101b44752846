#pragma once

#include <cstdint>
#include <vector>

#include "evrecon/events.hpp"

namespace evrecon {

// Default window size as a fraction of the pixel count (~0.35 events/pixel).
inline int default_window_event_count(const SensorGeometry& geometry) {
  const int64_t n = (int64_t(geometry.width) * geometry.height * 35) / 100;
  return static_cast<int>(n < 1 ? 1 : n);
}

// Consecutive non-overlapping windows of exactly n events each. A trailing
// remainder shorter than n is dropped.
std::vector<EventWindow> window_by_count(const EventStream& stream, int n);

// Half-open duration bins [t0 + k*dt, t0 + (k+1)*dt). Empty bins produce no
// window; indices still count every emitted window consecutively.
std::vector<EventWindow> window_by_duration(const EventStream& stream,
                                            int64_t dt_us);

}  // namespace evrecon
