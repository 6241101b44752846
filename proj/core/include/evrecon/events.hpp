#pragma once

#include <cstdint>
#include <vector>

namespace evrecon {

// Sensor pixel array dimensions.
struct SensorGeometry {
  int width = 0;
  int height = 0;

  bool valid() const { return width >= 1 && height >= 1; }
  bool contains(int x, int y) const {
    return x >= 0 && x < width && y >= 0 && y < height;
  }
  bool operator==(const SensorGeometry&) const = default;
};

// A single brightness-change report. Timestamps are integer microseconds and
// non-decreasing within a stream; polarity is exactly +1 or -1.
struct Event {
  int64_t t = 0;
  uint16_t x = 0;
  uint16_t y = 0;
  int8_t p = 1;

  bool operator==(const Event&) const = default;
};

// An ordered event sequence together with the sensor it came from.
struct EventStream {
  SensorGeometry geometry;
  std::vector<Event> events;

  size_t size() const { return events.size(); }
  bool empty() const { return events.empty(); }
};

// Contiguous group of events processed as one unit. Windows are non-empty
// and time-ordered.
struct EventWindow {
  std::vector<Event> events;
  int index = 0;  // window sequence number k

  int64_t t_begin() const { return events.front().t; }
  int64_t t_end() const { return events.back().t; }
  // Window midpoint, the representative timestamp of derived images.
  int64_t t_mid() const { return t_begin() + (t_end() - t_begin()) / 2; }
};

}  // namespace evrecon
