#include "evrecon/windowing.hpp"

#include <stdexcept>

namespace evrecon {

std::vector<EventWindow> window_by_count(const EventStream& stream, int n) {
  if (n < 1) throw std::invalid_argument("window size must be >= 1");

  const size_t count = stream.events.size() / static_cast<size_t>(n);
  std::vector<EventWindow> windows;
  windows.reserve(count);
  for (size_t k = 0; k < count; ++k) {
    EventWindow window;
    window.index = static_cast<int>(k);
    window.events.assign(stream.events.begin() + k * n,
                         stream.events.begin() + (k + 1) * n);
    windows.push_back(std::move(window));
  }
  return windows;
}

std::vector<EventWindow> window_by_duration(const EventStream& stream,
                                            int64_t dt_us) {
  if (dt_us < 1) throw std::invalid_argument("window duration must be >= 1 us");

  std::vector<EventWindow> windows;
  if (stream.events.empty()) return windows;

  const int64_t t0 = stream.events.front().t;
  int64_t current_bin = 0;
  EventWindow window;
  for (const Event& event : stream.events) {
    const int64_t bin = (event.t - t0) / dt_us;
    if (!window.events.empty() && bin != current_bin) {
      window.index = static_cast<int>(windows.size());
      windows.push_back(std::move(window));
      window = EventWindow();
    }
    current_bin = bin;
    window.events.push_back(event);
  }
  window.index = static_cast<int>(windows.size());
  windows.push_back(std::move(window));
  return windows;
}

}  // namespace evrecon
