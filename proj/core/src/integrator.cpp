#include "evrecon/integrator.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "evrecon/errors.hpp"
#include "evrecon/image_io.hpp"

namespace evrecon {

ReconState init_state(const SensorGeometry& geometry) {
  ReconState state;
  state.log_surface = ImageD(geometry.width, geometry.height, 0.0);
  state.last_update = Grid<int64_t>(geometry.width, geometry.height, 0);
  return state;
}

std::pair<IntensityImage, ReconState> reconstruct_window(
    const EventWindow& window, const ReconState& state,
    const IntegratorConfig& config) {
  if (window.events.empty()) {
    throw std::invalid_argument("empty window");
  }
  for (size_t i = 1; i < window.events.size(); ++i) {
    if (window.events[i].t < window.events[i - 1].t) {
      throw OutOfOrderWindow("window events not time-ordered");
    }
  }
  if (window.t_begin() < state.stream_time) {
    throw OutOfOrderWindow("window starts at " +
                           std::to_string(window.t_begin()) +
                           " before stream time " +
                           std::to_string(state.stream_time));
  }

  ReconState next = state;
  const double pixel_count = double(next.log_surface.size());
  for (const Event& event : window.events) {
    double& value = next.log_surface(event.x, event.y);
    int64_t& last_t = next.last_update(event.x, event.y);
    const double old_value = value;

    const double dt_s = double(event.t - last_t) * 1e-6;
    const double factor = std::exp(-config.decay_per_second * dt_s);
    if (factor != 1.0) {
      const double mean = next.surface_sum / pixel_count;
      value = mean + (value - mean) * factor;
    }
    value += event.p * config.contrast;

    next.surface_sum += value - old_value;
    last_t = event.t;
  }
  next.stream_time = window.t_end();

  IntensityImage image = normalize_image(next.log_surface,
                                         config.low_percentile,
                                         config.high_percentile,
                                         &next.norm_low, &next.norm_high);
  image.index = next.next_index++;
  image.t_mid = window.t_mid();
  return {std::move(image), std::move(next)};
}

IntensityImage normalize_image(const ImageD& surface, double low_percentile,
                               double high_percentile, double* out_low,
                               double* out_high) {
  IntensityImage image;
  image.values = ImageF(surface.width(), surface.height(), 0.5f);
  if (surface.empty()) return image;

  std::vector<double> sorted(surface.begin(), surface.end());
  std::sort(sorted.begin(), sorted.end());
  const auto pick = [&](double p) {
    const auto idx = std::llround(p * double(sorted.size() - 1));
    return sorted[static_cast<size_t>(idx)];
  };
  const double low = pick(low_percentile);
  const double high = pick(high_percentile);
  if (out_low) *out_low = low;
  if (out_high) *out_high = high;

  if (!(high - low > 1e-12)) {
    return image;  // information-free surface maps to uniform 0.5
  }
  const double scale = 1.0 / (high - low);
  for (int y = 0; y < surface.height(); ++y) {
    for (int x = 0; x < surface.width(); ++x) {
      const double v = (surface(x, y) - low) * scale;
      image.values(x, y) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return image;
}

std::vector<IntensityImage> load_external_frames(
    const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw MissingFile("cannot open manifest: " + manifest_path);
  const std::filesystem::path base =
      std::filesystem::path(manifest_path).parent_path();

  std::vector<IntensityImage> images;
  std::string line;
  int64_t previous_t = std::numeric_limits<int64_t>::min();
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    double t_seconds = 0.0;
    std::string rel_path;
    if (!(ss >> t_seconds >> rel_path)) {
      throw MalformedLine("manifest line " + std::to_string(line_no) + ": '" +
                          line + "'");
    }
    const int64_t t_us = std::llround(t_seconds * 1e6);
    if (t_us <= previous_t) {
      throw NonMonotoneManifest("manifest timestamps must increase at line " +
                                std::to_string(line_no));
    }
    previous_t = t_us;

    const std::filesystem::path path = base / rel_path;
    ImageFileFormat format;
    ImageF values = read_image_auto(path.string(), &format);
    if (format == ImageFileFormat::Pfm) {
      float lo = values.empty() ? 0.0f : values.data()[0];
      float hi = lo;
      for (float v : values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      if (lo < 0.0f || hi > 1.0f) {
        const float span = hi - lo;
        for (float& v : values) {
          v = span > 0.0f ? (v - lo) / span : 0.5f;
        }
      }
    }
    IntensityImage image;
    image.values = std::move(values);
    image.index = static_cast<int>(images.size());
    image.t_mid = t_us;
    images.push_back(std::move(image));
  }
  return images;
}

}  // namespace evrecon
