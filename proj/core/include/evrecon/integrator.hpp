#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "evrecon/events.hpp"
#include "evrecon/image.hpp"

namespace evrecon {

struct IntegratorConfig {
  double contrast = 0.1;        // log-intensity step per event (C)
  double decay_per_second = 0.1;  // lambda, decay toward the spatial mean
  double low_percentile = 0.01;
  double high_percentile = 0.99;
};

// Recurrent reconstructor state. Passed by value through the recurrence;
// reconstruct_window never mutates its input.
struct ReconState {
  ImageD log_surface;
  Grid<int64_t> last_update;  // per-pixel last event time (us)
  int64_t stream_time = 0;    // newest event time seen
  int next_index = 0;
  double surface_sum = 0.0;   // running sum backing the spatial mean
  double norm_low = 0.0;      // last normalization bounds (statistics)
  double norm_high = 0.0;
};

ReconState init_state(const SensorGeometry& geometry);

// Integrates one window: per event, the pixel decays toward the current
// spatial mean by exp(-lambda * dt) and then steps by p*C. The output image
// is the percentile-normalized surface. Throws OutOfOrderWindow when the
// window starts before the state's stream time.
std::pair<IntensityImage, ReconState> reconstruct_window(
    const EventWindow& window, const ReconState& state,
    const IntegratorConfig& config = {});

// Affine map sending the low percentile to 0 and the high percentile to 1,
// clamped; constant surfaces map to uniform 0.5. Percentile p of n sorted
// values is element round(p * (n - 1)).
IntensityImage normalize_image(const ImageD& surface, double low_percentile,
                               double high_percentile,
                               double* out_low = nullptr,
                               double* out_high = nullptr);

// Loads externally reconstructed frames listed in a manifest of
// "t_seconds path" lines (paths relative to the manifest). PGM values map
// to [0,1] by maxval; PFM values are kept if already in [0,1], otherwise
// min/max rescaled.
std::vector<IntensityImage> load_external_frames(const std::string& manifest_path);

}  // namespace evrecon
