#pragma once

#include <array>
#include <string>
#include <vector>

#include "evrecon/image.hpp"

namespace evrecon {

// Scale-invariant keypoint with a 128-d gradient-histogram descriptor
// (4x4 spatial cells x 8 orientations), L2-normalized.
struct Feature {
  double x = 0, y = 0;      // sub-pixel image coordinates
  double scale = 0;         // sigma in input-image pixels
  double orientation = 0;   // radians, [0, 2pi)
  float response = 0;       // |DoG| at the refined extremum
  std::array<float, 128> descriptor{};
};

struct FeatureSet {
  int image_id = -1;
  std::vector<Feature> features;
};

struct SiftParams {
  int max_features = 4000;
  int scales_per_octave = 3;
  // 0 derives floor(log2(min(w,h))) - 3 octaves.
  int num_octaves = 0;
  double sigma0 = 1.6;
  double assumed_input_blur = 0.5;
  // Threshold on the refined DoG magnitude; images are in [0,1] and small,
  // so this sits low.
  double contrast_threshold = 0.02;
  double edge_threshold = 10.0;
};

// Difference-of-Gaussian detector + descriptor. Features come back sorted
// by response, capped at max_features. Throws ImageTooSmall below 32x32.
FeatureSet detect_features(const ImageF& image, int image_id,
                           const SiftParams& params = {});
FeatureSet detect_features(const IntensityImage& image,
                           const SiftParams& params = {});

// Gaussian scale-space machinery, exposed so tests can cross-check the
// detector against a direct extrema scan of the same pyramid.
struct DogPyramid {
  int num_octaves = 0;
  int scales_per_octave = 0;
  // gaussians[o] has scales_per_octave + 3 levels, dogs[o] one fewer.
  std::vector<std::vector<ImageF>> gaussians;
  std::vector<std::vector<ImageF>> dogs;
};

DogPyramid build_dog_pyramid(const ImageF& image, const SiftParams& params = {});
ImageF gaussian_blur(const ImageF& image, double sigma);

// Sidecar serialization for pipeline resume (little-endian arrays behind a
// fixed header).
void write_feature_sets(const std::string& path,
                        const std::vector<FeatureSet>& sets);
std::vector<FeatureSet> read_feature_sets(const std::string& path);

}  // namespace evrecon
