#include "evrecon/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include <Eigen/Dense>

#include "evrecon/errors.hpp"

namespace evrecon {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr int kBorder = 5;            // ignore keypoints this close to the edge
constexpr int kMaxInterpSteps = 5;    // refinement relocations before giving up
constexpr int kOriBins = 36;
constexpr double kOriSigmaFactor = 1.5;
constexpr double kOriRadiusFactor = 3.0 * kOriSigmaFactor;
constexpr double kOriPeakRatio = 0.8;
constexpr int kDescrWidth = 4;        // 4x4 spatial cells
constexpr int kDescrBins = 8;
constexpr double kDescrScaleFactor = 3.0;
constexpr double kDescrMagThreshold = 0.2;

int reflect(int i, int n) {
  // reflect-101: ... 2 1 | 0 1 2 ... n-1 | n-2 n-3 ...
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

std::vector<float> gaussian_kernel(double sigma) {
  const int radius = std::max(1, int(std::ceil(4.0 * sigma)));
  std::vector<float> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    kernel[i + radius] = float(v);
    sum += v;
  }
  for (float& v : kernel) v = float(v / sum);
  return kernel;
}

ImageF downsample2(const ImageF& image) {
  ImageF out(std::max(1, image.width() / 2), std::max(1, image.height() / 2));
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      out(x, y) = image(2 * x, 2 * y);
    }
  }
  return out;
}

// 3D quadratic refinement of a DoG extremum. Returns false if the point
// drifts out of the pyramid or never settles.
bool refine_extremum(const std::vector<ImageF>& dogs, int num_levels, int& level,
                     int& xi, int& yi, Eigen::Vector3d& offset,
                     double& refined_value) {
  const int w = dogs[0].width();
  const int h = dogs[0].height();
  for (int step = 0; step < kMaxInterpSteps; ++step) {
    const ImageF& d0 = dogs[level - 1];
    const ImageF& d1 = dogs[level];
    const ImageF& d2 = dogs[level + 1];

    const Eigen::Vector3d g(0.5 * (d1(xi + 1, yi) - d1(xi - 1, yi)),
                            0.5 * (d1(xi, yi + 1) - d1(xi, yi - 1)),
                            0.5 * (d2(xi, yi) - d0(xi, yi)));

    const double dxx = d1(xi + 1, yi) + d1(xi - 1, yi) - 2.0 * d1(xi, yi);
    const double dyy = d1(xi, yi + 1) + d1(xi, yi - 1) - 2.0 * d1(xi, yi);
    const double dss = d2(xi, yi) + d0(xi, yi) - 2.0 * d1(xi, yi);
    const double dxy = 0.25 * (d1(xi + 1, yi + 1) - d1(xi - 1, yi + 1) -
                               d1(xi + 1, yi - 1) + d1(xi - 1, yi - 1));
    const double dxs = 0.25 * (d2(xi + 1, yi) - d2(xi - 1, yi) -
                               d0(xi + 1, yi) + d0(xi - 1, yi));
    const double dys = 0.25 * (d2(xi, yi + 1) - d2(xi, yi - 1) -
                               d0(xi, yi + 1) + d0(xi, yi - 1));

    Eigen::Matrix3d hess;
    hess << dxx, dxy, dxs, dxy, dyy, dys, dxs, dys, dss;
    const Eigen::Vector3d solution = hess.colPivHouseholderQr().solve(-g);
    if (!solution.allFinite()) return false;
    offset = solution;

    if (std::abs(offset.x()) < 0.5 && std::abs(offset.y()) < 0.5 &&
        std::abs(offset.z()) < 0.5) {
      refined_value = d1(xi, yi) + 0.5 * g.dot(offset);
      return true;
    }
    xi += int(std::lround(offset.x()));
    yi += int(std::lround(offset.y()));
    level += int(std::lround(offset.z()));
    if (level < 1 || level > num_levels || xi < kBorder || xi >= w - kBorder ||
        yi < kBorder || yi >= h - kBorder) {
      return false;
    }
  }
  return false;
}

bool passes_edge_test(const ImageF& dog, int x, int y, double edge_threshold) {
  const double dxx = dog(x + 1, y) + dog(x - 1, y) - 2.0 * dog(x, y);
  const double dyy = dog(x, y + 1) + dog(x, y - 1) - 2.0 * dog(x, y);
  const double dxy = 0.25 * (dog(x + 1, y + 1) - dog(x - 1, y + 1) -
                             dog(x + 1, y - 1) + dog(x - 1, y - 1));
  const double tr = dxx + dyy;
  const double det = dxx * dyy - dxy * dxy;
  if (det <= 0.0) return false;
  const double r = edge_threshold;
  return tr * tr * r < (r + 1.0) * (r + 1.0) * det;
}

// Gaussian-weighted orientation histogram; returns the smoothed maximum.
double orientation_histogram(const ImageF& img, int x, int y, double radius,
                             double sigma, std::array<double, kOriBins>& hist) {
  hist.fill(0.0);
  const int r = int(std::lround(radius));
  const double weight_scale = -0.5 / (sigma * sigma);
  for (int dy = -r; dy <= r; ++dy) {
    const int yy = y + dy;
    if (yy < 1 || yy >= img.height() - 1) continue;
    for (int dx = -r; dx <= r; ++dx) {
      const int xx = x + dx;
      if (xx < 1 || xx >= img.width() - 1) continue;
      const double gx = img(xx + 1, yy) - img(xx - 1, yy);
      const double gy = img(xx, yy + 1) - img(xx, yy - 1);
      const double mag = std::sqrt(gx * gx + gy * gy);
      const double angle = std::atan2(gy, gx);
      const double weight = std::exp(weight_scale * (dx * dx + dy * dy));
      int bin = int(std::lround(kOriBins * (angle + kPi) / (2.0 * kPi)));
      if (bin >= kOriBins) bin -= kOriBins;
      if (bin < 0) bin += kOriBins;
      hist[bin] += weight * mag;
    }
  }
  // Circular [1 4 6 4 1]/16 smoothing, applied twice.
  for (int pass = 0; pass < 2; ++pass) {
    std::array<double, kOriBins> smoothed;
    for (int i = 0; i < kOriBins; ++i) {
      const auto at = [&](int j) { return hist[(j + kOriBins) % kOriBins]; };
      smoothed[i] = (at(i - 2) + at(i + 2)) * (1.0 / 16.0) +
                    (at(i - 1) + at(i + 1)) * (4.0 / 16.0) +
                    at(i) * (6.0 / 16.0);
    }
    hist = smoothed;
  }
  return *std::max_element(hist.begin(), hist.end());
}

void compute_descriptor(const ImageF& img, double x, double y, double sigma_oct,
                        double orientation, std::array<float, 128>& out) {
  const double cos_t = std::cos(orientation);
  const double sin_t = std::sin(orientation);
  const double hist_width = kDescrScaleFactor * sigma_oct;
  const double bins_per_rad = kDescrBins / (2.0 * kPi);
  const double exp_scale = -1.0 / (kDescrWidth * kDescrWidth * 0.5);
  int radius = int(std::lround(hist_width * std::numbers::sqrt2 *
                               (kDescrWidth + 1) * 0.5 + 0.5));
  radius = std::min(radius, int(std::hypot(img.width(), img.height())));

  const int d = kDescrWidth, n = kDescrBins;
  // (d+2)x(d+2)x(n+2) accumulation grid for trilinear interpolation.
  std::vector<double> hist((d + 2) * (d + 2) * (n + 2), 0.0);
  const auto hist_at = [&](int r, int c, int b) -> double& {
    return hist[(r * (d + 2) + c) * (n + 2) + b];
  };

  const int xi = int(std::lround(x));
  const int yi = int(std::lround(y));
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      // Rotate into the keypoint frame, measured in histogram cells.
      const double c_rot = (cos_t * dx + sin_t * dy) / hist_width;
      const double r_rot = (-sin_t * dx + cos_t * dy) / hist_width;
      const double rbin = r_rot + d / 2.0 - 0.5;
      const double cbin = c_rot + d / 2.0 - 0.5;
      if (rbin <= -1 || rbin >= d || cbin <= -1 || cbin >= d) continue;
      const int xx = xi + dx, yy = yi + dy;
      if (xx < 1 || xx >= img.width() - 1 || yy < 1 || yy >= img.height() - 1) {
        continue;
      }
      const double gx = img(xx + 1, yy) - img(xx - 1, yy);
      const double gy = img(xx, yy + 1) - img(xx, yy - 1);
      const double mag = std::sqrt(gx * gx + gy * gy);
      double angle = std::atan2(gy, gx) - orientation;
      while (angle < 0) angle += 2.0 * kPi;
      while (angle >= 2.0 * kPi) angle -= 2.0 * kPi;
      const double obin = angle * bins_per_rad;
      const double weight =
          std::exp((c_rot * c_rot + r_rot * r_rot) * exp_scale) * mag;

      const int r0 = int(std::floor(rbin));
      const int c0 = int(std::floor(cbin));
      const int o0 = int(std::floor(obin));
      const double rf = rbin - r0, cf = cbin - c0, of = obin - o0;

      for (int ri = 0; ri <= 1; ++ri) {
        const int rr = r0 + ri + 1;
        if (rr < 0 || rr >= d + 2) continue;
        const double wr = weight * (ri ? rf : 1.0 - rf);
        for (int ci = 0; ci <= 1; ++ci) {
          const int cc = c0 + ci + 1;
          if (cc < 0 || cc >= d + 2) continue;
          const double wc = wr * (ci ? cf : 1.0 - cf);
          for (int oi = 0; oi <= 1; ++oi) {
            hist_at(rr, cc, (o0 + oi) % n + 1) += wc * (oi ? of : 1.0 - of);
          }
        }
      }
    }
  }

  // Fold the padded grid into the final d x d x n vector; orientation
  // padding wraps, spatial padding is discarded.
  std::array<double, 128> descriptor{};
  for (int r = 0; r < d; ++r) {
    for (int c = 0; c < d; ++c) {
      hist_at(r + 1, c + 1, 1) += hist_at(r + 1, c + 1, n + 1);
      for (int b = 0; b < n; ++b) {
        descriptor[(r * d + c) * n + b] = hist_at(r + 1, c + 1, b + 1);
      }
    }
  }

  double norm = 0.0;
  for (double v : descriptor) norm += v * v;
  norm = std::sqrt(std::max(norm, 1e-20));
  double renorm = 0.0;
  for (double& v : descriptor) {
    v = std::min(v / norm, kDescrMagThreshold);
    renorm += v * v;
  }
  renorm = std::sqrt(std::max(renorm, 1e-20));
  for (int i = 0; i < 128; ++i) {
    out[i] = float(descriptor[i] / renorm);
  }
}

}  // namespace

ImageF gaussian_blur(const ImageF& image, double sigma) {
  if (sigma <= 0.0) return image;
  const std::vector<float> kernel = gaussian_kernel(sigma);
  const int radius = int(kernel.size() / 2);
  const int w = image.width(), h = image.height();

  ImageF tmp(w, h), out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float sum = 0.0f;
      for (int k = -radius; k <= radius; ++k) {
        sum += kernel[k + radius] * image(reflect(x + k, w), y);
      }
      tmp(x, y) = sum;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float sum = 0.0f;
      for (int k = -radius; k <= radius; ++k) {
        sum += kernel[k + radius] * tmp(x, reflect(y + k, h));
      }
      out(x, y) = sum;
    }
  }
  return out;
}

DogPyramid build_dog_pyramid(const ImageF& image, const SiftParams& params) {
  const int s = params.scales_per_octave;
  DogPyramid pyramid;
  pyramid.scales_per_octave = s;

  int num_octaves = params.num_octaves;
  if (num_octaves <= 0) {
    num_octaves = int(std::floor(std::log2(
                      double(std::min(image.width(), image.height()))))) -
                  3;
  }
  // Keep the coarsest octave big enough for the extrema border.
  const int min_dim = std::min(image.width(), image.height());
  while (num_octaves > 1 && (min_dim >> (num_octaves - 1)) < 4 * kBorder) {
    --num_octaves;
  }
  num_octaves = std::max(1, num_octaves);
  pyramid.num_octaves = num_octaves;

  const double base_blur = std::sqrt(
      std::max(params.sigma0 * params.sigma0 -
                   params.assumed_input_blur * params.assumed_input_blur,
               0.01));
  ImageF base = gaussian_blur(image, base_blur);

  // Incremental blurs realizing sigma_i = sigma0 * 2^(i/s).
  std::vector<double> increments(s + 3, 0.0);
  for (int i = 1; i < s + 3; ++i) {
    const double prev = params.sigma0 * std::pow(2.0, double(i - 1) / s);
    const double next = params.sigma0 * std::pow(2.0, double(i) / s);
    increments[i] = std::sqrt(next * next - prev * prev);
  }

  pyramid.gaussians.resize(num_octaves);
  pyramid.dogs.resize(num_octaves);
  for (int o = 0; o < num_octaves; ++o) {
    auto& octave = pyramid.gaussians[o];
    octave.resize(s + 3);
    octave[0] =
        (o == 0) ? std::move(base) : downsample2(pyramid.gaussians[o - 1][s]);
    for (int i = 1; i < s + 3; ++i) {
      octave[i] = gaussian_blur(octave[i - 1], increments[i]);
    }
    auto& dogs = pyramid.dogs[o];
    dogs.resize(s + 2);
    for (int i = 0; i < s + 2; ++i) {
      ImageF diff(octave[i].width(), octave[i].height());
      for (size_t j = 0; j < diff.size(); ++j) {
        diff.data()[j] = octave[i + 1].data()[j] - octave[i].data()[j];
      }
      dogs[i] = std::move(diff);
    }
  }
  return pyramid;
}

FeatureSet detect_features(const ImageF& image, int image_id,
                           const SiftParams& params) {
  if (image.width() < 32 || image.height() < 32) {
    throw ImageTooSmall("image " + std::to_string(image.width()) + "x" +
                        std::to_string(image.height()) + " below 32x32");
  }
  const int s = params.scales_per_octave;
  const DogPyramid pyramid = build_dog_pyramid(image, params);
  const double prefilter = 0.5 * params.contrast_threshold;

  std::vector<Feature> features;
  for (int o = 0; o < pyramid.num_octaves; ++o) {
    const auto& dogs = pyramid.dogs[o];
    const int w = dogs[0].width(), h = dogs[0].height();
    const double octave_scale = double(1 << o);
    for (int level = 1; level <= s; ++level) {
      const ImageF& d0 = dogs[level - 1];
      const ImageF& d1 = dogs[level];
      const ImageF& d2 = dogs[level + 1];
      for (int y = kBorder; y < h - kBorder; ++y) {
        for (int x = kBorder; x < w - kBorder; ++x) {
          const float v = d1(x, y);
          if (std::abs(v) <= prefilter) continue;
          bool is_max = true, is_min = true;
          for (int dy = -1; dy <= 1 && (is_max || is_min); ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
              const float a = d0(x + dx, y + dy);
              const float b = d1(x + dx, y + dy);
              const float c = d2(x + dx, y + dy);
              if (a >= v || c >= v || (b >= v && !(dx == 0 && dy == 0))) {
                is_max = false;
              }
              if (a <= v || c <= v || (b <= v && !(dx == 0 && dy == 0))) {
                is_min = false;
              }
            }
          }
          if (!is_max && !is_min) continue;

          int xi = x, yi = y, li = level;
          Eigen::Vector3d offset = Eigen::Vector3d::Zero();
          double refined = 0.0;
          if (!refine_extremum(dogs, s, li, xi, yi, offset, refined)) continue;
          if (std::abs(refined) < params.contrast_threshold) continue;
          if (!passes_edge_test(dogs[li], xi, yi, params.edge_threshold)) {
            continue;
          }

          const double level_f = li + offset.z();
          const double sigma_oct = params.sigma0 * std::pow(2.0, level_f / s);
          const ImageF& gauss = pyramid.gaussians[o][li];

          std::array<double, kOriBins> hist;
          const double ori_sigma = kOriSigmaFactor * sigma_oct;
          const double max_bin = orientation_histogram(
              gauss, xi, yi, kOriRadiusFactor * sigma_oct, ori_sigma, hist);
          if (max_bin <= 0.0) continue;

          for (int bin = 0; bin < kOriBins; ++bin) {
            const double left = hist[(bin + kOriBins - 1) % kOriBins];
            const double right = hist[(bin + 1) % kOriBins];
            if (hist[bin] <= left || hist[bin] <= right ||
                hist[bin] < kOriPeakRatio * max_bin) {
              continue;
            }
            const double denom = left - 2.0 * hist[bin] + right;
            const double shift =
                std::abs(denom) > 1e-12 ? 0.5 * (left - right) / denom : 0.0;
            double angle = (bin + shift) * 2.0 * kPi / kOriBins - kPi;
            if (angle < 0) angle += 2.0 * kPi;
            if (angle >= 2.0 * kPi) angle -= 2.0 * kPi;

            Feature feature;
            feature.x = (xi + offset.x()) * octave_scale;
            feature.y = (yi + offset.y()) * octave_scale;
            feature.scale = sigma_oct * octave_scale;
            feature.orientation = angle;
            feature.response = float(std::abs(refined));
            compute_descriptor(gauss, xi + offset.x(), yi + offset.y(),
                               sigma_oct, angle, feature.descriptor);
            features.push_back(std::move(feature));
          }
        }
      }
    }
  }

  std::stable_sort(features.begin(), features.end(),
                   [](const Feature& a, const Feature& b) {
                     if (a.response != b.response) return a.response > b.response;
                     if (a.y != b.y) return a.y < b.y;
                     if (a.x != b.x) return a.x < b.x;
                     return a.scale < b.scale;
                   });
  if (int(features.size()) > params.max_features) {
    features.resize(params.max_features);
  }

  FeatureSet set;
  set.image_id = image_id;
  set.features = std::move(features);
  return set;
}

FeatureSet detect_features(const IntensityImage& image, const SiftParams& params) {
  return detect_features(image.values, image.index, params);
}

void write_feature_sets(const std::string& path,
                        const std::vector<FeatureSet>& sets) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot open for writing: " + path);
  const char magic[4] = {'E', 'V', 'R', 'F'};
  const uint32_t version = 1;
  const uint32_t count = uint32_t(sets.size());
  out.write(magic, 4);
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&count), 4);
  for (const FeatureSet& set : sets) {
    const int32_t id = set.image_id;
    const uint32_t n = uint32_t(set.features.size());
    out.write(reinterpret_cast<const char*>(&id), 4);
    out.write(reinterpret_cast<const char*>(&n), 4);
    for (const Feature& f : set.features) {
      const float header[5] = {float(f.x), float(f.y), float(f.scale),
                               float(f.orientation), f.response};
      out.write(reinterpret_cast<const char*>(header), sizeof(header));
      out.write(reinterpret_cast<const char*>(f.descriptor.data()),
                sizeof(float) * 128);
    }
  }
  if (!out) throw IoFailure("write failed: " + path);
}

std::vector<FeatureSet> read_feature_sets(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open: " + path);
  char magic[4];
  uint32_t version = 0, count = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&count), 4);
  if (!in || std::memcmp(magic, "EVRF", 4) != 0 || version != 1) {
    throw CorruptHeader("bad feature file header: " + path);
  }
  std::vector<FeatureSet> sets(count);
  for (FeatureSet& set : sets) {
    int32_t id = 0;
    uint32_t n = 0;
    in.read(reinterpret_cast<char*>(&id), 4);
    in.read(reinterpret_cast<char*>(&n), 4);
    if (!in) throw CorruptHeader("truncated feature file: " + path);
    set.image_id = id;
    set.features.resize(n);
    for (Feature& f : set.features) {
      float header[5];
      in.read(reinterpret_cast<char*>(header), sizeof(header));
      in.read(reinterpret_cast<char*>(f.descriptor.data()),
              sizeof(float) * 128);
      if (!in) throw CorruptHeader("truncated feature file: " + path);
      f.x = header[0];
      f.y = header[1];
      f.scale = header[2];
      f.orientation = header[3];
      f.response = header[4];
    }
  }
  return sets;
}

}  // namespace evrecon
