#pragma once

#include <cassert>
#include <cstdint>
#include <vector>

namespace evrecon {

// Dense row-major 2D grid. The shared container for intensity images,
// event frames, depth maps and per-pixel state surfaces.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int width, int height, T fill = T())
      : width_(width), height_(height),
        data_(static_cast<size_t>(width) * height, fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int x, int y) {
    assert(contains(x, y));
    return data_[static_cast<size_t>(y) * width_ + x];
  }
  const T& operator()(int x, int y) const {
    assert(contains(x, y));
    return data_[static_cast<size_t>(y) * width_ + x];
  }

  bool contains(int x, int y) const {
    return x >= 0 && x < width_ && y >= 0 && y < height_;
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  void fill(T value) { data_.assign(data_.size(), value); }

  bool operator==(const Grid&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using ImageF = Grid<float>;
using ImageD = Grid<double>;

// Normalized reconstructed frame with its position in the window sequence.
// Values are guaranteed to lie in [0, 1].
struct IntensityImage {
  ImageF values;
  int index = 0;        // sequence index k
  int64_t t_mid = 0;    // representative timestamp (us), midpoint of source window
};

}  // namespace evrecon
