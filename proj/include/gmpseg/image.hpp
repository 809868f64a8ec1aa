#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "gmpseg/error.hpp"

namespace gmpseg {

// Row-major single-channel float image. Row 0 is the top of the B-scan.
struct Image2D {
  int rows = 0;
  int cols = 0;
  std::vector<float> data;

  Image2D() = default;
  Image2D(int r, int c, float fill = 0.0f) : rows(r), cols(c) {
    require(r > 0 && c > 0, errc::non_positive_dim, "image dims must be positive");
    data.assign(static_cast<size_t>(r) * c, fill);
  }

  float& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  const float& at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
  size_t size() const { return data.size(); }
};

// Binary mask over the same grid; values are 0 or 1.
struct Mask2D {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> data;

  Mask2D() = default;
  Mask2D(int r, int c, std::uint8_t fill = 0) : rows(r), cols(c) {
    require(r > 0 && c > 0, errc::non_positive_dim, "mask dims must be positive");
    data.assign(static_cast<size_t>(r) * c, fill);
  }

  std::uint8_t& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  const std::uint8_t& at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
  size_t count() const {
    size_t n = 0;
    for (auto v : data) n += (v != 0);
    return n;
  }
};

// 3D scan volume stored slice-major: data[(z * rows + r) * cols + c].
// spacing is the physical voxel size in mm along (rows, cols, slices).
struct Volume {
  int rows = 0;
  int cols = 0;
  int slices = 0;
  std::array<float, 3> spacing = {1.0f, 1.0f, 1.0f};
  std::vector<float> data;

  Volume() = default;
  Volume(int r, int c, int s, float fill = 0.0f) : rows(r), cols(c), slices(s) {
    require(r > 0 && c > 0 && s > 0, errc::non_positive_dim, "volume dims must be positive");
    data.assign(static_cast<size_t>(r) * c * s, fill);
  }

  float& at(int r, int c, int z) {
    return data[(static_cast<size_t>(z) * rows + r) * cols + c];
  }
  const float& at(int r, int c, int z) const {
    return data[(static_cast<size_t>(z) * rows + r) * cols + c];
  }

  Image2D slice(int z) const {
    Image2D img(rows, cols);
    const float* src = data.data() + static_cast<size_t>(z) * rows * cols;
    std::copy(src, src + static_cast<size_t>(rows) * cols, img.data.begin());
    return img;
  }

  void set_slice(int z, const Image2D& img) {
    require(img.rows == rows && img.cols == cols, errc::dim_mismatch, "slice dims");
    std::copy(img.data.begin(), img.data.end(),
              data.begin() + static_cast<size_t>(z) * rows * cols);
  }
};

inline std::pair<float, float> min_max(const std::vector<float>& v) {
  auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return {*lo, *hi};
}

inline bool all_finite(const std::vector<float>& v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

inline Mask2D mask_from_slice(const Image2D& img) {
  Mask2D m(img.rows, img.cols);
  for (size_t i = 0; i < img.data.size(); ++i) m.data[i] = img.data[i] != 0.0f ? 1 : 0;
  return m;
}

}  // namespace gmpseg
