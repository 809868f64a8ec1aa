#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "gmpseg/error.hpp"
#include "gmpseg/image.hpp"

namespace gmpseg {

enum class Coalesce { min, max };

struct GmpParams {
  int N = 5;
  int delta = 1;
  int K = 8;
  Coalesce coalesce = Coalesce::min;
};

// K directional motion patterns over one slice plus the position prior.
struct GmpCake {
  int rows = 0;
  int cols = 0;
  int K = 0;
  std::vector<Image2D> planes;
  Mask2D prior;
};

// output(r,c) = img(r-dr, c-dc); reads outside the grid replicate the edge.
inline Image2D translate(const Image2D& img, int dr, int dc) {
  Image2D out(img.rows, img.cols);
  for (int r = 0; r < img.rows; ++r) {
    int sr = std::clamp(r - dr, 0, img.rows - 1);
    for (int c = 0; c < img.cols; ++c) {
      int sc = std::clamp(c - dc, 0, img.cols - 1);
      out.at(r, c) = img.at(sr, sc);
    }
  }
  return out;
}

// Coalesce the stack of 2N+1 translates of img along direction theta.
// Shift j moves by round(j*delta*(-sin theta, cos theta)) pixels.
inline Image2D gmp(const Image2D& img, double theta_deg, const GmpParams& p) {
  require(p.N >= 0 && p.delta >= 1, errc::value_out_of_range, "bad gmp params");
  double rad = theta_deg * std::numbers::pi / 180.0;
  double vr = -std::sin(rad), vc = std::cos(rad);

  Image2D out = img;
  const bool use_min = p.coalesce == Coalesce::min;
  for (int j = -p.N; j <= p.N; ++j) {
    if (j == 0) continue;
    int dr = static_cast<int>(std::lround(j * static_cast<double>(p.delta) * vr));
    int dc = static_cast<int>(std::lround(j * static_cast<double>(p.delta) * vc));
    Image2D shifted = translate(img, dr, dc);
    if (use_min)
      for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = std::min(out.data[i], shifted.data[i]);
    else
      for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = std::max(out.data[i], shifted.data[i]);
  }
  return out;
}

inline GmpCake cake(const Image2D& img, const Mask2D& prior, const GmpParams& p) {
  require(prior.rows == img.rows && prior.cols == img.cols, errc::dim_mismatch,
          "prior dims must match the image");
  require(p.K >= 1, errc::value_out_of_range, "K must be at least 1");
  GmpCake c;
  c.rows = img.rows;
  c.cols = img.cols;
  c.K = p.K;
  c.prior = prior;
  c.planes.reserve(p.K);
  for (int k = 0; k < p.K; ++k) c.planes.push_back(gmp(img, k * 180.0 / p.K, p));
  return c;
}

inline Image2D sum_combine(const GmpCake& c) {
  Image2D out(c.rows, c.cols, 0.0f);
  for (const auto& plane : c.planes)
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += plane.data[i];
  return out;
}

}  // namespace gmpseg
