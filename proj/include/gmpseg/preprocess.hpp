#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "gmpseg/error.hpp"
#include "gmpseg/image.hpp"

namespace gmpseg {

// Per-column row index of a retinal boundary, left to right.
using LayerPath = std::vector<int>;

// Standardized, denoised region of interest with its position prior.
struct RoiSlice {
  Image2D image;
  int x0 = 0;
  Mask2D prior;
};

inline constexpr int kStdRows = 512;
inline constexpr int kStdCols = 256;
inline constexpr int kRoiRows = 250;
inline constexpr int kRpeMargin = 10;

inline Image2D resize_bilinear(const Image2D& img, int out_rows, int out_cols) {
  require(img.rows >= 2 && img.cols >= 2, errc::degenerate_input, "resize needs a 2x2 input");
  require(out_rows >= 2 && out_cols >= 2, errc::degenerate_input, "resize needs a 2x2 output");
  Image2D out(out_rows, out_cols);
  // align-corners sampling so resizing to the same size is exact
  double sr = static_cast<double>(img.rows - 1) / (out_rows - 1);
  double sc = static_cast<double>(img.cols - 1) / (out_cols - 1);
  for (int r = 0; r < out_rows; ++r) {
    double y = r * sr;
    int r0 = static_cast<int>(y);
    int r1 = std::min(r0 + 1, img.rows - 1);
    double fy = y - r0;
    for (int c = 0; c < out_cols; ++c) {
      double x = c * sc;
      int c0 = static_cast<int>(x);
      int c1 = std::min(c0 + 1, img.cols - 1);
      double fx = x - c0;
      double top = (1.0 - fx) * img.at(r0, c0) + fx * img.at(r0, c1);
      double bot = (1.0 - fx) * img.at(r1, c0) + fx * img.at(r1, c1);
      out.at(r, c) = static_cast<float>((1.0 - fy) * top + fy * bot);
    }
  }
  return out;
}

inline Image2D resize_nearest(const Image2D& img, int out_rows, int out_cols) {
  require(img.rows >= 1 && img.cols >= 1, errc::degenerate_input, "empty image");
  Image2D out(out_rows, out_cols);
  double sr = out_rows > 1 ? static_cast<double>(img.rows - 1) / (out_rows - 1) : 0.0;
  double sc = out_cols > 1 ? static_cast<double>(img.cols - 1) / (out_cols - 1) : 0.0;
  for (int r = 0; r < out_rows; ++r) {
    int r0 = std::min(img.rows - 1, static_cast<int>(std::lround(r * sr)));
    for (int c = 0; c < out_cols; ++c) {
      int c0 = std::min(img.cols - 1, static_cast<int>(std::lround(c * sc)));
      out.at(r, c) = img.at(r0, c0);
    }
  }
  return out;
}

inline Image2D standardize_slice(const Image2D& img) {
  return resize_bilinear(img, kStdRows, kStdCols);
}

// Row of the retina in a standardized slice: the centroid of the row-sum
// profile after floor subtraction, clamped so a 250-row crop stays in bounds.
inline int locate_roi_center(const Image2D& img) {
  std::vector<double> p(img.rows, 0.0);
  for (int r = 0; r < img.rows; ++r)
    for (int c = 0; c < img.cols; ++c) p[r] += img.at(r, c);
  double lo = *std::min_element(p.begin(), p.end());
  double mass = 0.0, moment = 0.0;
  for (int r = 0; r < img.rows; ++r) {
    double w = p[r] - lo;
    mass += w;
    moment += w * r;
  }
  require(mass > 0.0, errc::flat_profile, "row profile is constant");
  int x0 = static_cast<int>(std::lround(moment / mass));
  int hi = img.rows - kRoiRows / 2 - 1;
  return std::clamp(x0, kRoiRows / 2, hi);
}

inline Image2D extract_roi(const Image2D& img, int x0) {
  require(x0 >= kRoiRows / 2 && x0 <= img.rows - kRoiRows / 2 - 1, errc::center_out_of_range,
          "crop around x0 leaves the image");
  Image2D out(kRoiRows, img.cols);
  for (int r = 0; r < kRoiRows; ++r)
    for (int c = 0; c < img.cols; ++c) out.at(r, c) = img.at(x0 - kRoiRows / 2 + r, c);
  return out;
}

// ROF energy with isotropic TV and forward differences.
inline double rof_energy(const Image2D& u, const Image2D& f, double lambda) {
  double tv = 0.0, fit = 0.0;
  for (int r = 0; r < u.rows; ++r)
    for (int c = 0; c < u.cols; ++c) {
      double dr = r + 1 < u.rows ? u.at(r + 1, c) - u.at(r, c) : 0.0;
      double dc = c + 1 < u.cols ? u.at(r, c + 1) - u.at(r, c) : 0.0;
      tv += std::sqrt(dr * dr + dc * dc);
      double d = u.at(r, c) - f.at(r, c);
      fit += d * d;
    }
  return tv + fit / (2.0 * lambda);
}

// Chambolle dual projection for min_u sum|grad u| + (1/2 lambda) sum (u-f)^2.
// Fixed step 0.25; internals run in double; output clamps to the input range.
inline Image2D tv_denoise(const Image2D& img, float lambda, int iters,
                          std::vector<double>* energy_history = nullptr) {
  require(lambda > 0.0f, errc::non_positive_lambda, "lambda must be positive");
  require(iters >= 1, errc::degenerate_input, "need at least one iteration");

  const int R = img.rows, C = img.cols;
  const size_t n = static_cast<size_t>(R) * C;
  const double lam = lambda, tau = 0.25;

  std::vector<double> f(n), px(n, 0.0), py(n, 0.0), divp(n, 0.0), u(n);
  for (size_t i = 0; i < n; ++i) f[i] = img.data[i];
  auto idx = [C](int r, int c) { return static_cast<size_t>(r) * C + c; };

  Image2D out(R, C);
  for (int it = 0; it < iters; ++it) {
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < C; ++c) {
        double d = px[idx(r, c)] + py[idx(r, c)];
        if (r > 0) d -= px[idx(r - 1, c)];
        if (c > 0) d -= py[idx(r, c - 1)];
        divp[idx(r, c)] = d;
      }
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < C; ++c) {
        size_t i = idx(r, c);
        double here = divp[i] - f[i] / lam;
        double gr = r + 1 < R ? (divp[idx(r + 1, c)] - f[idx(r + 1, c)] / lam) - here : 0.0;
        double gc = c + 1 < C ? (divp[idx(r, c + 1)] - f[idx(r, c + 1)] / lam) - here : 0.0;
        double norm = 1.0 + tau * std::sqrt(gr * gr + gc * gc);
        px[i] = (px[i] + tau * gr) / norm;
        py[i] = (py[i] + tau * gc) / norm;
      }
    if (energy_history) {
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) {
          size_t i = idx(r, c);
          double d = px[i] + py[i];
          if (r > 0) d -= px[idx(r - 1, c)];
          if (c > 0) d -= py[idx(r, c - 1)];
          u[i] = f[i] - lam * d;
          out.data[i] = static_cast<float>(u[i]);
        }
      energy_history->push_back(rof_energy(out, img, lam));
    }
  }

  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) {
      size_t i = idx(r, c);
      double d = px[i] + py[i];
      if (r > 0) d -= px[idx(r - 1, c)];
      if (c > 0) d -= py[idx(r, c - 1)];
      u[i] = f[i] - lam * d;
    }
  auto [flo, fhi] = min_max(img.data);
  for (size_t i = 0; i < n; ++i)
    out.data[i] = static_cast<float>(std::clamp(u[i], static_cast<double>(flo),
                                                static_cast<double>(fhi)));
  return out;
}

namespace detail {

// Left-to-right min-cost path, row moves limited to {-1,0,+1}. Ties pick the
// smallest final row, then the smallest row at each step walking backwards.
inline std::vector<int> dp_min_path(const std::vector<double>& cost, int rows, int cols) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> acc(cost.size(), inf);
  auto idx = [cols](int r, int c) { return static_cast<size_t>(r) * cols + c; };
  for (int r = 0; r < rows; ++r) acc[idx(r, 0)] = cost[idx(r, 0)];
  for (int c = 1; c < cols; ++c)
    for (int r = 0; r < rows; ++r) {
      double best = acc[idx(r, c - 1)];
      if (r > 0) best = std::min(best, acc[idx(r - 1, c - 1)]);
      if (r + 1 < rows) best = std::min(best, acc[idx(r + 1, c - 1)]);
      acc[idx(r, c)] = cost[idx(r, c)] + best;
    }

  int end = 0;
  for (int r = 1; r < rows; ++r)
    if (acc[idx(r, cols - 1)] < acc[idx(end, cols - 1)]) end = r;
  require(std::isfinite(acc[idx(end, cols - 1)]), errc::no_valid_path,
          "all paths blocked");

  std::vector<int> path(cols);
  path[cols - 1] = end;
  for (int c = cols - 1; c > 0; --c) {
    int r = path[c], prev = -1;
    double best = inf;
    for (int dr = -1; dr <= 1; ++dr) {
      int rr = r + dr;
      if (rr < 0 || rr >= rows) continue;
      if (acc[idx(rr, c - 1)] < best) {
        best = acc[idx(rr, c - 1)];
        prev = rr;
      }
    }
    path[c - 1] = prev;
  }
  return path;
}

inline void normalize_max(std::vector<double>& v) {
  double hi = *std::max_element(v.begin(), v.end());
  if (hi > 0.0)
    for (auto& x : v) x /= hi;
}

}  // namespace detail

// ILM from the dark-to-light vertical edge, RPE from the light-to-dark edge
// restricted to rows at least kRpeMargin below the ILM.
inline std::pair<LayerPath, LayerPath> segment_layers(const Image2D& img) {
  const int R = img.rows, C = img.cols;
  const size_t n = static_cast<size_t>(R) * C;
  std::vector<double> gpos(n, 0.0), gneg(n, 0.0);
  for (int r = 1; r < R; ++r)
    for (int c = 0; c < C; ++c) {
      double d = static_cast<double>(img.at(r, c)) - img.at(r - 1, c);
      size_t i = static_cast<size_t>(r) * C + c;
      gpos[i] = std::max(d, 0.0);
      gneg[i] = std::max(-d, 0.0);
    }
  detail::normalize_max(gpos);
  detail::normalize_max(gneg);

  std::vector<double> cost(n);
  for (size_t i = 0; i < n; ++i) cost[i] = 1.0 - gpos[i];
  LayerPath ilm = detail::dp_min_path(cost, R, C);

  const double inf = std::numeric_limits<double>::infinity();
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) {
      size_t i = static_cast<size_t>(r) * C + c;
      cost[i] = r < ilm[c] + kRpeMargin ? inf : 1.0 - gneg[i];
    }
  LayerPath rpe = detail::dp_min_path(cost, R, C);
  return {std::move(ilm), std::move(rpe)};
}

inline Mask2D layers_mask(const LayerPath& ilm, const LayerPath& rpe, int rows) {
  require(ilm.size() == rpe.size() && !ilm.empty(), errc::dim_mismatch, "path lengths differ");
  const int C = static_cast<int>(ilm.size());
  Mask2D m(rows, C);
  for (int c = 0; c < C; ++c) {
    require(ilm[c] < rpe[c], errc::crossing_paths, "ilm must stay above rpe");
    require(ilm[c] >= 0 && rpe[c] < rows, errc::value_out_of_range, "path outside grid");
    for (int r = ilm[c]; r <= rpe[c]; ++r) m.at(r, c) = 1;
  }
  return m;
}

inline RoiSlice preprocess_slice(const Image2D& slice, float lambda = 0.1f, int iters = 50) {
  Image2D std_img = standardize_slice(slice);
  int x0 = locate_roi_center(std_img);
  Image2D roi = extract_roi(std_img, x0);
  Image2D den = tv_denoise(roi, lambda, iters);
  auto [ilm, rpe] = segment_layers(den);
  Mask2D prior = layers_mask(ilm, rpe, den.rows);
  return {std::move(den), x0, std::move(prior)};
}

}  // namespace gmpseg
