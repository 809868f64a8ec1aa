#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "gmpseg/error.hpp"
#include "gmpseg/image.hpp"

namespace gmpseg {

// Synthetic OCT-like volume: a bright retinal band with sinusoidal curvature
// between dark vitreous and dim choroid, dark ellipsoidal cysts strictly
// inside the band, small bright drusen, multiplicative speckle.
struct PhantomParams {
  int rows = 512, cols = 256, slices = 8;
  std::array<float, 3> spacing = {0.01f, 0.01f, 0.25f};

  double ilm_frac = 0.39;   // mean top boundary, fraction of rows
  double rpe_frac = 0.645;  // mean bottom boundary
  double curve_amp = 8.0;   // sinusoid amplitude in rows
  double curve_periods = 1.5;

  float vitreous = 0.08f, band = 0.60f, choroid = 0.15f;
  float cyst_level = 0.12f, drusen_level = 0.95f;

  int cysts = 6;
  int cyst_rmin = 3, cyst_rmax = 25;  // in-plane radius range, px
  int cyst_zmax = 3;                  // max slice radius
  int drusen = 2;
  int drusen_rmin = 2, drusen_rmax = 4;
  int drusen_margin = 6;  // clearance from cysts and boundaries, px

  double speckle = 0.08;  // multiplicative noise std; 0 disables
  std::uint64_t seed = 0;
};

struct Phantom {
  Volume image;
  Volume gt;      // 1 on cyst voxels
  Volume drusen;  // 1 on drusen voxels
  std::vector<std::vector<int>> ilm, rpe;  // [slice][col] -> boundary row
};

namespace detail {

// Mean-1 gamma field: shape 1/s^2, scale s^2 gives std exactly s.
inline void speckle_inplace(std::vector<float>& data, double strength, std::mt19937_64& rng) {
  if (strength <= 0.0) return;
  double shape = 1.0 / (strength * strength);
  std::gamma_distribution<double> gamma(shape, strength * strength);
  for (float& v : data) v = static_cast<float>(v * gamma(rng));
}

struct Ellipsoid {
  int cr, cc, cz;
  int rr, rc, rz;
};

template <typename Accept>
bool carve(Volume& img, Volume* mark, const Ellipsoid& e, float level, Accept&& accept) {
  std::vector<size_t> voxels;
  for (int z = std::max(0, e.cz - e.rz); z <= std::min(img.slices - 1, e.cz + e.rz); ++z)
    for (int r = e.cr - e.rr; r <= e.cr + e.rr; ++r)
      for (int c = e.cc - e.rc; c <= e.cc + e.rc; ++c) {
        double dr = double(r - e.cr) / e.rr, dc = double(c - e.cc) / e.rc;
        double dz = e.rz > 0 ? double(z - e.cz) / e.rz : 0.0;
        if (dr * dr + dc * dc + dz * dz > 1.0) continue;
        if (r < 0 || r >= img.rows || c < 0 || c >= img.cols) return false;
        if (!accept(r, c, z)) return false;
        voxels.push_back((static_cast<size_t>(z) * img.rows + r) * img.cols + c);
      }
  if (voxels.empty()) return false;
  for (size_t i : voxels) {
    img.data[i] = level;
    if (mark) mark->data[i] = 1.0f;
  }
  return true;
}

}  // namespace detail

inline Image2D speckle(const Image2D& img, double strength, std::uint64_t seed) {
  require(strength >= 0.0, errc::value_out_of_range, "speckle strength");
  Image2D out = img;
  std::mt19937_64 rng(seed);
  detail::speckle_inplace(out.data, strength, rng);
  return out;
}

inline Volume speckle(const Volume& v, double strength, std::uint64_t seed) {
  require(strength >= 0.0, errc::value_out_of_range, "speckle strength");
  Volume out = v;
  std::mt19937_64 rng(seed);
  detail::speckle_inplace(out.data, strength, rng);
  return out;
}

inline Phantom generate_phantom(const PhantomParams& p) {
  require(p.rows >= 64 && p.cols >= 64 && p.slices >= 1, errc::too_small,
          "phantom needs at least 64x64x1");
  require(p.curve_amp >= 0.0 && p.curve_amp <= 10.0, errc::value_out_of_range, "curve amplitude");
  require(p.cyst_rmin >= 1 && p.cyst_rmin <= p.cyst_rmax, errc::value_out_of_range,
          "cyst radius range");
  require(p.cysts >= 0 && p.drusen >= 0 && p.speckle >= 0.0, errc::value_out_of_range,
          "phantom counts");

  const double ilm_base = p.ilm_frac * p.rows;
  const double rpe_base = p.rpe_frac * p.rows;
  require(ilm_base - p.curve_amp >= 2.0 && rpe_base + p.curve_amp <= p.rows - 3.0 &&
              rpe_base - ilm_base >= 4.0,
          errc::value_out_of_range, "band geometry");

  std::mt19937_64 rng(p.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double phase = unit(rng) * 2.0 * std::numbers::pi;

  Phantom ph;
  ph.image = Volume(p.rows, p.cols, p.slices);
  ph.image.spacing = p.spacing;
  ph.gt = Volume(p.rows, p.cols, p.slices);
  ph.gt.spacing = p.spacing;
  ph.drusen = Volume(p.rows, p.cols, p.slices);
  ph.drusen.spacing = p.spacing;

  const int thickness = static_cast<int>(std::lround(rpe_base - ilm_base));
  std::vector<int> ilm(p.cols), rpe(p.cols);
  for (int c = 0; c < p.cols; ++c) {
    double off = p.curve_amp *
                 std::sin(2.0 * std::numbers::pi * p.curve_periods * c / p.cols + phase);
    ilm[c] = static_cast<int>(std::lround(ilm_base + off));
    rpe[c] = ilm[c] + thickness;
  }
  ph.ilm.assign(p.slices, ilm);
  ph.rpe.assign(p.slices, rpe);

  for (int z = 0; z < p.slices; ++z)
    for (int r = 0; r < p.rows; ++r)
      for (int c = 0; c < p.cols; ++c)
        ph.image.at(r, c, z) = r < ilm[c] ? p.vitreous : r <= rpe[c] ? p.band : p.choroid;

  auto inside_band = [&](int r, int c, int) { return r > ilm[c] && r < rpe[c]; };

  auto place = [&](int count, int rmin, int rmax, int zmax, float level, Volume* mark,
                   auto&& accept) {
    std::uniform_int_distribution<int> radius(rmin, rmax);
    std::uniform_int_distribution<int> zradius(1, std::max(1, zmax));
    std::uniform_int_distribution<int> col(0, p.cols - 1);
    std::uniform_int_distribution<int> slice(0, p.slices - 1);
    for (int i = 0; i < count; ++i) {
      bool placed = false;
      for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
        detail::Ellipsoid e;
        e.rr = radius(rng);
        e.rc = radius(rng);
        e.rz = std::min(zradius(rng), (p.slices - 1) / 2 + (p.slices > 1 ? 1 : 0));
        e.cc = col(rng);
        e.cz = slice(rng);
        std::uniform_int_distribution<int> row(static_cast<int>(ilm_base - p.curve_amp),
                                               static_cast<int>(rpe_base + p.curve_amp));
        e.cr = row(rng);
        placed = detail::carve(ph.image, mark, e, level, accept);
      }
      require(placed, errc::placement_failure, "no admissible position after 100 attempts");
    }
  };

  place(p.cysts, p.cyst_rmin, p.cyst_rmax, p.cyst_zmax, p.cyst_level, &ph.gt, inside_band);

  // Drusen keep a clearance from cysts and band boundaries so min-coalescing
  // can erase them against a clean background.
  const int m = p.drusen_margin;
  auto drusen_ok = [&](int r, int c, int z) {
    if (r - m <= ilm[c] || r + m >= rpe[c]) return false;
    for (int rr = r - m; rr <= r + m; ++rr)
      for (int cc = std::max(0, c - m); cc <= std::min(p.cols - 1, c + m); ++cc)
        if (ph.gt.at(rr, cc, z) != 0.0f) return false;
    return true;
  };
  place(p.drusen, p.drusen_rmin, p.drusen_rmax, 1, p.drusen_level, &ph.drusen, drusen_ok);

  detail::speckle_inplace(ph.image.data, p.speckle, rng);
  return ph;
}

}  // namespace gmpseg
