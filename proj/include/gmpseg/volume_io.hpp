#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "gmpseg/error.hpp"
#include "gmpseg/image.hpp"

namespace gmpseg {

using Bytes = std::vector<std::uint8_t>;

enum class Dtype : std::uint32_t { f32 = 0, u8 = 1 };

namespace detail {

inline void put_u32(Bytes& b, std::uint32_t v) {
  b.push_back(static_cast<std::uint8_t>(v));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
  b.push_back(static_cast<std::uint8_t>(v >> 16));
  b.push_back(static_cast<std::uint8_t>(v >> 24));
}

inline void put_f32(Bytes& b, float v) { put_u32(b, std::bit_cast<std::uint32_t>(v)); }

struct ByteReader {
  const std::uint8_t* p;
  size_t left;

  std::uint32_t u32() {
    require(left >= 4, errc::truncated_data, "header ends early");
    std::uint32_t v = std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
                      std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
    p += 4;
    left -= 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
};

}  // namespace detail

// OVF: "OVF1" | u32 rows | u32 cols | u32 slices | u32 dtype | f32 spacing x,y,z | voxels.
// Voxels are slice-major, row-major within a slice, little-endian on every host.
inline Bytes write_volume(const Volume& v, Dtype dtype = Dtype::f32) {
  require(v.rows > 0 && v.cols > 0 && v.slices > 0, errc::non_positive_dim, "volume dims");
  require(v.data.size() == static_cast<size_t>(v.rows) * v.cols * v.slices,
          errc::dim_mismatch, "data length");
  Bytes b;
  b.reserve(32 + v.data.size() * (dtype == Dtype::f32 ? 4 : 1));
  b.insert(b.end(), {'O', 'V', 'F', '1'});
  detail::put_u32(b, static_cast<std::uint32_t>(v.rows));
  detail::put_u32(b, static_cast<std::uint32_t>(v.cols));
  detail::put_u32(b, static_cast<std::uint32_t>(v.slices));
  detail::put_u32(b, static_cast<std::uint32_t>(dtype));
  for (float s : v.spacing) detail::put_f32(b, s);
  if (dtype == Dtype::f32) {
    for (float x : v.data) detail::put_f32(b, x);
  } else {
    for (float x : v.data) {
      require(x >= 0.0f && x <= 255.0f && x == std::floor(x), errc::value_out_of_range,
              "u8 voxels must be integral in [0,255]");
      b.push_back(static_cast<std::uint8_t>(x));
    }
  }
  return b;
}

inline Volume read_volume(const std::uint8_t* bytes, size_t size) {
  detail::ByteReader r{bytes, size};
  require(size >= 4, errc::truncated_data, "missing magic");
  require(bytes[0] == 'O' && bytes[1] == 'V' && bytes[2] == 'F' && bytes[3] == '1',
          errc::bad_magic, "not an OVF file");
  r.p += 4;
  r.left -= 4;

  std::uint32_t rows = r.u32(), cols = r.u32(), slices = r.u32(), dtype = r.u32();
  require(rows > 0 && cols > 0 && slices > 0, errc::non_positive_dim, "header dims");
  require(dtype <= 1, errc::unknown_dtype, "dtype " + std::to_string(dtype));

  Volume v;
  v.rows = static_cast<int>(rows);
  v.cols = static_cast<int>(cols);
  v.slices = static_cast<int>(slices);
  for (auto& s : v.spacing) {
    s = r.f32();
    require(s > 0.0f, errc::non_positive_spacing, "spacing must be positive");
  }

  size_t n = static_cast<size_t>(rows) * cols * slices;
  v.data.resize(n);
  if (dtype == 0) {
    require(r.left >= n * 4, errc::truncated_data, "payload ends early");
    for (auto& x : v.data) x = r.f32();
  } else {
    require(r.left >= n, errc::truncated_data, "payload ends early");
    for (auto& x : v.data) x = static_cast<float>(*r.p++);
  }
  return v;
}

inline Volume read_volume(const Bytes& bytes) { return read_volume(bytes.data(), bytes.size()); }

// Binary PGM render with a linear window [lo, hi] -> [0, 255].
inline Bytes export_pgm(const Image2D& img, float lo, float hi) {
  require(lo < hi, errc::degenerate_range, "need lo < hi");
  std::string header =
      "P5\n" + std::to_string(img.cols) + " " + std::to_string(img.rows) + "\n255\n";
  Bytes b(header.begin(), header.end());
  b.reserve(b.size() + img.data.size());
  for (float v : img.data) {
    float t = (v - lo) / (hi - lo);
    t = std::min(1.0f, std::max(0.0f, t));
    b.push_back(static_cast<std::uint8_t>(std::lround(255.0f * t)));
  }
  return b;
}

inline void write_bytes(const std::string& path, const Bytes& b) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  require(f != nullptr, errc::truncated_data, "cannot open " + path + " for writing");
  size_t n = std::fwrite(b.data(), 1, b.size(), f);
  std::fclose(f);
  require(n == b.size(), errc::truncated_data, "short write to " + path);
}

inline Bytes read_bytes(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  require(f != nullptr, errc::truncated_data, "cannot open " + path);
  std::fseek(f, 0, SEEK_END);
  long size = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);
  Bytes b(static_cast<size_t>(size));
  size_t n = std::fread(b.data(), 1, b.size(), f);
  std::fclose(f);
  require(n == b.size(), errc::truncated_data, "short read from " + path);
  return b;
}

inline void save_volume(const std::string& path, const Volume& v, Dtype dtype = Dtype::f32) {
  write_bytes(path, write_volume(v, dtype));
}

inline Volume load_volume(const std::string& path) { return read_volume(read_bytes(path)); }

inline void save_pgm(const std::string& path, const Image2D& img, float lo, float hi) {
  write_bytes(path, export_pgm(img, lo, hi));
}

}  // namespace gmpseg
