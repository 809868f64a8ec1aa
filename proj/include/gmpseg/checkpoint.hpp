#pragma once

#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "gmpseg/error.hpp"
#include "gmpseg/tensor.hpp"
#include "gmpseg/volume_io.hpp"

namespace gmpseg {

// Named-array container for model parameters. Optimizer velocity lives in the
// same file under a "vel." name prefix; scalar metadata goes to a sidecar.
struct Checkpoint {
  std::vector<std::pair<std::string, Tensor<float>>> arrays;
  std::map<std::string, std::string> meta;

  Tensor<float>* find(const std::string& name) {
    for (auto& [n, t] : arrays)
      if (n == name) return &t;
    return nullptr;
  }
  const Tensor<float>* find(const std::string& name) const {
    for (const auto& [n, t] : arrays)
      if (n == name) return &t;
    return nullptr;
  }
  const Tensor<float>& at(const std::string& name) const {
    const Tensor<float>* t = find(name);
    require(t != nullptr, errc::missing_checkpoint, "array " + name + " not in checkpoint");
    return *t;
  }
  void put(const std::string& name, Tensor<float> t) {
    if (Tensor<float>* old = find(name))
      *old = std::move(t);
    else
      arrays.emplace_back(name, std::move(t));
  }
};

namespace detail {

inline void put_u16(Bytes& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline std::uint16_t read_u16(ByteReader& r) {
  require(r.left >= 2, errc::truncated_data, "header ends early");
  std::uint16_t v = static_cast<std::uint16_t>(r.p[0] | (r.p[1] << 8));
  r.p += 2;
  r.left -= 2;
  return v;
}

inline std::uint8_t read_u8(ByteReader& r) {
  require(r.left >= 1, errc::truncated_data, "header ends early");
  std::uint8_t v = *r.p++;
  r.left -= 1;
  return v;
}

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

// "GMPC" | u32 version | u32 array count | per array:
//   u16 name length | name | u8 rank | u32 dims... | f32 data (little-endian).
inline Bytes encode_checkpoint(const Checkpoint& cp) {
  Bytes b;
  b.insert(b.end(), {'G', 'M', 'P', 'C'});
  detail::put_u32(b, kCheckpointVersion);
  detail::put_u32(b, static_cast<std::uint32_t>(cp.arrays.size()));
  for (const auto& [name, t] : cp.arrays) {
    require(!name.empty() && name.size() <= 65535, errc::value_out_of_range, "array name length");
    require(t.rank() >= 1 && t.rank() <= 255, errc::value_out_of_range, "array rank");
    detail::put_u16(b, static_cast<std::uint16_t>(name.size()));
    b.insert(b.end(), name.begin(), name.end());
    b.push_back(static_cast<std::uint8_t>(t.rank()));
    size_t n = 1;
    for (int d : t.dims) {
      require(d > 0, errc::non_positive_dim, "array dim");
      detail::put_u32(b, static_cast<std::uint32_t>(d));
      n *= static_cast<size_t>(d);
    }
    require(t.size() == n, errc::dim_mismatch, "array data length");
    for (float x : t.data) detail::put_f32(b, x);
  }
  return b;
}

inline Checkpoint decode_checkpoint(const Bytes& bytes) {
  require(bytes.size() >= 4, errc::truncated_data, "missing magic");
  require(bytes[0] == 'G' && bytes[1] == 'M' && bytes[2] == 'P' && bytes[3] == 'C',
          errc::bad_magic, "not a checkpoint file");
  detail::ByteReader r{bytes.data() + 4, bytes.size() - 4};
  std::uint32_t version = r.u32();
  require(version == kCheckpointVersion, errc::unknown_dtype,
          "checkpoint version " + std::to_string(version));
  std::uint32_t count = r.u32();
  Checkpoint cp;
  cp.arrays.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint16_t len = detail::read_u16(r);
    require(r.left >= len, errc::truncated_data, "array name ends early");
    std::string name(reinterpret_cast<const char*>(r.p), len);
    r.p += len;
    r.left -= len;
    int rank = detail::read_u8(r);
    std::vector<int> dims(rank);
    size_t n = 1;
    for (int& d : dims) {
      std::uint32_t v = r.u32();
      require(v > 0 && v <= (1u << 24), errc::non_positive_dim, "array dim");
      d = static_cast<int>(v);
      n *= v;
    }
    require(r.left >= n * 4, errc::truncated_data, "array data ends early");
    Tensor<float> t(std::move(dims));
    for (auto& x : t.data) x = r.f32();
    cp.arrays.emplace_back(std::move(name), std::move(t));
  }
  return cp;
}

inline std::string format_meta(const std::map<std::string, std::string>& meta) {
  std::string out;
  for (const auto& [k, v] : meta) out += k + "=" + v + "\n";
  return out;
}

inline std::map<std::string, std::string> parse_meta(const std::string& text) {
  std::map<std::string, std::string> meta;
  size_t pos = 0;
  while (pos < text.size()) {
    size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    size_t eq = line.find('=');
    if (eq == std::string::npos || eq == 0) continue;
    meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return meta;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& cp) {
  write_bytes(path, encode_checkpoint(cp));
  std::string text = format_meta(cp.meta);
  write_bytes(path + ".meta", Bytes(text.begin(), text.end()));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  Checkpoint cp = decode_checkpoint(read_bytes(path));
  std::string meta_path = path + ".meta";
  if (std::FILE* f = std::fopen(meta_path.c_str(), "rb")) {
    std::fclose(f);
    Bytes b = read_bytes(meta_path);
    cp.meta = parse_meta(std::string(b.begin(), b.end()));
  }
  return cp;
}

}  // namespace gmpseg
