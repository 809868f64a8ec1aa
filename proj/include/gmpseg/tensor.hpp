#pragma once

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "gmpseg/error.hpp"

namespace gmpseg {

// Dense row-major tensor; the last dimension is fastest. Network activations
// use (H, W, D, C) or (H, W, C), conv weights (kh, kw, kd, Cin, Cout).
template <typename T>
struct Tensor {
  std::vector<int> dims;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> d, T fill = T(0)) : dims(std::move(d)) {
    size_t n = 1;
    for (int x : dims) {
      require(x >= 0, errc::non_positive_dim, "tensor dims must be non-negative");
      n *= static_cast<size_t>(x);
    }
    data.assign(n, fill);
  }

  int rank() const { return static_cast<int>(dims.size()); }
  int dim(int i) const { return dims[i]; }
  size_t size() const { return data.size(); }

  template <typename... I>
  size_t offset(I... idx) const {
    static_assert((std::is_convertible_v<I, int> && ...));
    const int ii[] = {static_cast<int>(idx)...};
    size_t off = 0;
    for (size_t i = 0; i < sizeof...(idx); ++i) off = off * dims[i] + ii[i];
    return off;
  }
  template <typename... I>
  T& at(I... idx) {
    return data[offset(idx...)];
  }
  template <typename... I>
  const T& at(I... idx) const {
    return data[offset(idx...)];
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(dims);
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  bool same_shape(const Tensor& o) const { return dims == o.dims; }
};

template <typename T>
inline bool tensor_finite(const Tensor<T>& t) {
  for (T v : t.data)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

// Debug-mode NaN hook; compiled out in release builds.
template <typename T>
inline void check_finite(const Tensor<T>& t, const char* where) {
#ifndef NDEBUG
  require(tensor_finite(t), errc::value_out_of_range, std::string("non-finite value in ") + where);
#else
  (void)t;
  (void)where;
#endif
}

}  // namespace gmpseg
