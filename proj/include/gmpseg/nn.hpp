#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <utility>
#include <vector>

#include "gmpseg/error.hpp"
#include "gmpseg/tensor.hpp"

namespace gmpseg {

enum class DepthPad { valid, same };

namespace detail {

// Geometry of one convolution: same spatial padding (extra on bottom/right for
// even kernels), depth either valid or same.
struct ConvGeom {
  int H, W, D, Cin;
  int kh, kw, kd, Cout;
  int OH, OW, OD;
  int padT, padL, padF;
  int Hp, Wp, Dp;
  int K;
};

inline ConvGeom make_geom(int H, int W, int D, int Cin, int kh, int kw, int kd, int Cout,
                          DepthPad depth) {
  require(kh >= 1 && kw >= 1 && kd >= 1, errc::shape_mismatch, "kernel dims");
  ConvGeom g;
  g.H = H;
  g.W = W;
  g.D = D;
  g.Cin = Cin;
  g.kh = kh;
  g.kw = kw;
  g.kd = kd;
  g.Cout = Cout;
  g.OH = H;
  g.OW = W;
  g.padT = (kh - 1) / 2;
  g.padL = (kw - 1) / 2;
  if (depth == DepthPad::valid) {
    require(D >= kd, errc::depth_too_small, "depth-valid conv needs D >= kd");
    g.OD = D - kd + 1;
    g.padF = 0;
  } else {
    g.OD = D;
    g.padF = (kd - 1) / 2;
  }
  g.Hp = g.OH + kh - 1;
  g.Wp = g.OW + kw - 1;
  g.Dp = g.OD + kd - 1;
  g.K = kh * kw * kd * Cin;
  return g;
}

// Zero-padded per-(depth, channel) planes of the source tensor. Kernels read
// rows of these planes directly, so no im2col buffer is ever materialized.
template <typename T>
std::vector<T> build_planes(const T* x, const ConvGeom& g) {
  std::vector<T> buf(static_cast<size_t>(g.Dp) * g.Cin * g.Hp * g.Wp, T(0));
  const size_t wstride = static_cast<size_t>(g.D) * g.Cin;
  for (int d = 0; d < g.D; ++d)
    for (int c = 0; c < g.Cin; ++c) {
      T* plane = buf.data() + (static_cast<size_t>(d + g.padF) * g.Cin + c) * g.Hp * g.Wp;
      for (int r = 0; r < g.H; ++r) {
        T* dst = plane + static_cast<size_t>(r + g.padT) * g.Wp + g.padL;
        const T* src = x + (static_cast<size_t>(r) * g.W * g.D + d) * g.Cin + c;
        for (int w = 0; w < g.W; ++w) dst[w] = src[w * wstride];
      }
    }
  return buf;
}

template <typename T>
inline const T* plane_at(const std::vector<T>& buf, const ConvGeom& g, int pd, int c) {
  return buf.data() + (static_cast<size_t>(pd) * g.Cin + c) * g.Hp * g.Wp;
}

// Reference convolution over padded planes; also the double-precision path.
template <typename T>
void conv_core_ref(const std::vector<T>& planes, const ConvGeom& g, const T* w, const T* bias,
                   T* out) {
  std::vector<T> acc(g.Cout);
  for (int oh = 0; oh < g.OH; ++oh)
    for (int ow = 0; ow < g.OW; ++ow)
      for (int od = 0; od < g.OD; ++od) {
        for (int co = 0; co < g.Cout; ++co) acc[co] = bias ? bias[co] : T(0);
        const T* wp = w;
        for (int kr = 0; kr < g.kh; ++kr)
          for (int kc = 0; kc < g.kw; ++kc)
            for (int kz = 0; kz < g.kd; ++kz)
              for (int ci = 0; ci < g.Cin; ++ci, wp += g.Cout) {
                T v = plane_at(planes, g, od + kz, ci)[static_cast<size_t>(oh + kr) * g.Wp +
                                                       ow + kc];
                for (int co = 0; co < g.Cout; ++co) acc[co] += v * wp[co];
              }
        T* o = out + ((static_cast<size_t>(oh) * g.OW + ow) * g.OD + od) * g.Cout;
        std::copy(acc.begin(), acc.end(), o);
      }
}

typedef float vf16 __attribute__((vector_size(64)));

inline float hsum(vf16 v) {
  float s = 0.0f;
  for (int i = 0; i < 16; ++i) s += v[i];
  return s;
}

// Streaming kernel: 16 output columns per block, all Cout accumulators in
// registers, k-loop unrolled by two with separate accumulator banks when the
// register budget allows it.
template <int N, bool DUAL>
void conv_core_v16(const std::vector<float>& planes, const ConvGeom& g, const float* w,
                   const float* bias, float* out) {
  const int K = g.K;
  std::vector<const float*> src(K);
  for (int od = 0; od < g.OD; ++od)
    for (int oh = 0; oh < g.OH; ++oh) {
      int k = 0;
      for (int kr = 0; kr < g.kh; ++kr)
        for (int kc = 0; kc < g.kw; ++kc)
          for (int kz = 0; kz < g.kd; ++kz)
            for (int ci = 0; ci < g.Cin; ++ci)
              src[k++] = plane_at(planes, g, od + kz, ci) +
                         static_cast<size_t>(oh + kr) * g.Wp + kc;

      int ow0 = 0;
      for (; ow0 + 16 <= g.OW; ow0 += 16) {
        vf16 a[N] = {};
        vf16 b[N] = {};
        const float* wp = w;
        int kk = 0;
        if constexpr (DUAL) {
          for (; kk + 2 <= K; kk += 2, wp += 2 * N) {
            vf16 x, y;
            std::memcpy(&x, src[kk] + ow0, 64);
            std::memcpy(&y, src[kk + 1] + ow0, 64);
            for (int n = 0; n < N; ++n) a[n] += x * wp[n];
            for (int n = 0; n < N; ++n) b[n] += y * wp[N + n];
          }
        }
        for (; kk < K; ++kk, wp += N) {
          vf16 x;
          std::memcpy(&x, src[kk] + ow0, 64);
          for (int n = 0; n < N; ++n) a[n] += x * wp[n];
        }
        for (int n = 0; n < N; ++n) {
          float base = bias ? bias[n] : 0.0f;
          vf16 s = a[n] + b[n];
          for (int l = 0; l < 16; ++l)
            out[((static_cast<size_t>(oh) * g.OW + ow0 + l) * g.OD + od) * N + n] = s[l] + base;
        }
      }
      for (; ow0 < g.OW; ++ow0) {
        float acc[N];
        for (int n = 0; n < N; ++n) acc[n] = bias ? bias[n] : 0.0f;
        const float* wp = w;
        for (int kk = 0; kk < K; ++kk, wp += N) {
          float x = src[kk][ow0];
          for (int n = 0; n < N; ++n) acc[n] += x * wp[n];
        }
        for (int n = 0; n < N; ++n)
          out[((static_cast<size_t>(oh) * g.OW + ow0) * g.OD + od) * N + n] = acc[n];
      }
    }
}

inline void conv_core(const std::vector<float>& planes, const ConvGeom& g, const float* w,
                      const float* bias, float* out) {
  switch (g.Cout) {
    case 1: conv_core_v16<1, true>(planes, g, w, bias, out); break;
    case 8: conv_core_v16<8, true>(planes, g, w, bias, out); break;
    case 9: conv_core_v16<9, true>(planes, g, w, bias, out); break;
    case 17: conv_core_v16<17, false>(planes, g, w, bias, out); break;
    case 18: conv_core_v16<18, false>(planes, g, w, bias, out); break;
    default: conv_core_ref<float>(planes, g, w, bias, out); break;
  }
}

inline void conv_core(const std::vector<double>& planes, const ConvGeom& g, const double* w,
                      const double* bias, double* out) {
  conv_core_ref<double>(planes, g, w, bias, out);
}

// Weight gradient as a bank of plane dot products: for each (kr,kc,kz,ci,co)
// the contribution is a shifted dot of an input plane with one d_out channel.
template <typename T>
void conv_dw_ref(const std::vector<T>& planes, const ConvGeom& g, const T* dout, T* dw) {
  for (int oh = 0; oh < g.OH; ++oh)
    for (int ow = 0; ow < g.OW; ++ow)
      for (int od = 0; od < g.OD; ++od) {
        const T* drow = dout + ((static_cast<size_t>(oh) * g.OW + ow) * g.OD + od) * g.Cout;
        T* dwp = dw;
        for (int kr = 0; kr < g.kh; ++kr)
          for (int kc = 0; kc < g.kw; ++kc)
            for (int kz = 0; kz < g.kd; ++kz)
              for (int ci = 0; ci < g.Cin; ++ci, dwp += g.Cout) {
                T v = plane_at(planes, g, od + kz, ci)[static_cast<size_t>(oh + kr) * g.Wp +
                                                       ow + kc];
                for (int co = 0; co < g.Cout; ++co) dwp[co] += v * drow[co];
              }
      }
}

inline constexpr int kMaxDwKw = 32;

// Kept out of line so the caller's buffer bounds stay opaque; inlining lets the
// optimizer mangle the tail loop for the whole nest.
__attribute__((noinline)) inline void dw_plane_pair(const float* xplane, const float* dplane,
                                                    float* taps, int OH, int OW, int kh, int kw,
                                                    int Wp) {
  for (int kr = 0; kr < kh; ++kr) {
    alignas(64) vf16 acc[kMaxDwKw] = {};
    float rest[kMaxDwKw] = {};
    for (int oh = 0; oh < OH; ++oh) {
      const float* x = xplane + static_cast<size_t>(oh + kr) * Wp;
      const float* d = dplane + static_cast<size_t>(oh) * OW;
      for (int kc = 0; kc < kw; ++kc) {
        vf16 a{};
        int ow = 0;
        for (; ow + 16 <= OW; ow += 16) {
          vf16 x0, d0;
          std::memcpy(&x0, x + kc + ow, 64);
          std::memcpy(&d0, d + ow, 64);
          a += x0 * d0;
        }
        float r = 0.0f;
        for (; ow < OW; ++ow) r += x[kc + ow] * d[ow];
        acc[kc] += a;
        rest[kc] += r;
      }
    }
    for (int kc = 0; kc < kw; ++kc) taps[static_cast<size_t>(kr) * kw + kc] = hsum(acc[kc]) + rest[kc];
  }
}

inline void conv_dw(const std::vector<float>& planes, const ConvGeom& g, const float* dout,
                    float* dw) {
  const size_t plane_px = static_cast<size_t>(g.OH) * g.OW;
  std::vector<float> dt(static_cast<size_t>(g.Cout) * g.OD * plane_px);
  for (int oh = 0; oh < g.OH; ++oh)
    for (int ow = 0; ow < g.OW; ++ow)
      for (int od = 0; od < g.OD; ++od) {
        const float* s = dout + ((static_cast<size_t>(oh) * g.OW + ow) * g.OD + od) * g.Cout;
        for (int co = 0; co < g.Cout; ++co)
          dt[(static_cast<size_t>(co) * g.OD + od) * plane_px + static_cast<size_t>(oh) * g.OW +
             ow] = s[co];
      }

  if (g.kw > kMaxDwKw) {
    conv_dw_ref<float>(planes, g, dout, dw);
    return;
  }
  std::vector<float> taps(static_cast<size_t>(g.kh) * g.kw);
  for (int co = 0; co < g.Cout; ++co)
    for (int ci = 0; ci < g.Cin; ++ci)
      for (int kz = 0; kz < g.kd; ++kz)
        for (int od = 0; od < g.OD; ++od) {
          const float* dplane = dt.data() + (static_cast<size_t>(co) * g.OD + od) * plane_px;
          const float* xplane = plane_at(planes, g, od + kz, ci);
          dw_plane_pair(xplane, dplane, taps.data(), g.OH, g.OW, g.kh, g.kw, g.Wp);
          for (int kr = 0; kr < g.kh; ++kr)
            for (int kc = 0; kc < g.kw; ++kc)
              dw[(((static_cast<size_t>(kr) * g.kw + kc) * g.kd + kz) * g.Cin + ci) * g.Cout +
                 co] += taps[static_cast<size_t>(kr) * g.kw + kc];
        }
}

inline void conv_dw(const std::vector<double>& planes, const ConvGeom& g, const double* dout,
                    double* dw) {
  conv_dw_ref<double>(planes, g, dout, dw);
}

// [kh,kw,kd,Cin,Cout] -> flipped [kh,kw,kd,Cout,Cin] for the input-gradient
// pass, which is itself a convolution of d_out.
template <typename T>
Tensor<T> flip_swap_weights(const Tensor<T>& w) {
  const int kh = w.dim(0), kw = w.dim(1), kd = w.dim(2), ci = w.dim(3), co = w.dim(4);
  Tensor<T> f({kh, kw, kd, co, ci});
  for (int a = 0; a < kh; ++a)
    for (int b = 0; b < kw; ++b)
      for (int c = 0; c < kd; ++c)
        for (int i = 0; i < ci; ++i)
          for (int o = 0; o < co; ++o)
            f.at(kh - 1 - a, kw - 1 - b, kd - 1 - c, o, i) = w.at(a, b, c, i, o);
  return f;
}

}  // namespace detail

template <typename T>
struct ConvGrads {
  Tensor<T> d_x;
  Tensor<T> d_w;
  Tensor<T> d_b;
};

// x [H,W,D,Cin], w [kh,kw,kd,Cin,Cout], b [Cout]. Spatial padding is always
// same; depth is valid (D -> D-kd+1) or same (D -> D).
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, DepthPad depth) {
  require(x.rank() == 4 && w.rank() == 5 && b.rank() == 1, errc::shape_mismatch, "conv3d ranks");
  require(w.dim(3) == x.dim(3), errc::shape_mismatch, "conv3d Cin");
  require(b.dim(0) == w.dim(4), errc::shape_mismatch, "conv3d bias");
  detail::ConvGeom g = detail::make_geom(x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0),
                                         w.dim(1), w.dim(2), w.dim(4), depth);
  auto planes = detail::build_planes(x.data.data(), g);
  Tensor<T> out({g.OH, g.OW, g.OD, g.Cout});
  detail::conv_core(planes, g, w.data.data(), b.data.data(), out.data.data());
  check_finite(out, "conv3d");
  return out;
}

template <typename T>
ConvGrads<T> conv3d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& d_out,
                             DepthPad depth, bool want_dx = true) {
  detail::ConvGeom g = detail::make_geom(x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0),
                                         w.dim(1), w.dim(2), w.dim(4), depth);
  require(d_out.dim(0) == g.OH && d_out.dim(1) == g.OW && d_out.dim(2) == g.OD &&
              d_out.dim(3) == g.Cout,
          errc::shape_mismatch, "conv3d d_out");

  ConvGrads<T> grads;
  grads.d_b = Tensor<T>({g.Cout});
  for (size_t i = 0; i < d_out.size(); i += g.Cout)
    for (int co = 0; co < g.Cout; ++co) grads.d_b.data[co] += d_out.data[i + co];

  grads.d_w = Tensor<T>({g.kh, g.kw, g.kd, g.Cin, g.Cout});
  {
    auto planes = detail::build_planes(x.data.data(), g);
    detail::conv_dw(planes, g, d_out.data.data(), grads.d_w.data.data());
  }

  if (!want_dx) return grads;

  // d_x: convolve d_out with flipped weights; the padding offsets complement
  // the forward ones so indices line up.
  Tensor<T> wf = detail::flip_swap_weights(w);
  detail::ConvGeom gb;
  gb.H = g.OH;
  gb.W = g.OW;
  gb.D = g.OD;
  gb.Cin = g.Cout;
  gb.kh = g.kh;
  gb.kw = g.kw;
  gb.kd = g.kd;
  gb.Cout = g.Cin;
  gb.OH = g.H;
  gb.OW = g.W;
  gb.OD = g.D;
  gb.padT = g.kh - 1 - g.padT;
  gb.padL = g.kw - 1 - g.padL;
  gb.padF = g.kd - 1 - g.padF;
  gb.Hp = gb.OH + g.kh - 1;
  gb.Wp = gb.OW + g.kw - 1;
  gb.Dp = gb.OD + g.kd - 1;
  gb.K = g.kh * g.kw * g.kd * gb.Cin;
  auto planes = detail::build_planes(d_out.data.data(), gb);
  grads.d_x = Tensor<T>({g.H, g.W, g.D, g.Cin});
  detail::conv_core(planes, gb, wf.data.data(), static_cast<const T*>(nullptr),
                    grads.d_x.data.data());
  return grads;
}

template <typename T>
Tensor<T> reshape(Tensor<T> t, std::vector<int> dims) {
  size_t n = 1;
  for (int d : dims) n *= static_cast<size_t>(d);
  require(n == t.size(), errc::shape_mismatch, "reshape size");
  t.dims = std::move(dims);
  return t;
}

// x [H,W,Cin], w [kh,kw,Cin,Cout]: a depth-1 conv3d.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require(x.rank() == 3 && w.rank() == 4, errc::shape_mismatch, "conv2d ranks");
  Tensor<T> x4 = reshape(x, {x.dim(0), x.dim(1), 1, x.dim(2)});
  Tensor<T> w5 = reshape(w, {w.dim(0), w.dim(1), 1, w.dim(2), w.dim(3)});
  Tensor<T> out = conv3d(x4, w5, b, DepthPad::valid);
  std::vector<int> odims = {out.dim(0), out.dim(1), out.dim(3)};
  return reshape(std::move(out), std::move(odims));
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& d_out,
                             bool want_dx = true) {
  Tensor<T> x4 = reshape(x, {x.dim(0), x.dim(1), 1, x.dim(2)});
  Tensor<T> w5 = reshape(w, {w.dim(0), w.dim(1), 1, w.dim(2), w.dim(3)});
  Tensor<T> d4 = reshape(d_out, {d_out.dim(0), d_out.dim(1), 1, d_out.dim(2)});
  ConvGrads<T> g = conv3d_backward(x4, w5, d4, DepthPad::valid, want_dx);
  if (want_dx) g.d_x = reshape(std::move(g.d_x), {x.dim(0), x.dim(1), x.dim(2)});
  g.d_w = reshape(std::move(g.d_w), {w.dim(0), w.dim(1), w.dim(2), w.dim(3)});
  return g;
}

template <typename T>
struct Pooled {
  Tensor<T> out;
  std::vector<std::uint8_t> argmax;  // window-local index, scan order
  std::vector<int> in_dims;
};

// 2x2 spatial max pooling for rank-3 [H,W,C] or rank-4 [H,W,D,C] tensors
// (window 2x2x1 in the rank-4 case). Ties keep the first element encountered.
template <typename T>
Pooled<T> maxpool2x2(const Tensor<T>& x) {
  require(x.rank() == 3 || x.rank() == 4, errc::shape_mismatch, "maxpool rank");
  const int H = x.dim(0), W = x.dim(1);
  require(H % 2 == 0 && W % 2 == 0, errc::odd_spatial_dim, "maxpool needs even H and W");
  size_t rest = 1;
  for (int i = 2; i < x.rank(); ++i) rest *= static_cast<size_t>(x.dim(i));

  std::vector<int> odims = x.dims;
  odims[0] = H / 2;
  odims[1] = W / 2;
  Pooled<T> p;
  p.out = Tensor<T>(odims);
  p.argmax.assign(p.out.size(), 0);
  p.in_dims = x.dims;

  const T* in = x.data.data();
  T* out = p.out.data.data();
  const size_t row = static_cast<size_t>(W) * rest;
  for (int oh = 0; oh < H / 2; ++oh)
    for (int ow = 0; ow < W / 2; ++ow) {
      const T* base = in + 2 * oh * row + 2 * ow * rest;
      T* o = out + (static_cast<size_t>(oh) * (W / 2) + ow) * rest;
      std::uint8_t* am = p.argmax.data() + (static_cast<size_t>(oh) * (W / 2) + ow) * rest;
      for (size_t j = 0; j < rest; ++j) {
        T best = base[j];
        std::uint8_t arg = 0;
        const T cands[3] = {base[rest + j], base[row + j], base[row + rest + j]};
        for (int t = 0; t < 3; ++t)
          if (cands[t] > best) {
            best = cands[t];
            arg = static_cast<std::uint8_t>(t + 1);
          }
        o[j] = best;
        am[j] = arg;
      }
    }
  return p;
}

template <typename T>
Tensor<T> maxpool2x2_backward(const Pooled<T>& p, const Tensor<T>& d_out) {
  require(d_out.dims == p.out.dims, errc::shape_mismatch, "maxpool d_out");
  Tensor<T> d_in(p.in_dims);
  const int H = p.in_dims[0], W = p.in_dims[1];
  size_t rest = 1;
  for (size_t i = 2; i < p.in_dims.size(); ++i) rest *= static_cast<size_t>(p.in_dims[i]);
  const size_t row = static_cast<size_t>(W) * rest;
  for (int oh = 0; oh < H / 2; ++oh)
    for (int ow = 0; ow < W / 2; ++ow) {
      size_t o = (static_cast<size_t>(oh) * (W / 2) + ow) * rest;
      T* base = d_in.data.data() + 2 * oh * row + 2 * ow * rest;
      for (size_t j = 0; j < rest; ++j) {
        std::uint8_t arg = p.argmax[o + j];
        size_t off = (arg == 0 ? 0 : arg == 1 ? rest : arg == 2 ? row : row + rest);
        base[off + j] += d_out.data[o + j];
      }
    }
  return d_in;
}

// Channel concatenation of rank-3 tensors, a's channels first.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 3 && b.rank() == 3, errc::shape_mismatch, "concat rank");
  require(a.dim(0) == b.dim(0) && a.dim(1) == b.dim(1), errc::shape_mismatch, "concat spatial");
  const int H = a.dim(0), W = a.dim(1), Ca = a.dim(2), Cb = b.dim(2);
  Tensor<T> out({H, W, Ca + Cb});
  for (size_t px = 0; px < static_cast<size_t>(H) * W; ++px) {
    std::copy_n(a.data.data() + px * Ca, Ca, out.data.data() + px * (Ca + Cb));
    std::copy_n(b.data.data() + px * Cb, Cb, out.data.data() + px * (Ca + Cb) + Ca);
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& d_out, int Ca) {
  const int H = d_out.dim(0), W = d_out.dim(1), C = d_out.dim(2);
  require(Ca >= 0 && Ca <= C, errc::shape_mismatch, "split point");
  Tensor<T> a({H, W, Ca}), b({H, W, C - Ca});
  for (size_t px = 0; px < static_cast<size_t>(H) * W; ++px) {
    std::copy_n(d_out.data.data() + px * C, Ca, a.data.data() + px * Ca);
    std::copy_n(d_out.data.data() + px * C + Ca, C - Ca, b.data.data() + px * (C - Ca));
  }
  return {std::move(a), std::move(b)};
}

template <typename T>
Tensor<T> squeeze_depth(const Tensor<T>& x) {
  require(x.rank() == 4, errc::shape_mismatch, "squeeze rank");
  require(x.dim(2) == 1, errc::depth_not_one, "depth must be 1");
  return reshape(x, {x.dim(0), x.dim(1), x.dim(3)});
}

template <typename T>
Tensor<T> unsqueeze_depth(const Tensor<T>& x) {
  require(x.rank() == 3, errc::shape_mismatch, "unsqueeze rank");
  return reshape(x, {x.dim(0), x.dim(1), 1, x.dim(2)});
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out(x.dims);
  for (size_t i = 0; i < x.size(); ++i) {
    T v = x.data[i];
    if (v >= T(0)) {
      T e = std::exp(-v);
      out.data[i] = T(1) / (T(1) + e);
    } else {
      T e = std::exp(v);
      out.data[i] = e / (T(1) + e);
    }
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& d_out) {
  require(y.dims == d_out.dims, errc::shape_mismatch, "sigmoid backward");
  Tensor<T> d(y.dims);
  for (size_t i = 0; i < y.size(); ++i) d.data[i] = d_out.data[i] * y.data[i] * (T(1) - y.data[i]);
  return d;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.dims);
  for (size_t i = 0; i < x.size(); ++i) out.data[i] = std::max(x.data[i], T(0));
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& d_out) {
  Tensor<T> d(x.dims);
  for (size_t i = 0; i < x.size(); ++i) d.data[i] = x.data[i] > T(0) ? d_out.data[i] : T(0);
  return d;
}

// Weighted binary cross entropy, averaged over all elements. Predictions are
// clamped to [1e-7, 1-1e-7]; the gradient is evaluated at the clamped value so
// saturated pixels still learn.
template <typename T>
std::pair<double, Tensor<T>> weighted_bce(const Tensor<T>& p, const Tensor<T>& y, double w_pos) {
  require(p.dims == y.dims, errc::shape_mismatch, "bce shapes");
  const double lo = 1e-7, hi = 1.0 - 1e-7;
  const double inv_n = 1.0 / static_cast<double>(p.size());
  double loss = 0.0;
  Tensor<T> d(p.dims);
  for (size_t i = 0; i < p.size(); ++i) {
    double pc = std::clamp(static_cast<double>(p.data[i]), lo, hi);
    double yy = y.data[i];
    loss -= w_pos * yy * std::log(pc) + (1.0 - yy) * std::log(1.0 - pc);
    d.data[i] = static_cast<T>(-(w_pos * yy / pc - (1.0 - yy) / (1.0 - pc)) * inv_n);
  }
  return {loss * inv_n, std::move(d)};
}

// v <- mu v - lr g; p <- p + mu v - lr g.
template <typename T>
void sgd_nesterov_step(std::vector<T>& p, const std::vector<T>& g, std::vector<T>& v, double lr,
                       double mu) {
  require(p.size() == g.size() && p.size() == v.size(), errc::shape_mismatch, "sgd sizes");
  require(lr >= 0.0 && mu >= 0.0 && mu < 1.0, errc::value_out_of_range, "sgd hyperparams");
  for (size_t i = 0; i < p.size(); ++i) {
    T vi = static_cast<T>(mu * v[i] - lr * g[i]);
    v[i] = vi;
    p[i] += static_cast<T>(mu * vi - lr * g[i]);
  }
}

template <typename T>
void sgd_nesterov_step(Tensor<T>& p, const Tensor<T>& g, Tensor<T>& v, double lr, double mu) {
  sgd_nesterov_step(p.data, g.data, v.data, lr, mu);
}

template <typename T>
void glorot_fill(Tensor<T>& w, int fan_in, int fan_out, std::mt19937& rng) {
  double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& x : w.data) x = static_cast<T>(dist(rng));
}

// Max relative error between an analytic gradient and central differences of
// a scalar-valued function. Denominator floors at 1 so near-zero entries are
// compared absolutely.
template <typename F>
double grad_check(F&& loss, std::vector<double>& x, const std::vector<double>& analytic,
                  double eps = 1e-4) {
  require(x.size() == analytic.size(), errc::shape_mismatch, "grad_check sizes");
  double worst = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    double keep = x[i];
    x[i] = keep + eps;
    double fp = loss(x);
    x[i] = keep - eps;
    double fm = loss(x);
    x[i] = keep;
    double num = (fp - fm) / (2.0 * eps);
    double denom = std::max({1.0, std::abs(num), std::abs(analytic[i])});
    worst = std::max(worst, std::abs(num - analytic[i]) / denom);
  }
  return worst;
}

}  // namespace gmpseg
