#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "apc/error.hpp"

namespace apc {

/// Two-tap interpolation table mapping `in` samples onto `out` samples with
/// half-pixel centers (output index o samples input coordinate (o+0.5)*in/out-0.5,
/// clamped to the valid range).
struct LinearTaps {
  std::vector<int> lo, hi;
  std::vector<double> w_lo, w_hi;

  LinearTaps(int in, int out) : lo(out), hi(out), w_lo(out), w_hi(out) {
    if (in <= 0 || out <= 0) throw ShapeError("LinearTaps: nonpositive size");
    const double scale = double(in) / double(out);
    for (int o = 0; o < out; ++o) {
      double src = (o + 0.5) * scale - 0.5;
      if (src < 0) src = 0;
      int i0 = std::min(int(std::floor(src)), in - 1);
      int i1 = std::min(i0 + 1, in - 1);
      double frac = src - i0;
      lo[o] = i0; hi[o] = i1;
      w_lo[o] = 1.0 - frac; w_hi[o] = frac;
    }
  }
};

/// Bilinear resize of one (ih x iw) plane into (oh x ow).
template <typename Scalar>
void bilinear_resize_plane(const Scalar* in, int ih, int iw, Scalar* out, int oh, int ow) {
  const LinearTaps ty(ih, oh), tx(iw, ow);
  for (int y = 0; y < oh; ++y) {
    const Scalar* r0 = in + std::size_t(ty.lo[y]) * iw;
    const Scalar* r1 = in + std::size_t(ty.hi[y]) * iw;
    const Scalar wy0 = Scalar(ty.w_lo[y]), wy1 = Scalar(ty.w_hi[y]);
    for (int x = 0; x < ow; ++x) {
      const Scalar wx0 = Scalar(tx.w_lo[x]), wx1 = Scalar(tx.w_hi[x]);
      out[std::size_t(y) * ow + x] = wy0 * (wx0 * r0[tx.lo[x]] + wx1 * r0[tx.hi[x]]) +
                                     wy1 * (wx0 * r1[tx.lo[x]] + wx1 * r1[tx.hi[x]]);
    }
  }
}

/// Adjoint of bilinear_resize_plane: accumulates d_out into d_in.
template <typename Scalar>
void bilinear_resize_plane_adjoint(const Scalar* d_out, int oh, int ow, Scalar* d_in, int ih, int iw) {
  const LinearTaps ty(ih, oh), tx(iw, ow);
  for (int y = 0; y < oh; ++y) {
    Scalar* r0 = d_in + std::size_t(ty.lo[y]) * iw;
    Scalar* r1 = d_in + std::size_t(ty.hi[y]) * iw;
    const Scalar wy0 = Scalar(ty.w_lo[y]), wy1 = Scalar(ty.w_hi[y]);
    for (int x = 0; x < ow; ++x) {
      const Scalar g = d_out[std::size_t(y) * ow + x];
      const Scalar wx0 = Scalar(tx.w_lo[x]), wx1 = Scalar(tx.w_hi[x]);
      r0[tx.lo[x]] += wy0 * wx0 * g;
      r0[tx.hi[x]] += wy0 * wx1 * g;
      r1[tx.lo[x]] += wy1 * wx0 * g;
      r1[tx.hi[x]] += wy1 * wx1 * g;
    }
  }
}

/// Normalized 1-D Gaussian taps of odd length `size`.
inline std::vector<double> gaussian_taps(int size, double sigma) {
  if (size < 1 || size % 2 == 0) throw ConfigError("gaussian_taps: size must be odd and positive");
  if (!(sigma > 0)) throw ConfigError("gaussian_taps: sigma must be positive");
  const int r = size / 2;
  std::vector<double> k(size);
  double sum = 0;
  for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= sum;
  return k;
}

/// Mirror index into [0, n) without repeating the edge sample (…2 1 | 0 1 2 … n-1 | n-2 …).
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

/// Reflected source index for every (position, tap) pair of a length-n axis.
inline std::vector<int> reflect_table(int n, int radius) {
  const int taps = 2 * radius + 1;
  std::vector<int> t(std::size_t(n) * taps);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < taps; ++k) t[std::size_t(i) * taps + k] = reflect_index(i + k - radius, n);
  return t;
}

/// Separable convolution of one plane with symmetric taps and reflective borders.
template <typename Scalar>
void blur_plane(const Scalar* in, int h, int w, const std::vector<double>& taps, Scalar* out) {
  const int nt = int(taps.size()), r = nt / 2;
  std::vector<Scalar> k(taps.begin(), taps.end());
  const auto tx = reflect_table(w, r), ty = reflect_table(h, r);
  std::vector<Scalar> tmp(std::size_t(h) * w);
  for (int y = 0; y < h; ++y) {
    const Scalar* src = in + std::size_t(y) * w;
    Scalar* dst = tmp.data() + std::size_t(y) * w;
    for (int x = 0; x < w; ++x) {
      const int* idx = tx.data() + std::size_t(x) * nt;
      Scalar acc = 0;
      for (int j = 0; j < nt; ++j) acc += k[j] * src[idx[j]];
      dst[x] = acc;
    }
  }
  std::fill(out, out + std::size_t(h) * w, Scalar(0));
  for (int y = 0; y < h; ++y) {
    const int* idx = ty.data() + std::size_t(y) * nt;
    Scalar* dst = out + std::size_t(y) * w;
    for (int j = 0; j < nt; ++j) {
      const Scalar kj = k[j];
      const Scalar* src = tmp.data() + std::size_t(idx[j]) * w;
      for (int x = 0; x < w; ++x) dst[x] += kj * src[x];
    }
  }
}

/// Adjoint of blur_plane: accumulates into d_in.
template <typename Scalar>
void blur_plane_adjoint(const Scalar* d_out, int h, int w, const std::vector<double>& taps, Scalar* d_in) {
  const int nt = int(taps.size()), r = nt / 2;
  std::vector<Scalar> k(taps.begin(), taps.end());
  const auto tx = reflect_table(w, r), ty = reflect_table(h, r);
  std::vector<Scalar> tmp(std::size_t(h) * w, Scalar(0));
  for (int y = 0; y < h; ++y) {
    const int* idx = ty.data() + std::size_t(y) * nt;
    const Scalar* src = d_out + std::size_t(y) * w;
    for (int j = 0; j < nt; ++j) {
      const Scalar kj = k[j];
      Scalar* dst = tmp.data() + std::size_t(idx[j]) * w;
      for (int x = 0; x < w; ++x) dst[x] += kj * src[x];
    }
  }
  for (int y = 0; y < h; ++y) {
    const Scalar* src = tmp.data() + std::size_t(y) * w;
    Scalar* dst = d_in + std::size_t(y) * w;
    for (int x = 0; x < w; ++x) {
      const int* idx = tx.data() + std::size_t(x) * nt;
      const Scalar g = src[x];
      for (int j = 0; j < nt; ++j) dst[idx[j]] += k[j] * g;
    }
  }
}

}  // namespace apc
