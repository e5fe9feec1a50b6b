#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <string>
#include <vector>

#include "apc/error.hpp"

namespace apc {

template <typename Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using MatrixRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense NCHW activation tensor. Storage is contiguous, image-major.
template <typename Scalar>
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  ArrayX<Scalar> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), data(ArrayX<Scalar>::Zero(Eigen::Index(n_) * c_ * h_ * w_)) {}

  Eigen::Index size() const { return data.size(); }
  Eigen::Index plane() const { return Eigen::Index(h) * w; }
  Eigen::Index image_size() const { return Eigen::Index(c) * h * w; }
  bool empty() const { return data.size() == 0; }

  Scalar& at(int i, int ch, int y, int x) { return data[((Eigen::Index(i) * c + ch) * h + y) * w + x]; }
  Scalar at(int i, int ch, int y, int x) const { return data[((Eigen::Index(i) * c + ch) * h + y) * w + x]; }

  Scalar* image(int i) { return data.data() + Eigen::Index(i) * image_size(); }
  const Scalar* image(int i) const { return data.data() + Eigen::Index(i) * image_size(); }

  /// Image i viewed as a (channels x h*w) row-major matrix.
  Eigen::Map<MatrixRM<Scalar>> matrix(int i) { return {image(i), c, plane()}; }
  Eigen::Map<const MatrixRM<Scalar>> matrix(int i) const { return {image(i), c, plane()}; }

  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }

  std::string shape_string() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out;
    out.n = n; out.c = c; out.h = h; out.w = w;
    out.data = data.template cast<Other>();
    return out;
  }

  static Tensor zeros_like(const Tensor& o) { return Tensor(o.n, o.c, o.h, o.w); }
};

template <typename Scalar>
inline void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* what) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": shape " + a.shape_string() + " vs " + b.shape_string());
}

/// Channel-wise concatenation of two tensors with equal batch and spatial size.
template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w)
    throw ShapeError("concat: " + a.shape_string() + " vs " + b.shape_string());
  Tensor<Scalar> out(a.n, a.c + b.c, a.h, a.w);
  for (int i = 0; i < a.n; ++i) {
    std::copy_n(a.image(i), a.image_size(), out.image(i));
    std::copy_n(b.image(i), b.image_size(), out.image(i) + a.image_size());
  }
  return out;
}

/// Inverse of concat_channels: splits the first `first_channels` channels off.
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> split_channels(const Tensor<Scalar>& x, int first_channels) {
  Tensor<Scalar> a(x.n, first_channels, x.h, x.w), b(x.n, x.c - first_channels, x.h, x.w);
  for (int i = 0; i < x.n; ++i) {
    std::copy_n(x.image(i), a.image_size(), a.image(i));
    std::copy_n(x.image(i) + a.image_size(), b.image_size(), b.image(i));
  }
  return {std::move(a), std::move(b)};
}

}  // namespace apc
