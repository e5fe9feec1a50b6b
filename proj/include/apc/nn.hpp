#pragma once

// Minimal layer library with explicit forward/backward passes. Every layer is
// templated on the scalar type so the same network runs in float for training
// and in double for finite-difference gradient checks.

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "apc/resample.hpp"
#include "apc/tensor.hpp"

namespace apc::nn {

enum class Mode { Train, Eval };

template <typename Scalar>
struct Param {
  std::string name;
  std::vector<int> shape;
  ArrayX<Scalar> value, grad;
  bool buffer = false;  // running statistics: persisted, never optimized

  Param() = default;
  Param(std::string n, std::vector<int> s, bool is_buffer = false) : name(std::move(n)), shape(std::move(s)), buffer(is_buffer) {
    Eigen::Index count = 1;
    for (int d : shape) count *= d;
    value = ArrayX<Scalar>::Zero(count);
    grad = ArrayX<Scalar>::Zero(count);
  }
};

template <typename Scalar>
using ParamList = std::vector<Param<Scalar>*>;

using Rng = std::mt19937_64;

template <typename Scalar>
void kaiming_normal(Param<Scalar>& p, int fan_in, Rng& rng, double gain = std::sqrt(2.0)) {
  std::normal_distribution<double> dist(0.0, gain / std::sqrt(double(fan_in)));
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value[i] = Scalar(dist(rng));
}

template <typename Scalar>
void uniform_fill(Param<Scalar>& p, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value[i] = Scalar(dist(rng));
}

template <typename Scalar>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) = 0;
  // Consumes the cache from the last Train-mode forward; accumulates parameter gradients.
  virtual Tensor<Scalar> backward(const Tensor<Scalar>& dy) = 0;
  virtual void collect(ParamList<Scalar>&) {}
};

template <typename Scalar>
class Conv2d : public Layer<Scalar> {
 public:
  Conv2d(const std::string& name, int in, int out, int kernel, int stride, int pad, bool bias, Rng& rng)
      : in_(in), out_(out), k_(kernel), stride_(stride), pad_(pad), has_bias_(bias),
        weight_(name + ".weight", {out, in, kernel, kernel}) {
    kaiming_normal(weight_, in * kernel * kernel, rng);
    if (has_bias_) bias_ = Param<Scalar>(name + ".bias", {out});
  }

  int out_size(int s) const { return (s + 2 * pad_ - k_) / stride_ + 1; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) override {
    if (x.c != in_) throw ShapeError(weight_.name + ": expected " + std::to_string(in_) + " channels, got " + x.shape_string());
    const int oh = out_size(x.h), ow = out_size(x.w);
    if (oh <= 0 || ow <= 0) throw ShapeError(weight_.name + ": input too small " + x.shape_string());
    MatrixRM<Scalar> col = im2col(x, oh, ow);
    Eigen::Map<const MatrixRM<Scalar>> W(weight_.value.data(), out_, col.rows());
    MatrixRM<Scalar> y = W * col;
    if (has_bias_) y.colwise() += bias_.value.matrix();
    Tensor<Scalar> out(x.n, out_, oh, ow);
    const Eigen::Index hw = Eigen::Index(oh) * ow;
    for (int i = 0; i < x.n; ++i) out.matrix(i) = y.middleCols(i * hw, hw);
    if (mode == Mode::Train) {
      in_shape_ = {x.n, x.c, x.h, x.w};
      col_ = std::move(col);
    }
    return out;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    const int oh = dy.h, ow = dy.w;
    const Eigen::Index hw = Eigen::Index(oh) * ow;
    MatrixRM<Scalar> g(out_, hw * dy.n);
    for (int i = 0; i < dy.n; ++i) g.middleCols(i * hw, hw) = dy.matrix(i);
    const MatrixRM<Scalar>& col = col_;
    Eigen::Map<MatrixRM<Scalar>> dW(weight_.grad.data(), out_, col.rows());
    dW.noalias() += g * col.transpose();
    if (has_bias_) bias_.grad.matrix() += g.rowwise().sum();
    Eigen::Map<const MatrixRM<Scalar>> W(weight_.value.data(), out_, col.rows());
    MatrixRM<Scalar> dcol = W.transpose() * g;
    Tensor<Scalar> dx(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
    col2im(dcol, dx, oh, ow);
    return dx;
  }

  void collect(ParamList<Scalar>& ps) override {
    ps.push_back(&weight_);
    if (has_bias_) ps.push_back(&bias_);
  }

  Param<Scalar>& weight() { return weight_; }
  Param<Scalar>& bias() { return bias_; }

 private:
  // Output positions ox in [lo, hi) read input columns inside [0, w).
  void valid_range(int k_off, int w, int ow, int& lo, int& hi) const {
    const int first = pad_ - k_off;  // ox*stride >= first
    lo = first <= 0 ? 0 : (first + stride_ - 1) / stride_;
    const int last = w - 1 + pad_ - k_off;  // ox*stride <= last
    hi = last < 0 ? 0 : std::min(ow, last / stride_ + 1);
    lo = std::min(lo, hi);
  }

  MatrixRM<Scalar> im2col(const Tensor<Scalar>& x, int oh, int ow) const {
    const Eigen::Index hw = Eigen::Index(oh) * ow;
    MatrixRM<Scalar> col(Eigen::Index(in_) * k_ * k_, hw * x.n);
    for (int i = 0; i < x.n; ++i)
      for (int ci = 0; ci < in_; ++ci) {
        const Scalar* src = x.image(i) + Eigen::Index(ci) * x.plane();
        for (int ky = 0; ky < k_; ++ky)
          for (int kx = 0; kx < k_; ++kx) {
            Scalar* row = col.row((Eigen::Index(ci) * k_ + ky) * k_ + kx).data() + i * hw;
            int lo, hi;
            valid_range(kx, x.w, ow, lo, hi);
            for (int oy = 0; oy < oh; ++oy) {
              Scalar* dst = row + Eigen::Index(oy) * ow;
              const int iy = oy * stride_ - pad_ + ky;
              if (iy < 0 || iy >= x.h) {
                std::fill(dst, dst + ow, Scalar(0));
                continue;
              }
              const Scalar* srow = src + Eigen::Index(iy) * x.w - pad_ + kx;
              std::fill(dst, dst + lo, Scalar(0));
              if (stride_ == 1)
                std::copy(srow + lo, srow + hi, dst + lo);
              else
                for (int ox = lo; ox < hi; ++ox) dst[ox] = srow[ox * stride_];
              std::fill(dst + hi, dst + ow, Scalar(0));
            }
          }
      }
    return col;
  }

  void col2im(const MatrixRM<Scalar>& col, Tensor<Scalar>& dx, int oh, int ow) const {
    const Eigen::Index hw = Eigen::Index(oh) * ow;
    for (int i = 0; i < dx.n; ++i)
      for (int ci = 0; ci < in_; ++ci) {
        Scalar* dst = dx.image(i) + Eigen::Index(ci) * dx.plane();
        for (int ky = 0; ky < k_; ++ky)
          for (int kx = 0; kx < k_; ++kx) {
            const Scalar* row = col.row((Eigen::Index(ci) * k_ + ky) * k_ + kx).data() + i * hw;
            int lo, hi;
            valid_range(kx, dx.w, ow, lo, hi);
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * stride_ - pad_ + ky;
              if (iy < 0 || iy >= dx.h) continue;
              Scalar* drow = dst + Eigen::Index(iy) * dx.w - pad_ + kx;
              const Scalar* srow = row + Eigen::Index(oy) * ow;
              for (int ox = lo; ox < hi; ++ox) drow[ox * stride_] += srow[ox];
            }
          }
      }
  }

  int in_, out_, k_, stride_, pad_;
  bool has_bias_;
  Param<Scalar> weight_, bias_;
  MatrixRM<Scalar> col_;
  std::array<int, 4> in_shape_{};
};

/// Transposed convolution with kernel 2 and stride 2: doubles the spatial size.
template <typename Scalar>
class ConvTranspose2x2 : public Layer<Scalar> {
 public:
  ConvTranspose2x2(const std::string& name, int in, int out, Rng& rng)
      : in_(in), out_(out), weight_(name + ".weight", {in, out, 2, 2}), bias_(name + ".bias", {out}) {
    kaiming_normal(weight_, in, rng);
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) override {
    if (x.c != in_) throw ShapeError(weight_.name + ": expected " + std::to_string(in_) + " channels, got " + x.shape_string());
    Eigen::Map<const MatrixRM<Scalar>> W(weight_.value.data(), in_, Eigen::Index(out_) * 4);
    Tensor<Scalar> out(x.n, out_, 2 * x.h, 2 * x.w);
    for (int i = 0; i < x.n; ++i) {
      MatrixRM<Scalar> y = W.transpose() * x.matrix(i);  // (out*4) x hw
      for (int co = 0; co < out_; ++co)
        for (int t = 0; t < 4; ++t) {
          const int dy = t / 2, dx = t % 2;
          const Scalar* src = y.row(co * 4 + t).data();
          for (int yy = 0; yy < x.h; ++yy)
            for (int xx = 0; xx < x.w; ++xx)
              out.at(i, co, 2 * yy + dy, 2 * xx + dx) = src[yy * x.w + xx] + bias_.value[co];
        }
    }
    if (mode == Mode::Train) input_ = x;
    return out;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    const Tensor<Scalar>& x = input_;
    Eigen::Map<const MatrixRM<Scalar>> W(weight_.value.data(), in_, Eigen::Index(out_) * 4);
    Eigen::Map<MatrixRM<Scalar>> dW(weight_.grad.data(), in_, Eigen::Index(out_) * 4);
    Tensor<Scalar> dx = Tensor<Scalar>::zeros_like(x);
    MatrixRM<Scalar> g(Eigen::Index(out_) * 4, x.plane());
    for (int i = 0; i < x.n; ++i) {
      for (int co = 0; co < out_; ++co)
        for (int t = 0; t < 4; ++t) {
          const int oy = t / 2, ox = t % 2;
          Scalar* dst = g.row(co * 4 + t).data();
          for (int yy = 0; yy < x.h; ++yy)
            for (int xx = 0; xx < x.w; ++xx) dst[yy * x.w + xx] = dy.at(i, co, 2 * yy + oy, 2 * xx + ox);
        }
      dW.noalias() += x.matrix(i) * g.transpose();
      for (int co = 0; co < out_; ++co) bias_.grad[co] += g.middleRows(co * 4, 4).sum();
      dx.matrix(i).noalias() = W * g;
    }
    return dx;
  }

  void collect(ParamList<Scalar>& ps) override {
    ps.push_back(&weight_);
    ps.push_back(&bias_);
  }

  Param<Scalar>& weight() { return weight_; }
  Param<Scalar>& bias() { return bias_; }

 private:
  int in_, out_;
  Param<Scalar> weight_, bias_;
  Tensor<Scalar> input_;
};

template <typename Scalar>
class BatchNorm2d : public Layer<Scalar> {
 public:
  BatchNorm2d(const std::string& name, int channels, double momentum = 0.1, double eps = 1e-5)
      : c_(channels), momentum_(momentum), eps_(eps),
        gamma_(name + ".weight", {channels}), beta_(name + ".bias", {channels}),
        running_mean_(name + ".running_mean", {channels}, true),
        running_var_(name + ".running_var", {channels}, true) {
    gamma_.value.setOnes();
    running_var_.value.setOnes();
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) override {
    if (x.c != c_) throw ShapeError(gamma_.name + ": channel mismatch " + x.shape_string());
    Tensor<Scalar> y = Tensor<Scalar>::zeros_like(x);
    const Eigen::Index hw = x.plane();
    const double count = double(x.n) * hw;
    if (mode == Mode::Eval) {
      for (int ch = 0; ch < c_; ++ch) {
        const Scalar inv = Scalar(1.0 / std::sqrt(double(running_var_.value[ch]) + eps_));
        const Scalar scale = gamma_.value[ch] * inv;
        const Scalar shift = beta_.value[ch] - running_mean_.value[ch] * scale;
        for (int i = 0; i < x.n; ++i)
          y.matrix(i).row(ch).array() = x.matrix(i).row(ch).array() * scale + shift;
      }
      return y;
    }
    xhat_ = Tensor<Scalar>::zeros_like(x);
    inv_std_.resize(c_);
    for (int ch = 0; ch < c_; ++ch) {
      Scalar mean = 0;
      for (int i = 0; i < x.n; ++i) mean += x.matrix(i).row(ch).sum();
      mean /= Scalar(count);
      Scalar var = 0;
      for (int i = 0; i < x.n; ++i) var += (x.matrix(i).row(ch).array() - mean).square().sum();
      var /= Scalar(count);
      const Scalar inv = Scalar(1) / std::sqrt(var + Scalar(eps_));
      inv_std_[ch] = inv;
      for (int i = 0; i < x.n; ++i) {
        xhat_.matrix(i).row(ch).array() = (x.matrix(i).row(ch).array() - mean) * inv;
        y.matrix(i).row(ch).array() = xhat_.matrix(i).row(ch).array() * gamma_.value[ch] + beta_.value[ch];
      }
      const Scalar m = Scalar(momentum_);
      running_mean_.value[ch] = (Scalar(1) - m) * running_mean_.value[ch] + m * mean;
      const Scalar unbiased = count > 1 ? var * Scalar(count / (count - 1)) : var;
      running_var_.value[ch] = (Scalar(1) - m) * running_var_.value[ch] + m * unbiased;
    }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    Tensor<Scalar> dx = Tensor<Scalar>::zeros_like(dy);
    const Scalar count = Scalar(double(dy.n) * dy.plane());
    for (int ch = 0; ch < c_; ++ch) {
      Scalar dgamma = 0, dbeta = 0;
      for (int i = 0; i < dy.n; ++i) {
        dbeta += dy.matrix(i).row(ch).sum();
        dgamma += (dy.matrix(i).row(ch).array() * xhat_.matrix(i).row(ch).array()).sum();
      }
      gamma_.grad[ch] += dgamma;
      beta_.grad[ch] += dbeta;
      const Scalar k = gamma_.value[ch] * inv_std_[ch] / count;
      for (int i = 0; i < dy.n; ++i)
        dx.matrix(i).row(ch).array() =
            k * (count * dy.matrix(i).row(ch).array() - dbeta - xhat_.matrix(i).row(ch).array() * dgamma);
    }
    return dx;
  }

  void collect(ParamList<Scalar>& ps) override {
    ps.push_back(&gamma_);
    ps.push_back(&beta_);
    ps.push_back(&running_mean_);
    ps.push_back(&running_var_);
  }

 private:
  int c_;
  double momentum_, eps_;
  Param<Scalar> gamma_, beta_, running_mean_, running_var_;
  Tensor<Scalar> xhat_;
  std::vector<Scalar> inv_std_;
};

template <typename Scalar>
class LeakyReLU : public Layer<Scalar> {
 public:
  explicit LeakyReLU(double slope = 0.0) : slope_(Scalar(slope)) {}

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) override {
    Tensor<Scalar> y = x;
    y.data = (x.data > Scalar(0)).select(x.data, x.data * slope_);
    if (mode == Mode::Train) input_ = x;
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    Tensor<Scalar> dx = dy;
    dx.data = (input_.data > Scalar(0)).select(dy.data, dy.data * slope_);
    return dx;
  }

 private:
  Scalar slope_;
  Tensor<Scalar> input_;
};

template <typename Scalar>
class ReLU : public LeakyReLU<Scalar> {
 public:
  ReLU() : LeakyReLU<Scalar>(0.0) {}
};

template <typename Scalar>
class MaxPool2d : public Layer<Scalar> {
 public:
  MaxPool2d(int kernel, int stride, int pad, bool ceil_mode = false)
      : k_(kernel), stride_(stride), pad_(pad), ceil_(ceil_mode) {}

  int out_size(int s) const {
    const int span = s + 2 * pad_ - k_;
    int o = (ceil_ ? (span + stride_ - 1) / stride_ : span / stride_) + 1;
    if (ceil_ && (o - 1) * stride_ >= s + pad_) --o;
    return std::max(o, 1);
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) override {
    const int oh = out_size(x.h), ow = out_size(x.w);
    Tensor<Scalar> y(x.n, x.c, oh, ow);
    std::vector<Eigen::Index> arg(y.size());
    for (int i = 0; i < x.n; ++i)
      for (int ch = 0; ch < x.c; ++ch)
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) {
            Scalar best = -std::numeric_limits<Scalar>::infinity();
            Eigen::Index best_idx = -1;
            for (int ky = 0; ky < k_; ++ky) {
              const int iy = oy * stride_ - pad_ + ky;
              if (iy < 0 || iy >= x.h) continue;
              for (int kx = 0; kx < k_; ++kx) {
                const int ix = ox * stride_ - pad_ + kx;
                if (ix < 0 || ix >= x.w) continue;
                const Eigen::Index idx = ((Eigen::Index(i) * x.c + ch) * x.h + iy) * x.w + ix;
                if (x.data[idx] > best) { best = x.data[idx]; best_idx = idx; }
              }
            }
            const Eigen::Index o = ((Eigen::Index(i) * x.c + ch) * oh + oy) * ow + ox;
            y.data[o] = best;
            arg[o] = best_idx;
          }
    if (mode == Mode::Train) {
      argmax_ = std::move(arg);
      in_shape_ = {x.n, x.c, x.h, x.w};
    }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    Tensor<Scalar> dx(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
    for (Eigen::Index o = 0; o < dy.size(); ++o) dx.data[argmax_[o]] += dy.data[o];
    return dx;
  }

 private:
  int k_, stride_, pad_;
  bool ceil_;
  std::vector<Eigen::Index> argmax_;
  std::array<int, 4> in_shape_{};
};

template <typename Scalar>
class GlobalAvgPool : public Layer<Scalar> {
 public:
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) override {
    Tensor<Scalar> y(x.n, x.c, 1, 1);
    for (int i = 0; i < x.n; ++i) y.matrix(i).col(0) = x.matrix(i).rowwise().mean();
    if (mode == Mode::Train) { h_ = x.h; w_ = x.w; }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    Tensor<Scalar> dx(dy.n, dy.c, h_, w_);
    const Scalar inv = Scalar(1) / Scalar(h_ * w_);
    for (int i = 0; i < dy.n; ++i) dx.matrix(i).colwise() = dy.matrix(i).col(0) * inv;
    return dx;
  }

 private:
  int h_ = 0, w_ = 0;
};

/// Fully connected layer over the flattened per-image features.
template <typename Scalar>
class Linear : public Layer<Scalar> {
 public:
  Linear(const std::string& name, int in, int out, Rng& rng)
      : in_(in), out_(out), weight_(name + ".weight", {out, in}), bias_(name + ".bias", {out}) {
    kaiming_normal(weight_, in, rng);
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) override {
    if (x.image_size() != in_) throw ShapeError(weight_.name + ": expected " + std::to_string(in_) + " features");
    Eigen::Map<const MatrixRM<Scalar>> X(x.data.data(), x.n, in_);
    Eigen::Map<const MatrixRM<Scalar>> W(weight_.value.data(), out_, in_);
    Tensor<Scalar> y(x.n, out_, 1, 1);
    Eigen::Map<MatrixRM<Scalar>> Y(y.data.data(), x.n, out_);
    Y.noalias() = X * W.transpose();
    Y.rowwise() += bias_.value.matrix().transpose();
    if (mode == Mode::Train) input_ = x;
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    Eigen::Map<const MatrixRM<Scalar>> X(input_.data.data(), input_.n, in_);
    Eigen::Map<const MatrixRM<Scalar>> W(weight_.value.data(), out_, in_);
    Eigen::Map<const MatrixRM<Scalar>> G(dy.data.data(), dy.n, out_);
    Eigen::Map<MatrixRM<Scalar>> dW(weight_.grad.data(), out_, in_);
    dW.noalias() += G.transpose() * X;
    bias_.grad.matrix() += G.colwise().sum().transpose();
    Tensor<Scalar> dx = Tensor<Scalar>::zeros_like(input_);
    Eigen::Map<MatrixRM<Scalar>> dX(dx.data.data(), dx.n, in_);
    dX.noalias() = G * W;
    return dx;
  }

  void collect(ParamList<Scalar>& ps) override {
    ps.push_back(&weight_);
    ps.push_back(&bias_);
  }

 private:
  int in_, out_;
  Param<Scalar> weight_, bias_;
  Tensor<Scalar> input_;
};

/// Fixed normalized Gaussian smoothing applied per channel with reflective borders.
template <typename Scalar>
class GaussianBlur : public Layer<Scalar> {
 public:
  GaussianBlur(int size, double sigma) : taps_(gaussian_taps(size, sigma)) {}

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode) override {
    Tensor<Scalar> y = Tensor<Scalar>::zeros_like(x);
    for (Eigen::Index p = 0; p < Eigen::Index(x.n) * x.c; ++p)
      blur_plane(x.data.data() + p * x.plane(), x.h, x.w, taps_, y.data.data() + p * x.plane());
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    Tensor<Scalar> dx = Tensor<Scalar>::zeros_like(dy);
    for (Eigen::Index p = 0; p < Eigen::Index(dy.n) * dy.c; ++p)
      blur_plane_adjoint(dy.data.data() + p * dy.plane(), dy.h, dy.w, taps_, dx.data.data() + p * dy.plane());
    return dx;
  }

  const std::vector<double>& taps() const { return taps_; }

 private:
  std::vector<double> taps_;
};

/// Bilinear resize by an integer factor.
template <typename Scalar>
class Upsample : public Layer<Scalar> {
 public:
  explicit Upsample(int factor) : factor_(factor) {}

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) override {
    Tensor<Scalar> y(x.n, x.c, x.h * factor_, x.w * factor_);
    for (Eigen::Index p = 0; p < Eigen::Index(x.n) * x.c; ++p)
      bilinear_resize_plane(x.data.data() + p * x.plane(), x.h, x.w, y.data.data() + p * y.plane(), y.h, y.w);
    if (mode == Mode::Train) { h_ = x.h; w_ = x.w; }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    Tensor<Scalar> dx(dy.n, dy.c, h_, w_);
    for (Eigen::Index p = 0; p < Eigen::Index(dy.n) * dy.c; ++p)
      bilinear_resize_plane_adjoint(dy.data.data() + p * dy.plane(), dy.h, dy.w, dx.data.data() + p * dx.plane(), h_, w_);
    return dx;
  }

 private:
  int factor_;
  int h_ = 0, w_ = 0;
};

template <typename Scalar>
class Sigmoid : public Layer<Scalar> {
 public:
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) override {
    Tensor<Scalar> y = x;
    y.data = Scalar(1) / (Scalar(1) + (-x.data).exp());
    if (mode == Mode::Train) output_ = y;
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    Tensor<Scalar> dx = dy;
    dx.data = dy.data * output_.data * (Scalar(1) - output_.data);
    return dx;
  }

 private:
  Tensor<Scalar> output_;
};

template <typename Scalar>
class Sequential : public Layer<Scalar> {
 public:
  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) override {
    Tensor<Scalar> y = x;
    for (auto& l : layers_) y = l->forward(y, mode);
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    Tensor<Scalar> g = dy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  void collect(ParamList<Scalar>& ps) override {
    for (auto& l : layers_) l->collect(ps);
  }

  std::size_t size() const { return layers_.size(); }

 private:
  std::vector<std::unique_ptr<Layer<Scalar>>> layers_;
};

}  // namespace apc::nn
