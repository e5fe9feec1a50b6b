#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "apc/tensor.hpp"

namespace apc {

/// RGB image, interleaved HWC, values in [0,1].
struct Image {
  int height = 0, width = 0;
  Eigen::ArrayXf data;

  Image() = default;
  Image(int h, int w, float fill = 0.f) : height(h), width(w), data(Eigen::ArrayXf::Constant(Eigen::Index(h) * w * 3, fill)) {}

  float& at(int y, int x, int c) { return data[(Eigen::Index(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const { return data[(Eigen::Index(y) * width + x) * 3 + c]; }
  bool empty() const { return data.size() == 0; }
};

/// Binary defect mask, 1 = defective pixel.
struct Mask {
  int height = 0, width = 0;
  Eigen::Array<std::uint8_t, Eigen::Dynamic, 1> data;

  Mask() = default;
  Mask(int h, int w) : height(h), width(w), data(Eigen::Array<std::uint8_t, Eigen::Dynamic, 1>::Zero(Eigen::Index(h) * w)) {}

  std::uint8_t& at(int y, int x) { return data[Eigen::Index(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return data[Eigen::Index(y) * width + x]; }
  Eigen::Index count_nonzero() const { return (data != 0).count(); }
};

enum class Label { Normal = 0, Anomalous = 1 };

struct ImageSample {
  Image pixels;
  Label label = Label::Normal;
  std::optional<Mask> mask;
  std::string source_id;
  std::optional<std::string> anomaly_type;

  /// Throws IntegrityError when label, mask and pixel ranges disagree.
  void validate() const;
  bool anomalous() const { return label == Label::Anomalous; }
};

Image read_image(const std::filesystem::path& path);
Mask read_mask(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& img);
void write_mask_png(const std::filesystem::path& path, const Mask& mask);

Image resize_bilinear(const Image& img, int height, int width);
Mask resize_nearest(const Mask& mask, int height, int width);
/// Resizes the shorter side to `size` and center-crops to size x size.
Image fit_square(const Image& img, int size);
Mask fit_square(const Mask& mask, int size);

struct Hsv { float h, s, v; };
Hsv rgb_to_hsv(float r, float g, float b);
void hsv_to_rgb(const Hsv& hsv, float& r, float& g, float& b);

/// Stacks images into an (n,3,H,W) tensor.
template <typename Scalar>
Tensor<Scalar> images_to_tensor(std::span<const ImageSample> samples);
/// Stacks masks into an (n,1,H,W) tensor; samples without a mask contribute zeros.
template <typename Scalar>
Tensor<Scalar> masks_to_tensor(std::span<const ImageSample> samples);

}  // namespace apc
