#include "apc/image.hpp"

#include <png.h>
#include <jpeglib.h>

#include <algorithm>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>

#include "apc/error.hpp"
#include "apc/resample.hpp"

namespace apc {

void ImageSample::validate() const {
  if (pixels.empty()) throw IntegrityError(source_id + ": empty image");
  if ((pixels.data < 0.f).any() || (pixels.data > 1.f).any()) throw IntegrityError(source_id + ": pixels outside [0,1]");
  if (mask) {
    if (mask->height != pixels.height || mask->width != pixels.width)
      throw IntegrityError(source_id + ": mask shape differs from image shape");
    if ((mask->data > 1).any()) throw IntegrityError(source_id + ": mask values outside {0,1}");
  }
  if (label == Label::Normal && mask && mask->count_nonzero() > 0)
    throw IntegrityError(source_id + ": normal sample with a nonzero mask");
  if (label == Label::Anomalous && (!mask || mask->count_nonzero() == 0))
    throw IntegrityError(source_id + ": anomalous sample without a defect mask");
}

namespace {

bool has_png_signature(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  unsigned char sig[8] = {};
  f.read(reinterpret_cast<char*>(sig), 8);
  return f.gcount() == 8 && png_sig_cmp(sig, 0, 8) == 0;
}

std::vector<std::uint8_t> read_png(const std::filesystem::path& path, std::uint32_t format, int& h, int& w) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw DecodeError("cannot decode PNG '" + path.string() + "': " + img.message);
  img.format = format;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw DecodeError("cannot decode PNG '" + path.string() + "': " + img.message);
  }
  h = int(img.height);
  w = int(img.width);
  return buf;
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

std::vector<std::uint8_t> read_jpeg(const std::filesystem::path& path, bool gray, int& h, int& w) {
  std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!file) throw NotFoundError("cannot open '" + path.string() + "'");
  jpeg_decompress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  std::vector<std::uint8_t> buf;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DecodeError("cannot decode JPEG '" + path.string() + "'");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = gray ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  h = int(cinfo.output_height);
  w = int(cinfo.output_width);
  const int comps = int(cinfo.output_components);
  buf.resize(std::size_t(h) * w * comps);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = buf.data() + std::size_t(cinfo.output_scanline) * w * comps;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return buf;
}

std::vector<std::uint8_t> decode_any(const std::filesystem::path& path, bool gray, int& h, int& w) {
  if (!std::filesystem::exists(path)) throw NotFoundError("image not found: '" + path.string() + "'");
  if (has_png_signature(path)) return read_png(path, gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB, h, w);
  return read_jpeg(path, gray, h, w);
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  int h = 0, w = 0;
  const auto buf = decode_any(path, false, h, w);
  Image img(h, w);
  for (std::size_t i = 0; i < buf.size(); ++i) img.data[Eigen::Index(i)] = float(buf[i]) / 255.f;
  return img;
}

Mask read_mask(const std::filesystem::path& path) {
  int h = 0, w = 0;
  const auto buf = decode_any(path, true, h, w);
  Mask m(h, w);
  for (std::size_t i = 0; i < buf.size(); ++i) m.data[Eigen::Index(i)] = buf[i] >= 128 ? 1 : 0;
  return m;
}

void write_png(const std::filesystem::path& path, const Image& img) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::vector<std::uint8_t> buf(std::size_t(img.data.size()));
  for (Eigen::Index i = 0; i < img.data.size(); ++i)
    buf[std::size_t(i)] = std::uint8_t(std::lround(std::clamp(img.data[i], 0.f, 1.f) * 255.f));
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  pi.width = png_uint_32(img.width);
  pi.height = png_uint_32(img.height);
  pi.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&pi, path.c_str(), 0, buf.data(), 0, nullptr))
    throw Error("cannot write PNG '" + path.string() + "': " + pi.message);
}

void write_mask_png(const std::filesystem::path& path, const Mask& mask) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::vector<std::uint8_t> buf(std::size_t(mask.data.size()));
  for (Eigen::Index i = 0; i < mask.data.size(); ++i) buf[std::size_t(i)] = mask.data[i] ? 255 : 0;
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  pi.width = png_uint_32(mask.width);
  pi.height = png_uint_32(mask.height);
  pi.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&pi, path.c_str(), 0, buf.data(), 0, nullptr))
    throw Error("cannot write PNG '" + path.string() + "': " + pi.message);
}

Image resize_bilinear(const Image& img, int height, int width) {
  if (img.height == height && img.width == width) return img;
  Image out(height, width);
  std::vector<float> plane(std::size_t(img.height) * img.width), res(std::size_t(height) * width);
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < img.height * img.width; ++i) plane[std::size_t(i)] = img.data[Eigen::Index(i) * 3 + c];
    bilinear_resize_plane(plane.data(), img.height, img.width, res.data(), height, width);
    for (int i = 0; i < height * width; ++i) out.data[Eigen::Index(i) * 3 + c] = res[std::size_t(i)];
  }
  return out;
}

Mask resize_nearest(const Mask& mask, int height, int width) {
  if (mask.height == height && mask.width == width) return mask;
  Mask out(height, width);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(mask.height - 1, int((y + 0.5) * mask.height / height));
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(mask.width - 1, int((x + 0.5) * mask.width / width));
      out.at(y, x) = mask.at(sy, sx) >= 1 ? 1 : 0;
    }
  }
  return out;
}

namespace {

std::pair<int, int> scaled_dims(int h, int w, int size) {
  if (h <= w) return {size, std::max(size, int(std::lround(double(w) * size / h)))};
  return {std::max(size, int(std::lround(double(h) * size / w))), size};
}

}  // namespace

Image fit_square(const Image& img, int size) {
  const auto [h, w] = scaled_dims(img.height, img.width, size);
  const Image scaled = resize_bilinear(img, h, w);
  const int oy = (h - size) / 2, ox = (w - size) / 2;
  Image out(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = std::clamp(scaled.at(y + oy, x + ox, c), 0.f, 1.f);
  return out;
}

Mask fit_square(const Mask& mask, int size) {
  const auto [h, w] = scaled_dims(mask.height, mask.width, size);
  const Mask scaled = resize_nearest(mask, h, w);
  const int oy = (h - size) / 2, ox = (w - size) / 2;
  Mask out(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) out.at(y, x) = scaled.at(y + oy, x + ox);
  return out;
}

Hsv rgb_to_hsv(float r, float g, float b) {
  const float mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const float d = mx - mn;
  Hsv out{0.f, mx > 0.f ? d / mx : 0.f, mx};
  if (d > 0.f) {
    float h;
    if (mx == r) h = (g - b) / d;
    else if (mx == g) h = 2.f + (b - r) / d;
    else h = 4.f + (r - g) / d;
    h /= 6.f;
    if (h < 0.f) h += 1.f;
    out.h = h;
  }
  return out;
}

void hsv_to_rgb(const Hsv& hsv, float& r, float& g, float& b) {
  const float h6 = hsv.h * 6.f;
  const int sector = int(std::floor(h6)) % 6;
  const float f = h6 - std::floor(h6);
  const float p = hsv.v * (1.f - hsv.s), q = hsv.v * (1.f - hsv.s * f), t = hsv.v * (1.f - hsv.s * (1.f - f));
  switch (sector) {
    case 0: r = hsv.v; g = t; b = p; break;
    case 1: r = q; g = hsv.v; b = p; break;
    case 2: r = p; g = hsv.v; b = t; break;
    case 3: r = p; g = q; b = hsv.v; break;
    case 4: r = t; g = p; b = hsv.v; break;
    default: r = hsv.v; g = p; b = q; break;
  }
}

template <typename Scalar>
Tensor<Scalar> images_to_tensor(std::span<const ImageSample> samples) {
  if (samples.empty()) return {};
  const int h = samples[0].pixels.height, w = samples[0].pixels.width;
  Tensor<Scalar> t(int(samples.size()), 3, h, w);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Image& img = samples[i].pixels;
    if (img.height != h || img.width != w) throw ShapeError("batch images differ in size: " + samples[i].source_id);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) t.at(int(i), c, y, x) = Scalar(img.at(y, x, c));
  }
  return t;
}

template <typename Scalar>
Tensor<Scalar> masks_to_tensor(std::span<const ImageSample> samples) {
  if (samples.empty()) return {};
  const int h = samples[0].pixels.height, w = samples[0].pixels.width;
  Tensor<Scalar> t(int(samples.size()), 1, h, w);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].mask) continue;
    const Mask& m = *samples[i].mask;
    if (m.height != h || m.width != w) throw ShapeError("mask size differs from batch: " + samples[i].source_id);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) t.at(int(i), 0, y, x) = Scalar(m.at(y, x));
  }
  return t;
}

template Tensor<float> images_to_tensor(std::span<const ImageSample>);
template Tensor<double> images_to_tensor(std::span<const ImageSample>);
template Tensor<float> masks_to_tensor(std::span<const ImageSample>);
template Tensor<double> masks_to_tensor(std::span<const ImageSample>);

}  // namespace apc
