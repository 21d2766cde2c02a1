#include "wdnet/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <vector>

namespace wdnet {

namespace {

[[noreturn]] void io_fail(const std::string& path, const char* what) {
  throw std::runtime_error("png: " + std::string(what) + ": " + path);
}

std::vector<uint8_t> read_raw(const std::string& path, int format, int channels,
                              int& height, int& width) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    io_fail(path, image.message[0] ? image.message : "cannot open");
  image.format = format;
  std::vector<uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    io_fail(path, image.message[0] ? image.message : "decode failed");
  }
  height = static_cast<int>(image.height);
  width = static_cast<int>(image.width);
  if (static_cast<size_t>(height) * width * channels != buf.size())
    io_fail(path, "unexpected buffer size");
  return buf;
}

void write_raw(const std::string& path, int format, const uint8_t* data,
               int height, int width) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  if (!png_image_write_to_file(&image, path.c_str(), 0, data, 0, nullptr))
    io_fail(path, image.message[0] ? image.message : "encode failed");
}

uint8_t to_byte(float v) {
  return static_cast<uint8_t>(
      std::lround(std::clamp(v, 0.f, 1.f) * 255.f));
}

}  // namespace

float quantize8(float v) { return to_byte(v) / 255.f; }

ImageRGB read_png_rgb(const std::string& path) {
  int h, w;
  auto buf = read_raw(path, PNG_FORMAT_RGB, 3, h, w);
  ImageRGB img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = buf[(static_cast<size_t>(y) * w + x) * 3 + c] / 255.f;
  return img;
}

AlphaMatte read_png_gray(const std::string& path) {
  int h, w;
  auto buf = read_raw(path, PNG_FORMAT_GRAY, 1, h, w);
  AlphaMatte m(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      m.at(y, x) = buf[static_cast<size_t>(y) * w + x] / 255.f;
  return m;
}

RgbaImage read_png_rgba(const std::string& path) {
  // Read through RGBA; files without an alpha channel come back opaque.
  png_image probe;
  std::memset(&probe, 0, sizeof(probe));
  probe.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&probe, path.c_str()))
    io_fail(path, probe.message[0] ? probe.message : "cannot open");
  bool had_alpha = (probe.format & PNG_FORMAT_FLAG_ALPHA) != 0;
  png_image_free(&probe);

  int h, w;
  auto buf = read_raw(path, PNG_FORMAT_RGBA, 4, h, w);
  RgbaImage out{ImageRGB(h, w), AlphaMatte(h, w), had_alpha};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const uint8_t* px = &buf[(static_cast<size_t>(y) * w + x) * 4];
      for (int c = 0; c < 3; ++c) out.rgb.at(c, y, x) = px[c] / 255.f;
      out.alpha.at(y, x) = px[3] / 255.f;
    }
  return out;
}

void write_png_rgb(const std::string& path, const ImageRGB& img) {
  int h = img.height(), w = img.width();
  std::vector<uint8_t> buf(static_cast<size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        buf[(static_cast<size_t>(y) * w + x) * 3 + c] = to_byte(img.at(c, y, x));
  write_raw(path, PNG_FORMAT_RGB, buf.data(), h, w);
}

void write_png_gray(const std::string& path, int height, int width,
                    const float* data) {
  std::vector<uint8_t> buf(static_cast<size_t>(height) * width);
  for (size_t i = 0; i < buf.size(); ++i) buf[i] = to_byte(data[i]);
  write_raw(path, PNG_FORMAT_GRAY, buf.data(), height, width);
}

void write_png_gray(const std::string& path, const AlphaMatte& m) {
  write_png_gray(path, m.height(), m.width(), m.data().data());
}

void write_png_gray(const std::string& path, const BinaryMask& m) {
  write_png_gray(path, m.height(), m.width(), m.data().data());
}

void write_png_rgba(const std::string& path, const ImageRGB& rgb,
                    const AlphaMatte& alpha) {
  if (rgb.height() != alpha.height() || rgb.width() != alpha.width())
    throw std::invalid_argument("write_png_rgba: dimension mismatch");
  int h = rgb.height(), w = rgb.width();
  std::vector<uint8_t> buf(static_cast<size_t>(h) * w * 4);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      uint8_t* px = &buf[(static_cast<size_t>(y) * w + x) * 4];
      for (int c = 0; c < 3; ++c) px[c] = to_byte(rgb.at(c, y, x));
      px[3] = to_byte(alpha.at(y, x));
    }
  write_raw(path, PNG_FORMAT_RGBA, buf.data(), h, w);
}

namespace {

template <typename GetSrc>
void resize_plane(int sh, int sw, int dh, int dw, GetSrc src,
                  float* dst) {
  // align-corners-false convention
  double sy = static_cast<double>(sh) / dh;
  double sx = static_cast<double>(sw) / dw;
  for (int y = 0; y < dh; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int y0c = std::clamp(y0, 0, sh - 1), y1c = std::clamp(y0 + 1, 0, sh - 1);
    for (int x = 0; x < dw; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int x0c = std::clamp(x0, 0, sw - 1), x1c = std::clamp(x0 + 1, 0, sw - 1);
      double v = (1 - wy) * ((1 - wx) * src(y0c, x0c) + wx * src(y0c, x1c)) +
                 wy * ((1 - wx) * src(y1c, x0c) + wx * src(y1c, x1c));
      dst[static_cast<size_t>(y) * dw + x] = static_cast<float>(v);
    }
  }
}

}  // namespace

ImageRGB resize_bilinear(const ImageRGB& src, int height, int width) {
  ImageRGB out(height, width);
  for (int c = 0; c < 3; ++c)
    resize_plane(src.height(), src.width(), height, width,
                 [&](int y, int x) { return src.at(c, y, x); },
                 &out.data()[static_cast<size_t>(c) * height * width]);
  return out;
}

AlphaMatte resize_bilinear(const AlphaMatte& src, int height, int width) {
  AlphaMatte out(height, width);
  resize_plane(src.height(), src.width(), height, width,
               [&](int y, int x) { return src.at(y, x); }, out.data().data());
  return out;
}

}  // namespace wdnet
