#pragma once

#include <optional>
#include <string>

#include "wdnet/image.hpp"

namespace wdnet {

struct RgbaImage {
  ImageRGB rgb;
  AlphaMatte alpha;
  bool had_alpha_channel = false;
};

// 8-bit PNG I/O; byte value v maps to v/255.
ImageRGB read_png_rgb(const std::string& path);
AlphaMatte read_png_gray(const std::string& path);
RgbaImage read_png_rgba(const std::string& path);

void write_png_rgb(const std::string& path, const ImageRGB& img);
void write_png_gray(const std::string& path, int height, int width,
                    const float* data);
void write_png_gray(const std::string& path, const AlphaMatte& m);
void write_png_gray(const std::string& path, const BinaryMask& m);
void write_png_rgba(const std::string& path, const ImageRGB& rgb,
                    const AlphaMatte& alpha);

// Bilinear resize helpers used when host images do not match the canvas.
ImageRGB resize_bilinear(const ImageRGB& src, int height, int width);
AlphaMatte resize_bilinear(const AlphaMatte& src, int height, int width);

float quantize8(float v);  // round to the nearest 1/255 step, clamped

}  // namespace wdnet
