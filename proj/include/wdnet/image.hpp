#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace wdnet {

// Channel-planar single-precision grids, values normalized to [0,1].
// 8-bit happens only at the PNG boundary.

class ImageRGB {
 public:
  ImageRGB() = default;
  ImageRGB(int height, int width, float fill = 0.f);

  int height() const { return height_; }
  int width() const { return width_; }

  float& at(int c, int y, int x) {
    return data_[(static_cast<size_t>(c) * height_ + y) * width_ + x];
  }
  float at(int c, int y, int x) const {
    return data_[(static_cast<size_t>(c) * height_ + y) * width_ + x];
  }

  std::vector<float>& data() { return data_; }
  const std::vector<float>& data() const { return data_; }

  void clamp01();

 private:
  int height_ = 0, width_ = 0;
  std::vector<float> data_;
};

class AlphaMatte {
 public:
  AlphaMatte() = default;
  AlphaMatte(int height, int width, float fill = 0.f);

  int height() const { return height_; }
  int width() const { return width_; }

  float& at(int y, int x) { return data_[static_cast<size_t>(y) * width_ + x]; }
  float at(int y, int x) const {
    return data_[static_cast<size_t>(y) * width_ + x];
  }

  std::vector<float>& data() { return data_; }
  const std::vector<float>& data() const { return data_; }

  void clamp01();

 private:
  int height_ = 0, width_ = 0;
  std::vector<float> data_;
};

// Hard form holds {0,1}; the soft form (predicted masks) lives in [0,1].
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width, float fill = 0.f);

  int height() const { return height_; }
  int width() const { return width_; }

  float& at(int y, int x) { return data_[static_cast<size_t>(y) * width_ + x]; }
  float at(int y, int x) const {
    return data_[static_cast<size_t>(y) * width_ + x];
  }

  std::vector<float>& data() { return data_; }
  const std::vector<float>& data() const { return data_; }

  bool is_hard() const;
  BinaryMask binarized(float threshold = 0.5f) const;
  size_t area() const;  // count of pixels > 0.5

 private:
  int height_ = 0, width_ = 0;
  std::vector<float> data_;
};

// X(p) = alpha(p) * W(p) + (1 - alpha(p)) * Y(p)
ImageRGB compose(const ImageRGB& y, const ImageRGB& w, const AlphaMatte& alpha);

// Y(p) = (X(p) - alpha(p) * W(p)) / max(1 - alpha(p), eps), clamped to [0,1]
ImageRGB decompose(const ImageRGB& x, const ImageRGB& w,
                   const AlphaMatte& alpha, float eps = 1e-6f);

// Y_o(p) = M(p) * Y(p) + (1 - M(p)) * X(p); soft masks blend linearly
ImageRGB merge_masked(const ImageRGB& y, const ImageRGB& x,
                      const BinaryMask& m);

// M(p) = 1 iff alpha(p) > tau
BinaryMask mask_from_alpha(const AlphaMatte& alpha, float tau = 0.1f);

struct PlacementSpec {
  double scale = 0.5;         // watermark width / canvas width
  double rotation_deg = 0.0;  // [0,360)
  double center_row = 0.0;
  double center_col = 0.0;
  double opacity = 0.5;  // (0.3,0.7) when sampled
};

struct Sample {
  ImageRGB x;        // watermarked
  ImageRGB y;        // watermark-free
  ImageRGB w;        // watermark layer on the full canvas
  AlphaMatte alpha;  // effective opacity
  BinaryMask mask;
  PlacementSpec meta;
};

}  // namespace wdnet
