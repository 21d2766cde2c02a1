#include "wdnet/image.hpp"

#include <algorithm>
#include <cmath>

namespace wdnet {

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

template <typename A, typename B>
void require_same_dims(const A& a, const B& b, const char* msg) {
  require(a.height() == b.height() && a.width() == b.width(), msg);
}

}  // namespace

ImageRGB::ImageRGB(int height, int width, float fill)
    : height_(height), width_(width),
      data_(static_cast<size_t>(height) * width * 3, fill) {
  require(height >= 1 && width >= 1, "ImageRGB: dimensions must be >= 1");
}

void ImageRGB::clamp01() {
  for (auto& v : data_) v = std::clamp(v, 0.f, 1.f);
}

AlphaMatte::AlphaMatte(int height, int width, float fill)
    : height_(height), width_(width),
      data_(static_cast<size_t>(height) * width, fill) {
  require(height >= 1 && width >= 1, "AlphaMatte: dimensions must be >= 1");
}

void AlphaMatte::clamp01() {
  for (auto& v : data_) v = std::clamp(v, 0.f, 1.f);
}

BinaryMask::BinaryMask(int height, int width, float fill)
    : height_(height), width_(width),
      data_(static_cast<size_t>(height) * width, fill) {
  require(height >= 1 && width >= 1, "BinaryMask: dimensions must be >= 1");
}

bool BinaryMask::is_hard() const {
  for (float v : data_)
    if (v != 0.f && v != 1.f) return false;
  return true;
}

BinaryMask BinaryMask::binarized(float threshold) const {
  BinaryMask out(height_, width_);
  for (size_t i = 0; i < data_.size(); ++i)
    out.data_[i] = data_[i] > threshold ? 1.f : 0.f;
  return out;
}

size_t BinaryMask::area() const {
  size_t n = 0;
  for (float v : data_)
    if (v > 0.5f) ++n;
  return n;
}

ImageRGB compose(const ImageRGB& y, const ImageRGB& w, const AlphaMatte& alpha) {
  require_same_dims(y, w, "compose: y/w dimension mismatch");
  require_same_dims(y, alpha, "compose: y/alpha dimension mismatch");
  ImageRGB out(y.height(), y.width());
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < y.height(); ++r)
      for (int col = 0; col < y.width(); ++col) {
        float a = alpha.at(r, col);
        out.at(c, r, col) = a * w.at(c, r, col) + (1.f - a) * y.at(c, r, col);
      }
  out.clamp01();
  return out;
}

ImageRGB decompose(const ImageRGB& x, const ImageRGB& w,
                   const AlphaMatte& alpha, float eps) {
  require_same_dims(x, w, "decompose: x/w dimension mismatch");
  require_same_dims(x, alpha, "decompose: x/alpha dimension mismatch");
  require(eps > 0.f, "decompose: eps must be > 0");
  ImageRGB out(x.height(), x.width());
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < x.height(); ++r)
      for (int col = 0; col < x.width(); ++col) {
        float a = alpha.at(r, col);
        float denom = std::max(1.f - a, eps);
        out.at(c, r, col) = (x.at(c, r, col) - a * w.at(c, r, col)) / denom;
      }
  out.clamp01();
  return out;
}

ImageRGB merge_masked(const ImageRGB& y, const ImageRGB& x,
                      const BinaryMask& m) {
  require_same_dims(y, x, "merge_masked: y/x dimension mismatch");
  require_same_dims(y, m, "merge_masked: y/mask dimension mismatch");
  ImageRGB out(y.height(), y.width());
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < y.height(); ++r)
      for (int col = 0; col < y.width(); ++col) {
        float mm = m.at(r, col);
        out.at(c, r, col) =
            mm * y.at(c, r, col) + (1.f - mm) * x.at(c, r, col);
      }
  return out;
}

BinaryMask mask_from_alpha(const AlphaMatte& alpha, float tau) {
  require(tau > 0.f && tau < 1.f, "mask_from_alpha: tau must be in (0,1)");
  BinaryMask out(alpha.height(), alpha.width());
  for (int r = 0; r < alpha.height(); ++r)
    for (int col = 0; col < alpha.width(); ++col)
      out.at(r, col) = alpha.at(r, col) > tau ? 1.f : 0.f;
  return out;
}

}  // namespace wdnet
