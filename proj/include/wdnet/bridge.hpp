#pragma once

#include "wdnet/image.hpp"
#include "wdnet/tensor.hpp"

namespace wdnet {

// Conversions between the imaging grids and NCHW tensors. The planar float
// layouts match, so these are plain copies.

template <typename T = float>
nn::Tensor<T> image_to_tensor(const ImageRGB& img) {
  nn::Tensor<T> t(1, 3, img.height(), img.width());
  for (size_t i = 0; i < img.data().size(); ++i)
    t.v[i] = static_cast<T>(img.data()[i]);
  return t;
}

template <typename T = float>
nn::Tensor<T> matte_to_tensor(const AlphaMatte& m) {
  nn::Tensor<T> t(1, 1, m.height(), m.width());
  for (size_t i = 0; i < m.data().size(); ++i)
    t.v[i] = static_cast<T>(m.data()[i]);
  return t;
}

template <typename T = float>
nn::Tensor<T> mask_to_tensor(const BinaryMask& m) {
  nn::Tensor<T> t(1, 1, m.height(), m.width());
  for (size_t i = 0; i < m.data().size(); ++i)
    t.v[i] = static_cast<T>(m.data()[i]);
  return t;
}

template <typename T>
ImageRGB tensor_to_image(const nn::Tensor<T>& t, int batch_index = 0) {
  ImageRGB img(t.h, t.w);
  size_t off = static_cast<size_t>(batch_index) * t.c * t.h * t.w;
  for (size_t i = 0; i < img.data().size(); ++i)
    img.data()[i] = static_cast<float>(t.v[off + i]);
  return img;
}

template <typename T>
AlphaMatte tensor_to_matte(const nn::Tensor<T>& t, int batch_index = 0) {
  AlphaMatte m(t.h, t.w);
  size_t off = static_cast<size_t>(batch_index) * t.c * t.h * t.w;
  for (size_t i = 0; i < m.data().size(); ++i)
    m.data()[i] = static_cast<float>(t.v[off + i]);
  return m;
}

template <typename T>
BinaryMask tensor_to_mask(const nn::Tensor<T>& t, int batch_index = 0) {
  BinaryMask m(t.h, t.w);
  size_t off = static_cast<size_t>(batch_index) * t.c * t.h * t.w;
  for (size_t i = 0; i < m.data().size(); ++i)
    m.data()[i] = static_cast<float>(t.v[off + i]);
  return m;
}

}  // namespace wdnet
