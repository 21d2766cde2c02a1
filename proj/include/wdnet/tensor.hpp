#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace wdnet::nn {

// Dense NCHW tensor. Scalar type is templated so the gradient checker can run
// the exact same graph in double precision.
template <typename T>
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> v;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_),
        v(static_cast<size_t>(n_) * c_ * h_ * w_, T(0)) {
    if (n_ < 0 || c_ < 0 || h_ < 0 || w_ < 0)
      throw std::invalid_argument("tensor: negative dimension");
  }

  static Tensor zeros_like(const Tensor& o) { return Tensor(o.n, o.c, o.h, o.w); }
  static Tensor full(int n, int c, int h, int w, T value) {
    Tensor t(n, c, h, w);
    std::fill(t.v.begin(), t.v.end(), value);
    return t;
  }

  size_t size() const { return v.size(); }
  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  std::string shape_str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" +
           std::to_string(h) + "x" + std::to_string(w);
  }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  T& at(int in, int ic, int iy, int ix) {
    return v[((static_cast<size_t>(in) * c + ic) * h + iy) * w + ix];
  }
  const T& at(int in, int ic, int iy, int ix) const {
    return v[((static_cast<size_t>(in) * c + ic) * h + iy) * w + ix];
  }

  bool all_finite() const {
    for (T x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(n, c, h, w);
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }
};

}  // namespace wdnet::nn
