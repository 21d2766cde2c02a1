#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "wdnet/tensor.hpp"

// Reverse-mode autodiff over NCHW tensors. The graph is rebuilt on every
// forward pass; nodes hold their value, their gradient (allocated on demand
// during backward) and a closure that scatters the gradient to the parents.
// Convolutions go through im2col + Eigen GEMM.

namespace wdnet::nn {

template <typename T>
class Node;
template <typename T>
using Var = std::shared_ptr<Node<T>>;

inline std::atomic<long>& node_counter() {
  static std::atomic<long> counter{0};
  return counter;
}

template <typename T>
class Node {
 public:
  Tensor<T> value;
  Tensor<T> grad;
  std::vector<Var<T>> parents;
  std::function<void(Node<T>&)> backward_fn;
  bool requires_grad = false;
  long id;

  explicit Node(Tensor<T> v) : value(std::move(v)), id(node_counter()++) {}

  Tensor<T>& ensure_grad() {
    if (grad.v.empty()) grad = Tensor<T>::zeros_like(value);
    return grad;
  }
  void zero_grad() { grad = Tensor<T>(); }
};

template <typename T>
Var<T> constant(Tensor<T> v) {
  return std::make_shared<Node<T>>(std::move(v));
}

template <typename T>
Var<T> leaf(Tensor<T> v) {
  auto n = std::make_shared<Node<T>>(std::move(v));
  n->requires_grad = true;
  return n;
}

template <typename T>
Var<T> detach(const Var<T>& x) {
  return constant(x->value);
}

namespace detail {

template <typename T>
Var<T> make(Tensor<T> value, std::vector<Var<T>> parents,
            std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>(std::move(value));
  for (auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward);
  }
  return n;
}

inline void check(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops (with channel broadcasting where one operand has c == 1)

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::check(a->value.same_shape(b->value), "add: shape mismatch");
  Tensor<T> out = a->value;
  for (size_t i = 0; i < out.size(); ++i) out.v[i] += b->value.v[i];
  return detail::make<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
    if (a->requires_grad) {
      auto& g = a->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g.v[i] += n.grad.v[i];
    }
    if (b->requires_grad) {
      auto& g = b->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g.v[i] += n.grad.v[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::check(a->value.same_shape(b->value), "sub: shape mismatch");
  Tensor<T> out = a->value;
  for (size_t i = 0; i < out.size(); ++i) out.v[i] -= b->value.v[i];
  return detail::make<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
    if (a->requires_grad) {
      auto& g = a->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g.v[i] += n.grad.v[i];
    }
    if (b->requires_grad) {
      auto& g = b->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g.v[i] -= n.grad.v[i];
    }
  });
}

namespace detail {

// Iterates an (n,c,h,w) output where operand b may have c==1 (broadcast over
// channels). f(out_index, b_index).
template <typename F>
void bcast_iter(int n, int c, int h, int w, int bc, F&& f) {
  size_t hw = static_cast<size_t>(h) * w;
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic) {
      size_t oi = (static_cast<size_t>(in) * c + ic) * hw;
      size_t bi = (static_cast<size_t>(in) * bc + (bc == 1 ? 0 : ic)) * hw;
      for (size_t k = 0; k < hw; ++k) f(oi + k, bi + k);
    }
}

}  // namespace detail

// a * b, where a or b may be single-channel.
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  const Var<T>& big = (a->value.c >= b->value.c) ? a : b;
  const Var<T>& small = (a->value.c >= b->value.c) ? b : a;
  detail::check(big->value.n == small->value.n &&
                    big->value.h == small->value.h &&
                    big->value.w == small->value.w &&
                    (small->value.c == big->value.c || small->value.c == 1),
                "mul: incompatible shapes");
  Tensor<T> out = Tensor<T>::zeros_like(big->value);
  detail::bcast_iter(out.n, out.c, out.h, out.w, small->value.c,
                     [&](size_t oi, size_t bi) {
                       out.v[oi] = big->value.v[oi] * small->value.v[bi];
                     });
  return detail::make<T>(std::move(out), {big, small}, [big, small](Node<T>& n) {
    if (big->requires_grad) {
      auto& g = big->ensure_grad();
      detail::bcast_iter(n.value.n, n.value.c, n.value.h, n.value.w,
                         small->value.c, [&](size_t oi, size_t bi) {
                           g.v[oi] += n.grad.v[oi] * small->value.v[bi];
                         });
    }
    if (small->requires_grad) {
      auto& g = small->ensure_grad();
      detail::bcast_iter(n.value.n, n.value.c, n.value.h, n.value.w,
                         small->value.c, [&](size_t oi, size_t bi) {
                           g.v[bi] += n.grad.v[oi] * big->value.v[oi];
                         });
    }
  });
}

// a / b; b may be single-channel.
template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  detail::check(a->value.n == b->value.n && a->value.h == b->value.h &&
                    a->value.w == b->value.w &&
                    (b->value.c == a->value.c || b->value.c == 1),
                "div: incompatible shapes");
  Tensor<T> out = Tensor<T>::zeros_like(a->value);
  detail::bcast_iter(out.n, out.c, out.h, out.w, b->value.c,
                     [&](size_t oi, size_t bi) {
                       out.v[oi] = a->value.v[oi] / b->value.v[bi];
                     });
  return detail::make<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
    if (a->requires_grad) {
      auto& g = a->ensure_grad();
      detail::bcast_iter(n.value.n, n.value.c, n.value.h, n.value.w,
                         b->value.c, [&](size_t oi, size_t bi) {
                           g.v[oi] += n.grad.v[oi] / b->value.v[bi];
                         });
    }
    if (b->requires_grad) {
      auto& g = b->ensure_grad();
      detail::bcast_iter(n.value.n, n.value.c, n.value.h, n.value.w,
                         b->value.c, [&](size_t oi, size_t bi) {
                           T d = b->value.v[bi];
                           g.v[bi] -= n.grad.v[oi] * a->value.v[oi] / (d * d);
                         });
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a->value;
  for (auto& x : out.v) x *= s;
  return detail::make<T>(std::move(out), {a}, [a, s](Node<T>& n) {
    auto& g = a->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g.v[i] += n.grad.v[i] * s;
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  Tensor<T> out = a->value;
  for (auto& x : out.v) x += s;
  return detail::make<T>(std::move(out), {a}, [a](Node<T>& n) {
    auto& g = a->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g.v[i] += n.grad.v[i];
  });
}

template <typename T>
Var<T> one_minus(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (auto& x : out.v) x = T(1) - x;
  return detail::make<T>(std::move(out), {a}, [a](Node<T>& n) {
    auto& g = a->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g.v[i] -= n.grad.v[i];
  });
}

// min(a, cap); gradient passes where a < cap.
template <typename T>
Var<T> clamp_above(const Var<T>& a, T cap) {
  Tensor<T> out = a->value;
  for (auto& x : out.v) x = std::min(x, cap);
  return detail::make<T>(std::move(out), {a}, [a, cap](Node<T>& n) {
    auto& g = a->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i)
      if (a->value.v[i] < cap) g.v[i] += n.grad.v[i];
  });
}

// max(a, floor); gradient passes where a > floor.
template <typename T>
Var<T> clamp_below(const Var<T>& a, T floor) {
  Tensor<T> out = a->value;
  for (auto& x : out.v) x = std::max(x, floor);
  return detail::make<T>(std::move(out), {a}, [a, floor](Node<T>& n) {
    auto& g = a->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i)
      if (a->value.v[i] > floor) g.v[i] += n.grad.v[i];
  });
}

template <typename T>
Var<T> clamp01(const Var<T>& a) {
  return clamp_above(clamp_below(a, T(0)), T(1));
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
  Tensor<T> out = a->value;
  for (auto& x : out.v)
    if (x < T(0)) x *= slope;
  return detail::make<T>(std::move(out), {a}, [a, slope](Node<T>& n) {
    auto& g = a->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i)
      g.v[i] += n.grad.v[i] * (a->value.v[i] >= T(0) ? T(1) : slope);
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return leaky_relu(a, T(0));
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (auto& x : out.v) x = T(1) / (T(1) + std::exp(-x));
  return detail::make<T>(std::move(out), {a}, [a](Node<T>& n) {
    auto& g = a->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) {
      T y = n.value.v[i];
      g.v[i] += n.grad.v[i] * y * (T(1) - y);
    }
  });
}

template <typename T>
Var<T> concat_c(const Var<T>& a, const Var<T>& b) {
  const Tensor<T>& A = a->value;
  const Tensor<T>& B = b->value;
  detail::check(A.n == B.n && A.h == B.h && A.w == B.w,
                "concat: spatial/batch mismatch");
  Tensor<T> out(A.n, A.c + B.c, A.h, A.w);
  size_t hw = static_cast<size_t>(A.h) * A.w;
  for (int in = 0; in < A.n; ++in) {
    std::copy(A.v.begin() + in * A.c * hw, A.v.begin() + (in + 1) * A.c * hw,
              out.v.begin() + static_cast<size_t>(in) * out.c * hw);
    std::copy(B.v.begin() + in * B.c * hw, B.v.begin() + (in + 1) * B.c * hw,
              out.v.begin() + (static_cast<size_t>(in) * out.c + A.c) * hw);
  }
  int ac = A.c, bc = B.c;
  return detail::make<T>(std::move(out), {a, b}, [a, b, ac, bc](Node<T>& n) {
    size_t hw = static_cast<size_t>(n.value.h) * n.value.w;
    int oc = ac + bc;
    if (a->requires_grad) {
      auto& g = a->ensure_grad();
      for (int in = 0; in < n.value.n; ++in)
        for (size_t i = 0; i < static_cast<size_t>(ac) * hw; ++i)
          g.v[in * ac * hw + i] += n.grad.v[static_cast<size_t>(in) * oc * hw + i];
    }
    if (b->requires_grad) {
      auto& g = b->ensure_grad();
      for (int in = 0; in < n.value.n; ++in)
        for (size_t i = 0; i < static_cast<size_t>(bc) * hw; ++i)
          g.v[in * bc * hw + i] +=
              n.grad.v[(static_cast<size_t>(in) * oc + ac) * hw + i];
    }
  });
}

// ---------------------------------------------------------------------------
// convolution

namespace detail {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
void im2col(const T* img, int C, int H, int W, int K, int stride, int pad,
            int OH, int OW, T* cols) {
  // cols: (C*K*K) x (OH*OW), row-major
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < K; ++ky)
      for (int kx = 0; kx < K; ++kx) {
        T* row = cols + (static_cast<size_t>(c) * K * K + ky * K + kx) *
                            (static_cast<size_t>(OH) * OW);
        for (int oy = 0; oy < OH; ++oy) {
          int iy = oy * stride - pad + ky;
          for (int ox = 0; ox < OW; ++ox) {
            int ix = ox * stride - pad + kx;
            row[oy * OW + ox] =
                (iy >= 0 && iy < H && ix >= 0 && ix < W)
                    ? img[(static_cast<size_t>(c) * H + iy) * W + ix]
                    : T(0);
          }
        }
      }
}

template <typename T>
void col2im_add(const T* cols, int C, int H, int W, int K, int stride, int pad,
                int OH, int OW, T* img) {
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < K; ++ky)
      for (int kx = 0; kx < K; ++kx) {
        const T* row = cols + (static_cast<size_t>(c) * K * K + ky * K + kx) *
                                  (static_cast<size_t>(OH) * OW);
        for (int oy = 0; oy < OH; ++oy) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          for (int ox = 0; ox < OW; ++ox) {
            int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= W) continue;
            img[(static_cast<size_t>(c) * H + iy) * W + ix] += row[oy * OW + ox];
          }
        }
      }
}

}  // namespace detail

// weight: (C_out, C_in, K, K); bias: (1, C_out, 1, 1)
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias,
              int stride, int pad) {
  const Tensor<T>& X = x->value;
  const Tensor<T>& Wt = weight->value;
  detail::check(X.c == Wt.c, "conv2d: channel mismatch");
  detail::check(Wt.h == Wt.w, "conv2d: non-square kernel");
  int K = Wt.h, Cout = Wt.n, Cin = Wt.c;
  int OH = (X.h + 2 * pad - K) / stride + 1;
  int OW = (X.w + 2 * pad - K) / stride + 1;
  detail::check(OH >= 1 && OW >= 1, "conv2d: output would be empty");

  using Mat = detail::MatRM<T>;
  Tensor<T> out(X.n, Cout, OH, OW);
  Eigen::Map<const Mat> Wm(Wt.data(), Cout, static_cast<long>(Cin) * K * K);
  std::vector<T> cols(static_cast<size_t>(Cin) * K * K * OH * OW);
  for (int in = 0; in < X.n; ++in) {
    detail::im2col(X.data() + static_cast<size_t>(in) * Cin * X.h * X.w, Cin,
                   X.h, X.w, K, stride, pad, OH, OW, cols.data());
    Eigen::Map<const Mat> C(cols.data(), static_cast<long>(Cin) * K * K,
                            static_cast<long>(OH) * OW);
    Eigen::Map<Mat> Y(out.data() + static_cast<size_t>(in) * Cout * OH * OW,
                      Cout, static_cast<long>(OH) * OW);
    Y.noalias() = Wm * C;
    for (int oc = 0; oc < Cout; ++oc)
      Y.row(oc).array() += bias->value.v[oc];
  }

  return detail::make<T>(
      std::move(out), {x, weight, bias},
      [x, weight, bias, K, stride, pad, OH, OW](Node<T>& n) {
        using Mat = detail::MatRM<T>;
        const Tensor<T>& X = x->value;
        const Tensor<T>& Wt = weight->value;
        int Cout = Wt.n, Cin = Wt.c;
        Eigen::Map<const Mat> Wm(Wt.data(), Cout,
                                 static_cast<long>(Cin) * K * K);
        std::vector<T> cols(static_cast<size_t>(Cin) * K * K * OH * OW);
        std::vector<T> dcols;
        if (x->requires_grad) dcols.resize(cols.size());
        for (int in = 0; in < X.n; ++in) {
          Eigen::Map<const Mat> dY(
              n.grad.data() + static_cast<size_t>(in) * Cout * OH * OW, Cout,
              static_cast<long>(OH) * OW);
          if (weight->requires_grad) {
            detail::im2col(X.data() + static_cast<size_t>(in) * Cin * X.h * X.w,
                           Cin, X.h, X.w, K, stride, pad, OH, OW, cols.data());
            Eigen::Map<const Mat> C(cols.data(),
                                    static_cast<long>(Cin) * K * K,
                                    static_cast<long>(OH) * OW);
            Eigen::Map<Mat> dW(weight->ensure_grad().data(), Cout,
                               static_cast<long>(Cin) * K * K);
            dW.noalias() += dY * C.transpose();
          }
          if (bias->requires_grad) {
            auto& db = bias->ensure_grad();
            for (int oc = 0; oc < Cout; ++oc)
              db.v[oc] += dY.row(oc).sum();
          }
          if (x->requires_grad) {
            Eigen::Map<Mat> dC(dcols.data(), static_cast<long>(Cin) * K * K,
                               static_cast<long>(OH) * OW);
            dC.noalias() = Wm.transpose() * dY;
            detail::col2im_add(dcols.data(), Cin, X.h, X.w, K, stride, pad, OH,
                               OW,
                               x->ensure_grad().data() +
                                   static_cast<size_t>(in) * Cin * X.h * X.w);
          }
        }
      });
}

// weight: (C_in, C_out, K, K); bias: (1, C_out, 1, 1)
// out spatial: (H-1)*stride - 2*pad + K
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight,
                        const Var<T>& bias, int stride, int pad) {
  const Tensor<T>& X = x->value;
  const Tensor<T>& Wt = weight->value;
  detail::check(X.c == Wt.n, "conv_transpose2d: channel mismatch");
  int K = Wt.h, Cin = Wt.n, Cout = Wt.c;
  int OH = (X.h - 1) * stride - 2 * pad + K;
  int OW = (X.w - 1) * stride - 2 * pad + K;
  detail::check(OH >= 1 && OW >= 1, "conv_transpose2d: output would be empty");

  using Mat = detail::MatRM<T>;
  Tensor<T> out(X.n, Cout, OH, OW);
  Eigen::Map<const Mat> Wm(Wt.data(), Cin, static_cast<long>(Cout) * K * K);
  std::vector<T> cols(static_cast<size_t>(Cout) * K * K * X.h * X.w);
  for (int in = 0; in < X.n; ++in) {
    Eigen::Map<const Mat> Xm(X.data() + static_cast<size_t>(in) * Cin * X.h * X.w,
                             Cin, static_cast<long>(X.h) * X.w);
    Eigen::Map<Mat> C(cols.data(), static_cast<long>(Cout) * K * K,
                      static_cast<long>(X.h) * X.w);
    C.noalias() = Wm.transpose() * Xm;
    T* dst = out.data() + static_cast<size_t>(in) * Cout * OH * OW;
    detail::col2im_add(cols.data(), Cout, OH, OW, K, stride, pad, X.h, X.w, dst);
    for (int oc = 0; oc < Cout; ++oc) {
      T b = bias->value.v[oc];
      for (size_t i = 0; i < static_cast<size_t>(OH) * OW; ++i)
        dst[static_cast<size_t>(oc) * OH * OW + i] += b;
    }
  }

  return detail::make<T>(
      std::move(out), {x, weight, bias},
      [x, weight, bias, K, stride, pad, OH, OW](Node<T>& n) {
        using Mat = detail::MatRM<T>;
        const Tensor<T>& X = x->value;
        int Cin = weight->value.n, Cout = weight->value.c;
        Eigen::Map<const Mat> Wm(weight->value.data(), Cin,
                                 static_cast<long>(Cout) * K * K);
        // im2col of the output gradient recovers the conv view
        std::vector<T> dcols(static_cast<size_t>(Cout) * K * K * X.h * X.w);
        for (int in = 0; in < X.n; ++in) {
          detail::im2col(n.grad.data() + static_cast<size_t>(in) * Cout * OH * OW,
                         Cout, OH, OW, K, stride, pad, X.h, X.w, dcols.data());
          Eigen::Map<const Mat> dC(dcols.data(),
                                   static_cast<long>(Cout) * K * K,
                                   static_cast<long>(X.h) * X.w);
          if (x->requires_grad) {
            Eigen::Map<Mat> dX(x->ensure_grad().data() +
                                   static_cast<size_t>(in) * Cin * X.h * X.w,
                               Cin, static_cast<long>(X.h) * X.w);
            dX.noalias() += Wm * dC;
          }
          if (weight->requires_grad) {
            Eigen::Map<const Mat> Xm(
                X.data() + static_cast<size_t>(in) * Cin * X.h * X.w, Cin,
                static_cast<long>(X.h) * X.w);
            Eigen::Map<Mat> dW(weight->ensure_grad().data(), Cin,
                               static_cast<long>(Cout) * K * K);
            dW.noalias() += Xm * dC.transpose();
          }
          if (bias->requires_grad) {
            auto& db = bias->ensure_grad();
            const T* g = n.grad.data() + static_cast<size_t>(in) * Cout * OH * OW;
            for (int oc = 0; oc < Cout; ++oc) {
              T s = T(0);
              for (size_t i = 0; i < static_cast<size_t>(OH) * OW; ++i)
                s += g[static_cast<size_t>(oc) * OH * OW + i];
              db.v[oc] += s;
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// normalization

enum class NormStat { per_instance, per_batch };

// y = (x - mean) / sqrt(var + eps), statistics per (n,c) over HW
// (per_instance) or per c over NHW (per_batch). No affine parameters.
template <typename T>
Var<T> normalize(const Var<T>& x, NormStat stat, T eps = T(1e-5)) {
  const Tensor<T>& X = x->value;
  size_t hw = static_cast<size_t>(X.h) * X.w;
  int groups = (stat == NormStat::per_instance) ? X.n * X.c : X.c;
  size_t gsize = (stat == NormStat::per_instance)
                     ? hw
                     : static_cast<size_t>(X.n) * hw;

  auto group_index = [&](int in, int ic) {
    return (stat == NormStat::per_instance) ? in * X.c + ic : ic;
  };

  std::vector<T> mean(groups, T(0)), inv_std(groups, T(0));
  for (int in = 0; in < X.n; ++in)
    for (int ic = 0; ic < X.c; ++ic) {
      const T* p = X.data() + (static_cast<size_t>(in) * X.c + ic) * hw;
      T s = T(0);
      for (size_t i = 0; i < hw; ++i) s += p[i];
      mean[group_index(in, ic)] += s;
    }
  for (auto& m : mean) m /= static_cast<T>(gsize);
  for (int in = 0; in < X.n; ++in)
    for (int ic = 0; ic < X.c; ++ic) {
      const T* p = X.data() + (static_cast<size_t>(in) * X.c + ic) * hw;
      T m = mean[group_index(in, ic)];
      T s = T(0);
      for (size_t i = 0; i < hw; ++i) {
        T d = p[i] - m;
        s += d * d;
      }
      inv_std[group_index(in, ic)] += s;
    }
  for (auto& v : inv_std) v = T(1) / std::sqrt(v / static_cast<T>(gsize) + eps);

  Tensor<T> out = Tensor<T>::zeros_like(X);
  for (int in = 0; in < X.n; ++in)
    for (int ic = 0; ic < X.c; ++ic) {
      int g = group_index(in, ic);
      const T* p = X.data() + (static_cast<size_t>(in) * X.c + ic) * hw;
      T* q = out.data() + (static_cast<size_t>(in) * X.c + ic) * hw;
      for (size_t i = 0; i < hw; ++i) q[i] = (p[i] - mean[g]) * inv_std[g];
    }

  auto istd_saved = std::make_shared<std::vector<T>>(std::move(inv_std));
  return detail::make<T>(
      std::move(out), {x},
      [x, stat, istd_saved, gsize](Node<T>& n) {
        // dx = istd * (dy - mean(dy) - y * mean(dy*y)) per group
        const Tensor<T>& Y = n.value;
        size_t hw = static_cast<size_t>(Y.h) * Y.w;
        auto& g = x->ensure_grad();
        int groups = static_cast<int>(istd_saved->size());
        std::vector<T> mean_dy(groups, T(0)), mean_dyy(groups, T(0));
        auto group_index = [&](int in, int ic) {
          return (stat == NormStat::per_instance) ? in * Y.c + ic : ic;
        };
        for (int in = 0; in < Y.n; ++in)
          for (int ic = 0; ic < Y.c; ++ic) {
            size_t off = (static_cast<size_t>(in) * Y.c + ic) * hw;
            int gi = group_index(in, ic);
            T s1 = T(0), s2 = T(0);
            for (size_t i = 0; i < hw; ++i) {
              s1 += n.grad.v[off + i];
              s2 += n.grad.v[off + i] * Y.v[off + i];
            }
            mean_dy[gi] += s1;
            mean_dyy[gi] += s2;
          }
        for (int gi = 0; gi < groups; ++gi) {
          mean_dy[gi] /= static_cast<T>(gsize);
          mean_dyy[gi] /= static_cast<T>(gsize);
        }
        for (int in = 0; in < Y.n; ++in)
          for (int ic = 0; ic < Y.c; ++ic) {
            size_t off = (static_cast<size_t>(in) * Y.c + ic) * hw;
            int gi = group_index(in, ic);
            T istd = (*istd_saved)[gi];
            for (size_t i = 0; i < hw; ++i)
              g.v[off + i] += istd * (n.grad.v[off + i] - mean_dy[gi] -
                                      Y.v[off + i] * mean_dyy[gi]);
          }
      });
}

// y = x * scale[c] + shift[c]; used for batch-norm inference with frozen
// running statistics.
template <typename T>
Var<T> channel_affine(const Var<T>& x, std::vector<T> scales,
                      std::vector<T> shifts) {
  const Tensor<T>& X = x->value;
  detail::check(static_cast<int>(scales.size()) == X.c &&
                    static_cast<int>(shifts.size()) == X.c,
                "channel_affine: size mismatch");
  Tensor<T> out = Tensor<T>::zeros_like(X);
  size_t hw = static_cast<size_t>(X.h) * X.w;
  for (int in = 0; in < X.n; ++in)
    for (int ic = 0; ic < X.c; ++ic) {
      size_t off = (static_cast<size_t>(in) * X.c + ic) * hw;
      for (size_t i = 0; i < hw; ++i)
        out.v[off + i] = X.v[off + i] * scales[ic] + shifts[ic];
    }
  auto sc = std::make_shared<std::vector<T>>(std::move(scales));
  return detail::make<T>(std::move(out), {x}, [x, sc](Node<T>& n) {
    auto& g = x->ensure_grad();
    size_t hw = static_cast<size_t>(n.value.h) * n.value.w;
    for (int in = 0; in < n.value.n; ++in)
      for (int ic = 0; ic < n.value.c; ++ic) {
        size_t off = (static_cast<size_t>(in) * n.value.c + ic) * hw;
        for (size_t i = 0; i < hw; ++i)
          g.v[off + i] += n.grad.v[off + i] * (*sc)[ic];
      }
  });
}

// 2x2 max pooling, stride 2.
template <typename T>
Var<T> maxpool2(const Var<T>& x) {
  const Tensor<T>& X = x->value;
  detail::check(X.h % 2 == 0 && X.w % 2 == 0, "maxpool2: odd spatial dims");
  Tensor<T> out(X.n, X.c, X.h / 2, X.w / 2);
  auto arg = std::make_shared<std::vector<size_t>>(out.size());
  for (int in = 0; in < X.n; ++in)
    for (int ic = 0; ic < X.c; ++ic)
      for (int oy = 0; oy < out.h; ++oy)
        for (int ox = 0; ox < out.w; ++ox) {
          size_t best = 0;
          T bv = -std::numeric_limits<T>::infinity();
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              size_t idx = ((static_cast<size_t>(in) * X.c + ic) * X.h +
                            (2 * oy + dy)) *
                               X.w +
                           (2 * ox + dx);
              if (X.v[idx] > bv) {
                bv = X.v[idx];
                best = idx;
              }
            }
          size_t oi = ((static_cast<size_t>(in) * out.c + ic) * out.h + oy) *
                          out.w +
                      ox;
          out.v[oi] = bv;
          (*arg)[oi] = best;
        }
  return detail::make<T>(std::move(out), {x}, [x, arg](Node<T>& n) {
    auto& g = x->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) g.v[(*arg)[i]] += n.grad.v[i];
  });
}

// ---------------------------------------------------------------------------
// reductions (scalar-valued, shape 1x1x1x1)

template <typename T>
Var<T> mean_abs_diff(const Var<T>& a, const Tensor<T>& target) {
  detail::check(a->value.same_shape(target), "mean_abs_diff: shape mismatch");
  T s = T(0);
  for (size_t i = 0; i < a->value.size(); ++i)
    s += std::abs(a->value.v[i] - target.v[i]);
  T count = static_cast<T>(a->value.size());
  Tensor<T> out(1, 1, 1, 1);
  out.v[0] = s / count;
  auto tgt = std::make_shared<Tensor<T>>(target);
  return detail::make<T>(std::move(out), {a}, [a, tgt, count](Node<T>& n) {
    auto& g = a->ensure_grad();
    T go = n.grad.v[0] / count;
    for (size_t i = 0; i < g.size(); ++i) {
      T d = a->value.v[i] - tgt->v[i];
      g.v[i] += (d > T(0) ? go : (d < T(0) ? -go : T(0)));
    }
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  T s = T(0);
  for (T x : a->value.v) s += x;
  T count = static_cast<T>(a->value.size());
  Tensor<T> out(1, 1, 1, 1);
  out.v[0] = s / count;
  return detail::make<T>(std::move(out), {a}, [a, count](Node<T>& n) {
    auto& g = a->ensure_grad();
    T go = n.grad.v[0] / count;
    for (size_t i = 0; i < g.size(); ++i) g.v[i] += go;
  });
}

// mean(log(max(a, floor)))
template <typename T>
Var<T> mean_log(const Var<T>& a, T floor = T(1e-12)) {
  T s = T(0);
  for (T x : a->value.v) s += std::log(std::max(x, floor));
  T count = static_cast<T>(a->value.size());
  Tensor<T> out(1, 1, 1, 1);
  out.v[0] = s / count;
  return detail::make<T>(std::move(out), {a}, [a, floor, count](Node<T>& n) {
    auto& g = a->ensure_grad();
    T go = n.grad.v[0] / count;
    for (size_t i = 0; i < g.size(); ++i)
      if (a->value.v[i] > floor) g.v[i] += go / a->value.v[i];
  });
}

// mean(log(max(1 - a, floor)))
template <typename T>
Var<T> mean_log_one_minus(const Var<T>& a, T floor = T(1e-12)) {
  T s = T(0);
  for (T x : a->value.v) s += std::log(std::max(T(1) - x, floor));
  T count = static_cast<T>(a->value.size());
  Tensor<T> out(1, 1, 1, 1);
  out.v[0] = s / count;
  return detail::make<T>(std::move(out), {a}, [a, floor, count](Node<T>& n) {
    auto& g = a->ensure_grad();
    T go = n.grad.v[0] / count;
    for (size_t i = 0; i < g.size(); ++i)
      if (T(1) - a->value.v[i] > floor) g.v[i] -= go / (T(1) - a->value.v[i]);
  });
}

// ---------------------------------------------------------------------------
// backward pass

template <typename T>
void backward(const Var<T>& root) {
  detail::check(root->value.size() == 1, "backward: root must be scalar");
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{root.get()};
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    order.push_back(n);
    for (auto& p : n->parents) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(),
            [](Node<T>* a, Node<T>* b) { return a->id > b->id; });
  root->ensure_grad().v[0] = T(1);
  for (Node<T>* n : order) {
    if (n->backward_fn && !n->grad.v.empty()) n->backward_fn(*n);
  }
}

}  // namespace wdnet::nn
