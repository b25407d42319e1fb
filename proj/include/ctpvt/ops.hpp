#pragma once

// Differentiable tensor operations. Each op computes its forward value and,
// when a tape is active on this thread and some input requires a gradient,
// records a backward rule that accumulates into the inputs' gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "ctpvt/error.hpp"
#include "ctpvt/kernels.hpp"
#include "ctpvt/tensor.hpp"

namespace ctpvt {

namespace detail {

template <class T, class... Ts>
BasicTape<T>* recording_tape(const Ts&... inputs) {
  BasicTape<T>* tape = ::ctpvt::active_tape<T>();
  if (tape == nullptr) return nullptr;
  return (inputs.requires_grad() || ...) ? tape : nullptr;
}

template <class T>
void require_rank(const BasicTensor<T>& t, std::size_t rank, const char* op, const char* what) {
  if (!t.defined() || t.rank() != rank) {
    throw shape_error(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                      ", got " + (t.defined() ? shape_string(t.shape()) : "undefined"));
  }
}

template <class T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw shape_error(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                      shape_string(b.shape()));
  }
}

}  // namespace detail

/// Standard matrix product a[m×k] · b[k×n].
template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_rank(a, 2, "matmul", "lhs");
  detail::require_rank(b, 2, "matmul", "rhs");
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  if (b.extent(0) != k) {
    throw shape_error("matmul: inner extents disagree, " + shape_string(a.shape()) + " x " +
                      shape_string(b.shape()));
  }
  BasicTensor<T> out({m, n});
  kernels::gemm_nn(m, n, k, a.raw(), b.raw(), out.mutable_data().data());
  if (auto* tape = detail::recording_tape<T>(a, b)) {
    tape->record(out, "matmul", [an = a.node(), bn = b.node(), m, n, k](const T* dc) {
      if (an->requires_grad) kernels::gemm_nt(m, k, n, dc, bn->data.data(), an->grad_buffer());
      if (bn->requires_grad) kernels::gemm_tn(k, n, m, an->data.data(), dc, bn->grad_buffer());
    });
  }
  return out;
}

/// Batched product over the leading axis: a[B×m×k] · b[B×k×n], or with
/// `transpose_rhs` a[B×m×k] · b[B×n×k]ᵀ.
template <class T>
BasicTensor<T> bmm(const BasicTensor<T>& a, const BasicTensor<T>& b, bool transpose_rhs = false) {
  detail::require_rank(a, 3, "bmm", "lhs");
  detail::require_rank(b, 3, "bmm", "rhs");
  const std::size_t batch = a.extent(0), m = a.extent(1), k = a.extent(2);
  const std::size_t n = transpose_rhs ? b.extent(1) : b.extent(2);
  const std::size_t bk = transpose_rhs ? b.extent(2) : b.extent(1);
  if (b.extent(0) != batch || bk != k) {
    throw shape_error("bmm: incompatible operands " + shape_string(a.shape()) + " and " +
                      shape_string(b.shape()) + (transpose_rhs ? " (rhs transposed)" : ""));
  }
  BasicTensor<T> out({batch, m, n});
  T* o = out.mutable_data().data();
  for (std::size_t i = 0; i < batch; ++i) {
    const T* ai = a.raw() + i * m * k;
    const T* bi = b.raw() + i * k * n;
    if (transpose_rhs) {
      kernels::gemm_nt(m, n, k, ai, bi, o + i * m * n);
    } else {
      kernels::gemm_nn(m, n, k, ai, bi, o + i * m * n);
    }
  }
  if (auto* tape = detail::recording_tape<T>(a, b)) {
    tape->record(out, "bmm",
                 [an = a.node(), bn = b.node(), batch, m, n, k, transpose_rhs](const T* dc) {
                   for (std::size_t i = 0; i < batch; ++i) {
                     const T* dci = dc + i * m * n;
                     const T* ai = an->data.data() + i * m * k;
                     const T* bi = bn->data.data() + i * k * n;
                     if (an->requires_grad) {
                       T* da = an->grad_buffer() + i * m * k;
                       if (transpose_rhs) {
                         kernels::gemm_nn(m, k, n, dci, bi, da);
                       } else {
                         kernels::gemm_nt(m, k, n, dci, bi, da);
                       }
                     }
                     if (bn->requires_grad) {
                       T* db = bn->grad_buffer() + i * k * n;
                       if (transpose_rhs) {
                         kernels::gemm_tn(n, k, m, dci, ai, db);  // dB[n×k] = dCᵀ·A
                       } else {
                         kernels::gemm_tn(k, n, m, ai, dci, db);  // dB[k×n] = Aᵀ·dC
                       }
                     }
                   }
                 });
  }
  return out;
}

/// Affine map over the last axis: y = x · wᵀ + bias, with w[out×in].
/// `bias` may be undefined.
template <class T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias = {}) {
  detail::require_rank(weight, 2, "linear", "weight");
  const std::size_t in = weight.extent(1), out_features = weight.extent(0);
  if (x.rank() < 1 || x.shape().back() != in) {
    throw shape_error("linear: input " + shape_string(x.shape()) + " does not end in " +
                      std::to_string(in));
  }
  if (bias.defined() && bias.shape() != Shape{out_features}) {
    throw shape_error("linear: bias must be [" + std::to_string(out_features) + "], got " +
                      shape_string(bias.shape()));
  }
  const std::size_t rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_features;
  BasicTensor<T> out(out_shape);
  T* y = out.mutable_data().data();
  if (bias.defined()) {
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(bias.raw(), bias.raw() + out_features, y + r * out_features);
  }
  kernels::gemm_nt(rows, out_features, in, x.raw(), weight.raw(), y);
  if (auto* tape = detail::recording_tape<T>(x, weight, bias)) {
    tape->record(out, "linear",
                 [xn = x.node(), wn = weight.node(), bn = bias.node(), rows, in,
                  out_features](const T* dy) {
                   if (xn->requires_grad)
                     kernels::gemm_nn(rows, in, out_features, dy, wn->data.data(),
                                      xn->grad_buffer());
                   if (wn->requires_grad)
                     kernels::gemm_tn(out_features, in, rows, dy, xn->data.data(),
                                      wn->grad_buffer());
                   if (bn && bn->requires_grad) {
                     T* db = bn->grad_buffer();
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t j = 0; j < out_features; ++j) db[j] += dy[r * out_features + j];
                   }
                 });
  }
  return out;
}

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

/// Output extent of a convolution along one axis; throws when non-positive.
inline std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                                      std::size_t padding) {
  if (stride == 0) throw shape_error("conv2d: stride must be positive");
  if (in + 2 * padding < kernel) {
    throw shape_error("conv2d: kernel " + std::to_string(kernel) + " exceeds padded input " +
                      std::to_string(in + 2 * padding));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

/// Grouped 2-D cross-correlation of x[N×C×H×W] with w[O×(C/g)×kh×kw] plus an
/// optional per-channel bias[O].
template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, Conv2dOptions opt) {
  detail::require_rank(x, 4, "conv2d", "input");
  detail::require_rank(weight, 4, "conv2d", "weight");
  if (opt.groups == 0) throw shape_error("conv2d: groups must be positive");
  kernels::ConvGeometry g{x.extent(0),      x.extent(1),      x.extent(2), x.extent(3),
                          weight.extent(0), weight.extent(2), weight.extent(3),
                          opt.stride,       opt.padding,      opt.groups};
  if (g.in_channels % g.groups != 0 || g.out_channels % g.groups != 0) {
    throw shape_error("conv2d: channels " + std::to_string(g.in_channels) + "->" +
                      std::to_string(g.out_channels) + " not divisible by groups " +
                      std::to_string(g.groups));
  }
  if (weight.extent(1) != g.in_per_group()) {
    throw shape_error("conv2d: weight " + shape_string(weight.shape()) + " expects " +
                      std::to_string(weight.extent(1)) + " input channels per group, input has " +
                      std::to_string(g.in_per_group()));
  }
  if (bias.defined() && bias.shape() != Shape{g.out_channels}) {
    throw shape_error("conv2d: bias must be [" + std::to_string(g.out_channels) + "]");
  }
  const std::size_t oh = conv_output_extent(g.in_height, g.kernel_h, g.stride, g.padding);
  const std::size_t ow = conv_output_extent(g.in_width, g.kernel_w, g.stride, g.padding);
  BasicTensor<T> out({g.batch, g.out_channels, oh, ow});
  kernels::conv2d_forward(g, x.raw(), weight.raw(), bias.defined() ? bias.raw() : nullptr,
                          out.mutable_data().data());
  if (auto* tape = detail::recording_tape<T>(x, weight, bias)) {
    tape->record(out, "conv2d",
                 [xn = x.node(), wn = weight.node(), bn = bias.node(), g](const T* dy) {
                   if (xn->requires_grad)
                     kernels::conv2d_backward_input(g, dy, wn->data.data(), xn->grad_buffer());
                   const bool want_b = bn && bn->requires_grad;
                   if (wn->requires_grad) {
                     kernels::conv2d_backward_params(g, dy, xn->data.data(), wn->grad_buffer(),
                                                     want_b ? bn->grad_buffer() : nullptr);
                   } else if (want_b) {
                     const std::size_t plane = g.out_height() * g.out_width();
                     T* db = bn->grad_buffer();
                     for (std::size_t n = 0; n < g.batch; ++n)
                       for (std::size_t c = 0; c < g.out_channels; ++c)
                         for (std::size_t i = 0; i < plane; ++i)
                           db[c] += dy[(n * g.out_channels + c) * plane + i];
                   }
                 });
  }
  return out;
}

/// Normalizes every position over the last axis (biased variance), then
/// applies gamma/beta.
template <class T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, double eps = 1e-5) {
  detail::require_rank(gamma, 1, "layer_norm", "gamma");
  detail::require_rank(beta, 1, "layer_norm", "beta");
  const std::size_t d = gamma.extent(0);
  if (x.rank() < 1 || x.shape().back() != d || beta.extent(0) != d) {
    throw shape_error("layer_norm: input " + shape_string(x.shape()) + " vs gamma " +
                      shape_string(gamma.shape()) + " / beta " + shape_string(beta.shape()));
  }
  if (!(eps >= 0.0)) throw std::invalid_argument("layer_norm: eps must be non-negative");
  const std::size_t rows = x.numel() / d;
  BasicTensor<T> out(x.shape());
  std::vector<T> xhat(x.numel());
  std::vector<T> rstd(rows);
  const T* xs = x.raw();
  const T* gs = gamma.raw();
  const T* bs = beta.raw();
  T* ys = out.mutable_data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xs + r * d;
    T mean = T(0);
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + static_cast<T>(eps));
    rstd[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (xr[j] - mean) * rs;
      xhat[r * d + j] = h;
      ys[r * d + j] = gs[j] * h + bs[j];
    }
  }
  if (auto* tape = detail::recording_tape<T>(x, gamma, beta)) {
    tape->record(out, "layer_norm",
                 [xn = x.node(), gn = gamma.node(), bn = beta.node(), xhat = std::move(xhat),
                  rstd = std::move(rstd), rows, d](const T* dy) {
                   const T* g = gn->data.data();
                   if (xn->requires_grad) {
                     T* dx = xn->grad_buffer();
                     for (std::size_t r = 0; r < rows; ++r) {
                       const T* dyr = dy + r * d;
                       const T* hr = xhat.data() + r * d;
                       T mean_dh = T(0), mean_dh_h = T(0);
                       for (std::size_t j = 0; j < d; ++j) {
                         const T dh = dyr[j] * g[j];
                         mean_dh += dh;
                         mean_dh_h += dh * hr[j];
                       }
                       mean_dh /= static_cast<T>(d);
                       mean_dh_h /= static_cast<T>(d);
                       for (std::size_t j = 0; j < d; ++j) {
                         const T dh = dyr[j] * g[j];
                         dx[r * d + j] += rstd[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                       }
                     }
                   }
                   if (gn->requires_grad) {
                     T* dg = gn->grad_buffer();
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t j = 0; j < d; ++j) dg[j] += dy[r * d + j] * xhat[r * d + j];
                   }
                   if (bn->requires_grad) {
                     T* db = bn->grad_buffer();
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t j = 0; j < d; ++j) db[j] += dy[r * d + j];
                   }
                 });
  }
  return out;
}

/// Softmax along `axis`, computed with max-subtraction.
template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw shape_error("softmax: axis " + std::to_string(axis) + " out of range for " +
                      shape_string(x.shape()));
  }
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  BasicTensor<T> out(s);
  const T* xs = x.raw();
  T* ys = out.mutable_data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = xs[base];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, xs[base + j * inner]);
      T total = T(0);
      for (std::size_t j = 0; j < len; ++j) {
        const T e = std::exp(xs[base + j * inner] - mx);
        ys[base + j * inner] = e;
        total += e;
      }
      const T inv = T(1) / total;
      for (std::size_t j = 0; j < len; ++j) ys[base + j * inner] *= inv;
    }
  }
  if (auto* tape = detail::recording_tape<T>(x)) {
    tape->record(out, "softmax", [xn = x.node(), yn = out.node(), outer, inner, len](const T* dy) {
      const T* y = yn->data.data();
      T* dx = xn->grad_buffer();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          T dot = T(0);
          for (std::size_t j = 0; j < len; ++j) dot += dy[base + j * inner] * y[base + j * inner];
          for (std::size_t j = 0; j < len; ++j) {
            const std::size_t idx = base + j * inner;
            dx[idx] += y[idx] * (dy[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

namespace detail {

// tanh approximation of x·Φ(x) and its derivative
template <class T>
struct GeluTanh {
  static constexpr double kAlpha = 0.7978845608028654;  // sqrt(2/pi)
  static constexpr double kBeta = 0.044715;

  static T value(T x) {
    const T u = static_cast<T>(kAlpha) * (x + static_cast<T>(kBeta) * x * x * x);
    return T(0.5) * x * (T(1) + std::tanh(u));
  }
  static T derivative(T x) {
    const T u = static_cast<T>(kAlpha) * (x + static_cast<T>(kBeta) * x * x * x);
    const T t = std::tanh(u);
    const T du = static_cast<T>(kAlpha) * (T(1) + static_cast<T>(3 * kBeta) * x * x);
    return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
  }
};

}  // namespace detail

/// Elementwise GELU (tanh approximation).
template <class T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  T* ys = out.mutable_data().data();
  const T* xs = x.raw();
  for (std::size_t i = 0; i < x.numel(); ++i) ys[i] = detail::GeluTanh<T>::value(xs[i]);
  if (auto* tape = detail::recording_tape<T>(x)) {
    tape->record(out, "gelu", [xn = x.node()](const T* dy) {
      const T* xs = xn->data.data();
      T* dx = xn->grad_buffer();
      for (std::size_t i = 0; i < xn->data.size(); ++i)
        dx[i] += dy[i] * detail::GeluTanh<T>::derivative(xs[i]);
    });
  }
  return out;
}

/// Mean squared error over matching shapes; returns a one-element tensor.
template <class T>
BasicTensor<T> mse_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
  detail::require_same_shape(pred, target, "mse_loss");
  const std::size_t n = pred.numel();
  T total = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T diff = pred[i] - target[i];
    total += diff * diff;
  }
  BasicTensor<T> out = BasicTensor<T>::scalar(total / static_cast<T>(n));
  if (auto* tape = detail::recording_tape<T>(pred, target)) {
    tape->record(out, "mse_loss", [pn = pred.node(), tn = target.node(), n](const T* dy) {
      const T scale = T(2) * dy[0] / static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const T g = scale * (pn->data[i] - tn->data[i]);
        if (pn->requires_grad) pn->grad_buffer()[i] += g;
        if (tn->requires_grad) tn->grad_buffer()[i] -= g;
      }
    });
  }
  return out;
}

/// Elementwise a + b for equal shapes.
template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  BasicTensor<T> out(a.shape());
  T* ys = out.mutable_data().data();
  for (std::size_t i = 0; i < a.numel(); ++i) ys[i] = a[i] + b[i];
  if (auto* tape = detail::recording_tape<T>(a, b)) {
    tape->record(out, "add", [an = a.node(), bn = b.node()](const T* dy) {
      const std::size_t n = an->data.size();
      if (an->requires_grad) {
        T* da = an->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) da[i] += dy[i];
      }
      if (bn->requires_grad) {
        T* db = bn->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) db[i] += dy[i];
      }
    });
  }
  return out;
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
  BasicTensor<T> out(x.shape());
  T* ys = out.mutable_data().data();
  for (std::size_t i = 0; i < x.numel(); ++i) ys[i] = x[i] * factor;
  if (auto* tape = detail::recording_tape<T>(x)) {
    tape->record(out, "scale", [xn = x.node(), factor](const T* dy) {
      T* dx = xn->grad_buffer();
      for (std::size_t i = 0; i < xn->data.size(); ++i) dx[i] += dy[i] * factor;
    });
  }
  return out;
}

/// Sum of all elements as a one-element tensor.
template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  BasicTensor<T> out = BasicTensor<T>::scalar(total);
  if (auto* tape = detail::recording_tape<T>(x)) {
    tape->record(out, "sum", [xn = x.node()](const T* dy) {
      T* dx = xn->grad_buffer();
      for (std::size_t i = 0; i < xn->data.size(); ++i) dx[i] += dy[0];
    });
  }
  return out;
}

/// Mean over the middle axis of x[N×L×D], giving [N×D].
template <class T>
BasicTensor<T> token_mean(const BasicTensor<T>& x) {
  detail::require_rank(x, 3, "token_mean", "input");
  const std::size_t n = x.extent(0), l = x.extent(1), d = x.extent(2);
  BasicTensor<T> out({n, d});
  T* ys = out.mutable_data().data();
  const T inv = T(1) / static_cast<T>(l);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t t = 0; t < l; ++t)
      for (std::size_t j = 0; j < d; ++j) ys[b * d + j] += x[(b * l + t) * d + j];
    for (std::size_t j = 0; j < d; ++j) ys[b * d + j] *= inv;
  }
  if (auto* tape = detail::recording_tape<T>(x)) {
    tape->record(out, "token_mean", [xn = x.node(), n, l, d, inv](const T* dy) {
      T* dx = xn->grad_buffer();
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t t = 0; t < l; ++t)
          for (std::size_t j = 0; j < d; ++j) dx[(b * l + t) * d + j] += dy[b * d + j] * inv;
    });
  }
  return out;
}

/// Same values under a new shape with equal element count.
template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw shape_error("reshape: cannot view " + shape_string(x.shape()) + " as " +
                      shape_string(shape));
  }
  BasicTensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  if (auto* tape = detail::recording_tape<T>(x)) {
    tape->record(out, "reshape", [xn = x.node()](const T* dy) {
      T* dx = xn->grad_buffer();
      for (std::size_t i = 0; i < xn->data.size(); ++i) dx[i] += dy[i];
    });
  }
  return out;
}

/// Reorders axes: output axis i is input axis `axes[i]`.
template <class T>
BasicTensor<T> permute(const BasicTensor<T>& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  if (axes.size() != r) throw shape_error("permute: axis list does not match rank");
  std::vector<bool> seen(r, false);
  for (std::size_t a : axes) {
    if (a >= r || seen[a]) throw shape_error("permute: axes must be a permutation");
    seen[a] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.extent(axes[i]);
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.extent(i);
  // source offset of each output element, walked with an odometer
  std::vector<std::size_t> src(x.numel());
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < src.size(); ++flat) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_strides[axes[i]];
    src[flat] = off;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  BasicTensor<T> out(out_shape);
  T* ys = out.mutable_data().data();
  for (std::size_t i = 0; i < src.size(); ++i) ys[i] = x[src[i]];
  if (auto* tape = detail::recording_tape<T>(x)) {
    tape->record(out, "permute", [xn = x.node(), src = std::move(src)](const T* dy) {
      T* dx = xn->grad_buffer();
      for (std::size_t i = 0; i < src.size(); ++i) dx[src[i]] += dy[i];
    });
  }
  return out;
}

/// [N×L×D] token sequence to an [N×D×H×W] feature map (L = H·W, row-major grid).
template <class T>
BasicTensor<T> tokens_to_grid(const BasicTensor<T>& tokens, std::size_t height, std::size_t width) {
  detail::require_rank(tokens, 3, "tokens_to_grid", "tokens");
  if (tokens.extent(1) != height * width) {
    throw shape_error("tokens_to_grid: " + std::to_string(tokens.extent(1)) + " tokens do not form a " +
                      std::to_string(height) + "x" + std::to_string(width) + " grid");
  }
  const std::size_t n = tokens.extent(0), d = tokens.extent(2);
  return reshape(permute(tokens, {0, 2, 1}), {n, d, height, width});
}

/// [N×D×H×W] feature map to [N×(H·W)×D] tokens.
template <class T>
BasicTensor<T> grid_to_tokens(const BasicTensor<T>& grid) {
  detail::require_rank(grid, 4, "grid_to_tokens", "grid");
  const std::size_t n = grid.extent(0), d = grid.extent(1), l = grid.extent(2) * grid.extent(3);
  return permute(reshape(grid, {n, d, l}), {0, 2, 1});
}

}  // namespace ctpvt
