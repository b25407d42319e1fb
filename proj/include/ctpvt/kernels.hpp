#pragma once

// Raw loop kernels behind the differentiable ops. All kernels accumulate into
// their output (C += ...) and run single-threaded with a fixed loop order, so
// results are bitwise reproducible for a given build.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace ctpvt::kernels {

namespace detail {
inline thread_local std::uint64_t* flop_sink = nullptr;
}

/// Counts floating-point operations (2 per executed multiply-add) performed by
/// the matmul and convolution kernels of this thread while alive.
class FlopCounter {
 public:
  FlopCounter() : previous_(detail::flop_sink) { detail::flop_sink = &count_; }
  ~FlopCounter() { detail::flop_sink = previous_; }
  FlopCounter(const FlopCounter&) = delete;
  FlopCounter& operator=(const FlopCounter&) = delete;

  std::uint64_t flops() const { return count_; }

 private:
  std::uint64_t count_ = 0;
  std::uint64_t* previous_;
};

inline void count_mac(std::uint64_t macs) {
  if (detail::flop_sink) *detail::flop_sink += 2 * macs;
}

/// c[m×n] += a[m×k] · b[k×n]
template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  count_mac(static_cast<std::uint64_t>(m) * n * k);
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

/// c[m×n] += a[k×m]ᵀ · b[k×n]
template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  count_mac(static_cast<std::uint64_t>(m) * n * k);
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

/// c[m×n] += a[m×k] · b[n×k]ᵀ. b is transposed into scratch so the inner loop
/// stays contiguous.
template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  std::vector<T> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn(m, n, k, a, bt.data(), c);
}

struct ConvGeometry {
  std::size_t batch, in_channels, in_height, in_width;
  std::size_t out_channels, kernel_h, kernel_w;
  std::size_t stride, padding, groups;

  std::size_t out_height() const { return (in_height + 2 * padding - kernel_h) / stride + 1; }
  std::size_t out_width() const { return (in_width + 2 * padding - kernel_w) / stride + 1; }
  std::size_t in_per_group() const { return in_channels / groups; }
  std::size_t out_per_group() const { return out_channels / groups; }
};

namespace detail {

// Output positions o with 0 <= o*stride + tap - padding < extent.
struct ValidRange {
  std::size_t begin, end;
};

inline ValidRange valid_outputs(std::size_t tap, std::size_t padding, std::size_t stride,
                                std::size_t extent, std::size_t out_extent) {
  const auto t = static_cast<std::ptrdiff_t>(tap);
  const auto p = static_cast<std::ptrdiff_t>(padding);
  const auto s = static_cast<std::ptrdiff_t>(stride);
  const auto n = static_cast<std::ptrdiff_t>(extent);
  std::ptrdiff_t lo = p > t ? (p - t + s - 1) / s : 0;
  std::ptrdiff_t hi = (n - 1 + p - t);
  hi = hi < 0 ? -1 : hi / s;
  hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(out_extent) - 1);
  if (hi < lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi + 1)};
}

// Visits every (output row, input row, output col range) triple of one kernel tap.
template <class Fn>
void for_each_tap_row(const ConvGeometry& g, std::size_t kh, std::size_t kw, Fn&& fn) {
  const std::size_t oh_n = g.out_height(), ow_n = g.out_width();
  const ValidRange rows = valid_outputs(kh, g.padding, g.stride, g.in_height, oh_n);
  const ValidRange cols = valid_outputs(kw, g.padding, g.stride, g.in_width, ow_n);
  if (cols.begin >= cols.end) return;
  for (std::size_t oh = rows.begin; oh < rows.end; ++oh) {
    const std::size_t ih = oh * g.stride + kh - g.padding;
    fn(oh, ih, cols.begin, cols.end);
  }
}

template <class T>
const T* weight_at(const ConvGeometry& g, const T* w, std::size_t oc, std::size_t icg) {
  return w + (oc * g.in_per_group() + icg) * g.kernel_h * g.kernel_w;
}

}  // namespace detail

/// Grouped cross-correlation: y[N×O×OH×OW] += conv(x, w) (+ bias when non-null).
template <class T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y) {
  const std::size_t oh_n = g.out_height(), ow_n = g.out_width();
  const std::size_t in_plane = g.in_height * g.in_width, out_plane = oh_n * ow_n;
  const std::size_t s = g.stride;
  std::uint64_t macs = 0;
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
      T* yp = y + (n * g.out_channels + oc) * out_plane;
      if (bias) {
        for (std::size_t i = 0; i < out_plane; ++i) yp[i] += bias[oc];
      }
      const std::size_t group = oc / g.out_per_group();
      for (std::size_t icg = 0; icg < g.in_per_group(); ++icg) {
        const std::size_t ic = group * g.in_per_group() + icg;
        const T* xp = x + (n * g.in_channels + ic) * in_plane;
        const T* wk = detail::weight_at(g, w, oc, icg);
        for (std::size_t kh = 0; kh < g.kernel_h; ++kh) {
          for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
            const T wv = wk[kh * g.kernel_w + kw];
            detail::for_each_tap_row(g, kh, kw, [&](std::size_t oh, std::size_t ih, std::size_t c0,
                                                    std::size_t c1) {
              T* yrow = yp + oh * ow_n;
              const T* xrow = xp + ih * g.in_width + c0 * s + kw - g.padding;
              for (std::size_t ow = c0; ow < c1; ++ow) yrow[ow] += wv * xrow[(ow - c0) * s];
              macs += c1 - c0;
            });
          }
        }
      }
    }
  }
  count_mac(macs);
}

/// dx += ∂y/∂x applied to dy.
template <class T>
void conv2d_backward_input(const ConvGeometry& g, const T* dy, const T* w, T* dx) {
  const std::size_t oh_n = g.out_height(), ow_n = g.out_width();
  const std::size_t in_plane = g.in_height * g.in_width, out_plane = oh_n * ow_n;
  const std::size_t s = g.stride;
  std::uint64_t macs = 0;
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
      const T* dyp = dy + (n * g.out_channels + oc) * out_plane;
      const std::size_t group = oc / g.out_per_group();
      for (std::size_t icg = 0; icg < g.in_per_group(); ++icg) {
        const std::size_t ic = group * g.in_per_group() + icg;
        T* dxp = dx + (n * g.in_channels + ic) * in_plane;
        const T* wk = detail::weight_at(g, w, oc, icg);
        for (std::size_t kh = 0; kh < g.kernel_h; ++kh) {
          for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
            const T wv = wk[kh * g.kernel_w + kw];
            detail::for_each_tap_row(g, kh, kw, [&](std::size_t oh, std::size_t ih, std::size_t c0,
                                                    std::size_t c1) {
              const T* dyrow = dyp + oh * ow_n;
              T* dxrow = dxp + ih * g.in_width + c0 * s + kw - g.padding;
              for (std::size_t ow = c0; ow < c1; ++ow) dxrow[(ow - c0) * s] += wv * dyrow[ow];
              macs += c1 - c0;
            });
          }
        }
      }
    }
  }
  count_mac(macs);
}

/// dw += ∂y/∂w applied to dy; db (when non-null) += per-channel sums of dy.
template <class T>
void conv2d_backward_params(const ConvGeometry& g, const T* dy, const T* x, T* dw, T* db) {
  const std::size_t oh_n = g.out_height(), ow_n = g.out_width();
  const std::size_t in_plane = g.in_height * g.in_width, out_plane = oh_n * ow_n;
  const std::size_t s = g.stride;
  std::uint64_t macs = 0;
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
      const T* dyp = dy + (n * g.out_channels + oc) * out_plane;
      if (db) {
        T acc = T(0);
        for (std::size_t i = 0; i < out_plane; ++i) acc += dyp[i];
        db[oc] += acc;
      }
      const std::size_t group = oc / g.out_per_group();
      for (std::size_t icg = 0; icg < g.in_per_group(); ++icg) {
        const std::size_t ic = group * g.in_per_group() + icg;
        const T* xp = x + (n * g.in_channels + ic) * in_plane;
        T* dwk = dw + (oc * g.in_per_group() + icg) * g.kernel_h * g.kernel_w;
        for (std::size_t kh = 0; kh < g.kernel_h; ++kh) {
          for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
            T acc = T(0);
            detail::for_each_tap_row(g, kh, kw, [&](std::size_t oh, std::size_t ih, std::size_t c0,
                                                    std::size_t c1) {
              const T* dyrow = dyp + oh * ow_n;
              const T* xrow = xp + ih * g.in_width + c0 * s + kw - g.padding;
              for (std::size_t ow = c0; ow < c1; ++ow) acc += dyrow[ow] * xrow[(ow - c0) * s];
              macs += c1 - c0;
            });
            dwk[kh * g.kernel_w + kw] += acc;
          }
        }
      }
    }
  }
  count_mac(macs);
}

}  // namespace ctpvt::kernels
