#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ctpvt/error.hpp"
#include "ctpvt/image.hpp"
#include "ctpvt/tensor.hpp"

namespace ctpvt {

enum class Enhancement { none, histogram_equalization };

inline std::string to_string(Enhancement e) {
  return e == Enhancement::none ? "none" : "equalize";
}

inline Enhancement parse_enhancement(const std::string& text) {
  if (text == "none") return Enhancement::none;
  if (text == "equalize" || text == "histogram-equalization") return Enhancement::histogram_equalization;
  throw config_error("unknown enhancement '" + text + "' (expected none|equalize)");
}

struct PreprocessSpec {
  Enhancement enhancement = Enhancement::histogram_equalization;
  std::size_t resolution = 224;
  std::size_t channels = 3;
};

inline constexpr std::size_t kHistogramBins = 256;

/// Intensities scaled by the bit-depth maximum into [0, 1].
inline std::vector<float> normalize_intensity(const GrayImage& img) {
  std::vector<float> out(img.pixels.size());
  const float inv = 1.0f / static_cast<float>(img.max_value());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(img.pixels[i]) * inv;
  return out;
}

/// Global histogram equalization over 256 bins of the bit-depth range. Each
/// pixel maps to (cdf(bin) − cdf_min) / (count − cdf_min) in [0, 1]. An image
/// whose pixels all fall in one bin has no contrast to spread and is returned
/// intensity-normalized instead.
inline std::vector<float> equalize_histogram(const GrayImage& img) {
  const std::size_t count = img.pixels.size();
  const std::size_t range = static_cast<std::size_t>(img.max_value()) + 1;
  auto bin_of = [&](std::uint16_t v) { return static_cast<std::size_t>(v) * kHistogramBins / range; };
  std::array<std::size_t, kHistogramBins> cdf{};
  for (std::uint16_t v : img.pixels) ++cdf[bin_of(v)];
  std::size_t cdf_min = 0;
  for (std::size_t b = 0; b < kHistogramBins; ++b) {
    if (cdf_min == 0 && cdf[b] != 0) cdf_min = cdf[b];
    if (b > 0) cdf[b] += cdf[b - 1];
  }
  if (cdf_min == count) return normalize_intensity(img);
  std::vector<float> out(count);
  const double denom = static_cast<double>(count - cdf_min);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t c = cdf[bin_of(img.pixels[i])];
    out[i] = static_cast<float>(static_cast<double>(c - cdf_min) / denom);
  }
  return out;
}

/// Bilinear resampling with half-pixel centres (corners not aligned) and edge
/// clamping.
inline std::vector<float> resize_bilinear(const std::vector<float>& src, std::size_t src_w,
                                          std::size_t src_h, std::size_t dst_w, std::size_t dst_h) {
  std::vector<float> dst(dst_w * dst_h);
  const double sx = static_cast<double>(src_w) / static_cast<double>(dst_w);
  const double sy = static_cast<double>(src_h) / static_cast<double>(dst_h);
  for (std::size_t y = 0; y < dst_h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, double(src_h - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, src_h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < dst_w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, double(src_w - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, src_w - 1);
      const double wx = fx - static_cast<double>(x0);
      const double top = src[y0 * src_w + x0] * (1.0 - wx) + src[y0 * src_w + x1] * wx;
      const double bottom = src[y1 * src_w + x0] * (1.0 - wx) + src[y1 * src_w + x1] * wx;
      dst[y * dst_w + x] = static_cast<float>(std::clamp(top * (1.0 - wy) + bottom * wy, 0.0, 1.0));
    }
  }
  return dst;
}

/// Enhancement, resize to the target resolution, unit-range values, channel
/// replication: grayscale H×W → [channels × R × R].
inline Tensor preprocess_slice(const GrayImage& img, const PreprocessSpec& spec) {
  if (img.width == 0 || img.height == 0 || img.pixels.size() != img.width * img.height) {
    throw std::invalid_argument("preprocess_slice: zero-sized image");
  }
  if (spec.resolution == 0 || spec.channels == 0) {
    throw config_error("preprocess: resolution and channels must be positive");
  }
  const std::vector<float> unit = spec.enhancement == Enhancement::histogram_equalization
                                      ? equalize_histogram(img)
                                      : normalize_intensity(img);
  const std::vector<float> plane =
      resize_bilinear(unit, img.width, img.height, spec.resolution, spec.resolution);
  std::vector<float> values;
  values.reserve(plane.size() * spec.channels);
  for (std::size_t c = 0; c < spec.channels; ++c) values.insert(values.end(), plane.begin(), plane.end());
  return Tensor({spec.channels, spec.resolution, spec.resolution}, std::move(values));
}

inline Tensor load_slice(const std::filesystem::path& path, const PreprocessSpec& spec) {
  return preprocess_slice(read_png(path), spec);
}

/// Stacks equally shaped [C×R×R] slices into [N×C×R×R].
inline Tensor stack_slices(const std::vector<Tensor>& slices) {
  if (slices.empty()) throw std::invalid_argument("stack_slices: no slices");
  Shape shape = slices.front().shape();
  std::vector<float> values;
  values.reserve(slices.size() * slices.front().numel());
  for (const auto& s : slices) {
    if (s.shape() != shape) throw shape_error("stack_slices: slices differ in shape");
    values.insert(values.end(), s.data().begin(), s.data().end());
  }
  shape.insert(shape.begin(), slices.size());
  return Tensor(std::move(shape), std::move(values));
}

}  // namespace ctpvt
