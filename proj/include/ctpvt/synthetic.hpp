#pragma once

// Synthetic CT-like scans for desk-scale verification. Each slice shows a body
// ellipse with two dark lung fields whose size follows a dome profile along
// the scan (small at top and bottom). Positive cases add bright lesion blobs
// inside the lungs of the central slices only.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctpvt/dataset.hpp"
#include "ctpvt/error.hpp"
#include "ctpvt/image.hpp"
#include "ctpvt/rng.hpp"

namespace ctpvt {

inline constexpr std::size_t kMinScanSlices = 50;
inline constexpr std::size_t kMaxScanSlices = 700;

struct SyntheticSpec {
  std::size_t positive_cases = 30;
  std::size_t negative_cases = 30;
  std::size_t min_slices = kMinScanSlices;
  std::size_t max_slices = kMaxScanSlices;
  std::size_t image_size = 64;
  int bit_depth = 8;
  // lesions: per-slice count range, radius as a fraction of the image side,
  // additive intensity in unit range
  std::size_t blob_count_min = 4;
  std::size_t blob_count_max = 6;
  double blob_radius_min = 0.09;
  double blob_radius_max = 0.13;
  double blob_intensity = 0.85;
  // slices with |z/(L−1) − 0.5| <= central_band carry lesions
  double central_band = 0.25;
  double noise_sigma = 0.03;
  std::uint64_t seed = 0;

  void validate() const {
    auto fail = [](const std::string& m) { throw config_error("synthetic spec: " + m); };
    if (positive_cases + negative_cases == 0) fail("no cases requested");
    if (min_slices < kMinScanSlices || max_slices > kMaxScanSlices || min_slices > max_slices) {
      fail("slice range must lie within [50, 700]");
    }
    if (image_size < 16) fail("image_size must be at least 16");
    if (bit_depth != 8 && bit_depth != 16) fail("bit_depth must be 8 or 16");
    if (blob_count_min == 0 || blob_count_min > blob_count_max) fail("bad blob count range");
    if (!(blob_radius_min > 0.0 && blob_radius_min <= blob_radius_max && blob_radius_max < 0.2)) {
      fail("bad blob radius range");
    }
    if (!(blob_intensity > 0.0 && blob_intensity <= 1.0)) fail("blob_intensity must lie in (0, 1]");
    if (!(central_band > 0.0 && central_band <= 0.5)) fail("central_band must lie in (0, 0.5]");
    if (!(noise_sigma >= 0.0)) fail("noise_sigma must be non-negative");
  }
};

inline constexpr double kAirLevel = 0.02;
inline constexpr double kBodyLevel = 0.55;
inline constexpr double kLungLevel = 0.12;
// Blob profile: full intensity inside this fraction of the radius, linear
// falloff to zero at the radius.
inline constexpr double kBlobCore = 0.7;

/// Per-case anatomy drawn once per scan.
struct CaseAnatomy {
  double lung_scale = 1.0;
  double offset_x = 0.0;
  double offset_y = 0.0;
};

/// Lower bound on how much lesions raise the mean unit intensity of a central
/// positive slice: the minimum number of blobs, each covering at least its
/// full-intensity core.
inline double central_intensity_margin(const SyntheticSpec& spec) {
  const double core = kBlobCore * spec.blob_radius_min * static_cast<double>(spec.image_size);
  const double area = static_cast<double>(spec.image_size * spec.image_size);
  return static_cast<double>(spec.blob_count_min) * std::numbers::pi * core * core * spec.blob_intensity / area;
}

namespace detail {

struct Ellipse {
  double cx, cy, rx, ry;
  bool contains(double x, double y) const {
    const double dx = (x - cx) / rx, dy = (y - cy) / ry;
    return dx * dx + dy * dy <= 1.0;
  }
};

// Lung size along the scan: a dome that shrinks towards the first/last slice.
inline double lung_profile(double t) {
  const double u = (t - 0.5) / 0.55;
  return std::sqrt(std::max(0.0, 1.0 - u * u));
}

inline std::vector<Ellipse> lung_fields(const SyntheticSpec& spec, const CaseAnatomy& a, double t) {
  const double n = static_cast<double>(spec.image_size);
  const double s = lung_profile(t) * a.lung_scale;
  const double cy = 0.5 * n + a.offset_y;
  return {{0.5 * n - 0.19 * n + a.offset_x, cy, 0.13 * n * s, 0.24 * n * s},
          {0.5 * n + 0.19 * n + a.offset_x, cy, 0.13 * n * s, 0.24 * n * s}};
}

}  // namespace detail

/// Renders slice z of an L-slice scan. Deterministic given `rng` state.
inline GrayImage render_synthetic_slice(const SyntheticSpec& spec, const CaseAnatomy& anatomy, std::size_t z,
                                        std::size_t slices, bool positive, Rng& rng) {
  const std::size_t n = spec.image_size;
  const double nd = static_cast<double>(n);
  const double t = slices > 1 ? static_cast<double>(z) / static_cast<double>(slices - 1) : 0.5;
  const detail::Ellipse body{0.5 * nd + anatomy.offset_x, 0.5 * nd + anatomy.offset_y, 0.44 * nd, 0.36 * nd};
  const auto lungs = detail::lung_fields(spec, anatomy, t);

  std::vector<double> plane(n * n);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      double v = kAirLevel;
      if (body.contains(px, py)) v = kBodyLevel;
      for (const auto& lung : lungs) {
        if (lung.rx > 0.5 && lung.contains(px, py)) v = kLungLevel;
      }
      plane[y * n + x] = v;
    }
  }

  if (positive && std::abs(t - 0.5) <= spec.central_band) {
    std::uniform_int_distribution<std::size_t> count_dist(spec.blob_count_min, spec.blob_count_max);
    std::uniform_real_distribution<double> radius_dist(spec.blob_radius_min * nd, spec.blob_radius_max * nd);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::size_t count = count_dist(rng);
    for (std::size_t b = 0; b < count; ++b) {
      const auto& lung = lungs[b % lungs.size()];
      const double radius = radius_dist(rng);
      // uniform point inside the lung ellipse
      const double ang = 2.0 * std::numbers::pi * unit(rng);
      const double rr = std::sqrt(unit(rng)) * 0.8;
      const double bx = lung.cx + rr * lung.rx * std::cos(ang);
      const double by = lung.cy + rr * lung.ry * std::sin(ang);
      for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
          const double d = std::hypot(static_cast<double>(x) + 0.5 - bx, static_cast<double>(y) + 0.5 - by);
          if (d >= radius) continue;
          const double core = kBlobCore * radius;
          const double w = d <= core ? 1.0 : (radius - d) / (radius - core);
          plane[y * n + x] += spec.blob_intensity * w;
        }
      }
    }
  }

  GrayImage img(n, n, spec.bit_depth);
  const double maxv = static_cast<double>(img.max_value());
  std::normal_distribution<double> noise(0.0, spec.noise_sigma > 0.0 ? spec.noise_sigma : 1.0);
  for (std::size_t i = 0; i < plane.size(); ++i) {
    double v = plane[i];
    if (spec.noise_sigma > 0.0) v += noise(rng);
    img.pixels[i] = static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * maxv));
  }
  return img;
}

struct SyntheticCaseRecord {
  std::string case_id;
  Label label;
  std::size_t slices;
};

struct SyntheticManifest {
  SyntheticSpec spec;
  std::vector<SyntheticCaseRecord> cases;
};

inline nlohmann::ordered_json to_json(const SyntheticManifest& m) {
  const SyntheticSpec& s = m.spec;
  nlohmann::ordered_json j;
  j["format"] = "ctpvt-synthetic-v1";
  j["seed"] = s.seed;
  j["spec"] = {{"positive_cases", s.positive_cases},   {"negative_cases", s.negative_cases},
               {"min_slices", s.min_slices},           {"max_slices", s.max_slices},
               {"image_size", s.image_size},           {"bit_depth", s.bit_depth},
               {"blob_count_min", s.blob_count_min},   {"blob_count_max", s.blob_count_max},
               {"blob_radius_min", s.blob_radius_min}, {"blob_radius_max", s.blob_radius_max},
               {"blob_intensity", s.blob_intensity},   {"central_band", s.central_band},
               {"noise_sigma", s.noise_sigma}};
  auto cases = nlohmann::ordered_json::array();
  for (const auto& c : m.cases) {
    cases.push_back({{"case_id", c.case_id}, {"label", to_string(c.label)}, {"slices", c.slices}});
  }
  j["cases"] = std::move(cases);
  return j;
}

/// Writes out/{covid,non-covid}/<case_id>/<NNN>.png plus out/manifest.json.
/// Byte-identical output for identical specs.
inline SyntheticManifest generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw io_error("cannot create " + out.string() + ": " + ec.message());

  SyntheticManifest manifest;
  manifest.spec = spec;
  for (const bool positive : {true, false}) {
    const std::size_t count = positive ? spec.positive_cases : spec.negative_cases;
    const std::uint64_t class_seed = derive_seed(spec.seed, positive ? "positive" : "negative");
    const auto class_dir = out / (positive ? kPositiveDir : kNegativeDir);
    std::filesystem::create_directories(class_dir, ec);
    if (ec) throw io_error("cannot create " + class_dir.string() + ": " + ec.message());
    for (std::size_t i = 0; i < count; ++i) {
      Rng rng(derive_seed(class_seed, i));
      std::uniform_int_distribution<std::size_t> slice_dist(spec.min_slices, spec.max_slices);
      std::uniform_real_distribution<double> scale_dist(0.97, 1.03);
      std::uniform_real_distribution<double> shift_dist(-1.0, 1.0);
      const std::size_t slices = slice_dist(rng);
      CaseAnatomy anatomy{scale_dist(rng), shift_dist(rng), shift_dist(rng)};

      char name[32];
      std::snprintf(name, sizeof name, "case_%c%03zu", positive ? 'p' : 'n', i);
      const auto case_dir = class_dir / name;
      std::filesystem::create_directories(case_dir, ec);
      if (ec) throw io_error("cannot create " + case_dir.string() + ": " + ec.message());
      for (std::size_t z = 0; z < slices; ++z) {
        char file[32];
        std::snprintf(file, sizeof file, "%03zu.png", z);
        write_png(case_dir / file, render_synthetic_slice(spec, anatomy, z, slices, positive, rng));
      }
      manifest.cases.push_back({name, positive ? Label::positive : Label::negative, slices});
    }
  }
  std::ofstream os(out / "manifest.json", std::ios::trunc);
  os << to_json(manifest).dump(2) << '\n';
  if (!os) throw io_error("cannot write " + (out / "manifest.json").string());
  return manifest;
}

}  // namespace ctpvt
