#pragma once

// Case ingestion from root/{covid,non-covid}/<case_id>/<NNN>.png trees.

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <optional>
#include <string>
#include <system_error>
#include <vector>

#include "ctpvt/error.hpp"
#include "ctpvt/image.hpp"

namespace ctpvt {

enum class Label { negative, positive, unknown };

inline const char* to_string(Label label) {
  switch (label) {
    case Label::positive:
      return "positive";
    case Label::negative:
      return "negative";
    default:
      return "unknown";
  }
}

inline constexpr const char* kPositiveDir = "covid";
inline constexpr const char* kNegativeDir = "non-covid";

/// One patient's scan: slice files in anatomical (numeric filename) order.
struct ScanCase {
  std::string case_id;
  Label label = Label::unknown;
  std::vector<std::filesystem::path> slice_paths;

  std::size_t slice_count() const { return slice_paths.size(); }
};

struct LoadedDataset {
  std::vector<ScanCase> cases;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::optional<unsigned long long> numeric_stem(const std::filesystem::path& p) {
  const std::string stem = p.stem().string();
  if (stem.empty()) return std::nullopt;
  unsigned long long value = 0;
  auto [end, ec] = std::from_chars(stem.data(), stem.data() + stem.size(), value);
  if (ec != std::errc{} || end != stem.data() + stem.size()) return std::nullopt;
  return value;
}

inline std::vector<std::filesystem::path> sorted_subdirs(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_directory()) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace detail

/// Reads one case directory. Slices are the `.png` files with purely numeric
/// stems, sorted by numeric value; anything else is reported in `warnings`.
/// Returns nullopt (with a warning) when no usable slice remains.
inline std::optional<ScanCase> load_case_dir(const std::filesystem::path& dir, Label label,
                                             std::vector<std::string>& warnings) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw io_error("not a case directory: " + dir.string());
  ScanCase scan;
  scan.case_id = dir.filename().string();
  scan.label = label;
  std::vector<std::pair<unsigned long long, std::filesystem::path>> slices;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto& path = entry.path();
    if (path.extension() != ".png") continue;
    const auto index = detail::numeric_stem(path);
    if (!index) {
      warnings.push_back(scan.case_id + ": ignoring non-numeric slice name " + path.filename().string());
      continue;
    }
    if (!looks_like_png(path)) {
      warnings.push_back(scan.case_id + ": unreadable slice " + path.filename().string());
      continue;
    }
    slices.emplace_back(*index, path);
  }
  std::sort(slices.begin(), slices.end());
  for (std::size_t i = 1; i < slices.size(); ++i) {
    if (slices[i].first == slices[i - 1].first) {
      warnings.push_back(scan.case_id + ": duplicate slice index " + std::to_string(slices[i].first));
    }
  }
  if (!slices.empty() && slices.back().first - slices.front().first + 1 != slices.size()) {
    warnings.push_back(scan.case_id + ": slice count " + std::to_string(slices.size()) +
                       " does not match index range " + std::to_string(slices.front().first) + ".." +
                       std::to_string(slices.back().first));
  }
  if (slices.empty()) {
    warnings.push_back(scan.case_id + ": no slices, case skipped");
    return std::nullopt;
  }
  for (auto& [index, path] : slices) scan.slice_paths.push_back(std::move(path));
  return scan;
}

/// Loads every case under root/covid (positive) and root/non-covid (negative).
/// Cases are ordered by class directory, then case id.
inline LoadedDataset load_dataset(const std::filesystem::path& root) {
  std::error_code ec;
  if (!std::filesystem::is_directory(root, ec)) throw io_error("dataset root is not readable: " + root.string());
  LoadedDataset out;
  bool any = false;
  for (auto [dir, label] : {std::pair{kPositiveDir, Label::positive}, std::pair{kNegativeDir, Label::negative}}) {
    const auto class_dir = root / dir;
    if (!std::filesystem::is_directory(class_dir, ec)) {
      out.warnings.push_back(std::string("missing class directory ") + dir + "/");
      continue;
    }
    any = true;
    for (const auto& case_dir : detail::sorted_subdirs(class_dir)) {
      if (auto scan = load_case_dir(case_dir, label, out.warnings)) out.cases.push_back(std::move(*scan));
    }
  }
  if (!any) {
    throw io_error("dataset root " + root.string() + " has neither " + kPositiveDir + "/ nor " +
                   kNegativeDir + "/");
  }
  return out;
}

}  // namespace ctpvt
