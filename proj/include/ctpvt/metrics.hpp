#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctpvt/sampling.hpp"

namespace ctpvt {

/// Binary confusion counts with COVID as the positive class.
struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;

  std::size_t total() const { return tp + fp + fn + tn; }
};

namespace detail {

// F1 of one class from its own true/false positive/negative counts, via
// precision and recall. A class with no predicted and no actual members
// scores 1; any other zero denominator contributes 0.
inline double class_f1(std::size_t tp, std::size_t fp, std::size_t fn) {
  if (tp + fp == 0 && tp + fn == 0) return 1.0;
  if (tp + fp == 0 || tp + fn == 0) return 0.0;
  const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

inline double ratio_or_one(std::size_t num, std::size_t den) {
  return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace detail

inline double positive_f1(const ConfusionCounts& c) { return detail::class_f1(c.tp, c.fp, c.fn); }
inline double negative_f1(const ConfusionCounts& c) { return detail::class_f1(c.tn, c.fn, c.fp); }

/// Unweighted mean of the positive-class and negative-class F1 scores.
inline double macro_f1(const ConfusionCounts& c) {
  if (c.total() == 0) throw std::invalid_argument("macro_f1: all confusion counts are zero");
  return 0.5 * (positive_f1(c) + negative_f1(c));
}

inline double macro_f1(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn) {
  return macro_f1(ConfusionCounts{tp, fp, fn, tn});
}

struct EvalReport {
  ConfusionCounts counts;
  double macro_f1 = 0.0;
  double positive_accuracy = 0.0;  // recall on positives; 1 when there are none
  double negative_accuracy = 0.0;  // recall on negatives; 1 when there are none
  double accuracy = 0.0;
  std::vector<CaseVerdict> verdicts;
  std::vector<std::string> excluded_cases;  // unlabeled, not scored
};

/// Fills counts and rates from the verdicts and the true labels (same order).
inline EvalReport summarize(std::vector<CaseVerdict> verdicts, const std::vector<Label>& truth) {
  if (verdicts.size() != truth.size()) throw std::invalid_argument("summarize: verdict/label count mismatch");
  EvalReport r;
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    const bool predicted = verdicts[i].label == Label::positive;
    const bool actual = truth[i] == Label::positive;
    if (actual && predicted) ++r.counts.tp;
    if (!actual && predicted) ++r.counts.fp;
    if (actual && !predicted) ++r.counts.fn;
    if (!actual && !predicted) ++r.counts.tn;
  }
  const ConfusionCounts& c = r.counts;
  if (c.total() > 0) {
    r.macro_f1 = macro_f1(c);
    r.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  }
  r.positive_accuracy = detail::ratio_or_one(c.tp, c.tp + c.fn);
  r.negative_accuracy = detail::ratio_or_one(c.tn, c.tn + c.fp);
  r.verdicts = std::move(verdicts);
  return r;
}

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["macro_f1"] = r.macro_f1;
  j["positive_accuracy"] = r.positive_accuracy;
  j["negative_accuracy"] = r.negative_accuracy;
  j["accuracy"] = r.accuracy;
  j["tp"] = r.counts.tp;
  j["fp"] = r.counts.fp;
  j["fn"] = r.counts.fn;
  j["tn"] = r.counts.tn;
  j["cases"] = r.counts.total();
  auto verdicts = nlohmann::ordered_json::array();
  for (const auto& v : r.verdicts) verdicts.push_back(to_json(v));
  j["verdicts"] = std::move(verdicts);
  j["excluded_cases"] = r.excluded_cases;
  return j;
}

}  // namespace ctpvt
