#pragma once

// Normal-distribution slice sampling and the multi-round voting rule that
// turns per-slice scores into a case-level diagnosis.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctpvt/dataset.hpp"
#include "ctpvt/error.hpp"
#include "ctpvt/preprocess.hpp"
#include "ctpvt/rng.hpp"
#include "ctpvt/tensor.hpp"

namespace ctpvt {

inline constexpr std::size_t kSliceBatch = 8;
inline constexpr double kDefaultSigmaFraction = 1.0 / 6.0;

/// Draws slice indices from Normal((L−1)/2, sigma_fraction·L). Owns its RNG.
struct SliceSampler {
  std::size_t batch_size = kSliceBatch;
  double sigma_fraction = kDefaultSigmaFraction;
  Rng rng;

  explicit SliceSampler(std::uint64_t seed, double sigma_fraction_ = kDefaultSigmaFraction)
      : sigma_fraction(sigma_fraction_), rng(seed) {
    if (!(sigma_fraction >= 0.0) || !std::isfinite(sigma_fraction)) {
      throw config_error("sampler sigma fraction must be finite and non-negative");
    }
  }

  static double mean_for(std::size_t slices) { return (static_cast<double>(slices) - 1.0) / 2.0; }
  double sigma_for(std::size_t slices) const { return sigma_fraction * static_cast<double>(slices); }
};

/// `batch_size` indices in draw order: normal draw, rounded to the nearest
/// integer, clamped into [0, L−1]. Duplicates are allowed. A zero sigma
/// degenerates to round((L−1)/2) for every draw.
inline std::vector<std::size_t> sample_indices(std::size_t slices, SliceSampler& sampler) {
  if (slices == 0) throw std::invalid_argument("sample_indices: empty scan");
  const double mean = SliceSampler::mean_for(slices);
  const double sigma = sampler.sigma_for(slices);
  const double hi = static_cast<double>(slices - 1);
  std::vector<std::size_t> out(sampler.batch_size);
  if (sigma == 0.0) {
    std::fill(out.begin(), out.end(), static_cast<std::size_t>(std::round(mean)));
    return out;
  }
  std::normal_distribution<double> dist(mean, sigma);
  for (auto& idx : out) idx = static_cast<std::size_t>(std::clamp(std::round(dist(sampler.rng)), 0.0, hi));
  return out;
}

/// Arithmetic mean of one round's slice scores, summed left to right in double.
inline double batch_average(std::span<const float> scores) {
  if (scores.empty()) throw std::invalid_argument("batch_average: no scores");
  double total = 0.0;
  for (float s : scores) total += static_cast<double>(s);
  return total / static_cast<double>(scores.size());
}

struct VotingConfig {
  std::size_t rounds = 10;

  void validate() const {
    if (rounds == 0) throw config_error("voting rounds must be at least 1");
  }
};

struct CaseVerdict {
  std::string case_id;
  std::vector<double> round_averages;
  std::vector<bool> round_positive;  // average > 0
  std::size_t positive_rounds = 0;
  std::size_t rounds = 0;
  Label label = Label::negative;
};

/// Strict majority of strictly positive round averages. An average of exactly
/// zero is not positive; exactly half positive rounds is negative.
inline CaseVerdict vote(std::span<const double> round_averages, const VotingConfig& config) {
  config.validate();
  if (round_averages.size() != config.rounds) {
    throw std::invalid_argument("vote: expected " + std::to_string(config.rounds) + " round averages, got " +
                                std::to_string(round_averages.size()));
  }
  CaseVerdict verdict;
  verdict.rounds = config.rounds;
  verdict.round_averages.assign(round_averages.begin(), round_averages.end());
  for (double avg : round_averages) {
    const bool plus = avg > 0.0;
    verdict.round_positive.push_back(plus);
    verdict.positive_rounds += plus ? 1 : 0;
  }
  verdict.label = 2 * verdict.positive_rounds > verdict.rounds ? Label::positive : Label::negative;
  return verdict;
}

inline nlohmann::ordered_json to_json(const CaseVerdict& v) {
  nlohmann::ordered_json j;
  j["case_id"] = v.case_id;
  j["round_averages"] = v.round_averages;
  j["positive_rounds"] = v.positive_rounds;
  j["n"] = v.rounds;
  j["label"] = to_string(v.label);
  return j;
}

/// One JSON object per line: {case_id, round_averages, positive_rounds, n, label}.
inline std::string verdict_json_line(const CaseVerdict& v) { return to_json(v).dump(); }

/// Sampler seed for one case, independent of the order cases are visited in.
inline std::uint64_t case_seed(std::uint64_t seed, const std::string& case_id) {
  return derive_seed(seed, fnv1a(case_id));
}

/// Runs `config.rounds` rounds of sample → preprocess → score → average on one
/// scan and votes. `scorer` maps a [batch × C × R × R] tensor to a tensor of
/// per-slice scores.
template <class Scorer>
CaseVerdict diagnose_case(const ScanCase& scan, Scorer&& scorer, SliceSampler& sampler,
                          const VotingConfig& config, const PreprocessSpec& preprocess) {
  config.validate();
  if (scan.slice_count() == 0) throw std::invalid_argument("diagnose_case: case " + scan.case_id + " has no slices");
  std::vector<double> averages;
  averages.reserve(config.rounds);
  for (std::size_t round = 0; round < config.rounds; ++round) {
    const auto indices = sample_indices(scan.slice_count(), sampler);
    std::vector<Tensor> slices;
    slices.reserve(indices.size());
    for (std::size_t idx : indices) {
      try {
        slices.push_back(load_slice(scan.slice_paths[idx], preprocess));
      } catch (const io_error& e) {
        throw io_error("case " + scan.case_id + ": " + e.what());
      } catch (const format_error& e) {
        throw format_error("case " + scan.case_id + ": " + e.what());
      }
    }
    const Tensor scores = scorer(stack_slices(slices));
    if (scores.numel() != indices.size()) {
      throw shape_error("diagnose_case: scorer returned " + std::to_string(scores.numel()) + " scores for " +
                        std::to_string(indices.size()) + " slices");
    }
    averages.push_back(batch_average(scores.data()));
  }
  CaseVerdict verdict = vote(averages, config);
  verdict.case_id = scan.case_id;
  return verdict;
}

}  // namespace ctpvt
