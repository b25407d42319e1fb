#pragma once

// Training loop (±1-target MSE regression over sampled slice batches, AdamW)
// and the voting-based evaluation harness.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ctpvt/adamw.hpp"
#include "ctpvt/checkpoint.hpp"
#include "ctpvt/dataset.hpp"
#include "ctpvt/error.hpp"
#include "ctpvt/metrics.hpp"
#include "ctpvt/ops.hpp"
#include "ctpvt/preprocess.hpp"
#include "ctpvt/pvt_model.hpp"
#include "ctpvt/rng.hpp"
#include "ctpvt/sampling.hpp"

namespace ctpvt {

struct TrainConfig {
  std::size_t epochs = 60;
  AdamWOptions optimizer;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 10;  // epochs; 0 disables periodic checkpoints
  std::size_t val_rounds = 3;
  double sigma_fraction = kDefaultSigmaFraction;

  void validate() const {
    if (epochs == 0) throw config_error("train.epochs must be positive");
    if (val_rounds == 0) throw config_error("train.val_rounds must be positive");
    optimizer.validate();
  }
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  std::optional<double> val_macro_f1;
};

struct TrainResult {
  std::vector<EpochRecord> curve;
  std::size_t best_epoch = 0;
  std::optional<double> best_val_macro_f1;
  std::vector<NamedTensor> best_weights;  // deep copy, checkpoint order
};

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(std::size_t epoch, const PvtClassifier<float>&)> on_checkpoint;
};

inline float target_for(Label label) {
  if (label == Label::unknown) throw std::invalid_argument("training case has no label");
  return label == Label::positive ? 1.0f : -1.0f;
}

/// One optimisation step on a batch: forward under a fresh tape, MSE against
/// `targets`, backward, AdamW update, gradients cleared. Returns the loss
/// before the update.
inline double train_step(PvtClassifier<float>& model, std::vector<Tensor>& params, AdamWState<float>& state,
                         const Tensor& batch, const Tensor& targets) {
  Tape tape;
  Tensor loss;
  {
    TapeScope<float> scope(tape);
    loss = mse_loss(model.forward(batch), targets);
  }
  const double value = loss.item();
  if (!std::isfinite(value)) throw numeric_error("non-finite loss");
  backward(loss, tape);
  adamw_step(params, state);
  model.zero_grad();
  return value;
}

/// Loads and stacks the slices at `indices`.
inline Tensor load_batch(const ScanCase& scan, const std::vector<std::size_t>& indices, const PreprocessSpec& spec) {
  std::vector<Tensor> slices;
  slices.reserve(indices.size());
  for (std::size_t idx : indices) {
    try {
      slices.push_back(load_slice(scan.slice_paths.at(idx), spec));
    } catch (const io_error& e) {
      throw io_error("case " + scan.case_id + ": " + e.what());
    } catch (const format_error& e) {
      throw format_error("case " + scan.case_id + ": " + e.what());
    }
  }
  return stack_slices(slices);
}

/// Diagnoses every labeled case and scores the verdicts. Unlabeled cases are
/// listed in `excluded_cases`. Each case's sampler is seeded from (seed,
/// case id), and verdicts are reported in case-id order.
template <class Scorer>
EvalReport evaluate(const std::vector<ScanCase>& cases, Scorer&& scorer, const VotingConfig& voting,
                    const PreprocessSpec& preprocess, double sigma_fraction, std::uint64_t seed) {
  std::vector<const ScanCase*> order;
  std::vector<std::string> excluded;
  for (const auto& c : cases) {
    if (c.label == Label::unknown) {
      excluded.push_back(c.case_id);
    } else {
      order.push_back(&c);
    }
  }
  std::stable_sort(order.begin(), order.end(),
                   [](const ScanCase* a, const ScanCase* b) { return a->case_id < b->case_id; });
  std::vector<CaseVerdict> verdicts;
  std::vector<Label> truth;
  for (const ScanCase* c : order) {
    SliceSampler sampler(case_seed(seed, c->case_id), sigma_fraction);
    verdicts.push_back(diagnose_case(*c, scorer, sampler, voting, preprocess));
    truth.push_back(c->label);
  }
  EvalReport report = summarize(std::move(verdicts), truth);
  report.excluded_cases = std::move(excluded);
  return report;
}

inline EvalReport evaluate_model(const std::vector<ScanCase>& cases, const PvtClassifier<float>& model,
                                 const VotingConfig& voting, const PreprocessSpec& preprocess,
                                 double sigma_fraction, std::uint64_t seed) {
  return evaluate(
      cases, [&model](const Tensor& batch) { return model.forward(batch); }, voting, preprocess, sigma_fraction,
      seed);
}

inline std::vector<NamedTensor> snapshot(const PvtClassifier<float>& model) {
  std::vector<NamedTensor> out;
  for (const auto& p : model.named_parameters()) out.push_back({p.name, p.tensor.clone()});
  return out;
}

/// Trains in place. Each step takes one case (order reshuffled every epoch),
/// samples a batch of slices from it, regresses every slice score to +1
/// (positive) or −1 (negative) and applies AdamW. After each epoch the
/// validation set, when non-empty, is scored with `val_rounds` voting rounds;
/// the best-scoring epoch (earliest on ties) is kept in `best_weights`.
inline TrainResult train(PvtClassifier<float>& model, const std::vector<ScanCase>& train_set,
                         const std::vector<ScanCase>& val_set, const PreprocessSpec& preprocess,
                         const TrainConfig& config, const TrainHooks& hooks = {}) {
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  const bool has_pos = std::any_of(train_set.begin(), train_set.end(),
                                   [](const ScanCase& c) { return c.label == Label::positive; });
  const bool has_neg = std::any_of(train_set.begin(), train_set.end(),
                                   [](const ScanCase& c) { return c.label == Label::negative; });
  if (!has_pos || !has_neg) throw std::invalid_argument("train: training set needs both classes");
  for (const auto& c : train_set) target_for(c.label);

  std::vector<Tensor> params = model.parameters();
  AdamWState<float> state = AdamWState<float>::for_parameters(params, config.optimizer);
  Rng shuffle_rng(derive_seed(config.seed, "shuffle"));
  SliceSampler sampler(derive_seed(config.seed, "sampler"), config.sigma_fraction);
  const VotingConfig val_voting{config.val_rounds};

  TrainResult result;
  std::vector<std::size_t> order(train_set.size());
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(shuffle_rng)]);
    }
    double loss_sum = 0.0;
    for (std::size_t idx : order) {
      const ScanCase& scan = train_set[idx];
      const auto indices = sample_indices(scan.slice_count(), sampler);
      const Tensor batch = load_batch(scan, indices, preprocess);
      const Tensor targets({indices.size()}, target_for(scan.label));
      ++step;
      try {
        loss_sum += train_step(model, params, state, batch, targets);
      } catch (const numeric_error&) {
        throw numeric_error("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(step) + " (case " + scan.case_id + ")");
      }
    }
    EpochRecord record{epoch, loss_sum / static_cast<double>(order.size()), std::nullopt};
    if (!val_set.empty()) {
      const EvalReport report = evaluate_model(val_set, model, val_voting, preprocess, config.sigma_fraction,
                                               derive_seed(config.seed, "validation"));
      record.val_macro_f1 = report.macro_f1;
    }
    const bool better = val_set.empty() ||
                        !result.best_val_macro_f1 || *record.val_macro_f1 > *result.best_val_macro_f1;
    if (better) {
      result.best_epoch = epoch;
      result.best_val_macro_f1 = record.val_macro_f1;
      result.best_weights = snapshot(model);
    }
    result.curve.push_back(record);
    if (hooks.on_epoch) hooks.on_epoch(record);
    if (hooks.on_checkpoint && config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
      hooks.on_checkpoint(epoch, model);
    }
  }
  return result;
}

}  // namespace ctpvt
