#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctpvt/error.hpp"
#include "ctpvt/tensor.hpp"

namespace ctpvt {

struct AdamWOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.05;

  void validate() const {
    if (!(learning_rate >= 0.0)) throw config_error("adamw: learning rate must be non-negative");
    if (!(beta1 > 0.0 && beta1 < 1.0)) throw config_error("adamw: beta1 must lie in (0,1)");
    if (!(beta2 > 0.0 && beta2 < 1.0)) throw config_error("adamw: beta2 must lie in (0,1)");
    if (!(epsilon > 0.0)) throw config_error("adamw: epsilon must be positive");
    if (!(weight_decay >= 0.0)) throw config_error("adamw: weight decay must be non-negative");
  }
};

/// Moment buffers and step count for a fixed, ordered list of parameters.
template <class T>
struct AdamWState {
  AdamWOptions options;
  std::size_t step = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;

  static AdamWState for_parameters(const std::vector<BasicTensor<T>>& params, AdamWOptions options) {
    options.validate();
    AdamWState state;
    state.options = options;
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.numel(), T(0));
      state.second_moment.emplace_back(p.numel(), T(0));
    }
    return state;
  }
};

/// One AdamW step using each parameter's accumulated gradient (a parameter
/// without a gradient is treated as having a zero gradient):
///   p ← p·(1 − lr·wd)
///   m ← β1·m + (1−β1)·g,  v ← β2·v + (1−β2)·g²
///   p ← p − lr · m̂ / (√v̂ + ε),  with bias-corrected m̂, v̂.
template <class T>
void adamw_step(std::vector<BasicTensor<T>>& params, AdamWState<T>& state) {
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw shape_error("adamw_step: state tracks " + std::to_string(state.first_moment.size()) +
                      " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].size() != params[i].numel() ||
        state.second_moment[i].size() != params[i].numel()) {
      throw shape_error("adamw_step: moment buffers of parameter " + std::to_string(i) +
                        " do not match shape " + shape_string(params[i].shape()));
    }
  }
  const AdamWOptions& o = state.options;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(o.beta1, t);
  const double bc2 = 1.0 - std::pow(o.beta2, t);
  const double decay = 1.0 - o.learning_rate * o.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].mutable_data();
    const auto grad = params[i].grad();
    const bool has_grad = !grad.empty();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = has_grad ? static_cast<double>(grad[j]) : 0.0;
      const double mj = o.beta1 * static_cast<double>(m[j]) + (1.0 - o.beta1) * g;
      const double vj = o.beta2 * static_cast<double>(v[j]) + (1.0 - o.beta2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update = (mj / bc1) / (std::sqrt(vj / bc2) + o.epsilon);
      double p = static_cast<double>(values[j]);
      if (o.learning_rate != 0.0) p = p * decay - o.learning_rate * update;
      values[j] = static_cast<T>(p);
    }
  }
}

}  // namespace ctpvt
