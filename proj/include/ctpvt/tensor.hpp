#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ctpvt/error.hpp"

namespace ctpvt {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

template <class T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool leaf = true;

  T* grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad.data();
  }
};

inline void check_extents(const Shape& shape) {
  for (std::size_t e : shape) {
    if (e == 0) throw shape_error("tensor extents must be positive, got " + shape_string(shape));
  }
}

}  // namespace detail

/// Dense row-major tensor handle. Copies share storage; use clone() for a
/// deep copy. The gradient buffer, when present, has the shape of the data.
template <class T>
class BasicTensor {
 public:
  using value_type = T;
  using Node = detail::TensorNode<T>;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T(0)) : node_(std::make_shared<Node>()) {
    detail::check_extents(shape);
    node_->data.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
  }

  BasicTensor(Shape shape, std::vector<T> values) : node_(std::make_shared<Node>()) {
    detail::check_extents(shape);
    if (values.size() != shape_numel(shape)) {
      throw shape_error("tensor of shape " + shape_string(shape) + " needs " +
                        std::to_string(shape_numel(shape)) + " values, got " +
                        std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(values);
  }

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape), T(0)); }
  static BasicTensor ones(Shape shape) { return BasicTensor(std::move(shape), T(1)); }
  static BasicTensor scalar(T value) { return BasicTensor(Shape{1}, value); }

  /// Random normal entries drawn in row-major order.
  template <class Rng>
  static BasicTensor randn(Shape shape, Rng& rng, double stddev = 1.0) {
    BasicTensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (T& v : t.node_->data) v = static_cast<T>(dist(rng));
    return t;
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t extent(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  /// Writable view of the values; intended for filling leaves and parameters.
  std::span<T> mutable_data() { return node_->data; }
  const T* raw() const { return node_->data.data(); }

  T item() const {
    if (numel() != 1) throw shape_error("item() on tensor of shape " + shape_string(shape()));
    return node_->data[0];
  }
  T operator[](std::size_t flat) const { return node_->data[flat]; }

  bool has_grad() const { return defined() && !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad() const {
    if (defined()) node_->grad.clear();
  }

  bool requires_grad() const { return defined() && node_->requires_grad; }
  BasicTensor& set_requires_grad(bool on = true) {
    node_->requires_grad = on;
    return *this;
  }
  bool is_leaf() const { return node_->leaf; }

  BasicTensor clone() const {
    BasicTensor copy(shape(), node_->data);
    copy.node_->requires_grad = node_->requires_grad;
    return copy;
  }

  bool same_storage(const BasicTensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

using Tensor = BasicTensor<float>;

/// Ordered record of differentiable operations. Confined to one thread.
template <class T>
class BasicTape {
 public:
  using Node = detail::TensorNode<T>;
  /// Receives the gradient of the recorded output and accumulates into inputs.
  using BackwardFn = std::function<void(const T* output_grad)>;

  struct Entry {
    std::shared_ptr<Node> output;
    std::string_view op;
    BackwardFn backward;
  };

  void record(const BasicTensor<T>& output, std::string_view op, BackwardFn fn) {
    output.node()->requires_grad = true;
    output.node()->leaf = false;
    entries_.push_back(Entry{output.node(), op, std::move(fn)});
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }
  const std::vector<Entry>& entries() const { return entries_; }

  bool produced(const BasicTensor<T>& t) const {
    for (const auto& e : entries_) {
      if (e.output == t.node()) return true;
    }
    return false;
  }

 private:
  std::vector<Entry> entries_;
};

using Tape = BasicTape<float>;

namespace detail {
template <class T>
inline thread_local BasicTape<T>* active_tape_slot = nullptr;
}

/// Tape on which operations of this thread are currently being recorded.
template <class T>
BasicTape<T>* active_tape() noexcept {
  return detail::active_tape_slot<T>;
}

/// Makes `tape` the recording target for the current thread until destroyed.
template <class T>
class TapeScope {
 public:
  explicit TapeScope(BasicTape<T>& tape) : previous_(detail::active_tape_slot<T>) {
    detail::active_tape_slot<T> = &tape;
  }
  ~TapeScope() { detail::active_tape_slot<T> = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  BasicTape<T>* previous_;
};

/// Reverse-mode sweep. Every entry is visited once in reverse recording order;
/// leaf gradients accumulate across calls, intermediate gradients are released
/// after their entry has been processed.
template <class T>
void backward(const BasicTensor<T>& loss, BasicTape<T>& tape) {
  if (!loss.defined() || loss.numel() != 1) {
    throw shape_error("backward() needs a scalar loss, got " +
                      (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
  }
  if (!tape.produced(loss)) throw std::invalid_argument("loss was not recorded on this tape");

  auto& loss_node = *loss.node();
  loss_node.grad.assign(1, T(1));
  const auto& entries = tape.entries();
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
    auto& out = *it->output;
    if (out.grad.empty()) continue;
    it->backward(out.grad.data());
    if (!out.leaf) {
      out.grad.clear();
      out.grad.shrink_to_fit();
    }
  }
}

}  // namespace ctpvt
