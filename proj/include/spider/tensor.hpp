#ifndef SPIDER_TENSOR_HPP
#define SPIDER_TENSOR_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "spider/errors.hpp"

namespace spider {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

// Strict numeric mode: when on, every op output and every gradient buffer
// written during backward is scanned for NaN/inf. On by default in tests,
// off for long training runs.
inline bool& strict_numeric_mode() {
  thread_local bool strict = false;
  return strict;
}

class StrictScope {
 public:
  explicit StrictScope(bool on) : prev_(strict_numeric_mode()) {
    strict_numeric_mode() = on;
  }
  ~StrictScope() { strict_numeric_mode() = prev_; }
  StrictScope(const StrictScope&) = delete;
  StrictScope& operator=(const StrictScope&) = delete;

 private:
  bool prev_;
};

// Dense row-major N-D array with an optional gradient buffer of equal shape.
template <class T>
class Tensor {
 public:
  Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(check_numel(shape_), fill) {}

  Tensor(Shape shape, std::vector<T> values)
      : shape_(std::move(shape)), data_(std::move(values)) {
    if (static_cast<int64_t>(data_.size()) != shape_numel(shape_))
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
  }

  const Shape& shape() const { return shape_; }
  int64_t dim(size_t i) const { return shape_.at(i); }
  size_t rank() const { return shape_.size(); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) {
    requires_grad_ = on;
    if (on && grad_.empty()) grad_.assign(data_.size(), T(0));
    if (!on) grad_.clear();
  }

  T* grad() {
    if (!requires_grad_) throw ContractError("tensor has no gradient buffer");
    return grad_.data();
  }
  const T* grad() const {
    if (!requires_grad_) throw ContractError("tensor has no gradient buffer");
    return grad_.data();
  }
  std::vector<T>& grad_vec() {
    if (!requires_grad_) throw ContractError("tensor has no gradient buffer");
    return grad_;
  }

  void zero_grad() {
    if (requires_grad_) std::fill(grad_.begin(), grad_.end(), T(0));
  }

  T value() const {
    if (numel() != 1) throw ContractError("value() requires a scalar tensor, got " + shape_str(shape_));
    return data_[0];
  }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  bool grad_all_finite() const {
    for (T v : grad_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

 private:
  static size_t check_numel(const Shape& s) {
    for (int64_t e : s)
      if (e <= 0) throw DimensionError("non-positive extent in shape " + shape_str(s));
    return static_cast<size_t>(shape_numel(s));
  }

  Shape shape_;
  std::vector<T> data_;
  std::vector<T> grad_;
  bool requires_grad_ = false;
};

template <class T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

template <class T>
TensorPtr<T> make_tensor(Shape shape, T fill = T(0)) {
  return std::make_shared<Tensor<T>>(std::move(shape), fill);
}

template <class T>
TensorPtr<T> make_tensor(Shape shape, std::vector<T> values) {
  return std::make_shared<Tensor<T>>(std::move(shape), std::move(values));
}

template <class T>
TensorPtr<T> make_param(Shape shape, T fill = T(0)) {
  auto t = make_tensor<T>(std::move(shape), fill);
  t->set_requires_grad(true);
  return t;
}

// Ordered record of executed differentiable operations. Backward replays the
// record in reverse, visiting every node exactly once; gradient accumulation
// is additive so a value consumed k times receives the sum of k contributions.
template <class T>
class Tape {
 public:
  struct Node {
    const char* op;
    std::function<void()> backward;
    // tensors whose grad buffers this node writes; scanned in strict mode
    std::vector<TensorPtr<T>> writes;
    // the tensor this node produced; its grad resets at each backward start
    // so repeated backward calls accumulate only into leaves
    TensorPtr<T> output;
  };

  static Tape*& current() {
    thread_local Tape* cur = nullptr;
    return cur;
  }

  static bool recording_enabled() {
    return current() != nullptr && !no_grad_depth();
  }

  static int& no_grad_depth() {
    thread_local int depth = 0;
    return depth;
  }

  void record(const char* op, std::vector<TensorPtr<T>> writes, TensorPtr<T> output,
              std::function<void()> bwd) {
    nodes_.push_back(Node{op, std::move(bwd), std::move(writes), std::move(output)});
  }

  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  void backward(const TensorPtr<T>& loss) {
    if (loss->numel() != 1)
      throw ContractError("backward() requires a scalar loss, got " + shape_str(loss->shape()));
    if (!loss->requires_grad())
      throw ContractError("backward() loss was not produced under an active tape");
    for (auto& node : nodes_)
      if (node.output) node.output->zero_grad();
    loss->grad()[0] += T(1);
    const bool strict = strict_numeric_mode();
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      it->backward();
      if (strict) {
        for (const auto& t : it->writes)
          if (t->requires_grad() && !t->grad_all_finite())
            throw NumericError(std::string("non-finite gradient from backward of ") + it->op);
      }
    }
  }

 private:
  std::vector<Node> nodes_;
};

// Installs a tape as the active one for the current thread.
template <class T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>* tape) : prev_(Tape<T>::current()) {
    Tape<T>::current() = tape;
  }
  ~TapeScope() { Tape<T>::current() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* prev_;
};

// Suppresses recording (and requires_grad propagation) for both the float and
// double tapes while alive. Used for the gradient-isolated prompt stream and
// for inference.
class NoGradGuard {
 public:
  NoGradGuard() {
    ++Tape<float>::no_grad_depth();
    ++Tape<double>::no_grad_depth();
  }
  ~NoGradGuard() {
    --Tape<float>::no_grad_depth();
    --Tape<double>::no_grad_depth();
  }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <class T>
void check_finite_or_throw(const Tensor<T>& t, const char* op) {
  if (!t.all_finite())
    throw NumericError(std::string("non-finite value produced by ") + op);
}

}  // namespace spider

#endif
