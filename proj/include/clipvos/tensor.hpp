#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace clipvos {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Raised by every op whose operand shapes do not conform.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Finite-value checking after each forward op. On by default; the
// CLIPVOS_CHECK_FINITE=0 environment variable or set_finite_checks(false)
// turns it off.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
};

// Shared handle to an immutable value. Copies alias the same node, so a
// parameter handed to several layers accumulates one gradient.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, T value, bool requires_grad = false);
  static Tensor scalar(T value);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  // Parameter updates and in-place initialization only.
  std::span<T> mutable_data() { return node_->data; }
  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  // Same values, cut from the gradient graph.
  Tensor detach() const;
  Tensor clone() const;
  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(node_->data.begin(), node_->data.end());
    return Tensor<U>(node_->shape, std::move(out), node_->requires_grad);
  }

  TensorNode<T>* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

// Reverse-mode tape. While a TapeScope is active on the current thread every
// op whose inputs require gradients records a backward closure here.
class GradTape {
 public:
  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  void record(std::function<void()> fn) { steps_.push_back(std::move(fn)); }
  std::size_t size() const { return steps_.size(); }
  void clear() { steps_.clear(); }

  // Seeds d(loss)/d(loss) = 1, replays the tape in reverse and clears it.
  template <typename T>
  void backward(const Tensor<T>& loss);

  static GradTape* active();

 private:
  friend class TapeScope;
  friend class NoGradScope;
  std::vector<std::function<void()>> steps_;
};

class TapeScope {
 public:
  explicit TapeScope(GradTape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape* previous_;
};

class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  GradTape* previous_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template void GradTape::backward<float>(const Tensor<float>&);
extern template void GradTape::backward<double>(const Tensor<double>&);

}  // namespace clipvos
