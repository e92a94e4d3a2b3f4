#include "clipvos/tensor.hpp"

#include <atomic>
#include <cstdlib>
#include <sstream>

namespace clipvos {

namespace {

bool finite_checks_from_env() {
  const char* env = std::getenv("CLIPVOS_CHECK_FINITE");
  return env == nullptr || std::string(env) != "0";
}

std::atomic<bool> g_finite_checks{finite_checks_from_env()};
thread_local GradTape* t_active_tape = nullptr;

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << " x ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled); }
bool finite_checks_enabled() { return g_finite_checks.load(std::memory_order_relaxed); }

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<TensorNode<T>>()) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor: zero-sized dimension in " + shape_str(shape));
  }
  if (clipvos::numel(shape) != data.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " needs " +
                     std::to_string(clipvos::numel(shape)) + " values, got " +
                     std::to_string(data.size()));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(const Shape& shape, bool requires_grad) {
  return Tensor(shape, std::vector<T>(clipvos::numel(shape), T(0)), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(const Shape& shape, T value, bool requires_grad) {
  return Tensor(shape, std::vector<T>(clipvos::numel(shape), value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor(Shape{1}, std::vector<T>{value});
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(shape()));
  }
  return node_->shape[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not a scalar");
  return node_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw ShapeError("at: index rank mismatch for " + shape_str(shape()));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= node_->shape[axis]) throw ShapeError("at: index out of range for " + shape_str(shape()));
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->data[flat];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  Tensor out;
  out.node_ = std::make_shared<TensorNode<T>>();
  out.node_->shape = node_->shape;
  out.node_->data = node_->data;
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor out = detach();
  out.node_->requires_grad = node_->requires_grad;
  return out;
}

GradTape* GradTape::active() { return t_active_tape; }

template <typename T>
void GradTape::backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    steps_.clear();
    return;
  }
  loss.node()->grad.assign(1, T(1));
  // Closures may be recorded by nothing while replaying; detach first so an
  // exception mid-way still leaves the tape empty.
  auto steps = std::move(steps_);
  steps_.clear();
  for (auto it = steps.rbegin(); it != steps.rend(); ++it) (*it)();
}

TapeScope::TapeScope(GradTape& tape) : previous_(t_active_tape) { t_active_tape = &tape; }
TapeScope::~TapeScope() { t_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(t_active_tape) { t_active_tape = nullptr; }
NoGradScope::~NoGradScope() { t_active_tape = previous_; }

template class Tensor<float>;
template class Tensor<double>;
template void GradTape::backward<float>(const Tensor<float>&);
template void GradTape::backward<double>(const Tensor<double>&);

}  // namespace clipvos
