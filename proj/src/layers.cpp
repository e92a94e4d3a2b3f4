#include "clipvos/layers.hpp"

#include <cmath>

namespace clipvos {

template <typename T>
Tensor<T> ParamRegistry<T>::add(const std::string& name, Tensor<T> t) {
  for (const auto& p : params_) {
    if (p.name == name) throw std::logic_error("duplicate parameter name " + name);
  }
  t.set_requires_grad(true);
  params_.push_back({name, t});
  return t;
}

template <typename T>
Tensor<T> ParamRegistry<T>::uniform(const std::string& name, const Shape& shape, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> v(numel(shape));
  for (T& x : v) x = static_cast<T>(dist(rng_));
  return add(name, Tensor<T>(shape, std::move(v)));
}

template <typename T>
Tensor<T> ParamRegistry<T>::constant(const std::string& name, const Shape& shape, T value) {
  return add(name, Tensor<T>::full(shape, value));
}

template <typename T>
Conv2d<T>::Conv2d(ParamRegistry<T>& reg, const std::string& name, std::size_t in, std::size_t out,
                  std::size_t kernel, std::size_t stride_)
    : stride(stride_), pad(kernel / 2) {
  const std::size_t fan_in = in * kernel * kernel;
  weight = reg.uniform(name + ".weight", {out, in, kernel, kernel}, fan_in);
  bias = reg.uniform(name + ".bias", {out}, fan_in);
}

template <typename T>
Linear<T>::Linear(ParamRegistry<T>& reg, const std::string& name, std::size_t in, std::size_t out) {
  weight = reg.uniform(name + ".weight", {out, in}, in);
  bias = reg.uniform(name + ".bias", {out}, in);
}

template <typename T>
LayerNorm<T>::LayerNorm(ParamRegistry<T>& reg, const std::string& name, std::size_t width) {
  gamma = reg.constant(name + ".gamma", {width}, T(1));
  beta = reg.constant(name + ".beta", {width}, T(0));
}

template <typename T>
ResBlock<T>::ResBlock(ParamRegistry<T>& reg, const std::string& name, std::size_t channels)
    : conv1(reg, name + ".conv1", channels, channels, 3), conv2(reg, name + ".conv2", channels, channels, 3) {}

template <typename T>
Tensor<T> ResBlock<T>::operator()(const Tensor<T>& x) const {
  return add(x, conv2(relu(conv1(relu(x)))));
}

template class ParamRegistry<float>;
template class ParamRegistry<double>;
template struct Conv2d<float>;
template struct Conv2d<double>;
template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template struct ResBlock<float>;
template struct ResBlock<double>;

}  // namespace clipvos
