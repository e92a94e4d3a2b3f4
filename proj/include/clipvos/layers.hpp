#pragma once

#include <random>
#include <string>
#include <vector>

#include "clipvos/ops.hpp"

namespace clipvos {

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
};

// Owns every trainable tensor of a model, in creation order. Weights and
// biases draw from U(-1/sqrt(fan_in), 1/sqrt(fan_in)) in double precision so
// float and double models built from one seed hold the same values.
template <typename T>
class ParamRegistry {
 public:
  explicit ParamRegistry(std::uint64_t seed) : rng_(seed) {}

  Tensor<T> uniform(const std::string& name, const Shape& shape, std::size_t fan_in);
  Tensor<T> constant(const std::string& name, const Shape& shape, T value);

  std::vector<Param<T>>& params() { return params_; }
  const std::vector<Param<T>>& params() const { return params_; }

 private:
  Tensor<T> add(const std::string& name, Tensor<T> t);

  std::mt19937_64 rng_;
  std::vector<Param<T>> params_;
};

template <typename T>
struct Conv2d {
  Tensor<T> weight;  // [out x in x k x k]
  Tensor<T> bias;    // [out]
  std::size_t stride = 1;
  std::size_t pad = 0;

  Conv2d() = default;
  Conv2d(ParamRegistry<T>& reg, const std::string& name, std::size_t in, std::size_t out,
         std::size_t kernel, std::size_t stride = 1);
  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, pad); }
};

template <typename T>
struct Linear {
  Tensor<T> weight;  // [out x in]
  Tensor<T> bias;

  Linear() = default;
  Linear(ParamRegistry<T>& reg, const std::string& name, std::size_t in, std::size_t out);
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;

  LayerNorm() = default;
  LayerNorm(ParamRegistry<T>& reg, const std::string& name, std::size_t width);
  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }
};

// Pre-activation residual block: x + conv(relu(conv(relu(x)))), 3x3 convs.
template <typename T>
struct ResBlock {
  Conv2d<T> conv1;
  Conv2d<T> conv2;

  ResBlock() = default;
  ResBlock(ParamRegistry<T>& reg, const std::string& name, std::size_t channels);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

extern template class ParamRegistry<float>;
extern template class ParamRegistry<double>;
extern template struct Conv2d<float>;
extern template struct Conv2d<double>;
extern template struct Linear<float>;
extern template struct Linear<double>;
extern template struct LayerNorm<float>;
extern template struct LayerNorm<double>;
extern template struct ResBlock<float>;
extern template struct ResBlock<double>;

}  // namespace clipvos
