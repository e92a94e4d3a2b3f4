#pragma once

#include <vector>

#include "clipvos/config.hpp"
#include "clipvos/layers.hpp"

namespace clipvos {

// Upsampling decoder. Each stage halves the stride: 1x1 reduce, bilinear 2x,
// add a 3x3 projection of the matching skip feature, residual block. A 3x3
// head emits one logit channel at image resolution.
template <typename T>
class Decoder {
 public:
  Decoder(ParamRegistry<T>& reg, const EncoderConfig& config);

  // v: [objects*F x C_v x h x w], object-major. skips: the key encoder's
  // per-frame skips [F x C_s x H_s x W_s], coarse to fine. Skip projections
  // are computed once per frame and shared by all objects.
  // Returns logits [objects*F x 1 x H x W].
  Tensor<T> operator()(const Tensor<T>& v, const std::vector<Tensor<T>>& skips, std::size_t objects) const;

  std::size_t calls() const { return calls_; }

 private:
  Conv2d<T> in_conv_;
  ResBlock<T> in_block_;
  std::vector<Conv2d<T>> reduce_;
  std::vector<Conv2d<T>> skip_conv_;
  std::vector<ResBlock<T>> block_;
  Conv2d<T> head_;
  mutable std::size_t calls_ = 0;
};

extern template class Decoder<float>;
extern template class Decoder<double>;

}  // namespace clipvos
