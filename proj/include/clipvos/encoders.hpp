#pragma once

#include <vector>

#include "clipvos/config.hpp"
#include "clipvos/layers.hpp"

namespace clipvos {

template <typename T>
struct FrameFeatures {
  Tensor<T> k;        // [C_k x h x w]
  Tensor<T> k_intra;  // [C_k' x h x w]
  // Coarse to fine: strided trunk features down to stride 2, then the input
  // image itself as the full-resolution skip.
  std::vector<Tensor<T>> skips;
};

// Batched key-encoder output; the leading axis of every tensor is the frame.
template <typename T>
struct KeyFeatures {
  Tensor<T> k;
  Tensor<T> k_intra;
  std::vector<Tensor<T>> skips;

  std::size_t batch() const { return k.dim(0); }
  KeyFeatures slice(std::size_t begin, std::size_t end) const;
  FrameFeatures<T> frame(std::size_t i) const;
};

template <typename T>
class KeyEncoder {
 public:
  KeyEncoder(ParamRegistry<T>& reg, const EncoderConfig& config);

  // frames: [B x 3 x H x W] with H and W divisible by the feature stride.
  KeyFeatures<T> operator()(const Tensor<T>& frames) const;

 private:
  EncoderConfig config_;
  std::vector<Conv2d<T>> stage_conv_;
  std::vector<ResBlock<T>> stage_block_;
  Conv2d<T> key_head_;
  Conv2d<T> intra_head_;
};

template <typename T>
class ValueEncoder {
 public:
  ValueEncoder(ParamRegistry<T>& reg, const EncoderConfig& config);

  // One row per (frame, object) pair: frames [B x 3 x H x W], target and
  // others [B x 1 x H x W] in [0, 1], k [B x C_k x h x w]. Returns
  // [B x C_v x h x w]. `others` is ignored when the others channel is off.
  Tensor<T> operator()(const Tensor<T>& frames, const Tensor<T>& target, const Tensor<T>& others,
                       const Tensor<T>& k) const;

  std::size_t calls() const { return calls_; }

 private:
  EncoderConfig config_;
  std::vector<Conv2d<T>> stage_conv_;
  Conv2d<T> fuse_;
  ResBlock<T> block_;
  mutable std::size_t calls_ = 0;
};

extern template struct KeyFeatures<float>;
extern template struct KeyFeatures<double>;
extern template class KeyEncoder<float>;
extern template class KeyEncoder<double>;
extern template class ValueEncoder<float>;
extern template class ValueEncoder<double>;

}  // namespace clipvos
