#include "clipvos/encoders.hpp"

#include <string>

namespace clipvos {

template <typename T>
KeyFeatures<T> KeyFeatures<T>::slice(std::size_t begin, std::size_t end) const {
  KeyFeatures out;
  out.k = clipvos::slice(k, 0, begin, end);
  out.k_intra = clipvos::slice(k_intra, 0, begin, end);
  for (const auto& s : skips) out.skips.push_back(clipvos::slice(s, 0, begin, end));
  return out;
}

template <typename T>
FrameFeatures<T> KeyFeatures<T>::frame(std::size_t i) const {
  auto drop_batch = [i](const Tensor<T>& t) {
    Shape s(t.shape().begin() + 1, t.shape().end());
    return reshape(clipvos::slice(t, 0, i, i + 1), s);
  };
  FrameFeatures<T> out;
  out.k = drop_batch(k);
  out.k_intra = drop_batch(k_intra);
  for (const auto& s : skips) out.skips.push_back(drop_batch(s));
  return out;
}

template <typename T>
KeyEncoder<T>::KeyEncoder(ParamRegistry<T>& reg, const EncoderConfig& config) : config_(config) {
  config_.validate();
  const std::size_t n = config_.downsample_stages();
  std::size_t in = 3;
  for (std::size_t s = 0; s <= n; ++s) {
    const std::size_t out = config_.key_stage_channels[s];
    const std::string name = "key.stage" + std::to_string(s);
    stage_conv_.emplace_back(reg, name + ".conv", in, out, 3, s < n ? 2 : 1);
    stage_block_.emplace_back(reg, name + ".block", out);
    in = out;
  }
  key_head_ = Conv2d<T>(reg, "key.head", in, config_.key_channels, 1);
  if (config_.intra_key_shares_trunk) {
    intra_head_ = Conv2d<T>(reg, "key.intra_head", in, config_.intra_key_channels, 1);
  } else {
    intra_head_ = Conv2d<T>(reg, "key.intra_head", config_.key_stage_channels[n - 1],
                            config_.intra_key_channels, 3);
  }
}

template <typename T>
KeyFeatures<T> KeyEncoder<T>::operator()(const Tensor<T>& frames) const {
  if (frames.rank() != 4 || frames.dim(1) != 3) {
    throw ShapeError("encode_key: expected [B x 3 x H x W] frames, got " + shape_str(frames.shape()));
  }
  const std::size_t stride = config_.feature_stride;
  if (frames.dim(2) % stride != 0 || frames.dim(3) % stride != 0) {
    throw ShapeError("encode_key: image size " + std::to_string(frames.dim(2)) + "x" +
                     std::to_string(frames.dim(3)) + " is not divisible by the feature stride " +
                     std::to_string(stride) + "; pad frames to a multiple of it");
  }
  const std::size_t n = config_.downsample_stages();
  KeyFeatures<T> out;
  std::vector<Tensor<T>> strided;
  Tensor<T> x = frames;
  for (std::size_t s = 0; s <= n; ++s) {
    x = stage_block_[s](relu(stage_conv_[s](x)));
    if (s < n) strided.push_back(x);
  }
  out.k = key_head_(x);
  out.k_intra = config_.intra_key_shares_trunk ? intra_head_(x) : intra_head_(strided.back());
  // Strides feature_stride/2 .. 2, then the image.
  for (std::size_t s = n - 1; s-- > 0;) out.skips.push_back(strided[s]);
  out.skips.push_back(frames);
  return out;
}

template <typename T>
ValueEncoder<T>::ValueEncoder(ParamRegistry<T>& reg, const EncoderConfig& config) : config_(config) {
  config_.validate();
  std::size_t in = config_.use_others_mask ? 5 : 4;
  for (std::size_t s = 0; s < config_.value_stage_channels.size(); ++s) {
    const std::size_t out = config_.value_stage_channels[s];
    stage_conv_.emplace_back(reg, "value.stage" + std::to_string(s), in, out, 3, 2);
    in = out;
  }
  fuse_ = Conv2d<T>(reg, "value.fuse", in + config_.key_channels, config_.value_channels, 1);
  block_ = ResBlock<T>(reg, "value.block", config_.value_channels);
}

template <typename T>
Tensor<T> ValueEncoder<T>::operator()(const Tensor<T>& frames, const Tensor<T>& target,
                                      const Tensor<T>& others, const Tensor<T>& k) const {
  const Shape mask_shape = {frames.dim(0), 1, frames.dim(2), frames.dim(3)};
  if (target.shape() != mask_shape) {
    throw ShapeError("encode_value: target mask " + shape_str(target.shape()) + " vs frames " +
                     shape_str(frames.shape()));
  }
  std::vector<Tensor<T>> parts = {frames, target};
  if (config_.use_others_mask) {
    if (others.shape() != mask_shape) {
      throw ShapeError("encode_value: others mask " + shape_str(others.shape()) + " vs frames " +
                       shape_str(frames.shape()));
    }
    parts.push_back(others);
  }
  ++calls_;
  Tensor<T> x = concat(parts, 1);
  for (const auto& conv : stage_conv_) x = relu(conv(x));
  if (x.dim(0) != k.dim(0) || x.dim(2) != k.dim(2) || x.dim(3) != k.dim(3)) {
    throw ShapeError("encode_value: key features " + shape_str(k.shape()) + " vs value features " +
                     shape_str(x.shape()));
  }
  return block_(fuse_(concat<T>({x, k}, 1)));
}

template struct KeyFeatures<float>;
template struct KeyFeatures<double>;
template class KeyEncoder<float>;
template class KeyEncoder<double>;
template class ValueEncoder<float>;
template class ValueEncoder<double>;

}  // namespace clipvos
