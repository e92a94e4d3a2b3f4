#include "clipvos/decoder.hpp"

#include <string>

namespace clipvos {

template <typename T>
Decoder<T>::Decoder(ParamRegistry<T>& reg, const EncoderConfig& config) {
  config.validate();
  const std::size_t n = config.downsample_stages();
  const auto& width = config.decoder_channels;
  in_conv_ = Conv2d<T>(reg, "decoder.in_conv", config.value_channels, width[0], 3);
  in_block_ = ResBlock<T>(reg, "decoder.in_block", width[0]);
  for (std::size_t s = 0; s < n; ++s) {
    // Stage s consumes the stride feature_stride / 2^(s+1) skip; the last is the image.
    const std::size_t skip_channels = s + 1 < n ? config.key_stage_channels[n - 2 - s] : 3;
    const std::string name = "decoder.stage" + std::to_string(s);
    reduce_.emplace_back(reg, name + ".reduce", width[s], width[s + 1], 1);
    skip_conv_.emplace_back(reg, name + ".skip", skip_channels, width[s + 1], 3);
    block_.emplace_back(reg, name + ".block", width[s + 1]);
  }
  head_ = Conv2d<T>(reg, "decoder.head", width[n], 1, 3);
}

template <typename T>
Tensor<T> Decoder<T>::operator()(const Tensor<T>& v, const std::vector<Tensor<T>>& skips,
                                 std::size_t objects) const {
  if (skips.size() != reduce_.size()) {
    throw ShapeError("decode: expected " + std::to_string(reduce_.size()) + " skip features, got " +
                     std::to_string(skips.size()));
  }
  if (v.rank() != 4 || objects == 0 || v.dim(0) != objects * skips.front().dim(0)) {
    throw ShapeError("decode: values " + shape_str(v.shape()) + " vs " + std::to_string(objects) +
                     " objects over skips " + shape_str(skips.front().shape()));
  }
  ++calls_;
  Tensor<T> x = in_block_(in_conv_(v));
  for (std::size_t s = 0; s < reduce_.size(); ++s) {
    const Tensor<T>& skip = skips[s];
    if (skip.rank() != 4 || skip.dim(2) != 2 * x.dim(2) || skip.dim(3) != 2 * x.dim(3)) {
      throw ShapeError("decode: skip " + shape_str(skip.shape()) + " does not match the upsampled " +
                       shape_str(x.shape()));
    }
    x = upsample_bilinear_2x(reduce_[s](x));
    Tensor<T> proj = skip_conv_[s](skip);
    if (objects > 1) proj = concat(std::vector<Tensor<T>>(objects, proj), 0);
    x = block_[s](add(x, proj));
  }
  return head_(relu(x));
}

template class Decoder<float>;
template class Decoder<double>;

}  // namespace clipvos
