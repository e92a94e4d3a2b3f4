#pragma once

#include <filesystem>
#include <memory>
#include <optional>

#include "clipvos/config.hpp"
#include "clipvos/decoder.hpp"
#include "clipvos/encoders.hpp"
#include "clipvos/icr.hpp"
#include "clipvos/memory.hpp"
#include "clipvos/pmm.hpp"

namespace clipvos {

struct InferenceOptions {
  std::optional<std::size_t> top_k;
  bool icr = true;  // only effective when the model has refinement layers
  PmmConfig pmm{false, 5};
};

template <typename T>
struct ClipPrediction {
  Tensor<T> logits;  // [K x L x H x W]
  Tensor<T> probs;   // [(K+1) x L x H x W], channel 0 is background
  std::vector<std::uint8_t> labels;  // [L x H x W]
};

template <typename T>
class Model {
 public:
  Model(const PipelineConfig& config, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const PipelineConfig& config() const { return config_; }
  bool has_icr() const { return static_cast<bool>(refiner_); }

  // frames: [B x 3 x H x W], pixel values scaled to [-1, 1].
  KeyFeatures<T> encode_key(const Tensor<T>& frames) const { return key_encoder_(frames); }

  // Memory entry of one frame from its features and soft object
  // probabilities probs [K x H x W]. Object k sees its own map as target and
  // the sum of the other maps as others.
  typename MemoryBank<T>::Entry memory_entry(const Tensor<T>& frame, const KeyFeatures<T>& features,
                                             const Tensor<T>& probs) const;

  // Query keys as [L*hw x C_k] rows ordered (t, y, x).
  Tensor<T> query_keys(const KeyFeatures<T>& features) const;
  Tensor<T> query_intra_keys(const KeyFeatures<T>& features) const;

  // Retrieved values [L*hw x K x C_v].
  Tensor<T> read_clip(const KeyFeatures<T>& features, MemoryBank<T>& bank,
                      const InferenceOptions& options) const;
  Tensor<T> refine(const Tensor<T>& vq, const KeyFeatures<T>& features) const;
  // Values [L*hw x K x C_v] to logits [K x L x H x W].
  Tensor<T> decode(const Tensor<T>& v, const KeyFeatures<T>& features) const;

  ClipPrediction<T> forward_clip(const KeyFeatures<T>& features, MemoryBank<T>& bank,
                                 const InferenceOptions& options) const;
  ClipPrediction<T> predict_clip(const Tensor<T>& frames, MemoryBank<T>& bank,
                                 const InferenceOptions& options) const {
    return forward_clip(encode_key(frames), bank, options);
  }

  std::vector<Param<T>>& parameters() { return registry_.params(); }
  const std::vector<Param<T>>& parameters() const { return registry_.params(); }
  std::size_t parameter_count() const;

  void save(const std::filesystem::path& path) const;
  // Replaces every parameter by name; missing, extra or misshapen records throw.
  void load(const std::filesystem::path& path);

  const KeyEncoder<T>& key_encoder() const { return key_encoder_; }
  const ValueEncoder<T>& value_encoder() const { return value_encoder_; }
  const Decoder<T>& decoder() const { return decoder_; }
  const IntraClipRefiner<T>* refiner() const { return refiner_.get(); }
  IntraClipRefiner<T>* refiner() { return refiner_.get(); }

 private:
  PipelineConfig config_;
  ParamRegistry<T> registry_;
  KeyEncoder<T> key_encoder_;
  ValueEncoder<T> value_encoder_;
  std::unique_ptr<IntraClipRefiner<T>> refiner_;
  Decoder<T> decoder_;
};

// Frames-to-channels helpers shared by inference and training.
// One-hot object maps [K x H x W] from a label map.
template <typename T>
Tensor<T> one_hot_objects(const std::vector<std::uint8_t>& labels, std::size_t height, std::size_t width,
                          std::size_t objects);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace clipvos
