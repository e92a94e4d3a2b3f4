#pragma once

#include <vector>

#include "clipvos/config.hpp"
#include "clipvos/layers.hpp"

namespace clipvos {

struct ClipGeometry {
  std::size_t frames = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  std::size_t tokens() const { return frames * height * width; }
  bool operator==(const ClipGeometry&) const = default;
};

// Extents along (time, height, width).
struct Extent3 {
  std::size_t t = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  bool operator==(const Extent3&) const = default;
};

// Gather plan for one (possibly shifted) window partition of a clip. Token
// index is (t * H + y) * W + x. Windowed row r = window * size + offset.
struct WindowLayout {
  ClipGeometry geometry;
  Extent3 window;  // clamped to the clip
  Extent3 shift;
  std::size_t num_windows = 0;
  std::size_t window_size = 0;
  std::vector<std::int64_t> gather;   // windowed row -> token, -1 for padding
  std::vector<std::int64_t> scatter;  // token -> windowed row
  // [num_windows x size x size]: 1 where query and key are both real tokens
  // from the same shift region.
  std::vector<std::uint8_t> keep;
  // [size x size] relative-offset index into a position-bias table sized for
  // the configured (unclamped) window.
  std::vector<std::int64_t> relative_index;
};

// Window clamped to the clip extent on each axis.
Extent3 clamp_window(const ClipGeometry& g, const Extent3& window);
// Cyclic shift used by layer `layer`: none on even layers, half the window
// (rounded down) on odd ones, and none on axes the window already covers.
Extent3 layer_shift(const ClipGeometry& g, const Extent3& window, std::size_t layer);

// Roll by -shift, zero-pad to window multiples, then partition.
WindowLayout make_window_layout(const ClipGeometry& g, const Extent3& window, const Extent3& shift,
                                const Extent3& table_window = {});

template <typename T>
struct WindowPartition {
  Tensor<T> windows;                  // [num_windows x size x C]
  std::vector<std::uint8_t> pad_mask; // [num_windows x size], 1 on padding
};

// x: [L x H x W x C].
template <typename T>
WindowPartition<T> window_partition(const Tensor<T>& x, const Extent3& window, const Extent3& shift);
template <typename T>
Tensor<T> window_reverse(const Tensor<T>& windows, const ClipGeometry& g, const Extent3& window,
                         const Extent3& shift);

template <typename T>
class IcrLayer {
 public:
  IcrLayer(ParamRegistry<T>& reg, const std::string& name, const IcrConfig& config,
           std::size_t value_channels, std::size_t intra_key_channels);

  // Attention weights [num_windows * heads x size x size] from local keys
  // k_intra [tokens x C_k'].
  Tensor<T> attention(const Tensor<T>& k_intra, const WindowLayout& layout) const;

  // vq: [tokens x K x C_v] (every object at once), k_intra: [tokens x C_k'].
  Tensor<T> operator()(const Tensor<T>& vq, const Tensor<T>& k_intra, const WindowLayout& layout) const;

  LayerNorm<T> key_norm;
  Linear<T> key_proj;
  LayerNorm<T> value_norm;
  Linear<T> value_proj;
  Tensor<T> out_proj;  // [C_v x width], no bias
  LayerNorm<T> ffn_norm;
  Linear<T> ffn_in;
  Linear<T> ffn_out;
  Tensor<T> position_bias;  // [table entries * heads x 1] when enabled

 private:
  IcrConfig config_;
};

template <typename T>
class IntraClipRefiner {
 public:
  IntraClipRefiner(ParamRegistry<T>& reg, const IcrConfig& config, std::size_t value_channels,
                   std::size_t intra_key_channels);

  // vq: [tokens x K x C_v], k_intra: [tokens x C_k'] with tokens ordered (t, y, x).
  Tensor<T> operator()(const Tensor<T>& vq, const Tensor<T>& k_intra, const ClipGeometry& g) const {
    return run_layers(vq, k_intra, g, layers_.size());
  }
  // First `count` layers only; 0 is a passthrough.
  Tensor<T> run_layers(const Tensor<T>& vq, const Tensor<T>& k_intra, const ClipGeometry& g,
                       std::size_t count) const;

  WindowLayout layout(const ClipGeometry& g, std::size_t layer) const;
  std::size_t num_layers() const { return layers_.size(); }
  const IcrLayer<T>& layer(std::size_t i) const { return layers_.at(i); }
  IcrLayer<T>& layer(std::size_t i) { return layers_.at(i); }

 private:
  IcrConfig config_;
  std::vector<IcrLayer<T>> layers_;
};

extern template class IcrLayer<float>;
extern template class IcrLayer<double>;
extern template class IntraClipRefiner<float>;
extern template class IntraClipRefiner<double>;

}  // namespace clipvos
