#include "clipvos/icr.hpp"

#include <algorithm>
#include <cmath>

namespace clipvos {

namespace {

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

}  // namespace

Extent3 clamp_window(const ClipGeometry& g, const Extent3& window) {
  if (window.t == 0 || window.h == 0 || window.w == 0) {
    throw std::invalid_argument("window sizes must be at least 1");
  }
  return {std::min(window.t, g.frames), std::min(window.h, g.height), std::min(window.w, g.width)};
}

Extent3 layer_shift(const ClipGeometry& g, const Extent3& window, std::size_t layer) {
  if (layer % 2 == 0) return {};
  return {g.frames > window.t ? window.t / 2 : 0, g.height > window.h ? window.h / 2 : 0,
          g.width > window.w ? window.w / 2 : 0};
}

WindowLayout make_window_layout(const ClipGeometry& g, const Extent3& window, const Extent3& shift,
                                const Extent3& table_window) {
  WindowLayout out;
  out.geometry = g;
  out.window = clamp_window(g, window);
  out.shift = shift;
  const Extent3 w = out.window;
  if (shift.t >= g.frames || shift.h >= g.height || shift.w >= g.width) {
    throw std::invalid_argument("window shift must be smaller than the clip extent on every axis");
  }
  const std::size_t pt = round_up(g.frames, w.t), ph = round_up(g.height, w.h), pw = round_up(g.width, w.w);
  const std::size_t nt = pt / w.t, nh = ph / w.h, nw = pw / w.w;
  out.num_windows = nt * nh * nw;
  out.window_size = w.t * w.h * w.w;
  const std::size_t size = out.window_size;
  out.gather.assign(out.num_windows * size, -1);
  out.scatter.assign(g.tokens(), -1);
  std::vector<int> region(out.num_windows * size, -1);

  for (std::size_t a = 0; a < nt; ++a) {
    for (std::size_t b = 0; b < nh; ++b) {
      for (std::size_t c = 0; c < nw; ++c) {
        const std::size_t win = (a * nh + b) * nw + c;
        for (std::size_t i = 0; i < w.t; ++i) {
          for (std::size_t j = 0; j < w.h; ++j) {
            for (std::size_t k = 0; k < w.w; ++k) {
              const std::size_t row = win * size + (i * w.h + j) * w.w + k;
              const std::size_t ts = a * w.t + i, ys = b * w.h + j, xs = c * w.w + k;
              if (ts >= g.frames || ys >= g.height || xs >= g.width) continue;
              const std::size_t t = (ts + shift.t) % g.frames;
              const std::size_t y = (ys + shift.h) % g.height;
              const std::size_t x = (xs + shift.w) % g.width;
              const std::size_t token = (t * g.height + y) * g.width + x;
              out.gather[row] = static_cast<std::int64_t>(token);
              out.scatter[token] = static_cast<std::int64_t>(row);
              // Positions that wrapped around during the roll form their own region.
              const int rt = shift.t > 0 && ts >= g.frames - shift.t;
              const int rh = shift.h > 0 && ys >= g.height - shift.h;
              const int rw = shift.w > 0 && xs >= g.width - shift.w;
              region[row] = rt * 4 + rh * 2 + rw;
            }
          }
        }
      }
    }
  }

  out.keep.assign(out.num_windows * size * size, 0);
  for (std::size_t win = 0; win < out.num_windows; ++win) {
    for (std::size_t q = 0; q < size; ++q) {
      const int rq = region[win * size + q];
      if (rq < 0) continue;
      std::uint8_t* dst = out.keep.data() + (win * size + q) * size;
      for (std::size_t k = 0; k < size; ++k) dst[k] = region[win * size + k] == rq;
    }
  }

  const Extent3 tw = table_window.t == 0 ? w : table_window;
  if (tw.t < w.t || tw.h < w.h || tw.w < w.w) {
    throw std::invalid_argument("position-bias table smaller than the window");
  }
  out.relative_index.resize(size * size);
  for (std::size_t q = 0; q < size; ++q) {
    const std::size_t qt = q / (w.h * w.w), qy = q / w.w % w.h, qx = q % w.w;
    for (std::size_t k = 0; k < size; ++k) {
      const std::size_t kt = k / (w.h * w.w), ky = k / w.w % w.h, kx = k % w.w;
      const std::size_t dt = qt + tw.t - 1 - kt;
      const std::size_t dy = qy + tw.h - 1 - ky;
      const std::size_t dx = qx + tw.w - 1 - kx;
      out.relative_index[q * size + k] =
          static_cast<std::int64_t>((dt * (2 * tw.h - 1) + dy) * (2 * tw.w - 1) + dx);
    }
  }
  return out;
}

template <typename T>
WindowPartition<T> window_partition(const Tensor<T>& x, const Extent3& window, const Extent3& shift) {
  if (x.rank() != 4) throw ShapeError("window_partition: expects [L x H x W x C], got " + shape_str(x.shape()));
  const ClipGeometry g{x.dim(0), x.dim(1), x.dim(2)};
  const std::size_t c = x.dim(3);
  const WindowLayout layout = make_window_layout(g, window, shift);
  WindowPartition<T> out;
  out.windows = reshape(gather_rows(reshape(x, {g.tokens(), c}), layout.gather),
                        {layout.num_windows, layout.window_size, c});
  out.pad_mask.resize(layout.gather.size());
  for (std::size_t i = 0; i < layout.gather.size(); ++i) out.pad_mask[i] = layout.gather[i] < 0;
  return out;
}

template <typename T>
Tensor<T> window_reverse(const Tensor<T>& windows, const ClipGeometry& g, const Extent3& window,
                         const Extent3& shift) {
  const WindowLayout layout = make_window_layout(g, window, shift);
  if (windows.rank() != 3 || windows.dim(0) != layout.num_windows || windows.dim(1) != layout.window_size) {
    throw ShapeError("window_reverse: windows " + shape_str(windows.shape()) + " do not match layout [" +
                     std::to_string(layout.num_windows) + " x " + std::to_string(layout.window_size) + " x C]");
  }
  const std::size_t c = windows.dim(2);
  return reshape(gather_rows(reshape(windows, {layout.num_windows * layout.window_size, c}), layout.scatter),
                 {g.frames, g.height, g.width, c});
}

template <typename T>
IcrLayer<T>::IcrLayer(ParamRegistry<T>& reg, const std::string& name, const IcrConfig& config,
                      std::size_t value_channels, std::size_t intra_key_channels)
    : key_norm(reg, name + ".key_norm", intra_key_channels),
      key_proj(reg, name + ".key_proj", intra_key_channels, config.width),
      value_norm(reg, name + ".value_norm", value_channels),
      value_proj(reg, name + ".value_proj", value_channels, config.width),
      out_proj(reg.uniform(name + ".out_proj", {value_channels, config.width}, config.width)),
      ffn_norm(reg, name + ".ffn_norm", value_channels),
      ffn_in(reg, name + ".ffn_in", value_channels, config.ffn_ratio * value_channels),
      ffn_out(reg, name + ".ffn_out", config.ffn_ratio * value_channels, value_channels),
      config_(config) {
  config_.validate();
  if (config_.position_bias) {
    const std::size_t entries = (2 * config_.temporal_window - 1) * (2 * config_.spatial_window - 1) *
                                (2 * config_.spatial_window - 1);
    position_bias = reg.constant(name + ".position_bias", {entries * config_.heads, 1}, T(0));
  }
}

template <typename T>
Tensor<T> IcrLayer<T>::attention(const Tensor<T>& k_intra, const WindowLayout& layout) const {
  const std::size_t n = layout.geometry.tokens();
  if (k_intra.rank() != 2 || k_intra.dim(0) != n) {
    throw ShapeError("icr_layer: local keys " + shape_str(k_intra.shape()) + " vs clip of " +
                     std::to_string(n) + " tokens");
  }
  const std::size_t nw = layout.num_windows, s = layout.window_size;
  const std::size_t d = config_.width, h = config_.heads, dh = d / h;
  Tensor<T> q = gather_rows(key_proj(key_norm(k_intra)), layout.gather);
  q = h == 1 ? reshape(q, {nw, s, d}) : reshape(permute(reshape(q, {nw, s, h, dh}), {0, 2, 1, 3}), {nw * h, s, dh});
  Tensor<T> scores = scale(bmm(q, q, false, true), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
  if (position_bias.defined()) {
    std::vector<std::int64_t> idx(nw * h * s * s);
    for (std::size_t win = 0; win < nw; ++win) {
      for (std::size_t head = 0; head < h; ++head) {
        std::int64_t* dst = idx.data() + (win * h + head) * s * s;
        for (std::size_t e = 0; e < s * s; ++e) {
          dst[e] = layout.relative_index[e] * static_cast<std::int64_t>(h) + static_cast<std::int64_t>(head);
        }
      }
    }
    scores = add(scores, reshape(gather_rows(position_bias, idx), {nw * h, s, s}));
  }
  if (h == 1) return masked_softmax(scores, layout.keep);
  std::vector<std::uint8_t> keep(nw * h * s * s);
  for (std::size_t win = 0; win < nw; ++win) {
    for (std::size_t head = 0; head < h; ++head) {
      std::copy_n(layout.keep.data() + win * s * s, s * s, keep.data() + (win * h + head) * s * s);
    }
  }
  return masked_softmax(scores, keep);
}

template <typename T>
Tensor<T> IcrLayer<T>::operator()(const Tensor<T>& vq, const Tensor<T>& k_intra,
                                  const WindowLayout& layout) const {
  const std::size_t n = layout.geometry.tokens();
  if (vq.rank() != 3 || vq.dim(0) != n || k_intra.rank() != 2 || k_intra.dim(0) != n) {
    throw ShapeError("icr_layer: values " + shape_str(vq.shape()) + " and local keys " +
                     shape_str(k_intra.shape()) + " disagree with a clip of " + std::to_string(n) + " tokens");
  }
  const Tensor<T> a = attention(k_intra, layout);
  const std::size_t nw = layout.num_windows, s = layout.window_size;
  const std::size_t k_obj = vq.dim(1);
  const std::size_t d = config_.width, h = config_.heads, dh = d / h;
  Tensor<T> v = gather_rows(reshape(value_proj(value_norm(vq)), {n, k_obj * d}), layout.gather);
  Tensor<T> o;
  if (h == 1) {
    o = reshape(bmm(a, reshape(v, {nw, s, k_obj * d})), {nw * s, k_obj * d});
  } else {
    v = reshape(permute(reshape(v, {nw, s, k_obj, h, dh}), {0, 3, 1, 2, 4}), {nw * h, s, k_obj * dh});
    o = reshape(permute(reshape(bmm(a, v), {nw, h, s, k_obj, dh}), {0, 2, 3, 1, 4}), {nw * s, k_obj * d});
  }
  o = reshape(gather_rows(o, layout.scatter), {n, k_obj, d});
  const Tensor<T> v_attn = add(vq, linear(o, out_proj, Tensor<T>()));
  return add(v_attn, ffn_out(relu(ffn_in(ffn_norm(v_attn)))));
}

template <typename T>
IntraClipRefiner<T>::IntraClipRefiner(ParamRegistry<T>& reg, const IcrConfig& config,
                                      std::size_t value_channels, std::size_t intra_key_channels)
    : config_(config) {
  config_.validate();
  for (std::size_t i = 0; i < config_.num_layers; ++i) {
    layers_.emplace_back(reg, "icr.layer" + std::to_string(i), config_, value_channels, intra_key_channels);
  }
}

template <typename T>
WindowLayout IntraClipRefiner<T>::layout(const ClipGeometry& g, std::size_t layer) const {
  const Extent3 window{config_.temporal_window, config_.spatial_window, config_.spatial_window};
  return make_window_layout(g, window, layer_shift(g, window, layer), window);
}

template <typename T>
Tensor<T> IntraClipRefiner<T>::run_layers(const Tensor<T>& vq, const Tensor<T>& k_intra,
                                          const ClipGeometry& g, std::size_t count) const {
  if (count > layers_.size()) throw std::out_of_range("refine_clip: layer count exceeds the stack");
  if (vq.rank() != 3 || vq.dim(0) != g.tokens() || k_intra.rank() != 2 || k_intra.dim(0) != g.tokens()) {
    throw ShapeError("refine_clip: values " + shape_str(vq.shape()) + " and local keys " +
                     shape_str(k_intra.shape()) + " disagree with a clip of " + std::to_string(g.tokens()) +
                     " tokens");
  }
  Tensor<T> v = vq;
  for (std::size_t i = 0; i < count; ++i) v = layers_[i](v, k_intra, layout(g, i));
  return v;
}

#define CLIPVOS_INSTANTIATE_ICR(T)                                                                    \
  template WindowPartition<T> window_partition(const Tensor<T>&, const Extent3&, const Extent3&);    \
  template Tensor<T> window_reverse(const Tensor<T>&, const ClipGeometry&, const Extent3&, const Extent3&); \
  template class IcrLayer<T>;                                                                          \
  template class IntraClipRefiner<T>;

CLIPVOS_INSTANTIATE_ICR(float)
CLIPVOS_INSTANTIATE_ICR(double)

}  // namespace clipvos
