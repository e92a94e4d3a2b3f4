#include "clipvos/model.hpp"

#include <map>

#include "clipvos/serialize.hpp"

namespace clipvos {

template <typename T>
Model<T>::Model(const PipelineConfig& config, std::uint64_t seed)
    : config_(config),
      registry_(seed),
      key_encoder_(registry_, config.encoder),
      value_encoder_(registry_, config.encoder),
      decoder_(registry_, config.encoder) {
  config_.validate();
  if (config_.icr.enabled) {
    refiner_ = std::make_unique<IntraClipRefiner<T>>(registry_, config_.icr, config_.encoder.value_channels,
                                                     config_.encoder.intra_key_channels);
  }
}

template <typename T>
typename MemoryBank<T>::Entry Model<T>::memory_entry(const Tensor<T>& frame, const KeyFeatures<T>& features,
                                                     const Tensor<T>& probs) const {
  if (frame.rank() != 4 || frame.dim(0) != 1 || features.batch() != 1) {
    throw ShapeError("memory_entry: expects a single frame, got " + shape_str(frame.shape()));
  }
  const std::size_t h_img = frame.dim(2), w_img = frame.dim(3);
  if (probs.rank() != 3 || probs.dim(1) != h_img || probs.dim(2) != w_img) {
    throw ShapeError("memory_entry: object maps " + shape_str(probs.shape()) + " vs frame " +
                     shape_str(frame.shape()));
  }
  const std::size_t k_obj = probs.dim(0);
  const Tensor<T> target = reshape(probs, {k_obj, 1, h_img, w_img});
  Tensor<T> others;
  if (k_obj == 1) {
    others = Tensor<T>::zeros({1, 1, h_img, w_img});
  } else {
    const Tensor<T> total = reshape(sum_axis(probs, 0), {1, 1, h_img, w_img});
    others = sub(concat(std::vector<Tensor<T>>(k_obj, total), 0), target);
  }
  auto repeat = [k_obj](const Tensor<T>& t) {
    return k_obj == 1 ? t : concat(std::vector<Tensor<T>>(k_obj, t), 0);
  };
  const Tensor<T> v = value_encoder_(repeat(frame), target, others, repeat(features.k));
  const std::size_t cv = v.dim(1), h = v.dim(2), w = v.dim(3);
  typename MemoryBank<T>::Entry entry;
  entry.key = query_keys(features);
  entry.value = reshape(permute(v, {2, 3, 0, 1}), {h * w, k_obj * cv});
  return entry;
}

template <typename T>
Tensor<T> Model<T>::query_keys(const KeyFeatures<T>& features) const {
  const Tensor<T>& k = features.k;
  return reshape(permute(k, {0, 2, 3, 1}), {k.dim(0) * k.dim(2) * k.dim(3), k.dim(1)});
}

template <typename T>
Tensor<T> Model<T>::query_intra_keys(const KeyFeatures<T>& features) const {
  const Tensor<T>& k = features.k_intra;
  return reshape(permute(k, {0, 2, 3, 1}), {k.dim(0) * k.dim(2) * k.dim(3), k.dim(1)});
}

template <typename T>
Tensor<T> Model<T>::read_clip(const KeyFeatures<T>& features, MemoryBank<T>& bank,
                              const InferenceOptions& options) const {
  if (bank.empty()) throw std::runtime_error("memory bank empty");
  const std::size_t cv = config_.encoder.value_channels;
  const std::size_t value_width = bank.permanent().front().value.dim(1);
  if (value_width % cv != 0) {
    throw ShapeError("read_clip: memory values of width " + std::to_string(value_width) +
                     " are not a multiple of C_v " + std::to_string(cv));
  }
  const Tensor<T> kq = query_keys(features);
  const Tensor<T> v = progressive_read(kq, features.batch(), bank, options.pmm, options.top_k);
  return reshape(v, {kq.dim(0), value_width / cv, cv});
}

template <typename T>
Tensor<T> Model<T>::refine(const Tensor<T>& vq, const KeyFeatures<T>& features) const {
  if (!refiner_) return vq;
  const ClipGeometry g{features.batch(), features.k_intra.dim(2), features.k_intra.dim(3)};
  return (*refiner_)(vq, query_intra_keys(features), g);
}

template <typename T>
Tensor<T> Model<T>::decode(const Tensor<T>& v, const KeyFeatures<T>& features) const {
  const std::size_t frames = features.batch();
  const std::size_t h = features.k.dim(2), w = features.k.dim(3);
  if (v.rank() != 3 || v.dim(0) != frames * h * w) {
    throw ShapeError("decode: values " + shape_str(v.shape()) + " vs clip features " +
                     shape_str(features.k.shape()));
  }
  const std::size_t k_obj = v.dim(1), cv = v.dim(2);
  const Tensor<T> maps = reshape(permute(reshape(v, {frames, h, w, k_obj, cv}), {3, 0, 4, 1, 2}),
                                 {k_obj * frames, cv, h, w});
  const Tensor<T> logits = decoder_(maps, features.skips, k_obj);
  return reshape(logits, {k_obj, frames, logits.dim(2), logits.dim(3)});
}

template <typename T>
ClipPrediction<T> Model<T>::forward_clip(const KeyFeatures<T>& features, MemoryBank<T>& bank,
                                         const InferenceOptions& options) const {
  Tensor<T> v = read_clip(features, bank, options);
  if (options.icr) v = refine(v, features);
  ClipPrediction<T> out;
  out.logits = decode(v, features);
  out.probs = soft_aggregate(sigmoid(out.logits));
  out.labels = argmax_axis0(out.probs);
  return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : registry_.params()) n += p.value.numel();
  return n;
}

template <typename T>
void Model<T>::save(const std::filesystem::path& path) const {
  std::vector<NamedTensor> records;
  for (const auto& p : registry_.params()) {
    records.push_back({p.name, p.value.shape(), std::vector<float>(p.value.data().begin(), p.value.data().end())});
  }
  write_weights(path, records);
}

template <typename T>
void Model<T>::load(const std::filesystem::path& path) {
  std::map<std::string, NamedTensor> by_name;
  for (auto& r : read_weights(path)) by_name.emplace(r.name, std::move(r));
  auto& params = registry_.params();
  if (by_name.size() != params.size()) {
    throw std::runtime_error("load: " + path.string() + " holds " + std::to_string(by_name.size()) +
                             " tensors, model expects " + std::to_string(params.size()));
  }
  for (auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw std::runtime_error("load: " + path.string() + " lacks " + p.name);
    if (it->second.shape != p.value.shape()) {
      throw std::runtime_error("load: " + p.name + " has shape " + shape_str(it->second.shape) + ", expected " +
                               shape_str(p.value.shape()));
    }
    auto dst = p.value.mutable_data();
    std::copy(it->second.values.begin(), it->second.values.end(), dst.begin());
  }
}

template <typename T>
Tensor<T> one_hot_objects(const std::vector<std::uint8_t>& labels, std::size_t height, std::size_t width,
                          std::size_t objects) {
  if (labels.size() != height * width) {
    throw ShapeError("one_hot_objects: " + std::to_string(labels.size()) + " labels for a " +
                     std::to_string(height) + "x" + std::to_string(width) + " map");
  }
  std::vector<T> out(objects * height * width, T(0));
  for (std::size_t p = 0; p < labels.size(); ++p) {
    if (labels[p] >= 1 && labels[p] <= objects) out[(labels[p] - 1) * height * width + p] = T(1);
  }
  return Tensor<T>({objects, height, width}, std::move(out));
}

template class Model<float>;
template class Model<double>;
template Tensor<float> one_hot_objects(const std::vector<std::uint8_t>&, std::size_t, std::size_t, std::size_t);
template Tensor<double> one_hot_objects(const std::vector<std::uint8_t>&, std::size_t, std::size_t, std::size_t);

}  // namespace clipvos
