#include "clipvos/pipeline.hpp"

#include <Eigen/Core>
#include <algorithm>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace clipvos {

InferenceOptions inference_options(const PipelineConfig& config) {
  InferenceOptions options;
  options.top_k = config.top_k;
  options.icr = config.icr.enabled;
  options.pmm = config.pmm;
  return options;
}

std::vector<Bytes> run_inference(const Model<float>& model, const Tensor<float>& frames, const Bytes& first_mask,
                                 const PipelineConfig& config, InferenceStats* stats) {
  config.validate();
  if (frames.rank() != 4 || frames.dim(1) != 3) {
    throw ShapeError("run_inference: expects [T x 3 x H x W] frames, got " + shape_str(frames.shape()));
  }
  const std::size_t total = frames.dim(0), height = frames.dim(2), width = frames.dim(3);
  if (first_mask.size() != height * width) {
    throw std::invalid_argument("run_inference: ground-truth mask for frame 0 is missing or has the wrong size");
  }
  const std::size_t k_obj = *std::max_element(first_mask.begin(), first_mask.end());
  std::vector<Bytes> out(total, Bytes(height * width, 0));
  out[0] = first_mask;
  if (stats) *stats = {};
  if (total == 1 || k_obj == 0) return out;

  NoGradScope no_grad;
  const InferenceOptions options = inference_options(config);
  const std::size_t clip_length = config.clip_length;
  MemoryBank<float> bank;
  {
    const Tensor<float> frame0 = slice(frames, 0, 0, 1);
    const auto entry = model.memory_entry(frame0, model.encode_key(frame0),
                                          one_hot_objects<float>(first_mask, height, width, k_obj));
    bank.append(entry.key, entry.value, MemoryTier::permanent);
  }
  const std::size_t plane = height * width;
  std::size_t clips = 0;
  for (std::size_t begin = 1; begin < total; begin += clip_length) {
    const std::size_t end = std::min(total, begin + clip_length), len = end - begin;
    const Tensor<float> clip = slice(frames, 0, begin, end);
    const KeyFeatures<float> features = model.encode_key(clip);
    const ClipPrediction<float> pred = model.forward_clip(features, bank, options);
    for (std::size_t t = 0; t < len; ++t) {
      std::copy_n(pred.labels.begin() + static_cast<std::ptrdiff_t>(t * plane), plane, out[begin + t].begin());
    }
    const Tensor<float> last_probs =
        reshape(slice(slice(pred.probs, 0, 1, k_obj + 1), 1, len - 1, len), {k_obj, height, width});
    const auto entry = model.memory_entry(slice(clip, 0, len - 1, len), features.slice(len - 1, len), last_probs);
    bank.append(entry.key, entry.value, MemoryTier::permanent);
    ++clips;
  }
  if (stats) *stats = {clips, bank.permanent_frames()};
  return out;
}

std::vector<Bytes> run_inference(const Model<float>& model, const VideoSequence& seq, const Bytes& first_mask,
                                 const PipelineConfig& config, InferenceStats* stats) {
  seq.validate();
  if (seq.length() == 0) throw std::invalid_argument("run_inference: empty sequence");
  std::vector<std::size_t> idx(seq.length());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return run_inference(model, frames_to_tensor<float>(seq, idx), first_mask, config, stats);
}

void save_checkpoint(const Model<float>& model, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  model.save(path);
  save_config(model.config(), path.string() + ".ini");
}

std::unique_ptr<Model<float>> load_checkpoint(const std::filesystem::path& path, const PipelineConfig& fallback) {
  const std::filesystem::path sidecar = path.string() + ".ini";
  const PipelineConfig arch = std::filesystem::exists(sidecar) ? load_config(sidecar, fallback) : fallback;
  auto model = std::make_unique<Model<float>>(arch, arch.seed);
  model->load(path);
  return model;
}

void set_compute_threads(std::size_t threads) {
  Eigen::setNbThreads(static_cast<int>(std::max<std::size_t>(1, threads)));
}

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace clipvos
