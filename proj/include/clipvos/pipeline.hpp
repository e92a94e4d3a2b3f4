#pragma once

#include <filesystem>
#include <memory>

#include "clipvos/data.hpp"
#include "clipvos/model.hpp"

namespace clipvos {

struct InferenceStats {
  std::size_t clips = 0;
  std::size_t permanent_frames = 0;  // bank size after the last clip
};

InferenceOptions inference_options(const PipelineConfig& config);

// Frame 0 with its ground-truth mask seeds permanent memory. The rest of the
// video is cut into clips of config.clip_length frames; after each clip its
// last frame joins permanent memory, encoded with the predicted object
// probabilities. The number of objects is the largest label of first_mask.
// frames: [T x 3 x H x W] as produced by frames_to_tensor.
std::vector<Bytes> run_inference(const Model<float>& model, const Tensor<float>& frames, const Bytes& first_mask,
                                 const PipelineConfig& config, InferenceStats* stats = nullptr);
std::vector<Bytes> run_inference(const Model<float>& model, const VideoSequence& seq, const Bytes& first_mask,
                                 const PipelineConfig& config, InferenceStats* stats = nullptr);

// Weights plus the architecture config in a sibling "<path>.ini".
void save_checkpoint(const Model<float>& model, const std::filesystem::path& path);
// Builds the model from the sibling config when present, else from
// `fallback`, then loads the weights.
std::unique_ptr<Model<float>> load_checkpoint(const std::filesystem::path& path, const PipelineConfig& fallback);

// Sets the worker count of the linear-algebra backend.
void set_compute_threads(std::size_t threads);

// Keeps freed activation buffers on the heap instead of returning them to
// the OS after every op (glibc only; no-op elsewhere).
void tune_allocator();

}  // namespace clipvos
