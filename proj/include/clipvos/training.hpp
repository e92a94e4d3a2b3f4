#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <random>

#include "clipvos/data.hpp"
#include "clipvos/model.hpp"

namespace clipvos {

// Sum over objects of 1 - 2|p.g| / (|p| + |g| + eps); pred and gt [K x M].
template <typename T>
Tensor<T> dice_clip_loss(const Tensor<T>& pred, const Tensor<T>& gt, T eps = T(1e-5));

// Mean -log p(label) over pixels. probs [C x P], labels [P]. Once step
// reaches warmup_steps only the max(1, floor(ratio * P)) largest per-pixel
// losses are averaged (ties keep lower pixel indices).
template <typename T>
Tensor<T> bootstrap_ce_loss(const Tensor<T>& probs, const std::vector<std::uint8_t>& labels, double ratio,
                            std::size_t step, std::size_t warmup_steps);

template <typename T>
struct LossTerms {
  Tensor<T> total;
  Tensor<T> clip;
  Tensor<T> image;
};

// probs [(K+1) x L x H x W] from soft aggregation, labels [L*H*W].
template <typename T>
LossTerms<T> total_loss(const Tensor<T>& probs, const std::vector<std::uint8_t>& labels, const TrainConfig& config,
                        std::size_t step, std::size_t total_steps);

// Reference frame, then two clips of N frames each, all indices increasing.
struct TrainingSample {
  std::size_t ref = 0;
  std::vector<std::size_t> clip1;
  std::vector<std::size_t> clip2;

  std::vector<std::size_t> indices() const;
};

// Triangular curriculum: start -> peak at mid-training -> end.
std::size_t scheduled_inter_gap(const TrainConfig& config, std::size_t step, std::size_t total_steps);

// Clip-to-clip spacing (ref to clip1, clip1 to clip2) is at most the scheduled
// gap and in-clip spacing at most intra_gap_max. When the sequence is too
// short the gap limits shrink; `reductions` counts those events.
TrainingSample sample_training_example(std::size_t sequence_length, std::size_t clip_frames, const TrainConfig& config,
                                       std::size_t step, std::size_t total_steps, std::mt19937_64& rng,
                                       std::size_t* reductions = nullptr);

struct StepMetrics {
  std::size_t step = 0;
  double clip_loss = 0;
  double image_loss = 0;
  double total = 0;
  // Permanent memory frames while the second clip was read.
  std::size_t memory_frames_second_clip = 0;
};

template <typename T>
class Optimizer {
 public:
  Optimizer(std::vector<Param<T>>& params, const TrainConfig& config);
  // Applies accumulated gradients and clears them.
  void step();
  void zero_grad();

 private:
  std::vector<Param<T>>& params_;
  TrainConfig config_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  std::size_t t_ = 0;
};

template <typename T>
class Trainer {
 public:
  Trainer(Model<T>& model, const TrainConfig& config);

  // Loss of one sample without a parameter update. When `backward` is set the
  // gradients are accumulated into the model parameters.
  StepMetrics video_loss(const VideoSequence& seq, const TrainingSample& sample, std::size_t step,
                         std::size_t total_steps, bool backward);
  // Reference is frame 0; the remaining frames form one clip.
  StepMetrics still_loss(const VideoSequence& triplet, std::size_t step, std::size_t total_steps, bool backward);

  StepMetrics train_step(const VideoSequence& seq, const TrainingSample& sample, std::size_t step,
                         std::size_t total_steps);
  StepMetrics pretrain_step(const VideoSequence& triplet, std::size_t step, std::size_t total_steps);

  Optimizer<T>& optimizer() { return optimizer_; }

 private:
  Model<T>& model_;
  TrainConfig config_;
  Optimizer<T> optimizer_;
};

struct TrainLoopOptions {
  std::filesystem::path metrics_csv;  // appended; empty disables
  std::size_t log_every = 0;          // 0 disables progress lines
  std::function<void(const StepMetrics&)> on_step;
};

// Synthetic-still stage: random frame of a random training sequence,
// deformed into config.pretrain_frames frames.
void pretrain(Model<float>& model, const TrainConfig& config, const std::vector<VideoSequence>& sources,
              const TrainLoopOptions& options = {});
// Video stage: two-clip samples under the gap curriculum, or the per-frame
// scheme when config.frame_wise is set.
void finetune(Model<float>& model, const TrainConfig& config, const std::vector<VideoSequence>& videos,
              const TrainLoopOptions& options = {});

extern template class Optimizer<float>;
extern template class Optimizer<double>;
extern template class Trainer<float>;
extern template class Trainer<double>;

}  // namespace clipvos
