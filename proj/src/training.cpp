#include "clipvos/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <sstream>

namespace clipvos {

template <typename T>
Tensor<T> dice_clip_loss(const Tensor<T>& pred, const Tensor<T>& gt, T eps) {
  if (pred.shape() != gt.shape() || pred.rank() != 2) {
    throw ShapeError("dice_clip_loss: expects matching [K x M] inputs, got " + shape_str(pred.shape()) + " and " +
                     shape_str(gt.shape()));
  }
  const std::size_t k_obj = pred.dim(0);
  if (k_obj == 0) {
    std::cerr << "warning: dice_clip_loss called with zero objects\n";
    return Tensor<T>::scalar(T(0));
  }
  const Tensor<T> inter = sum_axis(mul(pred, gt), 1);
  const Tensor<T> denom = add_scalar(add(sum_axis(pred, 1), sum_axis(gt, 1)), eps);
  const Tensor<T> ratio = div(scale(inter, T(2)), denom);
  return add_scalar(scale(sum(ratio), T(-1)), static_cast<T>(k_obj));
}

template <typename T>
Tensor<T> bootstrap_ce_loss(const Tensor<T>& probs, const std::vector<std::uint8_t>& labels, double ratio,
                            std::size_t step, std::size_t warmup_steps) {
  if (probs.rank() != 2 || probs.dim(1) != labels.size()) {
    throw ShapeError("bootstrap_ce_loss: probs " + shape_str(probs.shape()) + " do not match " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t classes = probs.dim(0), pixels = probs.dim(1);
  if (pixels == 0) throw ShapeError("bootstrap_ce_loss: no pixels");
  std::vector<T> onehot(classes * pixels, T(0));
  for (std::size_t p = 0; p < pixels; ++p) {
    if (labels[p] >= classes) {
      throw std::invalid_argument("bootstrap_ce_loss: label " + std::to_string(labels[p]) + " with only " +
                                  std::to_string(classes) + " classes");
    }
    onehot[labels[p] * pixels + p] = T(1);
  }
  const Tensor<T> p_gt = sum_axis(mul(probs, Tensor<T>({classes, pixels}, std::move(onehot))), 0);
  const Tensor<T> nll = scale(log(add_scalar(p_gt, T(1e-12))), T(-1));
  if (step < warmup_steps) return mean(nll);

  const auto count = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(ratio * static_cast<double>(pixels) + 1e-9)));
  if (count >= pixels) return mean(nll);
  std::vector<std::size_t> order(pixels);
  std::iota(order.begin(), order.end(), 0);
  const auto v = nll.data();
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
  std::vector<T> keep(pixels, T(0));
  for (std::size_t i = 0; i < count; ++i) keep[order[i]] = T(1);
  return scale(sum(mul(nll, Tensor<T>({pixels}, std::move(keep)))), T(1) / static_cast<T>(count));
}

template <typename T>
LossTerms<T> total_loss(const Tensor<T>& probs, const std::vector<std::uint8_t>& labels, const TrainConfig& config,
                        std::size_t step, std::size_t total_steps) {
  if (probs.rank() < 2 || probs.dim(0) < 1) throw ShapeError("total_loss: bad probs " + shape_str(probs.shape()));
  const std::size_t classes = probs.dim(0), pixels = probs.numel() / classes, k_obj = classes - 1;
  const Tensor<T> flat = reshape(probs, {classes, pixels});
  const auto warmup = static_cast<std::size_t>(config.warmup_fraction * static_cast<double>(total_steps));

  LossTerms<T> out;
  out.image = bootstrap_ce_loss(flat, labels, config.bootstrap_ratio, step, warmup);
  if (k_obj == 0) {
    out.clip = dice_clip_loss(Tensor<T>::zeros({0, pixels}), Tensor<T>::zeros({0, pixels}));
  } else {
    std::vector<T> gt(k_obj * pixels, T(0));
    for (std::size_t p = 0; p < pixels; ++p) {
      if (labels[p] > 0) gt[(labels[p] - 1) * pixels + p] = T(1);
    }
    out.clip = dice_clip_loss(slice(flat, 0, 1, classes), Tensor<T>({k_obj, pixels}, std::move(gt)));
  }
  const Tensor<T> image_term = scale(out.image, static_cast<T>(config.image_loss_weight));
  if (config.frame_wise || k_obj == 0) {
    out.total = image_term;
  } else {
    out.total = add(scale(out.clip, static_cast<T>(config.clip_loss_weight)), image_term);
  }
  return out;
}

std::vector<std::size_t> TrainingSample::indices() const {
  std::vector<std::size_t> out{ref};
  out.insert(out.end(), clip1.begin(), clip1.end());
  out.insert(out.end(), clip2.begin(), clip2.end());
  return out;
}

std::size_t scheduled_inter_gap(const TrainConfig& config, std::size_t step, std::size_t total_steps) {
  const double start = static_cast<double>(config.inter_gap_start);
  const double peak = static_cast<double>(config.inter_gap_peak);
  const double end = static_cast<double>(config.inter_gap_end);
  const double progress =
      total_steps <= 1 ? 0.0 : std::clamp(static_cast<double>(step) / static_cast<double>(total_steps - 1), 0.0, 1.0);
  const double gap = progress <= 0.5 ? start + (peak - start) * progress * 2 : peak + (end - peak) * (progress - 0.5) * 2;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(gap)));
}

TrainingSample sample_training_example(std::size_t sequence_length, std::size_t clip_frames, const TrainConfig& config,
                                       std::size_t step, std::size_t total_steps, std::mt19937_64& rng,
                                       std::size_t* reductions) {
  if (clip_frames == 0) throw std::invalid_argument("sample_training_example: clip_frames must be positive");
  if (sequence_length < 2 * clip_frames + 1) {
    throw std::invalid_argument("sample_training_example: sequence of " + std::to_string(sequence_length) +
                                " frames is shorter than the " + std::to_string(2 * clip_frames + 1) +
                                " frames a sample needs");
  }
  std::size_t gap = scheduled_inter_gap(config, step, total_steps);
  std::size_t intra = std::max<std::size_t>(1, config.intra_gap_max);
  constexpr int kRetries = 16;
  for (;;) {
    std::uniform_int_distribution<std::size_t> gap_dist(1, gap), intra_dist(1, intra);
    for (int attempt = 0; attempt < kRetries; ++attempt) {
      std::vector<std::size_t> offsets;  // relative to ref
      std::size_t pos = gap_dist(rng);
      for (int clip = 0; clip < 2; ++clip) {
        if (clip == 1) pos += gap_dist(rng);
        for (std::size_t i = 0; i < clip_frames; ++i) {
          if (i > 0) pos += intra_dist(rng);
          offsets.push_back(pos);
        }
      }
      if (pos >= sequence_length) continue;
      std::uniform_int_distribution<std::size_t> ref_dist(0, sequence_length - 1 - pos);
      TrainingSample s;
      s.ref = ref_dist(rng);
      for (std::size_t i = 0; i < offsets.size(); ++i) {
        (i < clip_frames ? s.clip1 : s.clip2).push_back(s.ref + offsets[i]);
      }
      return s;
    }
    if (gap > 1) {
      --gap;
    } else if (intra > 1) {
      --intra;
    } else {
      throw std::logic_error("sample_training_example: no valid sample");
    }
    if (reductions) ++*reductions;
  }
}

template <typename T>
Optimizer<T>::Optimizer(std::vector<Param<T>>& params, const TrainConfig& config) : params_(params), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.value.numel(), T(0));
    v_.emplace_back(config_.optimizer == OptimizerKind::adam ? p.value.numel() : 0, T(0));
  }
}

template <typename T>
void Optimizer<T>::step() {
  ++t_;
  const T lr = static_cast<T>(config_.learning_rate);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  const double c1 = 1 - std::pow(kBeta1, static_cast<double>(t_));
  const double c2 = 1 - std::pow(kBeta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor<T>& w = params_[i].value;
    if (!w.has_grad()) continue;
    auto data = w.mutable_data();
    const auto grad = w.grad();
    auto& m = m_[i];
    if (config_.optimizer == OptimizerKind::adam) {
      auto& v = v_[i];
      for (std::size_t j = 0; j < data.size(); ++j) {
        const double g = grad[j];
        m[j] = static_cast<T>(kBeta1 * m[j] + (1 - kBeta1) * g);
        v[j] = static_cast<T>(kBeta2 * v[j] + (1 - kBeta2) * g * g);
        data[j] -= static_cast<T>(lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + kEps));
      }
    } else {
      const T mu = static_cast<T>(config_.momentum);
      for (std::size_t j = 0; j < data.size(); ++j) {
        m[j] = mu * m[j] + grad[j];
        data[j] -= lr * m[j];
      }
    }
  }
  zero_grad();
}

template <typename T>
void Optimizer<T>::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

namespace {

struct ClipRange {
  std::size_t begin;  // positions within the frame batch
  std::size_t end;
};

std::string loss_diagnostics(std::size_t step, double clip, double image) {
  std::ostringstream os;
  os << "training: non-finite loss at step " << step << " (clip " << clip << ", image " << image
     << "); lower train.learning_rate or check the data";
  return os.str();
}

// Reference (position 0) seeds memory from masks[0]; each clip is then
// predicted, scored, and its last frame joins memory with the predicted
// probabilities, keeping the gradient path through the memory value. Loss
// terms are summed over clips.
template <typename T>
StepMetrics run_clips(Model<T>& model, const TrainConfig& config, const Tensor<T>& frames,
                      const std::vector<const Bytes*>& masks, const std::vector<ClipRange>& clips,
                      std::size_t k_obj, std::size_t height, std::size_t width, std::size_t step,
                      std::size_t total_steps, bool backward) {
  GradTape tape;
  std::optional<TapeScope> scope;
  std::optional<NoGradScope> no_grad;
  if (backward) {
    scope.emplace(tape);
  } else {
    no_grad.emplace();
  }

  InferenceOptions options;
  options.icr = model.has_icr();
  options.pmm.enabled = false;

  const KeyFeatures<T> features = model.encode_key(frames);
  MemoryBank<T> bank;
  {
    const auto entry = model.memory_entry(slice(frames, 0, 0, 1), features.slice(0, 1),
                                          one_hot_objects<T>(*masks[0], height, width, k_obj));
    bank.append(entry.key, entry.value, MemoryTier::permanent);
  }

  const std::size_t plane = height * width;
  StepMetrics metrics;
  metrics.step = step;
  Tensor<T> total;
  for (std::size_t c = 0; c < clips.size(); ++c) {
    const auto [begin, end] = clips[c];
    const std::size_t len = end - begin;
    if (c + 1 == clips.size()) metrics.memory_frames_second_clip = bank.permanent_frames();
    const KeyFeatures<T> clip_features = features.slice(begin, end);
    const ClipPrediction<T> pred = model.forward_clip(clip_features, bank, options);
    std::vector<std::uint8_t> labels;
    labels.reserve(len * plane);
    for (std::size_t i = begin; i < end; ++i) labels.insert(labels.end(), masks[i]->begin(), masks[i]->end());
    const LossTerms<T> terms = total_loss(pred.probs, labels, config, step, total_steps);
    metrics.clip_loss += static_cast<double>(terms.clip.item());
    metrics.image_loss += static_cast<double>(terms.image.item());
    total = total.defined() ? add(total, terms.total) : terms.total;
    if (c + 1 < clips.size()) {
      const Tensor<T> last_probs =
          reshape(slice(slice(pred.probs, 0, 1, k_obj + 1), 1, len - 1, len), {k_obj, height, width});
      const auto entry =
          model.memory_entry(slice(frames, 0, end - 1, end), features.slice(end - 1, end), last_probs);
      bank.append(entry.key, entry.value, MemoryTier::permanent);
    }
  }
  metrics.total = static_cast<double>(total.item());
  if (!std::isfinite(metrics.total)) throw NonFiniteError(loss_diagnostics(step, metrics.clip_loss, metrics.image_loss));
  if (backward) tape.backward(total);
  return metrics;
}

}  // namespace

template <typename T>
Trainer<T>::Trainer(Model<T>& model, const TrainConfig& config)
    : model_(model), config_(config), optimizer_(model.parameters(), config) {
  config_.validate();
}

template <typename T>
StepMetrics Trainer<T>::video_loss(const VideoSequence& seq, const TrainingSample& sample, std::size_t step,
                                   std::size_t total_steps, bool backward) {
  if (sample.clip1.empty() || sample.clip2.empty()) throw std::invalid_argument("video_loss: empty clip in sample");
  const auto idx = sample.indices();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= seq.length() || (i > 0 && idx[i] <= idx[i - 1])) {
      throw std::invalid_argument("video_loss: sample indices must increase and lie inside the sequence");
    }
  }
  std::vector<const Bytes*> masks;
  for (std::size_t i : idx) masks.push_back(&seq.masks[i]);
  const std::size_t n1 = sample.clip1.size();
  std::vector<ClipRange> clips;
  if (config_.frame_wise) {
    for (std::size_t i = 1; i < idx.size(); ++i) clips.push_back({i, i + 1});
  } else {
    clips = {{1, 1 + n1}, {1 + n1, idx.size()}};
  }
  return run_clips(model_, config_, frames_to_tensor<T>(seq, idx), masks, clips, seq.num_objects(), seq.height,
                   seq.width, step, total_steps, backward);
}

template <typename T>
StepMetrics Trainer<T>::still_loss(const VideoSequence& triplet, std::size_t step, std::size_t total_steps,
                                   bool backward) {
  if (triplet.length() < 2) throw std::invalid_argument("still_loss: needs a reference and at least one frame");
  std::vector<std::size_t> idx(triplet.length());
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<const Bytes*> masks;
  for (const auto& m : triplet.masks) masks.push_back(&m);
  std::vector<ClipRange> clips;
  if (config_.frame_wise) {
    for (std::size_t i = 1; i < idx.size(); ++i) clips.push_back({i, i + 1});
  } else {
    clips = {{1, idx.size()}};
  }
  return run_clips(model_, config_, frames_to_tensor<T>(triplet, idx), masks, clips, triplet.num_objects(),
                   triplet.height, triplet.width, step, total_steps, backward);
}

template <typename T>
StepMetrics Trainer<T>::train_step(const VideoSequence& seq, const TrainingSample& sample, std::size_t step,
                                   std::size_t total_steps) {
  optimizer_.zero_grad();
  const StepMetrics m = video_loss(seq, sample, step, total_steps, true);
  optimizer_.step();
  return m;
}

template <typename T>
StepMetrics Trainer<T>::pretrain_step(const VideoSequence& triplet, std::size_t step, std::size_t total_steps) {
  optimizer_.zero_grad();
  const StepMetrics m = still_loss(triplet, step, total_steps, true);
  optimizer_.step();
  return m;
}

namespace {

class MetricsLog {
 public:
  explicit MetricsLog(const std::filesystem::path& path) {
    if (path.empty()) return;
    const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    os_.open(path, std::ios::app);
    if (!os_) throw std::runtime_error("cannot write " + path.string());
    if (fresh) os_ << "step,L_clip,L_image,total\n";
  }
  void write(const StepMetrics& m) {
    if (!os_.is_open()) return;
    char line[128];
    std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%.9g\n", m.step, m.clip_loss, m.image_loss, m.total);
    os_ << line;
  }

 private:
  std::ofstream os_;
};

void report(const char* stage, const StepMetrics& m, std::size_t total, const TrainLoopOptions& options,
            MetricsLog& log) {
  log.write(m);
  if (options.log_every && (m.step % options.log_every == 0 || m.step + 1 == total)) {
    std::fprintf(stderr, "%s %zu/%zu  clip %.4f  image %.4f  total %.4f\n", stage, m.step + 1, total, m.clip_loss,
                 m.image_loss, m.total);
  }
  if (options.on_step) options.on_step(m);
}

}  // namespace

void pretrain(Model<float>& model, const TrainConfig& config, const std::vector<VideoSequence>& sources,
              const TrainLoopOptions& options) {
  config.validate();
  if (sources.empty()) throw std::invalid_argument("pretrain: no source sequences");
  Trainer<float> trainer(model, config);
  MetricsLog log(options.metrics_csv);
  std::mt19937_64 rng(config.seed);
  const std::size_t total = config.pretrain_steps;
  for (std::size_t step = 0; step < total; ++step) {
    const auto& seq = sources[std::uniform_int_distribution<std::size_t>(0, sources.size() - 1)(rng)];
    const std::size_t t = std::uniform_int_distribution<std::size_t>(0, seq.length() - 1)(rng);
    VideoSequence triplet =
        deform_still(seq.frames[t], seq.masks[t], seq.width, seq.height, config.pretrain_frames, rng());
    report("pretrain", trainer.pretrain_step(triplet, step, total), total, options, log);
  }
}

void finetune(Model<float>& model, const TrainConfig& config, const std::vector<VideoSequence>& videos,
              const TrainLoopOptions& options) {
  config.validate();
  if (videos.empty()) throw std::invalid_argument("finetune: no training videos");
  Trainer<float> trainer(model, config);
  MetricsLog log(options.metrics_csv);
  std::mt19937_64 rng(config.seed + 1);
  const std::size_t total = config.steps;
  const std::size_t clip_frames = config.frame_wise ? 1 : config.clip_frames;
  for (std::size_t step = 0; step < total; ++step) {
    const auto& seq = videos[std::uniform_int_distribution<std::size_t>(0, videos.size() - 1)(rng)];
    const TrainingSample sample = sample_training_example(seq.length(), clip_frames, config, step, total, rng);
    report("train", trainer.train_step(seq, sample, step, total), total, options, log);
  }
}

#define CLIPVOS_INSTANTIATE(T)                                                                                      \
  template Tensor<T> dice_clip_loss<T>(const Tensor<T>&, const Tensor<T>&, T);                                      \
  template Tensor<T> bootstrap_ce_loss<T>(const Tensor<T>&, const std::vector<std::uint8_t>&, double, std::size_t, \
                                          std::size_t);                                                             \
  template LossTerms<T> total_loss<T>(const Tensor<T>&, const std::vector<std::uint8_t>&, const TrainConfig&,       \
                                      std::size_t, std::size_t);                                                    \
  template class Optimizer<T>;                                                                                      \
  template class Trainer<T>;

CLIPVOS_INSTANTIATE(float)
CLIPVOS_INSTANTIATE(double)

#undef CLIPVOS_INSTANTIATE

}  // namespace clipvos
