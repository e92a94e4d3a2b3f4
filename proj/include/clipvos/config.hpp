#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace clipvos {

struct EncoderConfig {
  std::size_t feature_stride = 4;
  std::size_t key_channels = 16;        // C_k
  std::size_t value_channels = 32;      // C_v
  std::size_t intra_key_channels = 32;  // C_k'
  // Key trunk widths: one per stride-2 stage, then the stride-1 stage.
  std::vector<std::size_t> key_stage_channels = {16, 32, 32};
  // Value trunk widths, one per stride-2 stage.
  std::vector<std::size_t> value_stage_channels = {16, 32};
  // Decoder widths from the feature stride up to full resolution.
  std::vector<std::size_t> decoder_channels = {32, 16, 8};
  bool use_others_mask = true;
  // Local keys come from a 1x1 head on the full key trunk; when false they
  // branch off after the last strided stage with their own 3x3 conv.
  bool intra_key_shares_trunk = true;

  std::size_t downsample_stages() const;
  void validate() const;
};

struct IcrConfig {
  bool enabled = true;
  std::size_t num_layers = 2;
  std::size_t width = 32;
  std::size_t temporal_window = 2;
  std::size_t spatial_window = 7;
  std::size_t heads = 1;
  std::size_t ffn_ratio = 4;
  bool position_bias = false;

  void validate() const;
};

struct PmmConfig {
  bool enabled = true;
  std::size_t segment_length = 5;  // F

  void validate() const;
};

enum class OptimizerKind { adam, sgd };

struct TrainConfig {
  std::size_t clip_frames = 3;  // N; a sample holds 2N + 1 frames
  std::size_t inter_gap_start = 5;
  std::size_t inter_gap_peak = 15;
  std::size_t inter_gap_end = 5;
  std::size_t intra_gap_max = 5;
  double bootstrap_ratio = 0.15;
  double warmup_fraction = 0.2;
  double clip_loss_weight = 1.0;
  double image_loss_weight = 1.0;
  OptimizerKind optimizer = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  std::size_t pretrain_steps = 2000;
  std::size_t steps = 5000;
  std::size_t pretrain_frames = 3;
  // Per-frame baseline scheme: 3 frames processed one at a time, image loss only.
  bool frame_wise = false;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SynthConfig {
  std::size_t width = 64;
  std::size_t height = 64;
  std::size_t min_objects = 1;
  std::size_t max_objects = 2;
  std::size_t length = 40;
  double min_size = 7.0;   // object radius in pixels
  double max_size = 13.0;
  double max_speed = 1.5;  // pixels per frame
  double occlusion_probability = 0.3;
  double noise = 0.04;        // per-pixel texture noise, fraction of full scale
  double color_drift = 0.02;  // per-frame colour change, fraction of full scale
  std::uint64_t seed = 0;

  void validate() const;
};

struct PipelineConfig {
  std::string preset = "desk";
  std::size_t clip_length = 5;       // L
  std::optional<std::size_t> top_k = 20;
  std::size_t threads = 1;
  std::uint64_t seed = 1;
  EncoderConfig encoder;
  IcrConfig icr;
  PmmConfig pmm;
  TrainConfig train;
  SynthConfig data;

  void validate() const;
};

PipelineConfig desk_preset();
// Channel widths of the full-size model: C_k 64, C_v 512, refinement width 256.
PipelineConfig paper_preset();
PipelineConfig preset_by_name(const std::string& name);

// Flat key-value file with [sections] named after the sub-configs.
PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base = desk_preset());
void save_config(const PipelineConfig& config, const std::filesystem::path& path);

// Thread count after applying the CLIPVOS_THREADS override.
std::size_t effective_threads(const PipelineConfig& config);

}  // namespace clipvos
