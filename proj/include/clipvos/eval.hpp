#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "clipvos/data.hpp"
#include "clipvos/model.hpp"

namespace clipvos {

// Intersection over union of label `object`; 1 when both masks lack it and
// 0 when exactly one does.
double region_j(const Bytes& pred, const Bytes& gt, std::uint8_t object);

// max(1, round(0.008 * image diagonal)).
std::size_t default_boundary_tolerance(std::size_t width, std::size_t height);

// Boundary F-measure. Boundary pixels are object pixels with a 4-neighbour
// outside the object (or on the image border); a boundary pixel matches when
// the other boundary has a pixel within Euclidean distance tol_px.
double boundary_f(const Bytes& pred, const Bytes& gt, std::size_t width, std::size_t height, std::uint8_t object,
                  std::optional<std::size_t> tol_px = std::nullopt);

struct ObjectScore {
  double j = 0;
  double f = 0;
};

struct JFScores {
  double j = 0;
  double f = 0;
  double jf = 0;
};

// Per-object scores averaged over frames 1..T-1 (frame 0 is given).
std::vector<ObjectScore> evaluate_sequence(const std::vector<Bytes>& pred, const VideoSequence& gt);

// Mean J and mean F over every (sequence, object) pair, and their mean.
JFScores jf_overall(const std::vector<std::vector<ObjectScore>>& per_sequence);

struct BenchmarkRow {
  std::size_t clip_length = 0;
  std::size_t segment_length = 0;  // 0 when progressive matching is off
  std::size_t threads = 1;
  double fps = 0;
  double seconds = 0;  // median wall time over all sequences
  JFScores scores;
};

// For every clip length: median over `repeats` timed runs of full inference
// on all sequences (frames converted to tensors beforehand), plus J&F.
std::vector<BenchmarkRow> benchmark_fps(const Model<float>& model, const std::vector<VideoSequence>& sequences,
                                        const std::vector<std::size_t>& clip_lengths, const PipelineConfig& config,
                                        std::size_t repeats = 3);

void write_benchmark_csv(const std::vector<BenchmarkRow>& rows, const std::filesystem::path& path);

}  // namespace clipvos
