#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "clipvos/config.hpp"
#include "clipvos/tensor.hpp"

namespace clipvos {

using Bytes = std::vector<std::uint8_t>;

// Frames are interleaved RGB (H*W*3), masks are label maps (H*W) with 0 as
// background and 1..K for objects.
struct VideoSequence {
  std::size_t width = 0;
  std::size_t height = 0;
  double fps = 25.0;
  std::vector<Bytes> frames;
  std::vector<Bytes> masks;

  std::size_t length() const { return frames.size(); }
  // Largest label over all masks.
  std::size_t num_objects() const;
  // Throws on unequal lengths or wrongly sized buffers.
  void validate() const;
};

enum class ShapeKind { circle, rectangle, triangle };

// Pose of one rendered object in one frame.
struct ShapeState {
  ShapeKind kind = ShapeKind::circle;
  double cx = 0, cy = 0;
  double radius = 1;  // circumradius before scaling
  double aspect = 1;  // rectangle height / width
  double angle = 0;
  double scale = 1;

  bool contains(double x, double y) const;
};

struct SyntheticScene {
  VideoSequence sequence;
  // states[t][i] is object i (label i + 1) at frame t.
  std::vector<std::vector<ShapeState>> states;
  // Object indices from back to front.
  std::vector<std::size_t> z_order;
};

// Moving textured shapes over a textured background. Deterministic in
// config.seed. Throws when an object cannot fit the frame.
SyntheticScene generate_scene(const SynthConfig& config);
inline VideoSequence generate_sequence(const SynthConfig& config) { return generate_scene(config).sequence; }

// `count` sequences with seeds first_seed, first_seed + 1, ...
std::vector<VideoSequence> generate_dataset(SynthConfig config, std::size_t count, std::uint64_t first_seed);

// Output-to-source mapping: a piecewise-affine warp over a triangulated grid
// followed by a global affine about the image center. magnitude 0 is the
// identity.
class WarpField {
 public:
  WarpField(std::size_t width, std::size_t height, double magnitude, std::mt19937_64& rng,
            std::size_t grid_cells = 4);

  std::array<double, 2> source(double x, double y) const;
  // Range of the source-area scale factor |det J| over all triangles.
  std::array<double, 2> jacobian_range() const;

 private:
  std::array<double, 2> displacement(double x, double y) const;

  std::size_t width_, height_, cells_;
  double cell_w_, cell_h_;
  std::vector<std::array<double, 2>> nodes_;  // (cells+1)^2 displacements
  std::array<double, 4> affine_{1, 0, 0, 1};  // row-major 2x2
  std::array<double, 2> shift_{0, 0};
};

// Bilinear image sampling and nearest-label mask sampling through `warp`.
// Pixels whose source lies outside the image take the edge colour and label 0.
void warp_frame(const Bytes& image, const Bytes& mask, std::size_t width, std::size_t height,
                const WarpField& warp, Bytes& out_image, Bytes& out_mask);

// Frame 0 is the input; every later frame is an independent random warp.
VideoSequence deform_still(const Bytes& image, const Bytes& mask, std::size_t width, std::size_t height,
                           std::size_t n_frames, std::uint64_t seed, double magnitude = 1.0);

// frames/%05d.ppm and masks/%05d.pgm.
void save_sequence(const VideoSequence& seq, const std::filesystem::path& dir);
VideoSequence load_sequence(const std::filesystem::path& dir);

// One sequence per subdirectory named %03d; load sorts subdirectories by name.
void save_dataset(const std::vector<VideoSequence>& seqs, const std::filesystem::path& dir);
std::vector<VideoSequence> load_dataset(const std::filesystem::path& dir);

void write_ppm(const std::filesystem::path& path, const Bytes& rgb, std::size_t width, std::size_t height);
void write_pgm(const std::filesystem::path& path, const Bytes& gray, std::size_t width, std::size_t height);
Bytes read_ppm(const std::filesystem::path& path, std::size_t& width, std::size_t& height);
Bytes read_pgm(const std::filesystem::path& path, std::size_t& width, std::size_t& height);

// Frames [indices] as [B x 3 x H x W] with values scaled to [-1, 1].
template <typename T>
Tensor<T> frames_to_tensor(const VideoSequence& seq, const std::vector<std::size_t>& indices);

}  // namespace clipvos
