#include "clipvos/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace clipvos {

namespace {

constexpr double kPi = std::numbers::pi;
// Largest scale factor of the size wobble.
constexpr double kMaxScale = 1.12;

// Reflects v into [lo, hi] as if bouncing off both walls.
double fold(double v, double lo, double hi) {
  const double span = hi - lo;
  if (span <= 0) return lo;
  double u = std::fmod(v - lo, 2 * span);
  if (u < 0) u += 2 * span;
  return lo + (u <= span ? u : 2 * span - u);
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

using Color = std::array<double, 3>;

double color_distance(const Color& a, const Color& b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

Color distinct_color(std::mt19937_64& rng, const std::vector<Color>& taken, double min_distance) {
  std::uniform_real_distribution<double> channel(30.0, 225.0);
  Color best{};
  double best_gap = -1;
  for (int attempt = 0; attempt < 200; ++attempt) {
    Color c{channel(rng), channel(rng), channel(rng)};
    double gap = 1e9;
    for (const auto& t : taken) gap = std::min(gap, color_distance(c, t));
    if (gap >= min_distance) return c;
    if (gap > best_gap) {
      best_gap = gap;
      best = c;
    }
  }
  return best;
}

struct Trajectory {
  double x0, y0, vx, vy;
  double ax, ay, wx, wy, px, py;  // sinusoidal wobble per axis
  double angle0, spin;
  double scale_freq, scale_phase, scale_amp;

  double raw_x(double t) const { return x0 + vx * t + ax * std::sin(wx * t + px); }
  double raw_y(double t) const { return y0 + vy * t + ay * std::sin(wy * t + py); }
};

void skip_comments(std::istream& is) {
  while (true) {
    is >> std::ws;
    if (is.peek() != '#') return;
    std::string line;
    std::getline(is, line);
  }
}

Bytes read_pnm(const std::filesystem::path& path, const char* magic, std::size_t channels, std::size_t& width,
               std::size_t& height) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::string m;
  is >> m;
  if (m != magic) throw std::runtime_error(path.string() + ": expected " + magic + " header, got '" + m + "'");
  std::size_t maxval = 0;
  skip_comments(is);
  is >> width;
  skip_comments(is);
  is >> height;
  skip_comments(is);
  is >> maxval;
  if (!is || maxval != 255 || width == 0 || height == 0) {
    throw std::runtime_error(path.string() + ": unsupported header (8-bit only)");
  }
  is.get();
  Bytes data(width * height * channels);
  is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (is.gcount() != static_cast<std::streamsize>(data.size())) {
    throw std::runtime_error(path.string() + ": truncated pixel data");
  }
  return data;
}

void write_pnm(const std::filesystem::path& path, const char* magic, const Bytes& data, std::size_t width,
               std::size_t height, std::size_t channels) {
  if (data.size() != width * height * channels) {
    throw std::invalid_argument("write " + path.string() + ": buffer size does not match " + std::to_string(width) +
                                "x" + std::to_string(height));
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << magic << "\n" << width << " " << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

std::string indexed_name(std::size_t i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%05zu.%s", i, ext);
  return buf;
}

}  // namespace

std::size_t VideoSequence::num_objects() const {
  std::uint8_t k = 0;
  for (const auto& m : masks) {
    for (std::uint8_t v : m) k = std::max(k, v);
  }
  return k;
}

void VideoSequence::validate() const {
  if (frames.size() != masks.size()) {
    throw std::runtime_error("sequence has " + std::to_string(frames.size()) + " frames but " +
                             std::to_string(masks.size()) + " masks");
  }
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].size() != width * height * 3 || masks[i].size() != width * height) {
      throw std::runtime_error("frame " + std::to_string(i) + " does not match the " + std::to_string(width) + "x" +
                               std::to_string(height) + " sequence resolution");
    }
  }
}

bool ShapeState::contains(double x, double y) const {
  const double dx = x - cx, dy = y - cy;
  const double c = std::cos(angle), s = std::sin(angle);
  const double lx = (c * dx + s * dy) / scale;
  const double ly = (-s * dx + c * dy) / scale;
  switch (kind) {
    case ShapeKind::circle:
      return lx * lx + ly * ly <= radius * radius;
    case ShapeKind::rectangle: {
      // Half-extents chosen so the corners sit on the circumradius.
      const double hw = radius / std::sqrt(1 + aspect * aspect);
      return std::abs(lx) <= hw && std::abs(ly) <= hw * aspect;
    }
    case ShapeKind::triangle: {
      // Equilateral: each edge lies at distance radius / 2 from the center.
      for (double deg : {90.0, 210.0, 330.0}) {
        const double a = deg * kPi / 180.0;
        if (std::cos(a) * lx + std::sin(a) * ly > radius / 2) return false;
      }
      return true;
    }
  }
  return false;
}

SyntheticScene generate_scene(const SynthConfig& config) {
  config.validate();
  const double w = static_cast<double>(config.width), h = static_cast<double>(config.height);
  if (2 * config.max_size * kMaxScale > std::min(w, h)) {
    throw std::invalid_argument("synthetic object of radius " + std::to_string(config.max_size) +
                                " does not fit a " + std::to_string(config.width) + "x" +
                                std::to_string(config.height) + " frame");
  }
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  std::normal_distribution<double> gauss(0.0, 1.0);

  const std::size_t k_obj = std::uniform_int_distribution<std::size_t>(config.min_objects, config.max_objects)(rng);
  const std::size_t length = config.length;

  // Background: base colour with a smooth fixed pattern.
  std::vector<Color> palette;
  Color bg = distinct_color(rng, {}, 0);
  palette.push_back(bg);
  const double bg_fx = uniform(0.05, 0.2), bg_fy = uniform(0.05, 0.2);
  const double bg_px = uniform(0, 2 * kPi), bg_py = uniform(0, 2 * kPi);
  const double bg_amp = uniform(10, 25);

  std::vector<ShapeState> shapes(k_obj);
  std::vector<Trajectory> traj(k_obj);
  std::vector<Color> color(k_obj);
  std::vector<double> tex_freq(k_obj), tex_phase(k_obj);
  for (std::size_t i = 0; i < k_obj; ++i) {
    ShapeState& s = shapes[i];
    s.kind = static_cast<ShapeKind>(std::uniform_int_distribution<int>(0, 2)(rng));
    s.radius = uniform(config.min_size, config.max_size);
    s.aspect = uniform(0.6, 1.0);
    Trajectory& tr = traj[i];
    const double speed = uniform(0, config.max_speed);
    const double dir = uniform(0, 2 * kPi);
    tr.vx = speed * std::cos(dir);
    tr.vy = speed * std::sin(dir);
    // Wobble, spin and size pulsing scale with the speed limit, so a zero
    // speed limit gives static objects.
    const double motion = config.max_speed / 1.5;
    tr.ax = uniform(0, 2 * config.max_speed);
    tr.ay = uniform(0, 2 * config.max_speed);
    tr.wx = uniform(0.1, 0.4);
    tr.wy = uniform(0.1, 0.4);
    tr.px = uniform(0, 2 * kPi);
    tr.py = uniform(0, 2 * kPi);
    tr.x0 = uniform(0, w);
    tr.y0 = uniform(0, h);
    tr.angle0 = uniform(0, 2 * kPi);
    tr.spin = uniform(-0.05, 0.05) * motion;
    tr.scale_amp = (kMaxScale - 1.0) * std::min(1.0, motion);
    tr.scale_freq = uniform(0.05, 0.2);
    tr.scale_phase = uniform(0, 2 * kPi);
    color[i] = distinct_color(rng, palette, 90);
    palette.push_back(color[i]);
    tex_freq[i] = uniform(0.3, 0.8);
    tex_phase[i] = uniform(0, 2 * kPi);
  }
  // An occluding pair shares its unfolded position at mid-sequence, so the
  // folded positions coincide there as well.
  for (std::size_t i = 1; i < k_obj; ++i) {
    if (unit(rng) >= config.occlusion_probability) continue;
    const double tm = static_cast<double>(length) / 2;
    Trajectory& tr = traj[i];
    tr.x0 += traj[0].raw_x(tm) - tr.raw_x(tm);
    tr.y0 += traj[0].raw_y(tm) - tr.raw_y(tm);
  }
  std::vector<std::size_t> z(k_obj);
  for (std::size_t i = 0; i < k_obj; ++i) z[i] = i;
  std::shuffle(z.begin(), z.end(), rng);

  SyntheticScene scene;
  scene.z_order = z;
  VideoSequence& seq = scene.sequence;
  seq.width = config.width;
  seq.height = config.height;
  const double drift = config.color_drift * 255.0;
  const double noise = config.noise * 255.0;
  for (std::size_t t = 0; t < length; ++t) {
    const double td = static_cast<double>(t);
    for (std::size_t i = 0; i < k_obj; ++i) {
      ShapeState& s = shapes[i];
      const Trajectory& tr = traj[i];
      const double margin = s.radius;
      s.cx = fold(tr.raw_x(td), margin, w - margin);
      s.cy = fold(tr.raw_y(td), margin, h - margin);
      s.angle = tr.angle0 + tr.spin * td;
      s.scale = 1.0 + tr.scale_amp * std::sin(tr.scale_freq * td + tr.scale_phase);
    }
    scene.states.push_back(shapes);

    Bytes frame(config.width * config.height * 3);
    Bytes mask(config.width * config.height, 0);
    for (std::size_t y = 0; y < config.height; ++y) {
      for (std::size_t x = 0; x < config.width; ++x) {
        const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
        int top = -1;
        for (std::size_t zi : z) {
          if (shapes[zi].contains(px, py)) top = static_cast<int>(zi);
        }
        Color c;
        if (top < 0) {
          const double pattern = bg_amp * std::sin(bg_fx * px + bg_px) * std::cos(bg_fy * py + bg_py);
          for (int ch = 0; ch < 3; ++ch) c[ch] = bg[ch] + pattern;
        } else {
          const ShapeState& s = shapes[top];
          const double dx = px - s.cx, dy = py - s.cy;
          const double lx = std::cos(s.angle) * dx + std::sin(s.angle) * dy;
          const double stripe = 18.0 * std::sin(tex_freq[top] * lx / s.scale + tex_phase[top]);
          for (int ch = 0; ch < 3; ++ch) c[ch] = color[top][ch] + stripe;
          mask[y * config.width + x] = static_cast<std::uint8_t>(top + 1);
        }
        for (int ch = 0; ch < 3; ++ch) frame[(y * config.width + x) * 3 + ch] = to_byte(c[ch] + noise * gauss(rng));
      }
    }
    seq.frames.push_back(std::move(frame));
    seq.masks.push_back(std::move(mask));

    // Colours wander over time, so old memory frames drift out of date.
    auto wander = [&](Color& col) {
      for (double& ch : col) ch = std::clamp(ch + drift * gauss(rng), 20.0, 235.0);
    };
    wander(bg);
    for (auto& col : color) wander(col);
  }
  return scene;
}

std::vector<VideoSequence> generate_dataset(SynthConfig config, std::size_t count, std::uint64_t first_seed) {
  std::vector<VideoSequence> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    config.seed = first_seed + i;
    out.push_back(generate_sequence(config));
  }
  return out;
}

WarpField::WarpField(std::size_t width, std::size_t height, double magnitude, std::mt19937_64& rng,
                     std::size_t grid_cells)
    : width_(width),
      height_(height),
      cells_(grid_cells),
      cell_w_(static_cast<double>(width) / static_cast<double>(grid_cells)),
      cell_h_(static_cast<double>(height) / static_cast<double>(grid_cells)) {
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  // Node jitter below a quarter cell keeps every triangle's orientation.
  const double jitter = 0.15 * std::min(cell_w_, cell_h_) * magnitude;
  nodes_.resize((cells_ + 1) * (cells_ + 1));
  for (auto& n : nodes_) n = {jitter * sym(rng), jitter * sym(rng)};
  const double angle = 0.15 * magnitude * sym(rng);
  const double scale = 1.0 + 0.1 * magnitude * sym(rng);
  const double shear = 0.05 * magnitude * sym(rng);
  affine_ = {scale * std::cos(angle), -scale * std::sin(angle) + shear, scale * std::sin(angle),
             scale * std::cos(angle)};
  shift_ = {0.06 * static_cast<double>(width) * magnitude * sym(rng),
            0.06 * static_cast<double>(height) * magnitude * sym(rng)};
}

std::array<double, 2> WarpField::displacement(double x, double y) const {
  const double gx = std::clamp(x / cell_w_, 0.0, static_cast<double>(cells_) - 1e-9);
  const double gy = std::clamp(y / cell_h_, 0.0, static_cast<double>(cells_) - 1e-9);
  const std::size_t ci = static_cast<std::size_t>(gx), cj = static_cast<std::size_t>(gy);
  const double u = gx - static_cast<double>(ci), v = gy - static_cast<double>(cj);
  const auto& d00 = nodes_[cj * (cells_ + 1) + ci];
  const auto& d10 = nodes_[cj * (cells_ + 1) + ci + 1];
  const auto& d01 = nodes_[(cj + 1) * (cells_ + 1) + ci];
  const auto& d11 = nodes_[(cj + 1) * (cells_ + 1) + ci + 1];
  std::array<double, 2> d;
  for (int a = 0; a < 2; ++a) {
    d[a] = u + v <= 1 ? d00[a] + u * (d10[a] - d00[a]) + v * (d01[a] - d00[a])
                      : d11[a] + (1 - u) * (d01[a] - d11[a]) + (1 - v) * (d10[a] - d11[a]);
  }
  return d;
}

std::array<double, 2> WarpField::source(double x, double y) const {
  const auto d = displacement(x, y);
  const double qx = x + d[0] - static_cast<double>(width_) / 2;
  const double qy = y + d[1] - static_cast<double>(height_) / 2;
  return {affine_[0] * qx + affine_[1] * qy + static_cast<double>(width_) / 2 + shift_[0],
          affine_[2] * qx + affine_[3] * qy + static_cast<double>(height_) / 2 + shift_[1]};
}

std::array<double, 2> WarpField::jacobian_range() const {
  const double affine_det = std::abs(affine_[0] * affine_[3] - affine_[1] * affine_[2]);
  double lo = 1e300, hi = 0;
  for (std::size_t cj = 0; cj < cells_; ++cj) {
    for (std::size_t ci = 0; ci < cells_; ++ci) {
      const auto& d00 = nodes_[cj * (cells_ + 1) + ci];
      const auto& d10 = nodes_[cj * (cells_ + 1) + ci + 1];
      const auto& d01 = nodes_[(cj + 1) * (cells_ + 1) + ci];
      const auto& d11 = nodes_[(cj + 1) * (cells_ + 1) + ci + 1];
      // Per-triangle gradient of x + d(x): columns are d/dx and d/dy.
      const std::array<std::array<double, 4>, 2> grads = {{
          {1 + (d10[0] - d00[0]) / cell_w_, (d01[0] - d00[0]) / cell_h_, (d10[1] - d00[1]) / cell_w_,
           1 + (d01[1] - d00[1]) / cell_h_},
          {1 + (d11[0] - d01[0]) / cell_w_, (d11[0] - d10[0]) / cell_h_, (d11[1] - d01[1]) / cell_w_,
           1 + (d11[1] - d10[1]) / cell_h_},
      }};
      for (const auto& g : grads) {
        const double det = std::abs(g[0] * g[3] - g[1] * g[2]) * affine_det;
        lo = std::min(lo, det);
        hi = std::max(hi, det);
      }
    }
  }
  return {lo, hi};
}

void warp_frame(const Bytes& image, const Bytes& mask, std::size_t width, std::size_t height,
                const WarpField& warp, Bytes& out_image, Bytes& out_mask) {
  out_image.assign(width * height * 3, 0);
  out_mask.assign(width * height, 0);
  const double wmax = static_cast<double>(width) - 1, hmax = static_cast<double>(height) - 1;
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const auto src = warp.source(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5);
      // Pixel-center coordinates to index space.
      const double sx = src[0] - 0.5, sy = src[1] - 0.5;
      const double cx = std::clamp(sx, 0.0, wmax), cy = std::clamp(sy, 0.0, hmax);
      const std::size_t x0 = static_cast<std::size_t>(cx), y0 = static_cast<std::size_t>(cy);
      const std::size_t x1 = std::min(x0 + 1, width - 1), y1 = std::min(y0 + 1, height - 1);
      const double fx = cx - static_cast<double>(x0), fy = cy - static_cast<double>(y0);
      for (int ch = 0; ch < 3; ++ch) {
        auto px = [&](std::size_t xx, std::size_t yy) { return static_cast<double>(image[(yy * width + xx) * 3 + ch]); };
        const double v = (1 - fy) * ((1 - fx) * px(x0, y0) + fx * px(x1, y0)) + fy * ((1 - fx) * px(x0, y1) + fx * px(x1, y1));
        out_image[(y * width + x) * 3 + ch] = to_byte(v);
      }
      const long nx = std::lround(sx), ny = std::lround(sy);
      if (nx >= 0 && ny >= 0 && nx < static_cast<long>(width) && ny < static_cast<long>(height)) {
        out_mask[y * width + x] = mask[static_cast<std::size_t>(ny) * width + static_cast<std::size_t>(nx)];
      }
    }
  }
}

VideoSequence deform_still(const Bytes& image, const Bytes& mask, std::size_t width, std::size_t height,
                           std::size_t n_frames, std::uint64_t seed, double magnitude) {
  if (image.size() != width * height * 3 || mask.size() != width * height) {
    throw std::invalid_argument("deform_still: buffers do not match " + std::to_string(width) + "x" +
                                std::to_string(height));
  }
  if (n_frames == 0) throw std::invalid_argument("deform_still: n_frames must be at least 1");
  VideoSequence seq;
  seq.width = width;
  seq.height = height;
  seq.frames.push_back(image);
  seq.masks.push_back(mask);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 1; i < n_frames; ++i) {
    const WarpField warp(width, height, magnitude, rng);
    Bytes img, msk;
    warp_frame(image, mask, width, height, warp, img, msk);
    seq.frames.push_back(std::move(img));
    seq.masks.push_back(std::move(msk));
  }
  return seq;
}

void write_ppm(const std::filesystem::path& path, const Bytes& rgb, std::size_t width, std::size_t height) {
  write_pnm(path, "P6", rgb, width, height, 3);
}

void write_pgm(const std::filesystem::path& path, const Bytes& gray, std::size_t width, std::size_t height) {
  write_pnm(path, "P5", gray, width, height, 1);
}

Bytes read_ppm(const std::filesystem::path& path, std::size_t& width, std::size_t& height) {
  return read_pnm(path, "P6", 3, width, height);
}

Bytes read_pgm(const std::filesystem::path& path, std::size_t& width, std::size_t& height) {
  return read_pnm(path, "P5", 1, width, height);
}

void save_sequence(const VideoSequence& seq, const std::filesystem::path& dir) {
  seq.validate();
  std::filesystem::create_directories(dir / "frames");
  std::filesystem::create_directories(dir / "masks");
  for (std::size_t i = 0; i < seq.length(); ++i) {
    write_ppm(dir / "frames" / indexed_name(i, "ppm"), seq.frames[i], seq.width, seq.height);
    write_pgm(dir / "masks" / indexed_name(i, "pgm"), seq.masks[i], seq.width, seq.height);
  }
}

VideoSequence load_sequence(const std::filesystem::path& dir) {
  auto count = [](const std::filesystem::path& sub, const std::string& ext) {
    std::size_t n = 0;
    if (!std::filesystem::is_directory(sub)) return n;
    for (const auto& e : std::filesystem::directory_iterator(sub)) n += e.path().extension() == ext;
    return n;
  };
  const std::size_t n_frames = count(dir / "frames", ".ppm");
  const std::size_t n_masks = count(dir / "masks", ".pgm");
  if (n_frames == 0) throw std::runtime_error(dir.string() + ": no frames/*.ppm");
  if (n_frames != n_masks) {
    throw std::runtime_error(dir.string() + ": " + std::to_string(n_frames) + " frames but " +
                             std::to_string(n_masks) + " masks");
  }
  VideoSequence seq;
  for (std::size_t i = 0; i < n_frames; ++i) {
    std::size_t w = 0, h = 0, mw = 0, mh = 0;
    seq.frames.push_back(read_ppm(dir / "frames" / indexed_name(i, "ppm"), w, h));
    seq.masks.push_back(read_pgm(dir / "masks" / indexed_name(i, "pgm"), mw, mh));
    if (i == 0) {
      seq.width = w;
      seq.height = h;
    }
    if (w != seq.width || h != seq.height || mw != w || mh != h) {
      throw std::runtime_error(dir.string() + ": frame " + std::to_string(i) + " has a different resolution");
    }
  }
  return seq;
}

void save_dataset(const std::vector<VideoSequence>& seqs, const std::filesystem::path& dir) {
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    char name[16];
    std::snprintf(name, sizeof name, "%03zu", i);
    save_sequence(seqs[i], dir / name);
  }
}

std::vector<VideoSequence> load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error(dir.string() + ": not a directory");
  std::vector<std::filesystem::path> subdirs;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_directory()) subdirs.push_back(e.path());
  }
  std::sort(subdirs.begin(), subdirs.end());
  std::vector<VideoSequence> out;
  for (const auto& d : subdirs) out.push_back(load_sequence(d));
  if (out.empty()) throw std::runtime_error(dir.string() + ": no sequences");
  return out;
}

template <typename T>
Tensor<T> frames_to_tensor(const VideoSequence& seq, const std::vector<std::size_t>& indices) {
  const std::size_t hw = seq.width * seq.height;
  std::vector<T> out(indices.size() * 3 * hw);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Bytes& f = seq.frames.at(indices[b]);
    for (std::size_t p = 0; p < hw; ++p) {
      for (std::size_t c = 0; c < 3; ++c) {
        out[(b * 3 + c) * hw + p] = static_cast<T>(f[p * 3 + c]) / T(127.5) - T(1);
      }
    }
  }
  return Tensor<T>({indices.size(), 3, seq.height, seq.width}, std::move(out));
}

template Tensor<float> frames_to_tensor(const VideoSequence&, const std::vector<std::size_t>&);
template Tensor<double> frames_to_tensor(const VideoSequence&, const std::vector<std::size_t>&);

}  // namespace clipvos
