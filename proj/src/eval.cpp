#include "clipvos/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "clipvos/pipeline.hpp"

namespace clipvos {

namespace {

std::vector<std::uint8_t> boundary(const Bytes& labels, std::size_t width, std::size_t height, std::uint8_t object) {
  std::vector<std::uint8_t> out(width * height, 0);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      if (labels[y * width + x] != object) continue;
      const bool edge = x == 0 || y == 0 || x + 1 == width || y + 1 == height ||
                        labels[y * width + x - 1] != object || labels[y * width + x + 1] != object ||
                        labels[(y - 1) * width + x] != object || labels[(y + 1) * width + x] != object;
      out[y * width + x] = edge;
    }
  }
  return out;
}

// Dilation by a Euclidean disk of radius r.
std::vector<std::uint8_t> dilate(const std::vector<std::uint8_t>& m, std::size_t width, std::size_t height,
                                 std::size_t r) {
  std::vector<std::uint8_t> out(m.size(), 0);
  const long ri = static_cast<long>(r);
  const long w = static_cast<long>(width), h = static_cast<long>(height);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      if (!m[y * w + x]) continue;
      for (long dy = -ri; dy <= ri; ++dy) {
        for (long dx = -ri; dx <= ri; ++dx) {
          if (dx * dx + dy * dy > ri * ri) continue;
          const long yy = y + dy, xx = x + dx;
          if (yy >= 0 && yy < h && xx >= 0 && xx < w) out[yy * w + xx] = 1;
        }
      }
    }
  }
  return out;
}

}  // namespace

double region_j(const Bytes& pred, const Bytes& gt, std::uint8_t object) {
  if (pred.size() != gt.size()) throw std::invalid_argument("region_j: mask sizes differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == object, g = gt[i] == object;
    inter += p && g;
    uni += p || g;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::size_t default_boundary_tolerance(std::size_t width, std::size_t height) {
  const double diag = std::sqrt(static_cast<double>(width * width + height * height));
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.008 * diag)));
}

double boundary_f(const Bytes& pred, const Bytes& gt, std::size_t width, std::size_t height, std::uint8_t object,
                  std::optional<std::size_t> tol_px) {
  if (pred.size() != width * height || gt.size() != width * height) {
    throw std::invalid_argument("boundary_f: mask sizes do not match " + std::to_string(width) + "x" +
                                std::to_string(height));
  }
  const std::size_t tol = tol_px.value_or(default_boundary_tolerance(width, height));
  const auto pb = boundary(pred, width, height, object);
  const auto gb = boundary(gt, width, height, object);
  const std::size_t np = std::count(pb.begin(), pb.end(), 1);
  const std::size_t ng = std::count(gb.begin(), gb.end(), 1);
  if (np == 0 && ng == 0) return 1.0;
  if (np == 0 || ng == 0) return 0.0;
  const auto pd = dilate(pb, width, height, tol);
  const auto gd = dilate(gb, width, height, tol);
  std::size_t p_hit = 0, g_hit = 0;
  for (std::size_t i = 0; i < pb.size(); ++i) {
    p_hit += pb[i] && gd[i];
    g_hit += gb[i] && pd[i];
  }
  const double precision = static_cast<double>(p_hit) / static_cast<double>(np);
  const double recall = static_cast<double>(g_hit) / static_cast<double>(ng);
  if (precision + recall == 0) return 0.0;
  return 2 * precision * recall / (precision + recall);
}

std::vector<ObjectScore> evaluate_sequence(const std::vector<Bytes>& pred, const VideoSequence& gt) {
  if (pred.size() != gt.length()) {
    throw std::invalid_argument("evaluate_sequence: " + std::to_string(pred.size()) + " predicted masks for " +
                                std::to_string(gt.length()) + " frames");
  }
  const std::size_t k_obj = gt.masks.empty() ? 0 : *std::max_element(gt.masks[0].begin(), gt.masks[0].end());
  std::vector<ObjectScore> out(k_obj);
  if (gt.length() < 2) {
    for (auto& s : out) s = {1.0, 1.0};
    return out;
  }
  for (std::size_t k = 0; k < k_obj; ++k) {
    const auto label = static_cast<std::uint8_t>(k + 1);
    for (std::size_t t = 1; t < gt.length(); ++t) {
      out[k].j += region_j(pred[t], gt.masks[t], label);
      out[k].f += boundary_f(pred[t], gt.masks[t], gt.width, gt.height, label);
    }
    out[k].j /= static_cast<double>(gt.length() - 1);
    out[k].f /= static_cast<double>(gt.length() - 1);
  }
  return out;
}

JFScores jf_overall(const std::vector<std::vector<ObjectScore>>& per_sequence) {
  JFScores s;
  std::size_t n = 0;
  for (const auto& seq : per_sequence) {
    for (const auto& o : seq) {
      s.j += o.j;
      s.f += o.f;
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("jf_overall: no objects to score");
  s.j /= static_cast<double>(n);
  s.f /= static_cast<double>(n);
  s.jf = (s.j + s.f) / 2;
  return s;
}

std::vector<BenchmarkRow> benchmark_fps(const Model<float>& model, const std::vector<VideoSequence>& sequences,
                                        const std::vector<std::size_t>& clip_lengths, const PipelineConfig& config,
                                        std::size_t repeats) {
  if (sequences.empty()) throw std::invalid_argument("benchmark_fps: empty sequence set");
  if (repeats == 0) throw std::invalid_argument("benchmark_fps: repeats must be at least 1");
  std::vector<Tensor<float>> tensors;
  std::size_t frames = 0;
  for (const auto& seq : sequences) {
    std::vector<std::size_t> idx(seq.length());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    tensors.push_back(frames_to_tensor<float>(seq, idx));
    frames += seq.length() - 1;
  }
  const std::size_t threads = effective_threads(config);
  set_compute_threads(threads);
  std::vector<BenchmarkRow> rows;
  for (std::size_t clip_length : clip_lengths) {
    PipelineConfig cfg = config;
    cfg.clip_length = clip_length;
    std::vector<double> times;
    std::vector<std::vector<ObjectScore>> scores;
    for (std::size_t r = 0; r < repeats; ++r) {
      std::vector<std::vector<Bytes>> preds;
      const auto start = std::chrono::steady_clock::now();
      for (std::size_t s = 0; s < sequences.size(); ++s) {
        preds.push_back(run_inference(model, tensors[s], sequences[s].masks[0], cfg));
      }
      times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
      if (r == 0) {
        for (std::size_t s = 0; s < sequences.size(); ++s) scores.push_back(evaluate_sequence(preds[s], sequences[s]));
      }
    }
    std::sort(times.begin(), times.end());
    BenchmarkRow row;
    row.clip_length = clip_length;
    row.segment_length = cfg.pmm.enabled ? std::min(cfg.pmm.segment_length, clip_length) : 0;
    row.threads = threads;
    row.seconds = times[times.size() / 2];
    row.fps = static_cast<double>(frames) / row.seconds;
    row.scores = jf_overall(scores);
    rows.push_back(row);
  }
  return rows;
}

void write_benchmark_csv(const std::vector<BenchmarkRow>& rows, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "L,F,threads,fps,seconds,J,F_score,JF\n";
  os << std::setprecision(6);
  for (const auto& r : rows) {
    os << r.clip_length << "," << r.segment_length << "," << r.threads << "," << r.fps << "," << r.seconds << ","
       << r.scores.j << "," << r.scores.f << "," << r.scores.jf << "\n";
  }
}

}  // namespace clipvos
