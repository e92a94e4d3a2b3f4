#include "clipvos/pmm.hpp"

#include <algorithm>
#include <stdexcept>

namespace clipvos {

namespace {

template <typename T>
class TemporaryTierGuard {
 public:
  explicit TemporaryTierGuard(MemoryBank<T>& bank) : bank_(bank) {}
  ~TemporaryTierGuard() { bank_.clear_temporary(); }
  TemporaryTierGuard(const TemporaryTierGuard&) = delete;
  TemporaryTierGuard& operator=(const TemporaryTierGuard&) = delete;

 private:
  MemoryBank<T>& bank_;
};

}  // namespace

template <typename T>
Tensor<T> progressive_read(const Tensor<T>& kq, std::size_t frames, MemoryBank<T>& bank,
                           const PmmConfig& config, std::optional<std::size_t> top_k) {
  if (bank.temporary_frames() != 0) {
    throw std::logic_error("progressive_read: temporary memory must be empty on entry");
  }
  if (bank.permanent_frames() == 0) throw std::runtime_error("memory bank empty");
  if (frames == 0 || kq.rank() != 2 || kq.dim(0) % frames != 0) {
    throw ShapeError("progressive_read: query keys " + shape_str(kq.shape()) + " do not split into " +
                     std::to_string(frames) + " frames");
  }
  if (!config.enabled) return read_bank(kq, bank, top_k);
  config.validate();
  const std::size_t hw = kq.dim(0) / frames;
  const std::size_t seg = std::min(config.segment_length, frames);
  const std::size_t segments = (frames + seg - 1) / seg;
  if (segments == 1) return read_bank(kq, bank, top_k);

  TemporaryTierGuard<T> guard(bank);
  std::vector<Tensor<T>> parts;
  for (std::size_t s = 0; s < segments; ++s) {
    const std::size_t begin = s * seg, end = std::min(frames, begin + seg);
    const Tensor<T> v = read_bank(slice(kq, 0, begin * hw, end * hw), bank, top_k);
    parts.push_back(v);
    if (s + 1 < segments) {
      const std::size_t rows = (end - begin) * hw;
      bank.append(slice(kq, 0, (end - 1) * hw, end * hw), slice(v, 0, rows - hw, rows), MemoryTier::temporary);
    }
  }
  return concat(parts, 0);
}

template Tensor<float> progressive_read(const Tensor<float>&, std::size_t, MemoryBank<float>&,
                                        const PmmConfig&, std::optional<std::size_t>);
template Tensor<double> progressive_read(const Tensor<double>&, std::size_t, MemoryBank<double>&,
                                         const PmmConfig&, std::optional<std::size_t>);

}  // namespace clipvos
