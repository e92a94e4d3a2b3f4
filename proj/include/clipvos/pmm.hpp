#pragma once

#include <optional>

#include "clipvos/config.hpp"
#include "clipvos/memory.hpp"

namespace clipvos {

// Reads a clip segment by segment. kq holds the clip's query keys frame by
// frame, [frames*hw x C_k]. Each segment reads permanent plus temporary
// memory; the last frame of every segment but the final one then joins the
// temporary tier with its retrieved value. The temporary tier is empty again
// on return, also when an exception propagates. Segment length is clamped to
// the clip length. A disabled config is a plain read.
template <typename T>
Tensor<T> progressive_read(const Tensor<T>& kq, std::size_t frames, MemoryBank<T>& bank,
                           const PmmConfig& config, std::optional<std::size_t> top_k = std::nullopt);

}  // namespace clipvos
