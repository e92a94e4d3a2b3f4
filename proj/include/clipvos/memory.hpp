#pragma once

#include <optional>
#include <vector>

#include "clipvos/ops.hpp"

namespace clipvos {

enum class MemoryTier { permanent, temporary };

// Flattened memory frames. Each entry holds a key [hw x C_k] and the values
// of all K objects as [hw x K*C_v] (object-major columns), so one readout
// serves every object through a shared affinity.
template <typename T>
class MemoryBank {
 public:
  struct Entry {
    Tensor<T> key;
    Tensor<T> value;
  };

  void append(const Tensor<T>& key, const Tensor<T>& value, MemoryTier tier);
  void clear_temporary() { temporary_.clear(); }

  std::size_t permanent_frames() const { return permanent_.size(); }
  std::size_t temporary_frames() const { return temporary_.size(); }
  std::size_t frames() const { return permanent_.size() + temporary_.size(); }
  bool empty() const { return frames() == 0; }
  const std::vector<Entry>& permanent() const { return permanent_; }
  const std::vector<Entry>& temporary() const { return temporary_; }

  // Permanent entries first, then temporary, concatenated along rows.
  Tensor<T> keys() const;
  Tensor<T> values() const;

 private:
  std::vector<Entry> permanent_;
  std::vector<Entry> temporary_;
};

// -|q_i - m_j|^2 for query rows [n x C_k] against memory rows [m x C_k].
template <typename T>
Tensor<T> similarity(const Tensor<T>& kq, const Tensor<T>& km);

// Row softmax over the memory axis, restricted to the top_k largest entries
// per row when set.
template <typename T>
Tensor<T> affinity(const Tensor<T>& sim, std::optional<std::size_t> top_k = std::nullopt);

// vQ = A(kQ, kM) vM. Rows are computed independently of each other.
template <typename T>
Tensor<T> read(const Tensor<T>& kq, const Tensor<T>& km, const Tensor<T>& vm,
               std::optional<std::size_t> top_k = std::nullopt);

template <typename T>
Tensor<T> read_bank(const Tensor<T>& kq, const MemoryBank<T>& bank,
                    std::optional<std::size_t> top_k = std::nullopt);

extern template class MemoryBank<float>;
extern template class MemoryBank<double>;

}  // namespace clipvos
