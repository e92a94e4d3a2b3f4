#include "clipvos/memory.hpp"

#include <stdexcept>

namespace clipvos {

template <typename T>
void MemoryBank<T>::append(const Tensor<T>& key, const Tensor<T>& value, MemoryTier tier) {
  if (key.rank() != 2 || value.rank() != 2 || key.dim(0) != value.dim(0)) {
    throw ShapeError("bank_append: key " + shape_str(key.shape()) + " vs value " +
                     shape_str(value.shape()));
  }
  if (!empty()) {
    const Entry& ref = permanent_.empty() ? temporary_.front() : permanent_.front();
    if (ref.key.shape() != key.shape() || ref.value.shape() != value.shape()) {
      throw ShapeError("bank_append: entry " + shape_str(key.shape()) + "/" + shape_str(value.shape()) +
                       " does not match stored " + shape_str(ref.key.shape()) + "/" +
                       shape_str(ref.value.shape()));
    }
  }
  (tier == MemoryTier::permanent ? permanent_ : temporary_).push_back({key, value});
}

template <typename T>
Tensor<T> MemoryBank<T>::keys() const {
  if (empty()) throw std::runtime_error("memory bank empty");
  std::vector<Tensor<T>> parts;
  for (const auto* tier : {&permanent_, &temporary_}) {
    for (const auto& e : *tier) parts.push_back(e.key);
  }
  return parts.size() == 1 ? parts.front() : concat(parts, 0);
}

template <typename T>
Tensor<T> MemoryBank<T>::values() const {
  if (empty()) throw std::runtime_error("memory bank empty");
  std::vector<Tensor<T>> parts;
  for (const auto* tier : {&permanent_, &temporary_}) {
    for (const auto& e : *tier) parts.push_back(e.value);
  }
  return parts.size() == 1 ? parts.front() : concat(parts, 0);
}

template <typename T>
Tensor<T> similarity(const Tensor<T>& kq, const Tensor<T>& km) {
  return neg_sq_dist(kq, km);
}

template <typename T>
Tensor<T> affinity(const Tensor<T>& sim, std::optional<std::size_t> top_k) {
  if (sim.rank() != 2) throw ShapeError("affinity: expects [n x m], got " + shape_str(sim.shape()));
  if (top_k && *top_k == 0) throw std::invalid_argument("affinity: top_k must be at least 1");
  if (!top_k || *top_k >= sim.dim(1)) return softmax(sim, 1);
  return masked_softmax(sim, topk_mask(sim, *top_k));
}

template <typename T>
Tensor<T> read(const Tensor<T>& kq, const Tensor<T>& km, const Tensor<T>& vm,
               std::optional<std::size_t> top_k) {
  if (km.rank() != 2 || km.dim(0) == 0) throw std::runtime_error("memory bank empty");
  if (vm.rank() != 2 || vm.dim(0) != km.dim(0)) {
    throw ShapeError("read: memory keys " + shape_str(km.shape()) + " vs values " + shape_str(vm.shape()));
  }
  return row_matmul(affinity(similarity(kq, km), top_k), vm);
}

template <typename T>
Tensor<T> read_bank(const Tensor<T>& kq, const MemoryBank<T>& bank, std::optional<std::size_t> top_k) {
  if (bank.empty()) throw std::runtime_error("memory bank empty");
  return read(kq, bank.keys(), bank.values(), top_k);
}

template class MemoryBank<float>;
template class MemoryBank<double>;

#define CLIPVOS_INSTANTIATE_MEMORY(T)                                                          \
  template Tensor<T> similarity(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> affinity(const Tensor<T>&, std::optional<std::size_t>);                   \
  template Tensor<T> read(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                \
                          std::optional<std::size_t>);                                         \
  template Tensor<T> read_bank(const Tensor<T>&, const MemoryBank<T>&, std::optional<std::size_t>);

CLIPVOS_INSTANTIATE_MEMORY(float)
CLIPVOS_INSTANTIATE_MEMORY(double)

}  // namespace clipvos
