#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <new>
#include <string>
#include <vector>

namespace zhmt {

// Cache-line aligned storage. Vectorized kernels peel unaligned heads, so unaligned buffers
// would make floating-point summation order depend on where the allocator put them.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

// Row-major array of doubles. Vectors have a one-element shape.
struct Tensor {
  std::vector<std::size_t> shape;
  Buffer data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape_, double fill = 0.0);

  std::size_t numel() const { return data.size(); }
  std::size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
  std::size_t cols() const { return shape.empty() ? 0 : shape.back(); }
  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }
  bool all_finite() const;
  void fill(double v);

  bool operator==(const Tensor&) const = default;
};

std::string shape_string(const std::vector<std::size_t>& shape);

// FNV-1a over the little-endian bytes of every element.
std::uint64_t checksum(const Tensor& t);
std::uint64_t fnv1a(const void* bytes, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL);

using TensorMap = std::map<std::string, Tensor>;

// Combined checksum over names and contents in name order.
std::uint64_t checksum(const TensorMap& tensors);

}  // namespace zhmt
