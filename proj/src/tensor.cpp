#include "zhmt/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>

namespace zhmt {

Tensor::Tensor(std::vector<std::size_t> shape_, double fill_value) : shape(std::move(shape_)) {
  const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  data.assign(n, fill_value);
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tensor::fill(double v) { std::fill(data.begin(), data.end(), v); }

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

std::uint64_t fnv1a(const void* bytes, std::size_t n, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t h) { return fnv1a(s.data(), s.size(), h); }

std::uint64_t checksum(const Tensor& t) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t d : t.shape) {
    const std::uint64_t v = d;
    h = fnv1a(&v, sizeof v, h);
  }
  return fnv1a(t.data.data(), t.data.size() * sizeof(double), h);
}

std::uint64_t checksum(const TensorMap& tensors) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : tensors) {
    h = fnv1a(name, h);
    const std::uint64_t c = checksum(t);
    h = fnv1a(&c, sizeof c, h);
  }
  return h;
}

}  // namespace zhmt
