#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace sdd {

using Rng = std::mt19937_64;

/// Uniform sample of fixed capacity over a stream of unknown length
/// (Vitter's Algorithm R).
template <typename T>
class Reservoir {
 public:
  explicit Reservoir(std::size_t capacity) : capacity_(capacity) { items_.reserve(capacity); }

  /// Offers the next stream element. Returns the slot it landed in, or -1.
  std::ptrdiff_t offer(T item, Rng& rng) {
    ++seen_;
    if (items_.size() < capacity_) {
      items_.push_back(std::move(item));
      return static_cast<std::ptrdiff_t>(items_.size() - 1);
    }
    if (capacity_ == 0) return -1;
    std::uniform_int_distribution<std::uint64_t> pick(0, seen_ - 1);
    auto j = pick(rng);
    if (j >= capacity_) return -1;
    items_[j] = std::move(item);
    return static_cast<std::ptrdiff_t>(j);
  }

  std::size_t capacity() const noexcept { return capacity_; }
  std::uint64_t seen() const noexcept { return seen_; }
  const std::vector<T>& items() const noexcept { return items_; }
  std::vector<T> take() && { return std::move(items_); }

 private:
  std::size_t capacity_;
  std::uint64_t seen_ = 0;
  std::vector<T> items_;
};

/// `n` distinct indices drawn uniformly from [0, population), in ascending order.
inline std::vector<std::size_t> sample_indices(std::size_t population, std::size_t n, Rng& rng) {
  Reservoir<std::size_t> r(n);
  for (std::size_t i = 0; i < population; ++i) r.offer(i, rng);
  auto out = std::move(r).take();
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace sdd
