#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <memory>
#include <vector>

#include "flashtrace/error.hpp"

namespace flashtrace {

/// Byte accounting for attribution working buffers. Allocation past the
/// configured limit throws Errc::working_set_exceeded.
class MemoryTracker {
 public:
  explicit MemoryTracker(std::size_t limit_bytes = std::numeric_limits<std::size_t>::max())
      : limit_(limit_bytes) {}

  void on_allocate(std::size_t bytes) {
    if (bytes > limit_ - std::min(limit_, current_)) {
      throw Error(Errc::working_set_exceeded,
                  "attribution buffers would exceed " + std::to_string(limit_) + " bytes");
    }
    current_ += bytes;
    peak_ = std::max(peak_, current_);
  }
  void on_release(std::size_t bytes) noexcept { current_ -= std::min(current_, bytes); }

  std::size_t current() const noexcept { return current_; }
  std::size_t peak() const noexcept { return peak_; }
  std::size_t limit() const noexcept { return limit_; }
  void reset_peak() noexcept { peak_ = current_; }

 private:
  std::size_t limit_;
  std::size_t current_ = 0;
  std::size_t peak_ = 0;
};

template <typename T>
class TrackingAllocator {
 public:
  using value_type = T;

  TrackingAllocator() noexcept = default;
  explicit TrackingAllocator(MemoryTracker* tracker) noexcept : tracker_(tracker) {}
  template <typename U>
  TrackingAllocator(const TrackingAllocator<U>& other) noexcept : tracker_(other.tracker()) {}

  T* allocate(std::size_t n) {
    if (tracker_) tracker_->on_allocate(n * sizeof(T));
    return std::allocator<T>{}.allocate(n);
  }
  void deallocate(T* p, std::size_t n) noexcept {
    if (tracker_) tracker_->on_release(n * sizeof(T));
    std::allocator<T>{}.deallocate(p, n);
  }

  MemoryTracker* tracker() const noexcept { return tracker_; }

  template <typename U>
  bool operator==(const TrackingAllocator<U>& other) const noexcept {
    return tracker_ == other.tracker();
  }

 private:
  MemoryTracker* tracker_ = nullptr;
};

template <typename T>
using TrackedVector = std::vector<T, TrackingAllocator<T>>;

}  // namespace flashtrace
