#pragma once

#include <atomic>
#include <cstddef>
#include <memory>

namespace dcorsel {

/// Counts live and peak bytes of scratch buffers registered with it.
class MemoryTracker {
 public:
  void acquire(std::size_t bytes) noexcept {
    const std::size_t now = current_.fetch_add(bytes) + bytes;
    std::size_t prev = peak_.load();
    while (now > prev && !peak_.compare_exchange_weak(prev, now)) {
    }
  }
  void release(std::size_t bytes) noexcept { current_.fetch_sub(bytes); }
  std::size_t current_bytes() const noexcept { return current_.load(); }
  std::size_t peak_bytes() const noexcept { return peak_.load(); }
  void reset() noexcept {
    current_ = 0;
    peak_ = 0;
  }

 private:
  std::atomic<std::size_t> current_{0};
  std::atomic<std::size_t> peak_{0};
};

/// Owning array of T whose size is reported to an optional tracker.
template <class T>
class ScratchBuffer {
 public:
  ScratchBuffer() = default;
  ScratchBuffer(std::size_t n, MemoryTracker* tracker)
      : data_(std::make_unique<T[]>(n)), size_(n), tracker_(tracker) {
    if (tracker_) tracker_->acquire(bytes());
  }
  ScratchBuffer(ScratchBuffer&& o) noexcept
      : data_(std::move(o.data_)), size_(o.size_), tracker_(o.tracker_) {
    o.size_ = 0;
    o.tracker_ = nullptr;
  }
  ScratchBuffer& operator=(ScratchBuffer&& o) noexcept {
    if (this != &o) {
      release();
      data_ = std::move(o.data_);
      size_ = o.size_;
      tracker_ = o.tracker_;
      o.size_ = 0;
      o.tracker_ = nullptr;
    }
    return *this;
  }
  ScratchBuffer(const ScratchBuffer&) = delete;
  ScratchBuffer& operator=(const ScratchBuffer&) = delete;
  ~ScratchBuffer() { release(); }

  T* data() noexcept { return data_.get(); }
  const T* data() const noexcept { return data_.get(); }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }
  std::size_t size() const noexcept { return size_; }
  std::size_t bytes() const noexcept { return size_ * sizeof(T); }

 private:
  void release() noexcept {
    if (tracker_) tracker_->release(bytes());
    tracker_ = nullptr;
  }

  std::unique_ptr<T[]> data_;
  std::size_t size_ = 0;
  MemoryTracker* tracker_ = nullptr;
};

}  // namespace dcorsel
