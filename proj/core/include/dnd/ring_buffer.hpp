#pragma once

#include <cstddef>
#include <deque>
#include <numeric>
#include <stdexcept>

namespace dnd {

// Fixed-capacity FIFO; pushing into a full buffer evicts the oldest sample.
template <typename T>
class RingBuffer {
  public:
    explicit RingBuffer(std::size_t capacity = 1) : capacity_(capacity) {
        if (capacity_ == 0) throw std::invalid_argument("ring buffer capacity must be at least 1");
    }

    void push(T value) {
        if (items_.size() == capacity_) items_.pop_front();
        items_.push_back(value);
    }

    std::size_t size() const { return items_.size(); }
    std::size_t capacity() const { return capacity_; }
    bool empty() const { return items_.empty(); }
    void clear() { items_.clear(); }

    T mean() const {
        if (items_.empty()) throw std::logic_error("mean of an empty ring buffer");
        return std::accumulate(items_.begin(), items_.end(), T{}) / static_cast<T>(items_.size());
    }

    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

  private:
    std::size_t capacity_;
    std::deque<T> items_;
};

}  // namespace dnd
