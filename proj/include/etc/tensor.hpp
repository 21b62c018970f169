// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace etc {

enum class Precision { kSingle, kDouble };

Precision parse_precision(const std::string& name);
const char* to_string(Precision p);

// Live/peak byte accounting for every Grid allocation. Used by the scaling
// benchmark to report peak activation memory.
namespace memory {
void record_allocation(std::size_t bytes) noexcept;
void record_release(std::size_t bytes) noexcept;
std::size_t live_bytes() noexcept;
std::size_t peak_bytes() noexcept;
void reset_peak() noexcept;
}  // namespace memory

template <class T>
struct TrackingAllocator {
  using value_type = T;

  TrackingAllocator() noexcept = default;
  template <class U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    if (n > std::numeric_limits<std::size_t>::max() / sizeof(T)) throw std::bad_alloc();
    auto* p = static_cast<T*>(::operator new(n * sizeof(T)));
    memory::record_allocation(n * sizeof(T));
    return p;
  }
  void deallocate(T* p, std::size_t n) noexcept {
    memory::record_release(n * sizeof(T));
    ::operator delete(p);
  }

  template <class U>
  bool operator==(const TrackingAllocator<U>&) const noexcept {
    return true;
  }
};

// Dense row-major 2-D container. Vectors are 1 x d grids.
template <class T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  Grid(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Grid(std::size_t rows, std::size_t cols, std::initializer_list<T> values)
      : rows_(rows), cols_(cols), data_(values) {
    if (data_.size() != rows * cols) throw std::invalid_argument("Grid: value count does not match shape");
  }
  Grid(std::size_t rows, std::size_t cols, std::span<const T> values)
      : rows_(rows), cols_(cols), data_(values.begin(), values.end()) {
    if (data_.size() != rows * cols) throw std::invalid_argument("Grid: value count does not match shape");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return {data_.data(), data_.size()}; }
  std::span<const T> values() const noexcept { return {data_.data(), data_.size()}; }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Grid& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool operator==(const Grid& o) const { return same_shape(o) && data_ == o.data_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T, TrackingAllocator<T>> data_;
};

template <class T>
using Matrix = Grid<T>;

using BoolMatrix = Grid<std::uint8_t>;

// Square n x n relation restricted to a radius-r band, stored as n x (2r+1):
// entry (i, c) describes the pair (i, i - r + c).
template <class T>
class Band {
 public:
  Band() = default;
  Band(std::size_t n, std::size_t radius, T fill = T{}) : radius_(radius), cells_(n, 2 * radius + 1, fill) {}

  std::size_t size() const noexcept { return cells_.rows(); }
  std::size_t radius() const noexcept { return radius_; }
  std::size_t width() const noexcept { return 2 * radius_ + 1; }

  bool in_band(std::size_t i, std::size_t j) const noexcept {
    return i < size() && j < size() && (i > j ? i - j : j - i) <= radius_;
  }
  // Caller guarantees in_band(i, j).
  T& at(std::size_t i, std::size_t j) noexcept { return cells_(i, j + radius_ - i); }
  const T& at(std::size_t i, std::size_t j) const noexcept { return cells_(i, j + radius_ - i); }

  Grid<T>& cells() noexcept { return cells_; }
  const Grid<T>& cells() const noexcept { return cells_; }

  bool operator==(const Band& o) const { return radius_ == o.radius_ && cells_ == o.cells_; }

 private:
  std::size_t radius_ = 0;
  Grid<T> cells_;
};

using BandMask = Band<std::uint8_t>;

template <class T>
bool all_finite(const Matrix<T>& m) {
  for (T v : m.values()) {
    if (!(v == v) || v == std::numeric_limits<T>::infinity() || v == -std::numeric_limits<T>::infinity()) return false;
  }
  return true;
}

template <class To, class From>
Matrix<To> cast(const Matrix<From>& m) {
  Matrix<To> out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) out.data()[i] = static_cast<To>(m.data()[i]);
  return out;
}

template <class T>
T max_abs_diff(const Matrix<T>& a, const Matrix<T>& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
  T worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    T d = a.data()[i] - b.data()[i];
    if (d < 0) d = -d;
    if (!(d <= worst)) worst = d;
  }
  return worst;
}

}  // namespace etc
