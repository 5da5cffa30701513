// Copyright 2026 The retlab Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace retlab {

/// Error raised by any numeric primitive (shape mismatch, non-finite value...).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Cache-line aligned storage. Eigen picks its vectorized loop peeling from the
/// data address, so alignment has to be fixed for results to be reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, size_t) { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const {
    return true;
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

int64_t shape_numel(const std::vector<int64_t>& shape);
std::string shape_string(const std::vector<int64_t>& shape);

/// Dense row-major tensor. Training runs on float; the double instantiation
/// exists so gradients can be verified against finite differences.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(std::vector<int64_t> shape)
      : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), T{0}) {}
  BasicTensor(std::vector<int64_t> shape, const std::vector<T>& data)
      : BasicTensor(std::move(shape), AlignedVector<T>(data.begin(), data.end())) {}
  BasicTensor(std::vector<int64_t> shape, std::initializer_list<T> data)
      : BasicTensor(std::move(shape), AlignedVector<T>(data)) {}
  BasicTensor(std::vector<int64_t> shape, AlignedVector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != shape_numel(shape_)) {
      throw NumericError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string(shape_));
    }
  }
  BasicTensor(std::initializer_list<int64_t> shape) : BasicTensor(std::vector<int64_t>(shape)) {}

  static BasicTensor full(std::vector<int64_t> shape, T value) {
    BasicTensor t(std::move(shape));
    t.fill(value);
    return t;
  }

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t dim(size_t axis) const { return shape_.at(axis); }
  size_t rank() const { return shape_.size(); }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  AlignedVector<T>& values() { return data_; }
  const AlignedVector<T>& values() const { return data_; }

  T& operator[](size_t i) { return data_[i]; }
  T operator[](size_t i) const { return data_[i]; }

  /// Element (r, c) of the matrix view.
  T& at(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * cols() + c)]; }
  T at(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * cols() + c)]; }

  /// Matrix view: all leading axes folded into rows.
  int64_t rows() const {
    int64_t r = 1;
    for (size_t i = 0; i + 1 < shape_.size(); ++i) r *= shape_[i];
    return r;
  }
  int64_t cols() const { return shape_.empty() ? 1 : shape_.back(); }

  BasicTensor reshaped(std::vector<int64_t> shape) const {
    if (shape_numel(shape) != static_cast<int64_t>(data_.size())) {
      throw NumericError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return BasicTensor(std::move(shape), data_);
  }

  template <typename U>
  BasicTensor<U> cast() const {
    return BasicTensor<U>(shape_, AlignedVector<U>(data_.begin(), data_.end()));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool operator==(const BasicTensor& other) const = default;

 private:
  std::vector<int64_t> shape_;
  AlignedVector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

}  // namespace retlab
