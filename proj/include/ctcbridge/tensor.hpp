// Copyright 2026 The ctcbridge Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ctcbridge/errors.hpp"

namespace ctcbridge {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

// Dense row-major array. The library stores float (Tensor); the double
// instantiation exists so gradient checks can run the identical code path
// without float rounding swamping central differences.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  BasicTensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    CTCB_REQUIRE(shape_size(shape_) == data_.size(),
                 "tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str(shape_));
  }

  static BasicTensor scalar(T v) { return BasicTensor(Shape{}, std::vector<T>{v}); }

  template <typename U>
  static BasicTensor cast(const BasicTensor<U>& other) {
    std::vector<T> d(other.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(other[i]);
    return BasicTensor(other.shape(), std::move(d));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // 2-D accessors; rank-1 tensors are treated as a single row.
  std::size_t rows() const {
    return shape_.size() == 2 ? shape_[0] : (shape_.empty() ? 1 : 1);
  }
  std::size_t cols() const {
    return shape_.size() == 2 ? shape_[1] : (shape_.empty() ? 1 : shape_[0]);
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols() + c];
  }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const {
    return {data_.data() + r * cols(), cols()};
  }

  T item() const {
    CTCB_REQUIRE(data_.size() == 1, "item() on non-scalar tensor " + shape_str(shape_));
    return data_[0];
  }

  BasicTensor reshaped(Shape s) const {
    CTCB_REQUIRE(shape_size(s) == data_.size(),
                 "cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    return BasicTensor(std::move(s), data_);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

}  // namespace ctcbridge
