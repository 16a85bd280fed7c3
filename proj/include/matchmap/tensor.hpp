// Copyright 2026 The Matchmap Authors
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

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "matchmap/common.hpp"

namespace mm {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& shape) {
  check(!shape.empty(), "tensor shape must have rank >= 1");
  int64_t n = 1;
  for (int64_t e : shape) {
    check(e >= 1, "tensor extents must be positive, got ", shape_str(shape));
    check(n <= (int64_t(1) << 40) / e, "tensor extent overflow: ",
          shape_str(shape));
    n *= e;
  }
  return n;
}

// Dense row-major tensor. Rank is fixed at construction; extents are
// strictly positive.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(size_t(shape_numel(shape_)), T(0)) {}

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)) {
    int64_t n = shape_numel(shape_);
    check(int64_t(data.size()) == n, "tensor data size ", data.size(),
          " does not match shape ", shape_str(shape_));
    data_ = std::move(data);
  }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  bool empty() const { return data_.empty(); }
  int64_t rank() const { return int64_t(shape_.size()); }
  int64_t numel() const { return int64_t(data_.size()); }
  const Shape& shape() const { return shape_; }

  int64_t extent(int64_t axis) const {
    check(axis >= 0 && axis < rank(), "axis ", axis, " out of range for rank ",
          rank());
    return shape_[size_t(axis)];
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  template <typename... Is>
  T& operator()(Is... is) {
    return data_[size_t(flat_index(is...))];
  }
  template <typename... Is>
  const T& operator()(Is... is) const {
    return data_[size_t(flat_index(is...))];
  }

  T& at_flat(int64_t i) { return data_[size_t(i)]; }
  const T& at_flat(int64_t i) const { return data_[size_t(i)]; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  template <typename... Is>
  int64_t flat_index(Is... is) const {
    static_assert(sizeof...(Is) > 0 && (std::is_integral_v<Is> && ...));
    const int64_t idx[] = {int64_t(is)...};
    constexpr int64_t n = int64_t(sizeof...(Is));
    check(n == rank(), "index rank ", n, " vs tensor rank ", rank());
    int64_t flat = 0;
    for (int64_t a = 0; a < n; ++a) {
      check(idx[a] >= 0 && idx[a] < shape_[size_t(a)], "index ", idx[a],
            " out of range on axis ", a, " of shape ", shape_str(shape_));
      flat = flat * shape_[size_t(a)] + idx[a];
    }
    return flat;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
Tensor<T> random_uniform(Shape shape, T lo, T hi, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i)
    t.at_flat(i) = T(rng.uniform(double(lo), double(hi)));
  return t;
}

template <typename T>
Tensor<T> random_normal(Shape shape, T mean, T stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i)
    t.at_flat(i) = T(rng.normal(double(mean), double(stddev)));
  return t;
}

template <typename T>
bool has_nan(const Tensor<T>& t) {
  for (int64_t i = 0; i < t.numel(); ++i)
    if (std::isnan(double(t.at_flat(i)))) return true;
  return false;
}

// Elementwise copy with dtype change.
template <typename Dst, typename Src>
Tensor<Dst> cast(const Tensor<Src>& t) {
  Tensor<Dst> out(t.shape());
  for (int64_t i = 0; i < t.numel(); ++i) out.at_flat(i) = Dst(t.at_flat(i));
  return out;
}

}  // namespace mm
