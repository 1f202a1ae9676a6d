// Copyright 2026 The d2st Authors.
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

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "d2st/errors.hpp"

namespace d2st {

#ifdef D2ST_SINGLE_PRECISION
using Real = float;
#else
using Real = double;
#endif

using Index = std::int64_t;
using Shape = std::vector<Index>;

std::string shape_str(const Shape& s);
Index shape_numel(const Shape& s);

// Dense row-major multi-dimensional array.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<Real> data);
  Tensor(Shape shape, std::initializer_list<Real> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, Real value);
  static Tensor ones(Shape shape) { return full(std::move(shape), Real(1)); }
  static Tensor scalar(Real value) { return Tensor({}, {value}); }
  static Tensor identity(Index n);

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const;
  Index size() const { return static_cast<Index>(data_.size()); }
  bool empty() const { return data_.empty(); }

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }
  Real& operator[](Index flat) { return data_[static_cast<size_t>(flat)]; }
  Real operator[](Index flat) const { return data_[static_cast<size_t>(flat)]; }

  Real& at(std::initializer_list<Index> idx);
  Real at(std::initializer_list<Index> idx) const;
  Index flat_index(std::initializer_list<Index> idx) const;

  // Scalar convenience: valid only for size()==1.
  Real item() const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  bool bitwise_equal(const Tensor& other) const;

  Tensor reshaped(Shape new_shape) const;

  void fill(Real value);
  void add_inplace(const Tensor& other);          // this += other
  void axpy_inplace(Real alpha, const Tensor& t); // this += alpha * t

 private:
  Shape shape_;
  std::vector<Real> data_;
};

// Rank-4 (T, H, W, C) arrays are used pervasively; they are plain Tensors.
using FeatureMap = Tensor;

void require(bool cond, const std::string& msg);
void require_rank(const Tensor& t, Index rank, const std::string& who);

// FNV-1a over the raw bytes; used for frozen-weight digests and checkpoints.
std::uint64_t content_digest(const Tensor& t);
std::uint64_t digest_combine(std::uint64_t a, std::uint64_t b);

}  // namespace d2st
