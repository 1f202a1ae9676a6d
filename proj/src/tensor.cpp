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

#include "d2st/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace d2st {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << ")";
  return os.str();
}

Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) {
    if (d < 0) throw DimensionError("negative dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(shape_numel(shape_)), Real(0));
}

Tensor::Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (static_cast<Index>(data_.size()) != shape_numel(shape_))
    throw DimensionError("data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_str(shape_));
}

Tensor::Tensor(Shape shape, std::initializer_list<Real> data)
    : Tensor(std::move(shape), std::vector<Real>(data)) {}

Tensor Tensor::full(Shape shape, Real value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return t;
}

Tensor Tensor::identity(Index n) {
  Tensor t({n, n});
  for (Index i = 0; i < n; ++i) t[i * n + i] = Real(1);
  return t;
}

Index Tensor::dim(Index axis) const {
  if (axis < 0 || axis >= rank())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape_));
  return shape_[static_cast<size_t>(axis)];
}

Index Tensor::flat_index(std::initializer_list<Index> idx) const {
  if (static_cast<Index>(idx.size()) != rank())
    throw DimensionError("index rank mismatch for " + shape_str(shape_));
  Index flat = 0;
  size_t ax = 0;
  for (Index i : idx) {
    Index d = shape_[ax];
    if (i < 0 || i >= d)
      throw DimensionError("index " + std::to_string(i) + " out of range on axis " + std::to_string(ax));
    flat = flat * d + i;
    ++ax;
  }
  return flat;
}

Real& Tensor::at(std::initializer_list<Index> idx) { return data_[static_cast<size_t>(flat_index(idx))]; }
Real Tensor::at(std::initializer_list<Index> idx) const { return data_[static_cast<size_t>(flat_index(idx))]; }

Real Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of size " + std::to_string(size()));
  return data_[0];
}

bool Tensor::all_finite() const {
  for (Real v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

bool Tensor::bitwise_equal(const Tensor& other) const {
  if (shape_ != other.shape_) return false;
  return std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(Real)) == 0;
}

Tensor Tensor::reshaped(Shape new_shape) const {
  if (shape_numel(new_shape) != size())
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(new_shape));
  Tensor t;
  t.shape_ = std::move(new_shape);
  t.data_ = data_;
  return t;
}

void Tensor::fill(Real value) { std::fill(data_.begin(), data_.end(), value); }

void Tensor::add_inplace(const Tensor& other) {
  if (!same_shape(other))
    throw DimensionError("add_inplace shape mismatch " + shape_str(shape_) + " vs " + shape_str(other.shape_));
  for (size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

void Tensor::axpy_inplace(Real alpha, const Tensor& t) {
  if (!same_shape(t))
    throw DimensionError("axpy shape mismatch " + shape_str(shape_) + " vs " + shape_str(t.shape_));
  for (size_t i = 0; i < data_.size(); ++i) data_[i] += alpha * t.data_[i];
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

void require_rank(const Tensor& t, Index rank, const std::string& who) {
  if (t.rank() != rank)
    throw DimensionError(who + ": expected rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
}

std::uint64_t content_digest(const Tensor& t) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const unsigned char* p, size_t n) {
    for (size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (Index d : t.shape()) mix(reinterpret_cast<const unsigned char*>(&d), sizeof(d));
  mix(reinterpret_cast<const unsigned char*>(t.data()), static_cast<size_t>(t.size()) * sizeof(Real));
  return h;
}

std::uint64_t digest_combine(std::uint64_t a, std::uint64_t b) {
  a ^= b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2);
  return a;
}

}  // namespace d2st
