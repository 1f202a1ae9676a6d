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

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "d2st/tensor.hpp"

namespace d2st {

// A weight: value plus gradient accumulator. Non-trainable parameters never
// receive gradient, so their grad tensor stays identically zero.
class Parameter {
 public:
  Parameter() = default;
  Parameter(Tensor value, bool trainable = true, std::string name = "")
      : value(std::move(value)), trainable(trainable), name(std::move(name)) {
    grad = Tensor::zeros(this->value.shape());
  }

  Tensor value;
  Tensor grad;
  bool trainable = true;
  std::string name;

  void zero_grad() { grad.fill(Real(0)); }
};

namespace ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One vertex of the dynamically recorded computation graph.
struct Node {
  Tensor value;
  Tensor grad;
  bool grad_live = false;
  bool requires_grad = false;
  std::vector<NodePtr> inputs;
  std::function<void(Node&)> backward_fn;
  Parameter* param = nullptr;
  const char* op = "leaf";

  Tensor& ensure_grad();
  void accumulate_grad(const Tensor& g);
};

// Value-semantics handle to a graph node.
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr n) : node_(std::move(n)) {}

  static Var constant(Tensor t);
  static Var leaf(Parameter& p);

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const NodePtr& node() const { return node_; }
  bool defined() const { return node_ != nullptr; }

 private:
  NodePtr node_;
};

// Disables graph recording in the current thread (evaluation mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// Shared factory for every primitive: prunes inputs/backward when the result
// cannot require grad, so evaluation-mode graphs carry no tape.
Var make_node(Tensor value, std::vector<NodePtr> inputs, std::function<void(Node&)> backward_fn,
              const char* op);

// Reverse-mode accumulation from a scalar loss in deterministic topological
// order. Trainable Parameter leaves receive their gradient as a side effect.
void backward(const Var& loss);

// ---- primitive set -------------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, Real s);
Var matmul(const Var& a, const Var& b);     // (m,k)·(k,n)
Var matmul_nt(const Var& a, const Var& b);  // (m,k)·(n,k)ᵀ -> (m,n)
Var gelu(const Var& x);                     // exact x·Φ(x)
Var tanh_op(const Var& x);
Var softmax_lastaxis(const Var& x);
Var reshape(const Var& x, Shape shape);
Var add_rowvec(const Var& x, const Var& row);        // broadcast over last axis
Var mul_rowvec(const Var& x, const Tensor& row);     // constant per-column scale
Var clamp_rows(const Var& x, const Tensor& lo, const Tensor& hi);
Var slice_lastdim(const Var& x, Index from, Index to);
Var concat_lastdim(const std::vector<Var>& xs);
Var sum_all(const Var& x);
Var mean_all(const Var& x);
Var mean_spatial(const Var& x);  // (T,H,W,C) -> (T,C)
Var stack_scalars(const std::vector<Var>& xs);
Var dwconv3d(const Var& x, const Var& kernel, const Var& bias, std::array<Index, 3> stride);
Var channel_norm(const Var& x, const Var& gamma, const Var& beta, Real eps);
Var trilinear(const Var& features, const Var& coords);  // (T,H,W,C),(M,3) -> (M,C)

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

// ---- raw tensor kernels shared by forward and backward passes ------------

void mm_nn(const Real* a, const Real* b, Real* c, Index m, Index k, Index n);  // c += a·b
void mm_nt(const Real* a, const Real* b, Real* c, Index m, Index k, Index n);  // c += a·bᵀ (b is n×k)
void mm_tn(const Real* a, const Real* b, Real* c, Index m, Index k, Index n);  // c += aᵀ·b (a is k×m)

Real gelu_scalar(Real x);
Real gelu_grad_scalar(Real x);

}  // namespace ad

// Central-difference gradient of a scalar function; the independent oracle
// for every analytic gradient in this library.
Tensor finite_diff_grad(const std::function<Real(const Tensor&)>& f, const Tensor& x, Real eps);

}  // namespace d2st
