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

#include "d2st/nn.hpp"

namespace d2st {

using ad::Var;

void init_normal(Parameter& p, SeededRng& rng, Real stddev) {
  p.value = rng.normal_tensor(p.value.shape(), Real(0), stddev);
}

namespace {

// Flatten leading axes, apply (rows, Cin)·W + b, restore leading axes.
Var channel_linear(const Var& x, Parameter& weight, Parameter& bias) {
  const Index c_in = weight.value.dim(0);
  const Index c_out = weight.value.dim(1);
  if (x.value().rank() < 1 || x.value().dim(x.value().rank() - 1) != c_in)
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not end in " +
                         std::to_string(c_in) + " channels");
  Shape in_shape = x.value().shape();
  const Index rows = x.value().size() / c_in;
  Var flat = ad::reshape(x, {rows, c_in});
  Var y = ad::matmul(flat, Var::leaf(weight));
  y = ad::add_rowvec(y, Var::leaf(bias));
  Shape out_shape = in_shape;
  out_shape.back() = c_out;
  return ad::reshape(y, std::move(out_shape));
}

}  // namespace

Var LinearLayer::forward(const Var& x) { return channel_linear(x, weight, bias); }

void LinearLayer::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

Var DepthwiseConv3d::forward(const Var& x) {
  return ad::dwconv3d(x, Var::leaf(kernel), Var::leaf(bias), stride);
}

void DepthwiseConv3d::collect(std::vector<Parameter*>& out) {
  out.push_back(&kernel);
  out.push_back(&bias);
}

Var PointwiseConv3d::forward(const Var& x) { return channel_linear(x, weight, bias); }

void PointwiseConv3d::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

Var ChannelNorm::forward(const Var& x) {
  return ad::channel_norm(x, Var::leaf(scale), Var::leaf(shift), epsilon);
}

void ChannelNorm::collect(std::vector<Parameter*>& out) {
  out.push_back(&scale);
  out.push_back(&shift);
}

}  // namespace d2st
