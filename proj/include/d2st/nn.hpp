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
#include <vector>

#include "d2st/autodiff.hpp"
#include "d2st/rng.hpp"

namespace d2st {

void init_normal(Parameter& p, SeededRng& rng, Real stddev);

// y = x·W + b along the last axis.
class LinearLayer {
 public:
  LinearLayer() = default;
  LinearLayer(Index c_in, Index c_out)
      : weight(Tensor::zeros({c_in, c_out})), bias(Tensor::zeros({c_out})) {}

  Index in_channels() const { return weight.value.dim(0); }
  Index out_channels() const { return weight.value.dim(1); }

  ad::Var forward(const ad::Var& x);
  void collect(std::vector<Parameter*>& out);

  Parameter weight;
  Parameter bias;
};

// Per-channel 3D correlation with zero padding. Stride 1 preserves the
// spatio-temporal shape; stride > 1 follows (L + 2p - k)/s + 1 with
// p = (k-1)/2.
class DepthwiseConv3d {
 public:
  DepthwiseConv3d() = default;
  DepthwiseConv3d(Index channels, Index k_t, Index k_h, Index k_w,
                  std::array<Index, 3> stride = {1, 1, 1})
      : kernel(Tensor::zeros({channels, k_t, k_h, k_w})),
        bias(Tensor::zeros({channels})),
        stride(stride) {}

  Index channels() const { return kernel.value.dim(0); }

  ad::Var forward(const ad::Var& x);
  void collect(std::vector<Parameter*>& out);

  Parameter kernel;
  Parameter bias;
  std::array<Index, 3> stride{1, 1, 1};
};

// 1x1x1 convolution: a per-position linear map over channels.
class PointwiseConv3d {
 public:
  PointwiseConv3d() = default;
  PointwiseConv3d(Index c_in, Index c_out)
      : weight(Tensor::zeros({c_in, c_out})), bias(Tensor::zeros({c_out})) {}

  Index in_channels() const { return weight.value.dim(0); }
  Index out_channels() const { return weight.value.dim(1); }

  ad::Var forward(const ad::Var& x);
  void collect(std::vector<Parameter*>& out);

  Parameter weight;
  Parameter bias;
};

// Normalizes each channel over all (T,H,W) positions of the current input,
// then applies scale and shift. Statistics are always per input sample, so
// evaluation is stateless.
class ChannelNorm {
 public:
  ChannelNorm() = default;
  explicit ChannelNorm(Index channels, Real epsilon = Real(1e-5))
      : scale(Tensor::ones({channels})), shift(Tensor::zeros({channels})), epsilon(epsilon) {}

  Index channels() const { return scale.value.dim(0); }

  ad::Var forward(const ad::Var& x);
  void collect(std::vector<Parameter*>& out);

  Parameter scale;
  Parameter shift;
  Real epsilon = Real(1e-5);
};

}  // namespace d2st
