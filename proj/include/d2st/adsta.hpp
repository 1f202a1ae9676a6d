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
#include <optional>
#include <vector>

#include "d2st/nn.hpp"

namespace d2st {

enum class AdstaVariant { kSpatial, kTemporal, kUniform };

const char* variant_name(AdstaVariant v);

// Reference-point densities along (time, height, width); width shares the
// height density. The grid holds point_count() = n_t * n_s * n_s points.
struct SamplingKernel {
  Index n_t = 1;
  Index n_s = 1;

  Index point_count() const { return n_t * n_s * n_s; }
  void validate(Index t, Index h, Index w) const;
};

struct AdstaConfig {
  AdstaVariant variant = AdstaVariant::kUniform;
  SamplingKernel kernel;
  Real range_scale = Real(1);  // offset bound as a fraction of the half cell extent
  Index head_count = 1;
  bool use_dpe = true;

  void validate(Index t, Index h, Index w) const;
};

// Continuous (t,h,w) cell-center coordinates in index space, row-major over
// (n_t, n_s, n_s).
struct ReferenceGrid {
  Tensor points;  // (M, 3)
  SamplingKernel kernel;
  std::array<Index, 3> volume{0, 0, 0};
};

ReferenceGrid sample_reference_grid(std::array<Index, 3> shape, const SamplingKernel& kernel);

// Deformed reference points with their interpolated feature rows.
struct ShiftedPointSet {
  Tensor coords;    // (M, 3), clamped into the valid index volume
  Tensor features;  // (M, C')
};

// Per-forward capture for visualization and diagnostics.
struct AdstaTrace {
  Tensor reference;   // (M, 3)
  Tensor coords;      // (M, 3) after shift and clamp
  Tensor offsets;     // (M, 3) pre-clamp deformation
  Tensor attention;   // (T*H*W, M), averaged over heads; rows sum to 1
  Tensor importance;  // (M)
};

// F' = dwconv(x) + x with a 3x3x3 stride-1 depthwise kernel.
ad::Var dpe_apply(const ad::Var& x, DepthwiseConv3d& dpe);

// Attention of every token over the M shifted points (shared keys/values).
ad::Var sparse_attention(const ad::Var& features, const ad::Var& point_features, Parameter& wq,
                         Parameter& wk, Parameter& wv, Parameter& wo, Index head_count,
                         Tensor* attention_out = nullptr);

// Accumulated attention mass per shifted point; scores sum to the token count.
Tensor point_importance(const Tensor& attention_weights);

// One deformable spatio-temporal attention instance, bound to a fixed input
// volume so the offset network stride can equal the grid cell extents.
class AdstaModule {
 public:
  AdstaModule() = default;
  AdstaModule(Index channels, AdstaConfig cfg, std::array<Index, 3> volume);

  void init_params(SeededRng& rng);

  // Offset prediction from the position-fused map: strided depthwise conv,
  // GELU, pointwise to 3 channels, tanh, scale to the per-axis bound.
  ad::Var predict_offsets(const ad::Var& fused);

  ad::Var forward(const ad::Var& x, AdstaTrace* trace = nullptr);

  void collect(std::vector<Parameter*>& out);

  const ReferenceGrid& grid() const { return grid_; }
  Index channels() const { return wq.value.dim(0); }
  std::array<Index, 3> volume() const { return volume_; }
  const AdstaConfig& config() const { return cfg_; }
  Tensor offset_bounds() const;  // (3,) per-axis bound λ·(half cell extent)

  DepthwiseConv3d dpe;
  DepthwiseConv3d offset_dw;
  PointwiseConv3d offset_pw;
  Parameter wq, wk, wv, wo;

 private:
  AdstaConfig cfg_;
  std::array<Index, 3> volume_{0, 0, 0};
  ReferenceGrid grid_;
};

}  // namespace d2st
