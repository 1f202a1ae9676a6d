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

#include <optional>
#include <utility>

#include "d2st/adsta.hpp"

namespace d2st {

enum class PathwayKind { kAdsta, kConv3d, kNone };

const char* pathway_kind_name(PathwayKind k);

struct AdapterConfig {
  Real bottleneck_ratio = Real(0.25);
  PathwayKind pathway_kind = PathwayKind::kAdsta;
  AdstaConfig spatial;   // used when pathway_kind == kAdsta
  AdstaConfig temporal;  // used when pathway_kind == kAdsta
  bool spatial_enabled = true;
  bool temporal_enabled = true;
  bool residual = true;

  Index bottleneck_channels(Index c) const;
  void validate() const;
};

// Depthwise conv + per-channel norm + GELU; the building block of the
// convolutional adapter variant.
struct ConvPathway {
  DepthwiseConv3d conv;
  ChannelNorm norm;

  ad::Var forward(const ad::Var& v);
  void collect(std::vector<Parameter*>& out);
};

// Spatial branch (1x3x3) and temporal branch (3x1x1), evaluated in parallel
// on the same bottleneck features.
std::pair<ad::Var, ad::Var> dst_conv_pathways(const ad::Var& v, ConvPathway& spatial,
                                              ConvPathway& temporal);

// y = GELU(x·W_down)·W_up (+ x when residual).
ad::Var vanilla_adapter_forward(const ad::Var& x, LinearLayer& down, LinearLayer& up, bool residual);

struct AdapterTraces {
  std::optional<AdstaTrace> spatial;
  std::optional<AdstaTrace> temporal;
};

// Bottleneck adapter with parallel spatial/temporal pathways. The up
// projection is zero-initialized, so a residual adapter is the identity map
// at initialization.
class D2STAdapter {
 public:
  D2STAdapter() = default;
  D2STAdapter(Index channels, AdapterConfig cfg, std::array<Index, 3> volume, SeededRng& rng);

  ad::Var forward(const ad::Var& x, AdapterTraces* traces = nullptr);
  void collect(std::vector<Parameter*>& out);

  Index channels() const { return down.in_channels(); }
  Index bottleneck() const { return down.out_channels(); }
  const AdapterConfig& config() const { return cfg_; }

  LinearLayer down;
  LinearLayer up;
  std::optional<AdstaModule> adsta_spatial;
  std::optional<AdstaModule> adsta_temporal;
  std::optional<ConvPathway> conv_spatial;
  std::optional<ConvPathway> conv_temporal;

 private:
  AdapterConfig cfg_;
};

// Exact count of trainable scalars in one adapter instance with host channel
// count c.
Index count_tunable_params(const AdapterConfig& cfg, Index c);

}  // namespace d2st
