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

#include "d2st/adapter.hpp"

#include <cmath>

namespace d2st {

using ad::Var;

const char* pathway_kind_name(PathwayKind k) {
  switch (k) {
    case PathwayKind::kAdsta:
      return "adsta";
    case PathwayKind::kConv3d:
      return "conv3d";
    case PathwayKind::kNone:
      return "none";
  }
  return "?";
}

Index AdapterConfig::bottleneck_channels(Index c) const {
  const Index cp = static_cast<Index>(std::llround(bottleneck_ratio * static_cast<Real>(c)));
  return cp < 1 ? 1 : cp;
}

void AdapterConfig::validate() const {
  if (!(bottleneck_ratio > Real(0)) || bottleneck_ratio > Real(1))
    throw ConfigError("bottleneck_ratio must lie in (0,1]");
  if (pathway_kind != PathwayKind::kNone && !spatial_enabled && !temporal_enabled)
    throw ConfigError("at least one pathway must be enabled");
}

Var ConvPathway::forward(const Var& v) { return ad::gelu(norm.forward(conv.forward(v))); }

void ConvPathway::collect(std::vector<Parameter*>& out) {
  conv.collect(out);
  norm.collect(out);
}

std::pair<Var, Var> dst_conv_pathways(const Var& v, ConvPathway& spatial, ConvPathway& temporal) {
  return {spatial.forward(v), temporal.forward(v)};
}

Var vanilla_adapter_forward(const Var& x, LinearLayer& down, LinearLayer& up, bool residual) {
  if (down.out_channels() != up.in_channels() || down.in_channels() != up.out_channels())
    throw DimensionError("vanilla adapter: down/up channel chain mismatch");
  Var y = up.forward(ad::gelu(down.forward(x)));
  return residual ? ad::add(y, x) : y;
}

D2STAdapter::D2STAdapter(Index channels, AdapterConfig cfg, std::array<Index, 3> volume,
                         SeededRng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  const Index cp = cfg_.bottleneck_channels(channels);
  down = LinearLayer(channels, cp);
  up = LinearLayer(cp, channels);
  init_normal(down.weight, rng, Real(1) / std::sqrt(static_cast<Real>(channels)));
  // up stays zero so the residual adapter is the identity at initialization.

  switch (cfg_.pathway_kind) {
    case PathwayKind::kAdsta: {
      if (cfg_.spatial_enabled) {
        adsta_spatial.emplace(cp, cfg_.spatial, volume);
        adsta_spatial->init_params(rng);
      }
      if (cfg_.temporal_enabled) {
        adsta_temporal.emplace(cp, cfg_.temporal, volume);
        adsta_temporal->init_params(rng);
      }
      break;
    }
    case PathwayKind::kConv3d: {
      if (cfg_.spatial_enabled) {
        conv_spatial.emplace();
        conv_spatial->conv = DepthwiseConv3d(cp, 1, 3, 3);
        conv_spatial->norm = ChannelNorm(cp);
        init_normal(conv_spatial->conv.kernel, rng, Real(0.1));
      }
      if (cfg_.temporal_enabled) {
        conv_temporal.emplace();
        conv_temporal->conv = DepthwiseConv3d(cp, 3, 1, 1);
        conv_temporal->norm = ChannelNorm(cp);
        init_normal(conv_temporal->conv.kernel, rng, Real(0.1));
      }
      break;
    }
    case PathwayKind::kNone:
      break;
  }
}

Var D2STAdapter::forward(const Var& x, AdapterTraces* traces) {
  require_rank(x.value(), 4, "adapter input");
  if (x.value().dim(3) != channels())
    throw DimensionError("adapter: input has " + std::to_string(x.value().dim(3)) +
                         " channels, adapter expects " + std::to_string(channels()));

  if (cfg_.pathway_kind == PathwayKind::kNone)
    return vanilla_adapter_forward(x, down, up, cfg_.residual);

  Var v = down.forward(x);
  std::optional<Var> fused;
  auto fold = [&fused](Var branch) {
    fused = fused ? ad::add(*fused, branch) : std::move(branch);
  };

  if (cfg_.pathway_kind == PathwayKind::kAdsta) {
    if (adsta_spatial) {
      AdstaTrace* tr = traces ? &traces->spatial.emplace() : nullptr;
      fold(adsta_spatial->forward(v, tr));
    }
    if (adsta_temporal) {
      AdstaTrace* tr = traces ? &traces->temporal.emplace() : nullptr;
      fold(adsta_temporal->forward(v, tr));
    }
  } else {
    if (conv_spatial) fold(conv_spatial->forward(v));
    if (conv_temporal) fold(conv_temporal->forward(v));
  }

  Var y = up.forward(ad::gelu(*fused));
  return cfg_.residual ? ad::add(y, x) : y;
}

void D2STAdapter::collect(std::vector<Parameter*>& out) {
  down.collect(out);
  up.collect(out);
  if (adsta_spatial) adsta_spatial->collect(out);
  if (adsta_temporal) adsta_temporal->collect(out);
  if (conv_spatial) conv_spatial->collect(out);
  if (conv_temporal) conv_temporal->collect(out);
}

Index count_tunable_params(const AdapterConfig& cfg, Index c) {
  cfg.validate();
  const Index cp = cfg.bottleneck_channels(c);
  Index total = c * cp + cp;  // down
  total += cp * c + c;        // up
  auto adsta_params = [cp]() {
    Index n = cp * 27 + cp;  // dpe
    n += cp * 27 + cp;       // offset depthwise
    n += cp * 3 + 3;         // offset pointwise
    n += 4 * cp * cp;        // q/k/v/o projections
    return n;
  };
  auto conv_params = [cp](Index taps) { return cp * taps + cp + 2 * cp; };
  switch (cfg.pathway_kind) {
    case PathwayKind::kAdsta:
      if (cfg.spatial_enabled) total += adsta_params();
      if (cfg.temporal_enabled) total += adsta_params();
      break;
    case PathwayKind::kConv3d:
      if (cfg.spatial_enabled) total += conv_params(9);   // 1x3x3
      if (cfg.temporal_enabled) total += conv_params(3);  // 3x1x1
      break;
    case PathwayKind::kNone:
      break;
  }
  return total;
}

}  // namespace d2st
