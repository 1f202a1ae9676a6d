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

#include <map>
#include <string>
#include <vector>

#include "d2st/adapter.hpp"

namespace d2st {

struct BackboneConfig {
  Index stage_count = 12;
  Index channels = 32;  // token feature width C, also the per-frame feature dimension
  Index frames = 8;
  Index grid_h = 8;
  Index grid_w = 8;
  Index patch = 4;  // image pixels per token cell edge
  std::uint64_t seed = 42;

  Index image_h() const { return grid_h * patch; }
  Index image_w() const { return grid_w * patch; }
  void validate() const;
};

// Frozen per-stage token mixer: x + GELU(ChannelNorm(PointwiseConv3d(x))).
struct BackboneStage {
  PointwiseConv3d mix;
  ChannelNorm norm;

  ad::Var forward(const ad::Var& x);
  void collect(std::vector<Parameter*>& out);
};

// Multi-stage frozen host with seeded random weights and a patch embedder
// mapping raw frames (T, H_img, W_img, 3) to tokens (T, H, W, C).
class ToyBackbone {
 public:
  ToyBackbone() = default;
  explicit ToyBackbone(const BackboneConfig& cfg);

  ad::Var embed(const Tensor& frames);
  ad::Var stage_forward(Index stage, const ad::Var& x);

  const BackboneConfig& config() const { return cfg_; }
  Index stage_count() const { return static_cast<Index>(stages_.size()); }
  void collect(std::vector<Parameter*>& out);

 private:
  BackboneConfig cfg_;
  LinearLayer embed_;
  std::vector<BackboneStage> stages_;
};

enum class InsertionKind { kEarly, kLate, kSkip, kFull, kNone };

const char* insertion_kind_name(InsertionKind k);
InsertionKind insertion_kind_from_name(const std::string& name);

// Stage indices are zero-based: early = first half, late = last half,
// skip = every other stage starting at the first, full = all.
struct InsertionPolicy {
  InsertionKind kind = InsertionKind::kFull;
  std::vector<Index> resolve(Index stage_count) const;
};

struct ParameterPartition {
  std::vector<Parameter*> frozen;
  std::vector<Parameter*> tunable;
  Index frozen_count = 0;   // scalar count
  Index tunable_count = 0;  // scalar count
  double tunable_fraction() const {
    const double total = static_cast<double>(frozen_count + tunable_count);
    return total == 0 ? 0.0 : static_cast<double>(tunable_count) / total;
  }
};

// Frozen backbone plus adapters inserted after selected stage mixers.
class ModelAssembly {
 public:
  ModelAssembly() = default;
  ModelAssembly(const BackboneConfig& backbone_cfg, const InsertionPolicy& policy,
                const AdapterConfig& adapter_cfg, std::uint64_t adapter_seed);

  // Per-frame features (T, C): patch embed, stages with adapters, spatial
  // mean pooling.
  ad::Var forward_video(const Tensor& frames, std::map<Index, AdapterTraces>* traces = nullptr);

  ParameterPartition partition_parameters();

  std::vector<Tensor> snapshot_frozen();
  bool verify_frozen(const std::vector<Tensor>& before_snapshot);
  std::uint64_t frozen_digest();

  const BackboneConfig& backbone_config() const { return backbone_.config(); }
  const AdapterConfig& adapter_config() const { return adapter_cfg_; }
  const InsertionPolicy& policy() const { return policy_; }
  std::map<Index, D2STAdapter>& adapters() { return adapters_; }
  ToyBackbone& backbone() { return backbone_; }
  std::uint64_t adapter_seed() const { return adapter_seed_; }

 private:
  ToyBackbone backbone_;
  InsertionPolicy policy_;
  AdapterConfig adapter_cfg_;
  std::map<Index, D2STAdapter> adapters_;
  std::uint64_t adapter_seed_ = 0;
};

}  // namespace d2st
