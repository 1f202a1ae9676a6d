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

#include "d2st/backbone.hpp"

#include <cmath>

namespace d2st {

using ad::Var;

void BackboneConfig::validate() const {
  if (stage_count < 1) throw ConfigError("stage_count must be positive");
  if (channels < 1 || frames < 1 || grid_h < 1 || grid_w < 1 || patch < 1)
    throw ConfigError("backbone geometry must be positive");
}

Var BackboneStage::forward(const Var& x) {
  return ad::add(x, ad::gelu(norm.forward(mix.forward(x))));
}

void BackboneStage::collect(std::vector<Parameter*>& out) {
  mix.collect(out);
  norm.collect(out);
}

ToyBackbone::ToyBackbone(const BackboneConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  SeededRng rng(cfg_.seed);
  const Index patch_dim = cfg_.patch * cfg_.patch * 3;
  embed_ = LinearLayer(patch_dim, cfg_.channels);
  SeededRng embed_rng = rng.fork(0);
  init_normal(embed_.weight, embed_rng, Real(1) / std::sqrt(static_cast<Real>(patch_dim)));
  init_normal(embed_.bias, embed_rng, Real(0.02));
  stages_.resize(static_cast<size_t>(cfg_.stage_count));
  for (Index s = 0; s < cfg_.stage_count; ++s) {
    SeededRng srng = rng.fork(static_cast<std::uint64_t>(s) + 1);
    auto& stage = stages_[static_cast<size_t>(s)];
    stage.mix = PointwiseConv3d(cfg_.channels, cfg_.channels);
    stage.norm = ChannelNorm(cfg_.channels);
    init_normal(stage.mix.weight, srng, Real(1) / std::sqrt(static_cast<Real>(cfg_.channels)));
    init_normal(stage.mix.bias, srng, Real(0.02));
  }
  // The whole host is frozen.
  std::vector<Parameter*> all;
  collect(all);
  for (Parameter* p : all) p->trainable = false;
}

Var ToyBackbone::embed(const Tensor& frames) {
  require_rank(frames, 4, "backbone input frames");
  if (frames.dim(0) != cfg_.frames)
    throw DimensionError("expected " + std::to_string(cfg_.frames) + " frames, got " +
                         std::to_string(frames.dim(0)));
  if (frames.dim(1) != cfg_.image_h() || frames.dim(2) != cfg_.image_w() || frames.dim(3) != 3)
    throw DimensionError("expected frames (" + std::to_string(cfg_.frames) + "," +
                         std::to_string(cfg_.image_h()) + "," + std::to_string(cfg_.image_w()) +
                         ",3), got " + shape_str(frames.shape()));
  const Index t = cfg_.frames, gh = cfg_.grid_h, gw = cfg_.grid_w, p = cfg_.patch;
  const Index patch_dim = p * p * 3;
  Tensor rows({t * gh * gw, patch_dim});
  const Index iw = cfg_.image_w();
  for (Index ti = 0; ti < t; ++ti)
    for (Index y = 0; y < gh; ++y)
      for (Index x = 0; x < gw; ++x) {
        Real* dst = rows.data() + ((ti * gh + y) * gw + x) * patch_dim;
        for (Index dy = 0; dy < p; ++dy)
          for (Index dx = 0; dx < p; ++dx) {
            const Real* src = frames.data() + ((ti * cfg_.image_h() + y * p + dy) * iw + x * p + dx) * 3;
            Real* cell = dst + (dy * p + dx) * 3;
            cell[0] = src[0];
            cell[1] = src[1];
            cell[2] = src[2];
          }
      }
  Var tokens = embed_.forward(Var::constant(std::move(rows)));
  return ad::reshape(tokens, {t, gh, gw, cfg_.channels});
}

Var ToyBackbone::stage_forward(Index stage, const Var& x) {
  if (stage < 0 || stage >= stage_count())
    throw ConfigError("stage index " + std::to_string(stage) + " out of range");
  return stages_[static_cast<size_t>(stage)].forward(x);
}

void ToyBackbone::collect(std::vector<Parameter*>& out) {
  embed_.collect(out);
  for (auto& s : stages_) s.collect(out);
}

const char* insertion_kind_name(InsertionKind k) {
  switch (k) {
    case InsertionKind::kEarly:
      return "early";
    case InsertionKind::kLate:
      return "late";
    case InsertionKind::kSkip:
      return "skip";
    case InsertionKind::kFull:
      return "full";
    case InsertionKind::kNone:
      return "none";
  }
  return "?";
}

InsertionKind insertion_kind_from_name(const std::string& name) {
  if (name == "early") return InsertionKind::kEarly;
  if (name == "late") return InsertionKind::kLate;
  if (name == "skip") return InsertionKind::kSkip;
  if (name == "full") return InsertionKind::kFull;
  if (name == "none") return InsertionKind::kNone;
  throw ConfigError("unknown insertion policy '" + name + "'");
}

std::vector<Index> InsertionPolicy::resolve(Index stage_count) const {
  std::vector<Index> idx;
  switch (kind) {
    case InsertionKind::kEarly:
      for (Index s = 0; s < stage_count / 2; ++s) idx.push_back(s);
      break;
    case InsertionKind::kLate:
      for (Index s = stage_count / 2; s < stage_count; ++s) idx.push_back(s);
      break;
    case InsertionKind::kSkip:
      for (Index s = 0; s < stage_count; s += 2) idx.push_back(s);
      break;
    case InsertionKind::kFull:
      for (Index s = 0; s < stage_count; ++s) idx.push_back(s);
      break;
    case InsertionKind::kNone:
      break;
  }
  return idx;
}

ModelAssembly::ModelAssembly(const BackboneConfig& backbone_cfg, const InsertionPolicy& policy,
                             const AdapterConfig& adapter_cfg, std::uint64_t adapter_seed)
    : backbone_(backbone_cfg), policy_(policy), adapter_cfg_(adapter_cfg), adapter_seed_(adapter_seed) {
  const std::array<Index, 3> volume{backbone_cfg.frames, backbone_cfg.grid_h, backbone_cfg.grid_w};
  SeededRng rng(adapter_seed);
  for (Index stage : policy_.resolve(backbone_cfg.stage_count)) {
    if (adapters_.count(stage))
      throw ConfigError("duplicate adapter insertion at stage " + std::to_string(stage));
    SeededRng arng = rng.fork(static_cast<std::uint64_t>(stage));
    adapters_.emplace(stage, D2STAdapter(backbone_cfg.channels, adapter_cfg, volume, arng));
  }
}

Var ModelAssembly::forward_video(const Tensor& frames, std::map<Index, AdapterTraces>* traces) {
  Var x = backbone_.embed(frames);
  for (Index s = 0; s < backbone_.stage_count(); ++s) {
    x = backbone_.stage_forward(s, x);
    auto it = adapters_.find(s);
    if (it != adapters_.end()) {
      AdapterTraces* tr = traces ? &(*traces)[s] : nullptr;
      x = it->second.forward(x, tr);
    }
  }
  return ad::mean_spatial(x);
}

ParameterPartition ModelAssembly::partition_parameters() {
  ParameterPartition part;
  backbone_.collect(part.frozen);
  for (auto& [stage, adapter] : adapters_) adapter.collect(part.tunable);
  for (Parameter* p : part.frozen) {
    if (p->trainable) throw ContractError("backbone parameter unexpectedly trainable");
    part.frozen_count += p->value.size();
  }
  for (Parameter* p : part.tunable) {
    if (!p->trainable) throw ContractError("adapter parameter unexpectedly frozen");
    part.tunable_count += p->value.size();
  }
  return part;
}

std::vector<Tensor> ModelAssembly::snapshot_frozen() {
  std::vector<Parameter*> frozen;
  backbone_.collect(frozen);
  std::vector<Tensor> snap;
  snap.reserve(frozen.size());
  for (Parameter* p : frozen) snap.push_back(p->value);
  return snap;
}

bool ModelAssembly::verify_frozen(const std::vector<Tensor>& before_snapshot) {
  std::vector<Parameter*> frozen;
  backbone_.collect(frozen);
  if (frozen.size() != before_snapshot.size()) return false;
  for (size_t i = 0; i < frozen.size(); ++i)
    if (!frozen[i]->value.bitwise_equal(before_snapshot[i])) return false;
  return true;
}

std::uint64_t ModelAssembly::frozen_digest() {
  std::vector<Parameter*> frozen;
  backbone_.collect(frozen);
  std::uint64_t d = 0;
  for (Parameter* p : frozen) d = digest_combine(d, content_digest(p->value));
  return d;
}

}  // namespace d2st
