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

#include <string>

#include "d2st/matching.hpp"
#include "d2st/synthvid.hpp"

namespace d2st {

// Everything a run needs; serialized into every output artifact.
struct RunConfig {
  BackboneConfig backbone;
  AdapterConfig adapter;
  InsertionKind insertion = InsertionKind::kFull;

  Metric metric = Metric::kBiMhm;
  Real temperature = Real(1);

  Family episode_family = Family::kTemporal;
  Real noise_sigma = Real(0.02);
  Index way = 5;
  Index shot = 1;
  Index queries_per_class = 5;
  Index episode_count = 1000;

  AdamConfig optimizer;
  Index train_steps = 150;

  std::uint64_t adapter_seed = 7;
  std::uint64_t train_seed = 1001;
  std::uint64_t eval_seed = 2002;

  std::string out_dir = "out";
  int eval_workers = 2;

  SynthGeometry geometry() const {
    return SynthGeometry{backbone.frames, backbone.image_h(), backbone.image_w()};
  }
  std::vector<SynthClassSpec> class_pool() const {
    return episode_family == Family::kSpatial ? spatial_class_pool(noise_sigma)
                                              : temporal_class_pool(noise_sigma);
  }

  void validate() const;
  std::string to_json() const;
  static RunConfig from_json(const std::string& json_text);
  static RunConfig from_file(const std::string& path);

  // The model-defining subset; checkpoints must agree on it.
  std::string model_signature() const;
};

// Defaults sized for the desk-scale token grid (T=8, 8x8 tokens, C=32):
// spatial pathway samples (2,4,4), temporal pathway (8,2,2).
RunConfig default_run_config();

ModelAssembly build_assembly(const RunConfig& cfg);

}  // namespace d2st
