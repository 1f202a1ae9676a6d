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

#include "d2st/checkpoint.hpp"

#include <json.hpp>

#include "d2st/io.hpp"

namespace d2st {

namespace {

std::vector<std::pair<std::string, Parameter*>> named_tunables(ModelAssembly& model) {
  std::vector<std::pair<std::string, Parameter*>> named;
  for (auto& [stage, adapter] : model.adapters()) {
    std::vector<Parameter*> params;
    adapter.collect(params);
    for (size_t i = 0; i < params.size(); ++i)
      named.emplace_back("stage" + std::to_string(stage) + ".param" + std::to_string(i), params[i]);
  }
  return named;
}

}  // namespace

void save_checkpoint(const std::string& path, const RunConfig& cfg, ModelAssembly& model) {
  nlohmann::json meta;
  meta["config"] = nlohmann::json::parse(cfg.to_json());
  meta["model_signature"] = cfg.model_signature();
  meta["frozen_digest"] = model.frozen_digest();
  TensorArchive arc;
  arc.metadata_json = meta.dump();
  for (auto& [name, param] : named_tunables(model)) arc.tensors.emplace_back(name, param->value);
  save_archive(arc, path);
}

ModelAssembly load_checkpoint(const std::string& path, RunConfig* cfg_out) {
  TensorArchive arc = load_archive(path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(arc.metadata_json);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("checkpoint metadata parse error: ") + e.what());
  }
  RunConfig cfg = RunConfig::from_json(meta.at("config").dump());
  ModelAssembly model = build_assembly(cfg);
  for (auto& [name, param] : named_tunables(model)) {
    const Tensor* t = arc.find(name);
    if (!t) throw ConfigError("checkpoint missing tensor '" + name + "'");
    if (t->shape() != param->value.shape())
      throw ConfigError("checkpoint tensor '" + name + "' has shape " + shape_str(t->shape()) +
                        ", model expects " + shape_str(param->value.shape()));
    param->value = *t;
  }
  const auto digest = meta.at("frozen_digest").get<std::uint64_t>();
  if (digest != model.frozen_digest())
    throw ConfigError("checkpoint frozen-backbone digest mismatch");
  if (cfg_out) *cfg_out = cfg;
  return model;
}

void load_checkpoint_into(const std::string& path, const RunConfig& cfg, ModelAssembly& model) {
  TensorArchive arc = load_archive(path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(arc.metadata_json);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("checkpoint metadata parse error: ") + e.what());
  }
  const std::string saved_sig = meta.at("model_signature").get<std::string>();
  if (saved_sig != cfg.model_signature())
    throw ConfigError("checkpoint/config mismatch: saved model signature " + saved_sig +
                      " differs from requested " + cfg.model_signature());
  for (auto& [name, param] : named_tunables(model)) {
    const Tensor* t = arc.find(name);
    if (!t) throw ConfigError("checkpoint missing tensor '" + name + "'");
    if (t->shape() != param->value.shape())
      throw ConfigError("checkpoint tensor '" + name + "' shape mismatch");
    param->value = *t;
  }
}

}  // namespace d2st
