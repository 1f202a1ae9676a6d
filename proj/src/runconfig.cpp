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

#include "d2st/runconfig.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace d2st {

using nlohmann::json;

namespace {

AdstaVariant variant_from_name(const std::string& s) {
  if (s == "S") return AdstaVariant::kSpatial;
  if (s == "T") return AdstaVariant::kTemporal;
  if (s == "Uniform") return AdstaVariant::kUniform;
  throw ConfigError("unknown aDSTA variant '" + s + "'");
}

PathwayKind pathway_from_name(const std::string& s) {
  if (s == "adsta") return PathwayKind::kAdsta;
  if (s == "conv3d") return PathwayKind::kConv3d;
  if (s == "none") return PathwayKind::kNone;
  throw ConfigError("unknown pathway kind '" + s + "'");
}

Family family_from_name(const std::string& s) {
  if (s == "spatial") return Family::kSpatial;
  if (s == "temporal") return Family::kTemporal;
  throw ConfigError("unknown episode family '" + s + "'");
}

json adsta_to_json(const AdstaConfig& c) {
  return json{{"variant", variant_name(c.variant)},
              {"n_t", c.kernel.n_t},
              {"n_s", c.kernel.n_s},
              {"range_scale", c.range_scale},
              {"head_count", c.head_count},
              {"use_dpe", c.use_dpe}};
}

AdstaConfig adsta_from_json(const json& j) {
  AdstaConfig c;
  c.variant = variant_from_name(j.at("variant").get<std::string>());
  c.kernel.n_t = j.at("n_t").get<Index>();
  c.kernel.n_s = j.at("n_s").get<Index>();
  c.range_scale = j.at("range_scale").get<Real>();
  c.head_count = j.at("head_count").get<Index>();
  c.use_dpe = j.at("use_dpe").get<bool>();
  return c;
}

json model_json(const RunConfig& cfg) {
  return json{
      {"backbone",
       {{"stage_count", cfg.backbone.stage_count},
        {"channels", cfg.backbone.channels},
        {"frames", cfg.backbone.frames},
        {"grid_h", cfg.backbone.grid_h},
        {"grid_w", cfg.backbone.grid_w},
        {"patch", cfg.backbone.patch},
        {"seed", cfg.backbone.seed}}},
      {"adapter",
       {{"bottleneck_ratio", cfg.adapter.bottleneck_ratio},
        {"pathway_kind", pathway_kind_name(cfg.adapter.pathway_kind)},
        {"spatial", adsta_to_json(cfg.adapter.spatial)},
        {"temporal", adsta_to_json(cfg.adapter.temporal)},
        {"spatial_enabled", cfg.adapter.spatial_enabled},
        {"temporal_enabled", cfg.adapter.temporal_enabled},
        {"residual", cfg.adapter.residual}}},
      {"insertion", insertion_kind_name(cfg.insertion)},
      {"adapter_seed", cfg.adapter_seed}};
}

}  // namespace

void RunConfig::validate() const {
  backbone.validate();
  adapter.validate();
  if (adapter.pathway_kind == PathwayKind::kAdsta) {
    if (adapter.spatial_enabled) adapter.spatial.validate(backbone.frames, backbone.grid_h, backbone.grid_w);
    if (adapter.temporal_enabled)
      adapter.temporal.validate(backbone.frames, backbone.grid_h, backbone.grid_w);
  }
  if (way < 1 || shot < 1 || queries_per_class < 1 || episode_count < 1)
    throw ConfigError("episode parameters must be positive");
  if (static_cast<Index>(class_pool().size()) < way)
    throw ConfigError("episode family pool smaller than way");
  if (!(temperature > Real(0))) throw ConfigError("temperature must be positive");
  if (train_steps < 0) throw ConfigError("train_steps must be non-negative");
  if (eval_workers < 1) throw ConfigError("eval_workers must be positive");
  if (noise_sigma < Real(0)) throw ConfigError("noise_sigma must be non-negative");
}

std::string RunConfig::to_json() const {
  json j = model_json(*this);
  j["metric"] = metric_name(metric);
  j["temperature"] = temperature;
  j["episode_family"] = family_name(episode_family);
  j["noise_sigma"] = noise_sigma;
  j["way"] = way;
  j["shot"] = shot;
  j["queries_per_class"] = queries_per_class;
  j["episode_count"] = episode_count;
  j["optimizer"] = {{"learning_rate", optimizer.learning_rate},
                    {"beta1", optimizer.beta1},
                    {"beta2", optimizer.beta2},
                    {"epsilon", optimizer.epsilon}};
  j["train_steps"] = train_steps;
  j["train_seed"] = train_seed;
  j["eval_seed"] = eval_seed;
  j["out_dir"] = out_dir;
  j["eval_workers"] = eval_workers;
  return j.dump();
}

RunConfig RunConfig::from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  RunConfig cfg = default_run_config();
  try {
    if (j.contains("backbone")) {
      const json& b = j["backbone"];
      if (b.contains("stage_count")) cfg.backbone.stage_count = b["stage_count"].get<Index>();
      if (b.contains("channels")) cfg.backbone.channels = b["channels"].get<Index>();
      if (b.contains("frames")) cfg.backbone.frames = b["frames"].get<Index>();
      if (b.contains("grid_h")) cfg.backbone.grid_h = b["grid_h"].get<Index>();
      if (b.contains("grid_w")) cfg.backbone.grid_w = b["grid_w"].get<Index>();
      if (b.contains("patch")) cfg.backbone.patch = b["patch"].get<Index>();
      if (b.contains("seed")) cfg.backbone.seed = b["seed"].get<std::uint64_t>();
    }
    if (j.contains("adapter")) {
      const json& a = j["adapter"];
      if (a.contains("bottleneck_ratio")) cfg.adapter.bottleneck_ratio = a["bottleneck_ratio"].get<Real>();
      if (a.contains("pathway_kind"))
        cfg.adapter.pathway_kind = pathway_from_name(a["pathway_kind"].get<std::string>());
      if (a.contains("spatial")) cfg.adapter.spatial = adsta_from_json(a["spatial"]);
      if (a.contains("temporal")) cfg.adapter.temporal = adsta_from_json(a["temporal"]);
      if (a.contains("spatial_enabled")) cfg.adapter.spatial_enabled = a["spatial_enabled"].get<bool>();
      if (a.contains("temporal_enabled")) cfg.adapter.temporal_enabled = a["temporal_enabled"].get<bool>();
      if (a.contains("residual")) cfg.adapter.residual = a["residual"].get<bool>();
    }
    if (j.contains("insertion")) cfg.insertion = insertion_kind_from_name(j["insertion"].get<std::string>());
    if (j.contains("adapter_seed")) cfg.adapter_seed = j["adapter_seed"].get<std::uint64_t>();
    if (j.contains("metric")) cfg.metric = metric_from_name(j["metric"].get<std::string>());
    if (j.contains("temperature")) cfg.temperature = j["temperature"].get<Real>();
    if (j.contains("episode_family")) cfg.episode_family = family_from_name(j["episode_family"].get<std::string>());
    if (j.contains("noise_sigma")) cfg.noise_sigma = j["noise_sigma"].get<Real>();
    if (j.contains("way")) cfg.way = j["way"].get<Index>();
    if (j.contains("shot")) cfg.shot = j["shot"].get<Index>();
    if (j.contains("queries_per_class")) cfg.queries_per_class = j["queries_per_class"].get<Index>();
    if (j.contains("episode_count")) cfg.episode_count = j["episode_count"].get<Index>();
    if (j.contains("optimizer")) {
      const json& o = j["optimizer"];
      if (o.contains("learning_rate")) cfg.optimizer.learning_rate = o["learning_rate"].get<Real>();
      if (o.contains("beta1")) cfg.optimizer.beta1 = o["beta1"].get<Real>();
      if (o.contains("beta2")) cfg.optimizer.beta2 = o["beta2"].get<Real>();
      if (o.contains("epsilon")) cfg.optimizer.epsilon = o["epsilon"].get<Real>();
    }
    if (j.contains("train_steps")) cfg.train_steps = j["train_steps"].get<Index>();
    if (j.contains("train_seed")) cfg.train_seed = j["train_seed"].get<std::uint64_t>();
    if (j.contains("eval_seed")) cfg.eval_seed = j["eval_seed"].get<std::uint64_t>();
    if (j.contains("out_dir")) cfg.out_dir = j["out_dir"].get<std::string>();
    if (j.contains("eval_workers")) cfg.eval_workers = j["eval_workers"].get<int>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field error: ") + e.what());
  }
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << is.rdbuf();
  return from_json(buf.str());
}

std::string RunConfig::model_signature() const { return model_json(*this).dump(); }

RunConfig default_run_config() {
  RunConfig cfg;
  cfg.backbone = BackboneConfig{};
  cfg.adapter.bottleneck_ratio = Real(0.25);
  cfg.adapter.pathway_kind = PathwayKind::kAdsta;
  cfg.adapter.spatial = AdstaConfig{AdstaVariant::kSpatial, SamplingKernel{2, 4}, Real(1), 1, true};
  cfg.adapter.temporal = AdstaConfig{AdstaVariant::kTemporal, SamplingKernel{8, 2}, Real(1), 1, true};
  return cfg;
}

ModelAssembly build_assembly(const RunConfig& cfg) {
  cfg.validate();
  return ModelAssembly(cfg.backbone, InsertionPolicy{cfg.insertion}, cfg.adapter, cfg.adapter_seed);
}

}  // namespace d2st
