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

#include "d2st/runconfig.hpp"

namespace d2st {

// Adapters-only checkpoint: the frozen backbone is reconstructed from the
// seed recorded in the embedded config.
void save_checkpoint(const std::string& path, const RunConfig& cfg, ModelAssembly& model);

// Rebuilds the assembly from the embedded config and loads tunable tensors.
ModelAssembly load_checkpoint(const std::string& path, RunConfig* cfg_out = nullptr);

// Loads tunables into an existing assembly; throws ConfigError if the
// checkpoint's model signature disagrees with cfg.
void load_checkpoint_into(const std::string& path, const RunConfig& cfg, ModelAssembly& model);

}  // namespace d2st
