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
#include <utility>
#include <vector>

#include "d2st/tensor.hpp"

namespace d2st {

// Self-describing binary archive: a JSON metadata blob plus named tensors
// with shape headers. Bit-exact round trip for checkpoint reproducibility.
struct TensorArchive {
  std::string metadata_json;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

void save_archive(const TensorArchive& archive, const std::string& path);
TensorArchive load_archive(const std::string& path);

}  // namespace d2st
