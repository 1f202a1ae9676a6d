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
#include <vector>

#include "d2st/adsta.hpp"

namespace d2st {

// Full all-token self-attention over the flattened (T*H*W) tokens, evaluated
// directly on tensors. Reference for correctness and cost comparisons.
Tensor dense_attention_reference(const Tensor& features, const Tensor& wq, const Tensor& wk,
                                 const Tensor& wv, const Tensor& wo, Index head_count);

// Attention-core FLOPs (score products plus weighted sums). The dense/sparse
// ratio reduces to tokens/M.
double attention_core_flops_dense(Index tokens, Index channels);
double attention_core_flops_sparse(Index tokens, Index m, Index channels);

struct BenchRow {
  std::string label;
  Index tokens = 0;
  Index points = 0;  // M
  Index channels = 0;
  double flops_dense = 0;
  double flops_sparse = 0;
  double ms_dense = 0;
  double ms_sparse = 0;
  Index adapter_params = 0;
};

}  // namespace d2st
