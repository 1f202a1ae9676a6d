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

#include <functional>
#include <string>
#include <vector>

#include "d2st/autodiff.hpp"

namespace d2st {

struct GradCheckEntry {
  std::string op;
  double max_rel_err = 0;
  double tolerance = 1e-4;
  bool pass = false;
};

// Max relative error between the reverse-mode gradient of
// loss(x) = sum(weights ⊙ build(x)) and central differences at x0.
double gradcheck_op(const std::function<ad::Var(const ad::Var&)>& build, const Tensor& x0,
                    Real eps = Real(1e-5));

// Exercises every registered primitive plus a full tiny dual-pathway adapter
// forward. Deterministic under the seed.
std::vector<GradCheckEntry> run_gradcheck(std::uint64_t seed);

}  // namespace d2st
