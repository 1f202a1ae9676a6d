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

#include "d2st/rng.hpp"

#include <cmath>

namespace d2st {

std::uint64_t SeededRng::below(std::uint64_t n) {
  if (n == 0) throw ContractError("SeededRng::below(0)");
  // Rejection sampling to remove modulo bias.
  std::uint64_t limit = ~std::uint64_t(0) - (~std::uint64_t(0) % n);
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % n;
}

double SeededRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  double u2 = uniform();
  // Guard log(0).
  while (u1 <= 0.0) u1 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

SeededRng SeededRng::fork(std::uint64_t stream_id) {
  std::uint64_t z = state_ ^ (0x9e3779b97f4a7c15ull + stream_id * 0xbf58476d1ce4e5b9ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return SeededRng(z ^ (z >> 31));
}

Tensor SeededRng::uniform_tensor(Shape shape, Real lo, Real hi) {
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Real>(uniform(lo, hi));
  return t;
}

Tensor SeededRng::normal_tensor(Shape shape, Real mean, Real stddev) {
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Real>(mean + stddev * normal());
  return t;
}

}  // namespace d2st
