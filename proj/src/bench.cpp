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

#include "d2st/bench.hpp"

#include <cmath>

namespace d2st {

Tensor dense_attention_reference(const Tensor& features, const Tensor& wq, const Tensor& wk,
                                 const Tensor& wv, const Tensor& wo, Index head_count) {
  require_rank(features, 4, "dense_attention features");
  const Index t = features.dim(0), h = features.dim(1), w = features.dim(2), c = features.dim(3);
  const Index tokens = t * h * w;
  if (wq.shape() != Shape{c, c} || wk.shape() != Shape{c, c} || wv.shape() != Shape{c, c} ||
      wo.shape() != Shape{c, c})
    throw DimensionError("dense_attention: projections must be (" + std::to_string(c) + "," +
                         std::to_string(c) + ")");
  if (head_count < 1 || c % head_count != 0)
    throw ConfigError("dense_attention: head_count must divide channels");
  const Index d = c / head_count;
  const Real inv_sqrt_d = Real(1) / std::sqrt(static_cast<Real>(d));

  Tensor x = features.reshaped({tokens, c});
  Tensor q({tokens, c}), k({tokens, c}), v({tokens, c});
  ad::mm_nn(x.data(), wq.data(), q.data(), tokens, c, c);
  ad::mm_nn(x.data(), wk.data(), k.data(), tokens, c, c);
  ad::mm_nn(x.data(), wv.data(), v.data(), tokens, c, c);

  Tensor z({tokens, c});
  std::vector<Real> row(static_cast<size_t>(tokens));
  for (Index hd = 0; hd < head_count; ++hd) {
    const Index off = hd * d;
    for (Index i = 0; i < tokens; ++i) {
      Real mx = Real(0);
      for (Index j = 0; j < tokens; ++j) {
        Real acc = Real(0);
        const Real* qi = q.data() + i * c + off;
        const Real* kj = k.data() + j * c + off;
        for (Index p = 0; p < d; ++p) acc += qi[p] * kj[p];
        acc *= inv_sqrt_d;
        row[static_cast<size_t>(j)] = acc;
        if (j == 0 || acc > mx) mx = acc;
      }
      Real sum = Real(0);
      for (Index j = 0; j < tokens; ++j) {
        row[static_cast<size_t>(j)] = std::exp(row[static_cast<size_t>(j)] - mx);
        sum += row[static_cast<size_t>(j)];
      }
      Real* zi = z.data() + i * c + off;
      for (Index j = 0; j < tokens; ++j) {
        const Real a = row[static_cast<size_t>(j)] / sum;
        const Real* vj = v.data() + j * c + off;
        for (Index p = 0; p < d; ++p) zi[p] += a * vj[p];
      }
    }
  }

  Tensor out({tokens, c});
  ad::mm_nn(z.data(), wo.data(), out.data(), tokens, c, c);
  return out.reshaped({t, h, w, c});
}

double attention_core_flops_dense(Index tokens, Index channels) {
  // 2·tokens²·C for the score products plus 2·tokens²·C for the weighted sums.
  return 4.0 * static_cast<double>(tokens) * static_cast<double>(tokens) *
         static_cast<double>(channels);
}

double attention_core_flops_sparse(Index tokens, Index m, Index channels) {
  return 4.0 * static_cast<double>(tokens) * static_cast<double>(m) * static_cast<double>(channels);
}

}  // namespace d2st
