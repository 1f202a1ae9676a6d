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

#include "d2st/adsta.hpp"

#include <cmath>

namespace d2st {

using ad::Var;

const char* variant_name(AdstaVariant v) {
  switch (v) {
    case AdstaVariant::kSpatial:
      return "S";
    case AdstaVariant::kTemporal:
      return "T";
    case AdstaVariant::kUniform:
      return "Uniform";
  }
  return "?";
}

void SamplingKernel::validate(Index t, Index h, Index w) const {
  if (n_t < 1 || n_s < 1) throw ConfigError("sampling kernel densities must be positive");
  if (n_t > t)
    throw ConfigError("temporal density " + std::to_string(n_t) + " exceeds extent " + std::to_string(t));
  if (n_s > h || n_s > w)
    throw ConfigError("spatial density " + std::to_string(n_s) + " exceeds extent " +
                      std::to_string(std::min(h, w)));
}

void AdstaConfig::validate(Index t, Index h, Index w) const {
  kernel.validate(t, h, w);
  switch (variant) {
    case AdstaVariant::kSpatial:
      if (!(kernel.n_s > kernel.n_t))
        throw ConfigError("variant S requires n_s > n_t, got n_t=" + std::to_string(kernel.n_t) +
                          " n_s=" + std::to_string(kernel.n_s));
      break;
    case AdstaVariant::kTemporal:
      if (!(kernel.n_t > kernel.n_s))
        throw ConfigError("variant T requires n_t > n_s, got n_t=" + std::to_string(kernel.n_t) +
                          " n_s=" + std::to_string(kernel.n_s));
      break;
    case AdstaVariant::kUniform:
      if (kernel.n_t != kernel.n_s)
        throw ConfigError("variant Uniform requires n_t = n_s, got n_t=" + std::to_string(kernel.n_t) +
                          " n_s=" + std::to_string(kernel.n_s));
      break;
  }
  if (!(range_scale > Real(0))) throw ConfigError("range_scale must be positive");
  if (head_count < 1) throw ConfigError("head_count must be positive");
}

ReferenceGrid sample_reference_grid(std::array<Index, 3> shape, const SamplingKernel& kernel) {
  kernel.validate(shape[0], shape[1], shape[2]);
  const Index m = kernel.point_count();
  ReferenceGrid grid;
  grid.kernel = kernel;
  grid.volume = shape;
  grid.points = Tensor({m, 3});
  // Cell centers: (k + 0.5)·L/n − 0.5 along an axis of extent L and density n.
  auto center = [](Index k, Index extent, Index density) {
    return (static_cast<Real>(k) + Real(0.5)) * static_cast<Real>(extent) /
               static_cast<Real>(density) -
           Real(0.5);
  };
  Index row = 0;
  for (Index kt = 0; kt < kernel.n_t; ++kt)
    for (Index kh = 0; kh < kernel.n_s; ++kh)
      for (Index kw = 0; kw < kernel.n_s; ++kw) {
        grid.points[row * 3 + 0] = center(kt, shape[0], kernel.n_t);
        grid.points[row * 3 + 1] = center(kh, shape[1], kernel.n_s);
        grid.points[row * 3 + 2] = center(kw, shape[2], kernel.n_s);
        ++row;
      }
  return grid;
}

Var dpe_apply(const Var& x, DepthwiseConv3d& dpe) {
  require_rank(x.value(), 4, "dpe_apply input");
  if (dpe.channels() != x.value().dim(3))
    throw DimensionError("dpe_apply: channel mismatch, map has " + std::to_string(x.value().dim(3)) +
                         " channels, dpe has " + std::to_string(dpe.channels()));
  return ad::add(dpe.forward(x), x);
}

Var sparse_attention(const Var& features, const Var& point_features, Parameter& wq, Parameter& wk,
                     Parameter& wv, Parameter& wo, Index head_count, Tensor* attention_out) {
  require_rank(features.value(), 4, "sparse_attention features");
  require_rank(point_features.value(), 2, "sparse_attention point features");
  const Index t = features.value().dim(0), h = features.value().dim(1), w = features.value().dim(2),
              c = features.value().dim(3);
  const Index m = point_features.value().dim(0);
  if (m == 0) throw ConfigError("sparse_attention: no shifted points (M = 0)");
  if (point_features.value().dim(1) != c)
    throw DimensionError("sparse_attention: point feature width " +
                         std::to_string(point_features.value().dim(1)) + " != channels " +
                         std::to_string(c));
  if (head_count < 1 || c % head_count != 0)
    throw ConfigError("sparse_attention: head_count " + std::to_string(head_count) +
                      " does not divide " + std::to_string(c) + " channels");
  const Index tokens = t * h * w;
  const Index d = c / head_count;
  const Real inv_sqrt_d = Real(1) / std::sqrt(static_cast<Real>(d));

  Var x_flat = ad::reshape(features, {tokens, c});
  Var q = ad::matmul(x_flat, Var::leaf(wq));
  Var k = ad::matmul(point_features, Var::leaf(wk));
  Var v = ad::matmul(point_features, Var::leaf(wv));

  Var z;
  Tensor attn_mean({tokens, m});
  if (head_count == 1) {
    Var scores = ad::scale(ad::matmul_nt(q, k), inv_sqrt_d);
    Var attn = ad::softmax_lastaxis(scores);
    if (attention_out) attn_mean = attn.value();
    z = ad::matmul(attn, v);
  } else {
    std::vector<Var> heads;
    for (Index hd = 0; hd < head_count; ++hd) {
      Var qh = ad::slice_lastdim(q, hd * d, (hd + 1) * d);
      Var kh = ad::slice_lastdim(k, hd * d, (hd + 1) * d);
      Var vh = ad::slice_lastdim(v, hd * d, (hd + 1) * d);
      Var attn = ad::softmax_lastaxis(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt_d));
      if (attention_out) attn_mean.axpy_inplace(Real(1) / static_cast<Real>(head_count), attn.value());
      heads.push_back(ad::matmul(attn, vh));
    }
    z = ad::concat_lastdim(heads);
  }
  if (attention_out) *attention_out = attn_mean;

  Var out = ad::matmul(z, Var::leaf(wo));
  return ad::reshape(out, {t, h, w, c});
}

Tensor point_importance(const Tensor& attention_weights) {
  require_rank(attention_weights, 2, "point_importance");
  const Index q = attention_weights.dim(0), m = attention_weights.dim(1);
  for (Index i = 0; i < q; ++i) {
    Real s = Real(0);
    for (Index j = 0; j < m; ++j) s += attention_weights[i * m + j];
    if (std::abs(s - Real(1)) > Real(1e-6))
      throw ContractError("point_importance: attention row " + std::to_string(i) +
                          " is not softmax-normalized (sum " + std::to_string(static_cast<double>(s)) +
                          ")");
  }
  Tensor importance({m});
  for (Index i = 0; i < q; ++i)
    for (Index j = 0; j < m; ++j) importance[j] += attention_weights[i * m + j];
  return importance;
}

AdstaModule::AdstaModule(Index channels, AdstaConfig cfg, std::array<Index, 3> volume)
    : cfg_(cfg), volume_(volume) {
  cfg_.validate(volume[0], volume[1], volume[2]);
  const Index et = volume[0] / cfg_.kernel.n_t;
  const Index eh = volume[1] / cfg_.kernel.n_s;
  const Index ew = volume[2] / cfg_.kernel.n_s;
  if (et * cfg_.kernel.n_t != volume[0] || eh * cfg_.kernel.n_s != volume[1] ||
      ew * cfg_.kernel.n_s != volume[2])
    throw ConfigError("offset network stride requires densities dividing the volume (" +
                      std::to_string(volume[0]) + "," + std::to_string(volume[1]) + "," +
                      std::to_string(volume[2]) + ") by (" + std::to_string(cfg_.kernel.n_t) + "," +
                      std::to_string(cfg_.kernel.n_s) + "," + std::to_string(cfg_.kernel.n_s) + ")");
  dpe = DepthwiseConv3d(channels, 3, 3, 3);
  offset_dw = DepthwiseConv3d(channels, 3, 3, 3, {et, eh, ew});
  offset_pw = PointwiseConv3d(channels, 3);
  wq = Parameter(Tensor::zeros({channels, channels}));
  wk = Parameter(Tensor::zeros({channels, channels}));
  wv = Parameter(Tensor::zeros({channels, channels}));
  wo = Parameter(Tensor::zeros({channels, channels}));
  grid_ = sample_reference_grid(volume, cfg_.kernel);
}

void AdstaModule::init_params(SeededRng& rng) {
  init_normal(dpe.kernel, rng, Real(0.02));
  init_normal(offset_dw.kernel, rng, Real(0.02));
  // Pointwise offset head stays zero so deformation starts at the grid.
  offset_pw.weight.value.fill(Real(0));
  offset_pw.bias.value.fill(Real(0));
  const Real proj = Real(1) / std::sqrt(static_cast<Real>(channels()));
  init_normal(wq, rng, proj);
  init_normal(wk, rng, proj);
  init_normal(wv, rng, proj);
  init_normal(wo, rng, proj);
}

Tensor AdstaModule::offset_bounds() const {
  Tensor b({3});
  b[0] = cfg_.range_scale * static_cast<Real>(volume_[0]) / (Real(2) * static_cast<Real>(cfg_.kernel.n_t));
  b[1] = cfg_.range_scale * static_cast<Real>(volume_[1]) / (Real(2) * static_cast<Real>(cfg_.kernel.n_s));
  b[2] = cfg_.range_scale * static_cast<Real>(volume_[2]) / (Real(2) * static_cast<Real>(cfg_.kernel.n_s));
  return b;
}

Var AdstaModule::predict_offsets(const Var& fused) {
  const Index m = cfg_.kernel.point_count();
  Var g = offset_dw.forward(fused);
  if (g.value().dim(0) != cfg_.kernel.n_t || g.value().dim(1) != cfg_.kernel.n_s ||
      g.value().dim(2) != cfg_.kernel.n_s)
    throw ConfigError("offset network produced " + shape_str(g.shape()) + ", expected grid (" +
                      std::to_string(cfg_.kernel.n_t) + "," + std::to_string(cfg_.kernel.n_s) + "," +
                      std::to_string(cfg_.kernel.n_s) + ")");
  g = ad::gelu(g);
  g = offset_pw.forward(g);
  g = ad::reshape(g, {m, 3});
  g = ad::tanh_op(g);
  return ad::mul_rowvec(g, offset_bounds());
}

Var AdstaModule::forward(const Var& x, AdstaTrace* trace) {
  require_rank(x.value(), 4, "adsta forward input");
  if (x.value().dim(0) != volume_[0] || x.value().dim(1) != volume_[1] || x.value().dim(2) != volume_[2])
    throw DimensionError("adsta forward: input " + shape_str(x.shape()) + " does not match volume (" +
                         std::to_string(volume_[0]) + "," + std::to_string(volume_[1]) + "," +
                         std::to_string(volume_[2]) + ")");
  if (x.value().dim(3) != channels())
    throw DimensionError("adsta forward: channel mismatch");

  Var fused = cfg_.use_dpe ? dpe_apply(x, dpe) : x;
  Var offsets = predict_offsets(fused);
  Var shifted = ad::add(offsets, Var::constant(grid_.points));
  Tensor lo = Tensor::zeros({3});
  Tensor hi({3});
  hi[0] = static_cast<Real>(volume_[0] - 1);
  hi[1] = static_cast<Real>(volume_[1] - 1);
  hi[2] = static_cast<Real>(volume_[2] - 1);
  Var coords = ad::clamp_rows(shifted, lo, hi);
  Var point_feats = ad::trilinear(fused, coords);

  Tensor attn;
  Var out = sparse_attention(fused, point_feats, wq, wk, wv, wo, cfg_.head_count,
                             trace ? &attn : nullptr);
  if (trace) {
    trace->reference = grid_.points;
    trace->coords = coords.value();
    trace->offsets = offsets.value();
    trace->attention = attn;
    trace->importance = point_importance(attn);
  }
  return out;
}

void AdstaModule::collect(std::vector<Parameter*>& out) {
  dpe.collect(out);
  offset_dw.collect(out);
  offset_pw.collect(out);
  out.push_back(&wq);
  out.push_back(&wk);
  out.push_back(&wv);
  out.push_back(&wo);
}

}  // namespace d2st
