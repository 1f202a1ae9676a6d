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

#include <gtest/gtest.h>

#include "d2st/adapter.hpp"
#include "d2st/matching.hpp"
#include "oracles.hpp"

using namespace d2st;
using ad::Var;

namespace {

AdapterConfig tiny_adsta_config() {
  AdapterConfig cfg;
  cfg.bottleneck_ratio = 0.5;
  cfg.pathway_kind = PathwayKind::kAdsta;
  cfg.spatial = AdstaConfig{AdstaVariant::kUniform, SamplingKernel{2, 2}, 1, 1, true};
  cfg.temporal = AdstaConfig{AdstaVariant::kUniform, SamplingKernel{2, 2}, 1, 1, true};
  return cfg;
}

}  // namespace

TEST(AdapterConfig, bottleneck_rounding_and_validation) {
  AdapterConfig cfg;
  cfg.bottleneck_ratio = 0.25;
  EXPECT_EQ(cfg.bottleneck_channels(64), 16);
  EXPECT_EQ(cfg.bottleneck_channels(2), 1);  // round(0.5) clamps to >= 1
  cfg.bottleneck_ratio = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.bottleneck_ratio = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.bottleneck_ratio = 0.25;
  cfg.spatial_enabled = false;
  cfg.temporal_enabled = false;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Adapter, identity_at_initialization_for_all_kinds) {
  SeededRng data_rng(1);
  Tensor x = data_rng.normal_tensor({4, 4, 4, 8}, 0, 1);
  for (PathwayKind kind : {PathwayKind::kAdsta, PathwayKind::kConv3d, PathwayKind::kNone}) {
    AdapterConfig cfg = tiny_adsta_config();
    cfg.pathway_kind = kind;
    SeededRng rng(2);
    D2STAdapter adapter(8, cfg, {4, 4, 4}, rng);
    Var y = adapter.forward(Var::constant(x));
    EXPECT_TRUE(y.value().bitwise_equal(x)) << pathway_kind_name(kind);
  }
}

TEST(Adapter, fused_identity_pathways_formula) {
  // With both pathways replaced by the identity, the bottleneck formula
  // reduces to GELU(v + v)·W_up; checked with identity-like down/up.
  SeededRng rng(3);
  Tensor x = rng.normal_tensor({2, 2, 2, 3}, 0, 1);
  Var v = Var::constant(x);
  Var fused = ad::gelu(ad::add(v, v));
  for (Index i = 0; i < x.size(); ++i)
    ASSERT_NEAR(fused.value()[i], ad::gelu_scalar(2 * x[i]), 1e-14);
}

TEST(Adapter, adsta_forward_matches_stepwise_composition) {
  AdapterConfig cfg = tiny_adsta_config();
  SeededRng rng(4);
  D2STAdapter adapter(8, cfg, {4, 4, 4}, rng);
  SeededRng rng2(5);
  init_normal(adapter.up.weight, rng2, 0.4);
  init_normal(adapter.adsta_spatial->offset_pw.weight, rng2, 0.2);
  init_normal(adapter.adsta_temporal->offset_pw.weight, rng2, 0.2);

  Tensor x = rng2.normal_tensor({4, 4, 4, 8}, 0, 1);
  Var out = adapter.forward(Var::constant(x));

  Var v = adapter.down.forward(Var::constant(x));
  Var s = adapter.adsta_spatial->forward(v);
  Var t = adapter.adsta_temporal->forward(v);
  Var y = adapter.up.forward(ad::gelu(ad::add(s, t)));
  Var want = ad::add(y, Var::constant(x));
  for (Index i = 0; i < x.size(); ++i) ASSERT_NEAR(out.value()[i], want.value()[i], 1e-12);
}

TEST(DstConvPathways, constant_input_follows_conv_oracle) {
  SeededRng rng(6);
  ConvPathway spatial;
  spatial.conv = DepthwiseConv3d(2, 1, 3, 3);
  spatial.norm = ChannelNorm(2);
  init_normal(spatial.conv.kernel, rng, 0.5);
  ConvPathway temporal;
  temporal.conv = DepthwiseConv3d(2, 3, 1, 1);
  temporal.norm = ChannelNorm(2);
  init_normal(temporal.conv.kernel, rng, 0.5);

  Tensor x = Tensor::full({3, 4, 4, 2}, Real(1.5));
  auto [s, t] = dst_conv_pathways(Var::constant(x), spatial, temporal);
  // Reference: direct conv, then per-channel standardization, then GELU.
  for (auto [branch, conv] : {std::pair{&s, &spatial.conv}, std::pair{&t, &temporal.conv}}) {
    Tensor c = oracle::dwconv3d_direct(x, conv->kernel.value, conv->bias.value, {1, 1, 1});
    const Index n = c.size() / 2;
    for (Index ch = 0; ch < 2; ++ch) {
      Real mean = 0, var = 0;
      for (Index p = 0; p < n; ++p) mean += c[p * 2 + ch];
      mean /= static_cast<Real>(n);
      for (Index p = 0; p < n; ++p) {
        Real d = c[p * 2 + ch] - mean;
        var += d * d;
      }
      var /= static_cast<Real>(n);
      for (Index p = 0; p < n; ++p) {
        const Real normed = (c[p * 2 + ch] - mean) / std::sqrt(var + Real(1e-5));
        ASSERT_NEAR(branch->value()[p * 2 + ch], ad::gelu_scalar(normed), 1e-10);
      }
    }
  }
}

TEST(DstConvPathways, standardized_input_with_delta_kernels_gives_gelu) {
  // Delta kernels make the convs identity; on per-channel standardized input
  // the norm is a near no-op, so both branches reduce to GELU(v).
  SeededRng rng(7);
  Tensor v = rng.normal_tensor({3, 4, 4, 2}, 0, 1);
  const Index n = v.size() / 2;
  for (Index ch = 0; ch < 2; ++ch) {
    Real mean = 0, var = 0;
    for (Index p = 0; p < n; ++p) mean += v[p * 2 + ch];
    mean /= static_cast<Real>(n);
    for (Index p = 0; p < n; ++p) {
      Real d = v[p * 2 + ch] - mean;
      var += d * d;
    }
    var /= static_cast<Real>(n);
    for (Index p = 0; p < n; ++p) v[p * 2 + ch] = (v[p * 2 + ch] - mean) / std::sqrt(var);
  }
  ConvPathway spatial;
  spatial.conv = DepthwiseConv3d(2, 1, 3, 3);
  spatial.norm = ChannelNorm(2);
  spatial.conv.kernel.value.at({0, 0, 1, 1}) = 1;
  spatial.conv.kernel.value.at({1, 0, 1, 1}) = 1;
  ConvPathway temporal;
  temporal.conv = DepthwiseConv3d(2, 3, 1, 1);
  temporal.norm = ChannelNorm(2);
  temporal.conv.kernel.value.at({0, 1, 0, 0}) = 1;
  temporal.conv.kernel.value.at({1, 1, 0, 0}) = 1;

  auto [s, t] = dst_conv_pathways(Var::constant(v), spatial, temporal);
  for (Index i = 0; i < v.size(); ++i) {
    ASSERT_NEAR(s.value()[i], ad::gelu_scalar(v[i]), 1e-4);
    ASSERT_NEAR(t.value()[i], ad::gelu_scalar(v[i]), 1e-4);
  }
}

TEST(DstConvPathways, shape_preserved) {
  SeededRng rng(8);
  AdapterConfig cfg;
  cfg.pathway_kind = PathwayKind::kConv3d;
  cfg.bottleneck_ratio = 0.5;
  D2STAdapter adapter(6, cfg, {5, 3, 7}, rng);
  Tensor x = rng.normal_tensor({5, 3, 7, 6}, 0, 1);
  EXPECT_EQ(adapter.forward(Var::constant(x)).shape(), x.shape());
}

TEST(VanillaAdapter, zero_up_with_residual_is_identity) {
  SeededRng rng(9);
  LinearLayer down(6, 3), up(3, 6);
  init_normal(down.weight, rng, 0.5);
  Tensor x = rng.normal_tensor({2, 2, 2, 6}, 0, 1);
  Var y = vanilla_adapter_forward(Var::constant(x), down, up, true);
  EXPECT_TRUE(y.value().bitwise_equal(x));
}

TEST(VanillaAdapter, zero_input_zero_biases_gives_zero) {
  SeededRng rng(10);
  LinearLayer down(4, 2), up(2, 4);
  init_normal(down.weight, rng, 0.5);
  init_normal(up.weight, rng, 0.5);
  Tensor x = Tensor::zeros({2, 2, 2, 4});
  Var y = vanilla_adapter_forward(Var::constant(x), down, up, false);
  for (Index i = 0; i < y.value().size(); ++i) ASSERT_EQ(y.value()[i], 0);
}

TEST(VanillaAdapter, matches_two_step_manual_evaluation) {
  SeededRng rng(11);
  LinearLayer down(4, 2), up(2, 4);
  init_normal(down.weight, rng, 0.7);
  init_normal(down.bias, rng, 0.2);
  init_normal(up.weight, rng, 0.7);
  init_normal(up.bias, rng, 0.2);
  Tensor x = rng.normal_tensor({1, 2, 2, 4}, 0, 1);
  Var y = vanilla_adapter_forward(Var::constant(x), down, up, false);
  for (Index p = 0; p < 4; ++p)
    for (Index co = 0; co < 4; ++co) {
      Real mid[2];
      for (Index cm = 0; cm < 2; ++cm) {
        Real acc = down.bias.value[cm];
        for (Index ci = 0; ci < 4; ++ci) acc += x[p * 4 + ci] * down.weight.value[ci * 2 + cm];
        mid[cm] = ad::gelu_scalar(acc);
      }
      Real want = up.bias.value[co];
      for (Index cm = 0; cm < 2; ++cm) want += mid[cm] * up.weight.value[cm * 4 + co];
      ASSERT_NEAR(y.value()[p * 4 + co], want, 1e-12);
    }
}

TEST(CountTunableParams, vanilla_closed_form) {
  AdapterConfig cfg;
  cfg.pathway_kind = PathwayKind::kNone;
  cfg.bottleneck_ratio = 0.25;
  EXPECT_EQ(count_tunable_params(cfg, 64), 64 * 16 + 16 + 16 * 64 + 64);  // 2128
}

TEST(CountTunableParams, doubling_bottleneck_strictly_increases) {
  AdapterConfig cfg = tiny_adsta_config();
  cfg.bottleneck_ratio = 0.25;
  const Index base = count_tunable_params(cfg, 32);
  cfg.bottleneck_ratio = 0.5;
  EXPECT_GT(count_tunable_params(cfg, 32), base);
}

TEST(CountTunableParams, conv_variant_adds_exactly_kernels_and_norms) {
  AdapterConfig none;
  none.pathway_kind = PathwayKind::kNone;
  AdapterConfig conv;
  conv.pathway_kind = PathwayKind::kConv3d;
  const Index c = 32;
  const Index cp = none.bottleneck_channels(c);
  const Index spatial_extra = cp * 9 + cp + 2 * cp;
  const Index temporal_extra = cp * 3 + cp + 2 * cp;
  EXPECT_EQ(count_tunable_params(conv, c) - count_tunable_params(none, c),
            spatial_extra + temporal_extra);
}

TEST(CountTunableParams, matches_constructed_adapter) {
  for (PathwayKind kind : {PathwayKind::kAdsta, PathwayKind::kConv3d, PathwayKind::kNone}) {
    AdapterConfig cfg = tiny_adsta_config();
    cfg.pathway_kind = kind;
    SeededRng rng(12);
    D2STAdapter adapter(8, cfg, {4, 4, 4}, rng);
    std::vector<Parameter*> params;
    adapter.collect(params);
    Index total = 0;
    for (Parameter* p : params) total += p->value.size();
    EXPECT_EQ(total, count_tunable_params(cfg, 8)) << pathway_kind_name(kind);
  }
}

TEST(Adapter, every_parameter_gets_gradient_after_warmup) {
  AdapterConfig cfg = tiny_adsta_config();
  SeededRng rng(13);
  D2STAdapter adapter(8, cfg, {4, 4, 4}, rng);
  std::vector<Parameter*> params;
  adapter.collect(params);

  Adam opt(params, AdamConfig{});
  SeededRng drng(14);
  const Tensor w = drng.uniform_tensor({4, 4, 4, 8}, -1, 1);
  for (int step = 0; step < 3; ++step) {
    Tensor x = drng.normal_tensor({4, 4, 4, 8}, 0, 1);
    opt.zero_grad();
    Var loss = ad::sum_all(ad::mul(adapter.forward(Var::constant(x)), Var::constant(w)));
    ad::backward(loss);
    opt.step();
  }
  Tensor x = drng.normal_tensor({4, 4, 4, 8}, 0, 1);
  opt.zero_grad();
  Var loss = ad::sum_all(ad::mul(adapter.forward(Var::constant(x)), Var::constant(w)));
  ad::backward(loss);
  for (Parameter* p : params) {
    bool any = false;
    for (Index i = 0; i < p->grad.size(); ++i) any = any || p->grad[i] != 0;
    EXPECT_TRUE(any) << "dead parameter of shape " << shape_str(p->value.shape());
  }
}

TEST(Adapter, channel_mismatch_is_dimension_error) {
  AdapterConfig cfg = tiny_adsta_config();
  SeededRng rng(15);
  D2STAdapter adapter(8, cfg, {4, 4, 4}, rng);
  EXPECT_THROW(adapter.forward(Var::constant(Tensor({4, 4, 4, 6}))), DimensionError);
}
