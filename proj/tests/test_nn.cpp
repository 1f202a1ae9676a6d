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

#include "d2st/nn.hpp"
#include "oracles.hpp"

using namespace d2st;
using ad::Var;

TEST(LinearLayer, identity_weight_zero_bias_is_identity) {
  LinearLayer layer(3, 3);
  layer.weight.value = Tensor::identity(3);
  SeededRng rng(1);
  Tensor x = rng.normal_tensor({4, 3}, 0, 1);
  Var y = layer.forward(Var::constant(x));
  EXPECT_TRUE(y.value().bitwise_equal(x));
}

TEST(LinearLayer, hand_expanded_case) {
  LinearLayer layer(2, 2);
  layer.weight.value = Tensor({2, 2}, {1, 1, 1, -1});
  Var y = layer.forward(Var::constant(Tensor({1, 2}, {1, 2})));
  EXPECT_EQ(y.value()[0], 3);
  EXPECT_EQ(y.value()[1], -1);
}

TEST(LinearLayer, zero_weight_broadcasts_bias) {
  LinearLayer layer(3, 2);
  layer.bias.value = Tensor({2}, {7, -4});
  SeededRng rng(2);
  Var y = layer.forward(Var::constant(rng.normal_tensor({5, 3}, 0, 1)));
  for (Index r = 0; r < 5; ++r) {
    EXPECT_EQ(y.value()[r * 2 + 0], 7);
    EXPECT_EQ(y.value()[r * 2 + 1], -4);
  }
}

TEST(LinearLayer, channel_mismatch_is_dimension_error) {
  LinearLayer layer(3, 2);
  EXPECT_THROW(layer.forward(Var::constant(Tensor({4, 5}))), DimensionError);
}

TEST(DepthwiseConv3d, delta_kernel_is_identity) {
  DepthwiseConv3d conv(2, 3, 3, 3);
  conv.kernel.value.at({0, 1, 1, 1}) = 1;
  conv.kernel.value.at({1, 1, 1, 1}) = 1;
  SeededRng rng(3);
  Tensor x = rng.normal_tensor({3, 4, 5, 2}, 0, 1);
  Var y = conv.forward(Var::constant(x));
  for (Index i = 0; i < x.size(); ++i) ASSERT_NEAR(y.value()[i], x[i], 1e-15);
}

TEST(DepthwiseConv3d, ones_kernel_on_constant_map) {
  DepthwiseConv3d conv(1, 1, 3, 3);
  conv.kernel.value.fill(1);
  const Real v = 2.5;
  Tensor x = Tensor::full({2, 5, 5, 1}, v);
  Tensor want = oracle::dwconv3d_direct(x, conv.kernel.value, conv.bias.value, {1, 1, 1});
  Var y = conv.forward(Var::constant(x));
  for (Index i = 0; i < want.size(); ++i) ASSERT_NEAR(y.value()[i], want[i], 1e-12);
  // Interior cells see all nine taps, boundary cells fewer.
  EXPECT_NEAR(y.value().at({0, 2, 2, 0}), 9 * v, 1e-12);
  EXPECT_NEAR(y.value().at({0, 0, 0, 0}), 4 * v, 1e-12);
  EXPECT_NEAR(y.value().at({0, 0, 2, 0}), 6 * v, 1e-12);
}

TEST(DepthwiseConv3d, temporal_average_keeps_linear_ramp_interior) {
  DepthwiseConv3d conv(1, 3, 1, 1);
  conv.kernel.value.fill(Real(1) / 3);
  Tensor x({4, 2, 2, 1});
  for (Index t = 0; t < 4; ++t)
    for (Index p = 0; p < 4; ++p) x[t * 4 + p] = static_cast<Real>(t + 1);
  Tensor want = oracle::dwconv3d_direct(x, conv.kernel.value, conv.bias.value, {1, 1, 1});
  Var y = conv.forward(Var::constant(x));
  for (Index i = 0; i < want.size(); ++i) ASSERT_NEAR(y.value()[i], want[i], 1e-12);
  // Averaging a linear ramp reproduces it away from the zero-padded ends.
  EXPECT_NEAR(y.value().at({1, 0, 0, 0}), 2.0, 1e-12);
  EXPECT_NEAR(y.value().at({2, 1, 1, 0}), 3.0, 1e-12);
}

TEST(DepthwiseConv3d, random_matches_direct_summation) {
  SeededRng rng(4);
  for (auto stride : {std::array<Index, 3>{1, 1, 1}, std::array<Index, 3>{2, 2, 1}}) {
    Tensor x = rng.normal_tensor({4, 6, 5, 3}, 0, 1);
    Tensor k = rng.normal_tensor({3, 3, 3, 3}, 0, 1);
    Tensor b = rng.normal_tensor({3}, 0, 1);
    Var y = ad::dwconv3d(Var::constant(x), Var::constant(k), Var::constant(b), stride);
    Tensor want = oracle::dwconv3d_direct(x, k, b, stride);
    ASSERT_EQ(y.value().shape(), want.shape());
    for (Index i = 0; i < want.size(); ++i) ASSERT_NEAR(y.value()[i], want[i], 1e-12);
  }
}

TEST(DepthwiseConv3d, separable_composition_equals_direct_evaluation) {
  SeededRng rng(5);
  DepthwiseConv3d spatial(2, 1, 3, 3);
  DepthwiseConv3d temporal(2, 3, 1, 1);
  spatial.kernel.value = rng.normal_tensor({2, 1, 3, 3}, 0, 1);
  temporal.kernel.value = rng.normal_tensor({2, 3, 1, 1}, 0, 1);

  Tensor composed_kernel({2, 3, 3, 3});
  for (Index c = 0; c < 2; ++c)
    for (Index dt = 0; dt < 3; ++dt)
      for (Index dh = 0; dh < 3; ++dh)
        for (Index dw = 0; dw < 3; ++dw)
          composed_kernel.at({c, dt, dh, dw}) =
              temporal.kernel.value.at({c, dt, 0, 0}) * spatial.kernel.value.at({c, 0, dh, dw});

  Tensor x = rng.normal_tensor({5, 6, 6, 2}, 0, 1);
  Var chained = temporal.forward(spatial.forward(Var::constant(x)));
  Tensor direct = oracle::dwconv3d_direct(x, composed_kernel, Tensor::zeros({2}), {1, 1, 1});
  for (Index i = 0; i < direct.size(); ++i) ASSERT_NEAR(chained.value()[i], direct[i], 1e-10);
}

TEST(DepthwiseConv3d, error_cases) {
  DepthwiseConv3d even(1, 2, 2, 2);
  EXPECT_THROW(even.forward(Var::constant(Tensor({3, 3, 3, 1}))), DimensionError);
  // Even kernel with stride: padding (k-1)/2 no longer covers the taps.
  DepthwiseConv3d big(1, 4, 1, 1, {2, 1, 1});
  EXPECT_THROW(big.forward(Var::constant(Tensor({1, 3, 3, 1}))), DimensionError);
  DepthwiseConv3d chan(2, 3, 3, 3);
  EXPECT_THROW(chan.forward(Var::constant(Tensor({3, 3, 3, 4}))), DimensionError);
}

TEST(ChannelNorm, standard_normal_input_passes_through) {
  // A channel that is already zero-mean unit-variance stays put (up to eps).
  Tensor x({2, 2, 2, 1});
  const Real vals[8] = {1, -1, 2, -2, 0.5, -0.5, 1.5, -1.5};
  Real mean = 0, var = 0;
  for (int i = 0; i < 8; ++i) mean += vals[i];
  mean /= 8;
  for (int i = 0; i < 8; ++i) var += (vals[i] - mean) * (vals[i] - mean);
  var /= 8;
  for (int i = 0; i < 8; ++i) x[i] = (vals[i] - mean) / std::sqrt(var);
  ChannelNorm norm(1);
  Var y = norm.forward(Var::constant(x));
  for (Index i = 0; i < 8; ++i) ASSERT_NEAR(y.value()[i], x[i], 1e-5);
}

TEST(ChannelNorm, constant_channel_maps_to_shift) {
  ChannelNorm norm(2);
  norm.shift.value = Tensor({2}, {3, -1});
  Tensor x({2, 2, 1, 2});
  for (Index p = 0; p < 4; ++p) {
    x[p * 2] = 42;
    x[p * 2 + 1] = -7;
  }
  Var y = norm.forward(Var::constant(x));
  for (Index p = 0; p < 4; ++p) {
    ASSERT_NEAR(y.value()[p * 2], 3, 1e-12);
    ASSERT_NEAR(y.value()[p * 2 + 1], -1, 1e-12);
  }
}

TEST(ChannelNorm, recomputed_moments_are_standardized) {
  SeededRng rng(6);
  Tensor x = rng.normal_tensor({4, 5, 5, 3}, 2, 3);
  ChannelNorm norm(3);
  Var y = norm.forward(Var::constant(x));
  const Index n = 4 * 5 * 5;
  for (Index c = 0; c < 3; ++c) {
    Real mean = 0, var = 0;
    for (Index p = 0; p < n; ++p) mean += y.value()[p * 3 + c];
    mean /= static_cast<Real>(n);
    for (Index p = 0; p < n; ++p) {
      const Real d = y.value()[p * 3 + c] - mean;
      var += d * d;
    }
    var /= static_cast<Real>(n);
    ASSERT_NEAR(mean, 0.0, 1e-6);
    ASSERT_NEAR(var, 1.0, 1e-4);
  }
}

TEST(Layers, stride1_preserves_feature_map_shape) {
  SeededRng rng(7);
  Tensor x = rng.normal_tensor({3, 4, 5, 6}, 0, 1);
  DepthwiseConv3d dw(6, 3, 3, 3);
  PointwiseConv3d pw(6, 6);
  ChannelNorm norm(6);
  init_normal(dw.kernel, rng, 0.5);
  init_normal(pw.weight, rng, 0.5);
  EXPECT_EQ(dw.forward(Var::constant(x)).shape(), x.shape());
  EXPECT_EQ(pw.forward(Var::constant(x)).shape(), x.shape());
  EXPECT_EQ(norm.forward(Var::constant(x)).shape(), x.shape());
}

TEST(Layers, pointwise_conv_equals_per_position_linear) {
  SeededRng rng(8);
  PointwiseConv3d pw(3, 2);
  init_normal(pw.weight, rng, 1);
  init_normal(pw.bias, rng, 1);
  Tensor x = rng.normal_tensor({2, 2, 2, 3}, 0, 1);
  Var y = pw.forward(Var::constant(x));
  for (Index p = 0; p < 8; ++p)
    for (Index co = 0; co < 2; ++co) {
      Real want = pw.bias.value[co];
      for (Index ci = 0; ci < 3; ++ci) want += x[p * 3 + ci] * pw.weight.value[ci * 2 + co];
      ASSERT_NEAR(y.value()[p * 2 + co], want, 1e-12);
    }
}

TEST(Layers, layer_gradients_pass_finite_difference_check) {
  SeededRng rng(9);
  LinearLayer layer(4, 3);
  init_normal(layer.weight, rng, 0.7);
  init_normal(layer.bias, rng, 0.3);
  const Tensor x = rng.normal_tensor({5, 4}, 0, 1);
  const Tensor w = rng.uniform_tensor({5, 3}, -1, 1);

  layer.weight.zero_grad();
  layer.bias.zero_grad();
  Var loss = ad::sum_all(ad::mul(layer.forward(Var::constant(x)), Var::constant(w)));
  ad::backward(loss);

  auto loss_at = [&]() {
    ad::NoGradGuard ng;
    Var out = layer.forward(Var::constant(x));
    Real acc = 0;
    for (Index i = 0; i < out.value().size(); ++i) acc += out.value()[i] * w[i];
    return acc;
  };
  for (Parameter* p : {&layer.weight, &layer.bias}) {
    const Tensor saved = p->value;
    Tensor fd = finite_diff_grad(
        [&](const Tensor& probe) {
          p->value = probe;
          return loss_at();
        },
        saved, 1e-5);
    p->value = saved;
    for (Index i = 0; i < fd.size(); ++i) ASSERT_NEAR(p->grad[i], fd[i], 1e-6);
  }
}
