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

#include "d2st/gradcheck.hpp"

#include <cmath>

#include "d2st/adapter.hpp"
#include "d2st/matching.hpp"
#include "d2st/rng.hpp"

namespace d2st {

namespace {

double rel_err(const Tensor& analytic, const Tensor& fd) {
  Real denom = Real(1e-8);
  for (Index i = 0; i < fd.size(); ++i) denom = std::max(denom, std::abs(fd[i]));
  Real worst = Real(0);
  for (Index i = 0; i < fd.size(); ++i) worst = std::max(worst, std::abs(analytic[i] - fd[i]));
  return static_cast<double>(worst / denom);
}

// Coordinates kept away from the integer lattice so trilinear stays smooth
// around the probe.
Tensor generic_coords(SeededRng& rng, Index m, std::array<Index, 3> vol) {
  Tensor c({m, 3});
  for (Index i = 0; i < m; ++i)
    for (Index a = 0; a < 3; ++a) {
      const Index cells = vol[static_cast<size_t>(a)] - 1;
      const Index cell = cells > 0 ? static_cast<Index>(rng.below(static_cast<std::uint64_t>(cells))) : 0;
      const Real frac = Real(0.1) + Real(0.8) * static_cast<Real>(rng.uniform());
      c[i * 3 + a] = static_cast<Real>(cell) + frac;
    }
  return c;
}

}  // namespace

double gradcheck_op(const std::function<ad::Var(const ad::Var&)>& build, const Tensor& x0, Real eps) {
  SeededRng wrng(0xabcdef12345ull);
  ad::Var probe_out = build(ad::Var::constant(x0));
  const Tensor weights = wrng.uniform_tensor(probe_out.shape(), Real(-1), Real(1));

  Parameter p(x0, true);
  ad::Var x = ad::Var::leaf(p);
  ad::Var loss = ad::sum_all(ad::mul(build(x), ad::Var::constant(weights)));
  ad::backward(loss);

  Tensor fd = finite_diff_grad(
      [&](const Tensor& probe) {
        ad::NoGradGuard ng;
        ad::Var out = build(ad::Var::constant(probe));
        Real acc = Real(0);
        for (Index i = 0; i < out.value().size(); ++i) acc += out.value()[i] * weights[i];
        return acc;
      },
      x0, eps);

  return rel_err(p.grad, fd);
}

std::vector<GradCheckEntry> run_gradcheck(std::uint64_t seed) {
  SeededRng rng(seed);
  std::vector<GradCheckEntry> report;
  auto add_entry = [&report](const std::string& op, double err) {
    GradCheckEntry e;
    e.op = op;
    e.max_rel_err = err;
    e.pass = err < e.tolerance;
    report.push_back(e);
  };

  // Elementwise and shape ops.
  {
    Tensor a = rng.normal_tensor({3, 4}, 0, 1);
    Tensor b = rng.normal_tensor({3, 4}, 0, 1);
    add_entry("add", std::max(gradcheck_op([&](ad::Var x) { return ad::add(x, ad::Var::constant(b)); }, a),
                              gradcheck_op([&](ad::Var x) { return ad::add(ad::Var::constant(a), x); }, b)));
    add_entry("sub", std::max(gradcheck_op([&](ad::Var x) { return ad::sub(x, ad::Var::constant(b)); }, a),
                              gradcheck_op([&](ad::Var x) { return ad::sub(ad::Var::constant(a), x); }, b)));
    add_entry("mul", std::max(gradcheck_op([&](ad::Var x) { return ad::mul(x, ad::Var::constant(b)); }, a),
                              gradcheck_op([&](ad::Var x) { return ad::mul(ad::Var::constant(a), x); }, b)));
    add_entry("scale", gradcheck_op([](ad::Var x) { return ad::scale(x, Real(-1.7)); }, a));
    add_entry("reshape", gradcheck_op([](ad::Var x) { return ad::reshape(x, {12}); }, a));
    add_entry("sum_all", gradcheck_op([](ad::Var x) { return ad::sum_all(x); }, a));
    add_entry("mean_all", gradcheck_op([](ad::Var x) { return ad::mean_all(x); }, a));
  }
  {
    Tensor a = rng.normal_tensor({3, 4}, 0, 1);
    Tensor b = rng.normal_tensor({4, 2}, 0, 1);
    add_entry("matmul",
              std::max(gradcheck_op([&](ad::Var x) { return ad::matmul(x, ad::Var::constant(b)); }, a),
                       gradcheck_op([&](ad::Var x) { return ad::matmul(ad::Var::constant(a), x); }, b)));
    Tensor bt = rng.normal_tensor({2, 4}, 0, 1);
    add_entry("matmul_nt",
              std::max(gradcheck_op([&](ad::Var x) { return ad::matmul_nt(x, ad::Var::constant(bt)); }, a),
                       gradcheck_op([&](ad::Var x) { return ad::matmul_nt(ad::Var::constant(a), x); }, bt)));
  }
  {
    Tensor x = rng.normal_tensor({5, 3}, 0, 2);
    add_entry("gelu", gradcheck_op([](ad::Var v) { return ad::gelu(v); }, x));
    add_entry("tanh", gradcheck_op([](ad::Var v) { return ad::tanh_op(v); }, x));
    add_entry("softmax_lastaxis", gradcheck_op([](ad::Var v) { return ad::softmax_lastaxis(v); }, x));
  }
  {
    Tensor x = rng.normal_tensor({4, 3}, 0, 1);
    Tensor row = rng.normal_tensor({3}, 0, 1);
    add_entry("add_rowvec",
              std::max(gradcheck_op([&](ad::Var v) { return ad::add_rowvec(v, ad::Var::constant(row)); }, x),
                       gradcheck_op([&](ad::Var v) { return ad::add_rowvec(ad::Var::constant(x), v); }, row)));
    add_entry("mul_rowvec", gradcheck_op([&](ad::Var v) { return ad::mul_rowvec(v, row); }, x));
    Tensor lo = Tensor::full({3}, Real(-10));
    Tensor hi = Tensor::full({3}, Real(10));
    add_entry("clamp_rows", gradcheck_op([&](ad::Var v) { return ad::clamp_rows(v, lo, hi); }, x));
    add_entry("slice_lastdim", gradcheck_op([](ad::Var v) { return ad::slice_lastdim(v, 1, 3); }, x));
    add_entry("concat_lastdim", gradcheck_op(
                                    [&](ad::Var v) {
                                      return ad::concat_lastdim({v, ad::Var::constant(x)});
                                    },
                                    x));
    Tensor s = rng.normal_tensor({1}, 0, 1);
    add_entry("stack_scalars", gradcheck_op(
                                   [](ad::Var v) {
                                     ad::Var m = ad::mean_all(v);
                                     return ad::stack_scalars({m, ad::scale(m, Real(2))});
                                   },
                                   s));
  }
  {
    Tensor x = rng.normal_tensor({3, 4, 4, 2}, 0, 1);
    add_entry("mean_spatial", gradcheck_op([](ad::Var v) { return ad::mean_spatial(v); }, x));
  }
  {
    Tensor x = rng.normal_tensor({4, 4, 4, 2}, 0, 1);
    Tensor k = rng.normal_tensor({2, 3, 3, 3}, 0, 0.5);
    Tensor b = rng.normal_tensor({2}, 0, 0.5);
    auto conv_x = [&](ad::Var v) {
      return ad::dwconv3d(v, ad::Var::constant(k), ad::Var::constant(b), {1, 1, 1});
    };
    auto conv_k = [&](ad::Var v) {
      return ad::dwconv3d(ad::Var::constant(x), v, ad::Var::constant(b), {1, 1, 1});
    };
    auto conv_b = [&](ad::Var v) {
      return ad::dwconv3d(ad::Var::constant(x), ad::Var::constant(k), v, {1, 1, 1});
    };
    double err = std::max({gradcheck_op(conv_x, x), gradcheck_op(conv_k, k), gradcheck_op(conv_b, b)});
    auto strided = [&](ad::Var v) {
      return ad::dwconv3d(v, ad::Var::constant(k), ad::Var::constant(b), {2, 2, 2});
    };
    err = std::max(err, gradcheck_op(strided, x));
    add_entry("dwconv3d", err);
  }
  {
    Tensor x = rng.normal_tensor({3, 3, 3, 2}, 1, 2);
    Tensor g = rng.normal_tensor({2}, 1, 0.2);
    Tensor b = rng.normal_tensor({2}, 0, 0.2);
    auto norm_x = [&](ad::Var v) {
      return ad::channel_norm(v, ad::Var::constant(g), ad::Var::constant(b), Real(1e-5));
    };
    auto norm_g = [&](ad::Var v) {
      return ad::channel_norm(ad::Var::constant(x), v, ad::Var::constant(b), Real(1e-5));
    };
    auto norm_b = [&](ad::Var v) {
      return ad::channel_norm(ad::Var::constant(x), ad::Var::constant(g), v, Real(1e-5));
    };
    add_entry("channel_norm",
              std::max({gradcheck_op(norm_x, x), gradcheck_op(norm_g, g), gradcheck_op(norm_b, b)}));
  }
  {
    Tensor f = rng.normal_tensor({4, 4, 4, 3}, 0, 1);
    Tensor c = generic_coords(rng, 6, {4, 4, 4});
    auto tri_f = [&](ad::Var v) { return ad::trilinear(v, ad::Var::constant(c)); };
    auto tri_c = [&](ad::Var v) { return ad::trilinear(ad::Var::constant(f), v); };
    add_entry("trilinear", std::max(gradcheck_op(tri_f, f), gradcheck_op(tri_c, c)));
  }
  {
    Tensor a = rng.normal_tensor({4, 5}, 0, 1);
    Tensor b = rng.normal_tensor({3, 5}, 0, 1);
    add_entry("frame_distance_matrix",
              std::max(gradcheck_op(
                           [&](ad::Var v) { return frame_distance_matrix(v, ad::Var::constant(b)); }, a),
                       gradcheck_op(
                           [&](ad::Var v) { return frame_distance_matrix(ad::Var::constant(a), v); }, b)));
    Tensor d = rng.uniform_tensor({4, 4}, Real(0.5), Real(2));
    add_entry("bimhm_distance", gradcheck_op([](ad::Var v) { return bimhm_distance(v); }, d));
    add_entry("otam_distance", gradcheck_op([](ad::Var v) { return otam_distance(v); }, d));
    Tensor logits = rng.normal_tensor({3, 4}, 0, 1);
    std::vector<Index> labels{1, 0, 3};
    add_entry("cross_entropy_mean",
              gradcheck_op([&](ad::Var v) { return cross_entropy_mean(v, labels); }, logits));
  }

  // Full tiny dual-pathway adapter: T=4, H=W=4, C=8, bottleneck 0.5, both
  // aDSTA pathways with kernel (2,2,2).
  {
    SeededRng arng = rng.fork(77);
    AdapterConfig cfg;
    cfg.bottleneck_ratio = Real(0.5);
    cfg.pathway_kind = PathwayKind::kAdsta;
    cfg.spatial = AdstaConfig{AdstaVariant::kUniform, SamplingKernel{2, 2}, Real(1), 1, true};
    cfg.temporal = AdstaConfig{AdstaVariant::kUniform, SamplingKernel{2, 2}, Real(1), 1, true};
    cfg.residual = true;
    D2STAdapter adapter(8, cfg, {4, 4, 4}, arng);
    // Leave no zero-initialized layer in place and push the projections into
    // the softmax's nonlinear regime: gradcheck wants measurable signal
    // through every parameter.
    init_normal(adapter.up.weight, arng, Real(0.3));
    init_normal(adapter.up.bias, arng, Real(0.1));
    for (auto* path : {&*adapter.adsta_spatial, &*adapter.adsta_temporal}) {
      init_normal(path->offset_pw.weight, arng, Real(0.3));
      init_normal(path->dpe.kernel, arng, Real(0.1));
      init_normal(path->offset_dw.kernel, arng, Real(0.1));
      init_normal(path->wq, arng, Real(0.5));
      init_normal(path->wk, arng, Real(0.5));
      init_normal(path->wv, arng, Real(0.5));
      init_normal(path->wo, arng, Real(0.5));
    }

    const Tensor x_in = arng.normal_tensor({4, 4, 4, 8}, 0, 1);
    SeededRng wrng(0x5150);
    const Tensor weights = wrng.uniform_tensor({4, 4, 4, 8}, Real(-1), Real(1));

    std::vector<Parameter*> params;
    adapter.collect(params);
    auto loss_value = [&]() {
      ad::NoGradGuard ng;
      ad::Var out = adapter.forward(ad::Var::constant(x_in));
      Real acc = Real(0);
      for (Index i = 0; i < out.value().size(); ++i) acc += out.value()[i] * weights[i];
      return acc;
    };

    for (Parameter* p : params) p->zero_grad();
    ad::Var out = adapter.forward(ad::Var::constant(x_in));
    ad::Var loss = ad::sum_all(ad::mul(out, ad::Var::constant(weights)));
    ad::backward(loss);

    double worst = 0;
    for (Parameter* p : params) {
      const Tensor saved = p->value;
      Tensor fd = finite_diff_grad(
          [&](const Tensor& probe) {
            p->value = probe;
            const Real v = loss_value();
            return v;
          },
          saved, Real(1e-5));
      p->value = saved;
      worst = std::max(worst, rel_err(p->grad, fd));
    }
    add_entry("d2st_adapter_forward", worst);
  }

  return report;
}

}  // namespace d2st
