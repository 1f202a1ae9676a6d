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

#include "d2st/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace d2st {
namespace ad {

namespace {
thread_local bool g_grad_enabled = true;
constexpr Real kPi = Real(3.14159265358979323846);
}  // namespace

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor& Node::ensure_grad() {
  if (!grad_live) {
    grad = Tensor::zeros(value.shape());
    grad_live = true;
  }
  return grad;
}

void Node::accumulate_grad(const Tensor& g) {
  ensure_grad();
  grad.add_inplace(g);
}

Var Var::constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->op = "constant";
  return Var(std::move(n));
}

Var Var::leaf(Parameter& p) {
  auto n = std::make_shared<Node>();
  n->value = p.value;
  n->param = &p;
  n->requires_grad = g_grad_enabled && p.trainable;
  n->op = "parameter";
  return Var(std::move(n));
}

Var make_node(Tensor value, std::vector<NodePtr> inputs, std::function<void(Node&)> backward_fn,
              const char* op) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  bool need = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs)
      if (in && in->requires_grad) {
        need = true;
        break;
      }
  }
  if (need) {
    n->requires_grad = true;
    n->inputs = std::move(inputs);
    n->backward_fn = std::move(backward_fn);
  }
  return Var(std::move(n));
}

void backward(const Var& loss) {
  if (!loss.defined()) throw ContractError("backward: undefined loss");
  if (loss.value().size() != 1)
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  if (!loss.node()->requires_grad) return;  // nothing trainable upstream

  // Iterative post-order DFS; child visit order follows input registration,
  // so accumulation order is reproducible run to run.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* n;
    size_t next_input;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.node().get(), 0});
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_input < f.n->inputs.size()) {
      Node* in = f.n->inputs[f.next_input++].get();
      if (in && in->requires_grad && !visited.count(in)) {
        visited.insert(in);
        stack.push_back({in, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad().fill(Real(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->grad_live) continue;  // no gradient reached this node
    if (n->backward_fn) n->backward_fn(*n);
    if (n->param && n->param->trainable) n->param->grad.add_inplace(n->grad);
  }
}

// ---- raw kernels ----------------------------------------------------------

void mm_nn(const Real* a, const Real* b, Real* c, Index m, Index k, Index n) {
  for (Index i = 0; i < m; ++i) {
    const Real* ai = a + i * k;
    Real* ci = c + i * n;
    for (Index p = 0; p < k; ++p) {
      const Real aip = ai[p];
      if (aip == Real(0)) continue;
      const Real* bp = b + p * n;
      for (Index j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

void mm_nt(const Real* a, const Real* b, Real* c, Index m, Index k, Index n) {
  for (Index i = 0; i < m; ++i) {
    const Real* ai = a + i * k;
    Real* ci = c + i * n;
    for (Index j = 0; j < n; ++j) {
      const Real* bj = b + j * k;
      Real acc = Real(0);
      for (Index p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

void mm_tn(const Real* a, const Real* b, Real* c, Index m, Index k, Index n) {
  // a is (k,m), result c (m,n) += aᵀ·b
  for (Index p = 0; p < k; ++p) {
    const Real* ap = a + p * m;
    const Real* bp = b + p * n;
    for (Index i = 0; i < m; ++i) {
      const Real api = ap[i];
      if (api == Real(0)) continue;
      Real* ci = c + i * n;
      for (Index j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

Real gelu_scalar(Real x) {
  return x * Real(0.5) * (Real(1) + std::erf(x / std::sqrt(Real(2))));
}

Real gelu_grad_scalar(Real x) {
  const Real phi_cdf = Real(0.5) * (Real(1) + std::erf(x / std::sqrt(Real(2))));
  const Real phi_pdf = std::exp(Real(-0.5) * x * x) / std::sqrt(Real(2) * kPi);
  return phi_cdf + x * phi_pdf;
}

// ---- elementwise ----------------------------------------------------------

Var add(const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value()))
    throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.value();
  out.add_inplace(b.value());
  return make_node(
      std::move(out), {a.node(), b.node()},
      [](Node& n) {
        for (int i = 0; i < 2; ++i)
          if (n.inputs[i]->requires_grad) n.inputs[i]->accumulate_grad(n.grad);
      },
      "add");
}

Var sub(const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value()))
    throw DimensionError("sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.value();
  out.axpy_inplace(Real(-1), b.value());
  return make_node(
      std::move(out), {a.node(), b.node()},
      [](Node& n) {
        if (n.inputs[0]->requires_grad) n.inputs[0]->accumulate_grad(n.grad);
        if (n.inputs[1]->requires_grad) n.inputs[1]->ensure_grad().axpy_inplace(Real(-1), n.grad);
      },
      "sub");
}

Var mul(const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value()))
    throw DimensionError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.value();
  for (Index i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_node(
      std::move(out), {a.node(), b.node()},
      [](Node& n) {
        const Tensor& av = n.inputs[0]->value;
        const Tensor& bv = n.inputs[1]->value;
        if (n.inputs[0]->requires_grad) {
          Tensor& ga = n.inputs[0]->ensure_grad();
          for (Index i = 0; i < ga.size(); ++i) ga[i] += n.grad[i] * bv[i];
        }
        if (n.inputs[1]->requires_grad) {
          Tensor& gb = n.inputs[1]->ensure_grad();
          for (Index i = 0; i < gb.size(); ++i) gb[i] += n.grad[i] * av[i];
        }
      },
      "mul");
}

Var scale(const Var& a, Real s) {
  Tensor out = a.value();
  for (Index i = 0; i < out.size(); ++i) out[i] *= s;
  return make_node(
      std::move(out), {a.node()},
      [s](Node& n) {
        if (n.inputs[0]->requires_grad) n.inputs[0]->ensure_grad().axpy_inplace(s, n.grad);
      },
      "scale");
}

// ---- matmul ---------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  require_rank(a.value(), 2, "matmul lhs");
  require_rank(b.value(), 2, "matmul rhs");
  const Index m = a.value().dim(0), k = a.value().dim(1);
  const Index k2 = b.value().dim(0), n = b.value().dim(1);
  if (k != k2)
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  Tensor out({m, n});
  mm_nn(a.value().data(), b.value().data(), out.data(), m, k, n);
  return make_node(
      std::move(out), {a.node(), b.node()},
      [m, k, n](Node& node) {
        const Tensor& av = node.inputs[0]->value;
        const Tensor& bv = node.inputs[1]->value;
        if (node.inputs[0]->requires_grad)
          mm_nt(node.grad.data(), bv.data(), node.inputs[0]->ensure_grad().data(), m, n, k);
        if (node.inputs[1]->requires_grad)
          mm_tn(av.data(), node.grad.data(), node.inputs[1]->ensure_grad().data(), k, m, n);
      },
      "matmul");
}

Var matmul_nt(const Var& a, const Var& b) {
  require_rank(a.value(), 2, "matmul_nt lhs");
  require_rank(b.value(), 2, "matmul_nt rhs");
  const Index m = a.value().dim(0), k = a.value().dim(1);
  const Index n = b.value().dim(0), k2 = b.value().dim(1);
  if (k != k2)
    throw DimensionError("matmul_nt: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + " transposed");
  Tensor out({m, n});
  mm_nt(a.value().data(), b.value().data(), out.data(), m, k, n);
  return make_node(
      std::move(out), {a.node(), b.node()},
      [m, k, n](Node& node) {
        const Tensor& av = node.inputs[0]->value;
        const Tensor& bv = node.inputs[1]->value;
        if (node.inputs[0]->requires_grad)
          mm_nn(node.grad.data(), bv.data(), node.inputs[0]->ensure_grad().data(), m, n, k);
        if (node.inputs[1]->requires_grad)
          mm_tn(node.grad.data(), av.data(), node.inputs[1]->ensure_grad().data(), n, m, k);
      },
      "matmul_nt");
}

// ---- nonlinearities --------------------------------------------------------

Var gelu(const Var& x) {
  Tensor out = x.value();
  for (Index i = 0; i < out.size(); ++i) out[i] = gelu_scalar(out[i]);
  return make_node(
      std::move(out), {x.node()},
      [](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        const Tensor& xv = n.inputs[0]->value;
        Tensor& gx = n.inputs[0]->ensure_grad();
        for (Index i = 0; i < gx.size(); ++i) gx[i] += n.grad[i] * gelu_grad_scalar(xv[i]);
      },
      "gelu");
}

Var tanh_op(const Var& x) {
  Tensor out = x.value();
  for (Index i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
  return make_node(
      std::move(out), {x.node()},
      [](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        Tensor& gx = n.inputs[0]->ensure_grad();
        for (Index i = 0; i < gx.size(); ++i) gx[i] += n.grad[i] * (Real(1) - n.value[i] * n.value[i]);
      },
      "tanh");
}

Var softmax_lastaxis(const Var& x) {
  if (x.value().rank() < 1 || x.value().dim(x.value().rank() - 1) < 1)
    throw DimensionError("softmax_lastaxis: empty last axis for " + shape_str(x.shape()));
  const Index cols = x.value().dim(x.value().rank() - 1);
  const Index rows = x.value().size() / cols;
  Tensor out = x.value();
  for (Index r = 0; r < rows; ++r) {
    Real* row = out.data() + r * cols;
    Real mx = row[0];
    for (Index j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    Real sum = Real(0);
    for (Index j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (Index j = 0; j < cols; ++j) row[j] /= sum;
  }
  return make_node(
      std::move(out), {x.node()},
      [rows, cols](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        Tensor& gx = n.inputs[0]->ensure_grad();
        for (Index r = 0; r < rows; ++r) {
          const Real* y = n.value.data() + r * cols;
          const Real* gy = n.grad.data() + r * cols;
          Real dot = Real(0);
          for (Index j = 0; j < cols; ++j) dot += gy[j] * y[j];
          Real* g = gx.data() + r * cols;
          for (Index j = 0; j < cols; ++j) g[j] += y[j] * (gy[j] - dot);
        }
      },
      "softmax_lastaxis");
}

// ---- shape ops --------------------------------------------------------------

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make_node(
      std::move(out), {x.node()},
      [](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        n.inputs[0]->accumulate_grad(n.grad.reshaped(n.inputs[0]->value.shape()));
      },
      "reshape");
}

Var add_rowvec(const Var& x, const Var& row) {
  require_rank(row.value(), 1, "add_rowvec row");
  const Index c = row.value().dim(0);
  if (x.value().rank() < 1 || x.value().dim(x.value().rank() - 1) != c)
    throw DimensionError("add_rowvec: last axis of " + shape_str(x.shape()) + " != " + std::to_string(c));
  const Index rows = x.value().size() / c;
  Tensor out = x.value();
  for (Index r = 0; r < rows; ++r) {
    Real* p = out.data() + r * c;
    for (Index j = 0; j < c; ++j) p[j] += row.value()[j];
  }
  return make_node(
      std::move(out), {x.node(), row.node()},
      [rows, c](Node& n) {
        if (n.inputs[0]->requires_grad) n.inputs[0]->accumulate_grad(n.grad);
        if (n.inputs[1]->requires_grad) {
          Tensor& gr = n.inputs[1]->ensure_grad();
          for (Index r = 0; r < rows; ++r) {
            const Real* g = n.grad.data() + r * c;
            for (Index j = 0; j < c; ++j) gr[j] += g[j];
          }
        }
      },
      "add_rowvec");
}

Var mul_rowvec(const Var& x, const Tensor& row) {
  require_rank(row, 1, "mul_rowvec row");
  const Index c = row.dim(0);
  if (x.value().rank() < 1 || x.value().dim(x.value().rank() - 1) != c)
    throw DimensionError("mul_rowvec: last axis of " + shape_str(x.shape()) + " != " + std::to_string(c));
  const Index rows = x.value().size() / c;
  Tensor out = x.value();
  for (Index r = 0; r < rows; ++r) {
    Real* p = out.data() + r * c;
    for (Index j = 0; j < c; ++j) p[j] *= row[j];
  }
  return make_node(
      std::move(out), {x.node()},
      [rows, c, row](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        Tensor& gx = n.inputs[0]->ensure_grad();
        for (Index r = 0; r < rows; ++r) {
          const Real* g = n.grad.data() + r * c;
          Real* gp = gx.data() + r * c;
          for (Index j = 0; j < c; ++j) gp[j] += g[j] * row[j];
        }
      },
      "mul_rowvec");
}

Var clamp_rows(const Var& x, const Tensor& lo, const Tensor& hi) {
  require_rank(lo, 1, "clamp_rows lo");
  require_rank(hi, 1, "clamp_rows hi");
  const Index c = lo.dim(0);
  if (hi.dim(0) != c || x.value().dim(x.value().rank() - 1) != c)
    throw DimensionError("clamp_rows: bound length mismatch for " + shape_str(x.shape()));
  const Index rows = x.value().size() / c;
  Tensor out = x.value();
  for (Index r = 0; r < rows; ++r) {
    Real* p = out.data() + r * c;
    for (Index j = 0; j < c; ++j) p[j] = std::min(std::max(p[j], lo[j]), hi[j]);
  }
  return make_node(
      std::move(out), {x.node()},
      [rows, c, lo, hi](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        const Tensor& xv = n.inputs[0]->value;
        Tensor& gx = n.inputs[0]->ensure_grad();
        // Subgradient: pass-through strictly inside the interval only.
        for (Index r = 0; r < rows; ++r)
          for (Index j = 0; j < c; ++j) {
            const Real v = xv[r * c + j];
            if (v > lo[j] && v < hi[j]) gx[r * c + j] += n.grad[r * c + j];
          }
      },
      "clamp_rows");
}

Var slice_lastdim(const Var& x, Index from, Index to) {
  const Index c = x.value().dim(x.value().rank() - 1);
  if (from < 0 || to > c || from >= to)
    throw DimensionError("slice_lastdim: bad range [" + std::to_string(from) + "," + std::to_string(to) +
                         ") for axis " + std::to_string(c));
  const Index rows = x.value().size() / c;
  const Index w = to - from;
  Shape oshape = x.value().shape();
  oshape.back() = w;
  Tensor out(oshape);
  for (Index r = 0; r < rows; ++r)
    for (Index j = 0; j < w; ++j) out[r * w + j] = x.value()[r * c + from + j];
  return make_node(
      std::move(out), {x.node()},
      [rows, c, w, from](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        Tensor& gx = n.inputs[0]->ensure_grad();
        for (Index r = 0; r < rows; ++r)
          for (Index j = 0; j < w; ++j) gx[r * c + from + j] += n.grad[r * w + j];
      },
      "slice_lastdim");
}

Var concat_lastdim(const std::vector<Var>& xs) {
  if (xs.empty()) throw DimensionError("concat_lastdim: empty input list");
  Shape base = xs[0].shape();
  Index total = 0;
  std::vector<Index> widths;
  for (const auto& v : xs) {
    Shape s = v.shape();
    widths.push_back(s.back());
    total += s.back();
    s.back() = base.back();
    if (s != base) throw DimensionError("concat_lastdim: incompatible shapes");
  }
  Shape oshape = base;
  oshape.back() = total;
  const Index rows = shape_numel(oshape) / total;
  Tensor out(oshape);
  Index off = 0;
  for (size_t t = 0; t < xs.size(); ++t) {
    const Index w = widths[t];
    for (Index r = 0; r < rows; ++r)
      for (Index j = 0; j < w; ++j) out[r * total + off + j] = xs[t].value()[r * w + j];
    off += w;
  }
  std::vector<NodePtr> ins;
  for (const auto& v : xs) ins.push_back(v.node());
  return make_node(
      std::move(out), std::move(ins),
      [rows, total, widths](Node& n) {
        Index off = 0;
        for (size_t t = 0; t < n.inputs.size(); ++t) {
          const Index w = widths[t];
          if (n.inputs[t]->requires_grad) {
            Tensor& g = n.inputs[t]->ensure_grad();
            for (Index r = 0; r < rows; ++r)
              for (Index j = 0; j < w; ++j) g[r * w + j] += n.grad[r * total + off + j];
          }
          off += w;
        }
      },
      "concat_lastdim");
}

// ---- reductions -------------------------------------------------------------

Var sum_all(const Var& x) {
  Real s = Real(0);
  for (Index i = 0; i < x.value().size(); ++i) s += x.value()[i];
  return make_node(
      Tensor::scalar(s), {x.node()},
      [](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        Tensor& gx = n.inputs[0]->ensure_grad();
        const Real g = n.grad[0];
        for (Index i = 0; i < gx.size(); ++i) gx[i] += g;
      },
      "sum_all");
}

Var mean_all(const Var& x) {
  const Index n = x.value().size();
  if (n == 0) throw DimensionError("mean_all of empty tensor");
  Real s = Real(0);
  for (Index i = 0; i < n; ++i) s += x.value()[i];
  s /= static_cast<Real>(n);
  return make_node(
      Tensor::scalar(s), {x.node()},
      [n](Node& nd) {
        if (!nd.inputs[0]->requires_grad) return;
        Tensor& gx = nd.inputs[0]->ensure_grad();
        const Real g = nd.grad[0] / static_cast<Real>(n);
        for (Index i = 0; i < gx.size(); ++i) gx[i] += g;
      },
      "mean_all");
}

Var mean_spatial(const Var& x) {
  require_rank(x.value(), 4, "mean_spatial");
  const Index t = x.value().dim(0), h = x.value().dim(1), w = x.value().dim(2), c = x.value().dim(3);
  const Index hw = h * w;
  Tensor out({t, c});
  for (Index ti = 0; ti < t; ++ti) {
    for (Index p = 0; p < hw; ++p) {
      const Real* src = x.value().data() + (ti * hw + p) * c;
      Real* dst = out.data() + ti * c;
      for (Index ci = 0; ci < c; ++ci) dst[ci] += src[ci];
    }
    Real* dst = out.data() + ti * c;
    for (Index ci = 0; ci < c; ++ci) dst[ci] /= static_cast<Real>(hw);
  }
  return make_node(
      std::move(out), {x.node()},
      [t, hw, c](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        Tensor& gx = n.inputs[0]->ensure_grad();
        for (Index ti = 0; ti < t; ++ti) {
          const Real* g = n.grad.data() + ti * c;
          for (Index p = 0; p < hw; ++p) {
            Real* dst = gx.data() + (ti * hw + p) * c;
            for (Index ci = 0; ci < c; ++ci) dst[ci] += g[ci] / static_cast<Real>(hw);
          }
        }
      },
      "mean_spatial");
}

Var stack_scalars(const std::vector<Var>& xs) {
  if (xs.empty()) throw DimensionError("stack_scalars: empty input list");
  Tensor out({static_cast<Index>(xs.size())});
  std::vector<NodePtr> ins;
  for (size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].value().size() != 1) throw DimensionError("stack_scalars: non-scalar input");
    out[static_cast<Index>(i)] = xs[i].value()[0];
    ins.push_back(xs[i].node());
  }
  return make_node(
      std::move(out), std::move(ins),
      [](Node& n) {
        for (size_t i = 0; i < n.inputs.size(); ++i)
          if (n.inputs[i]->requires_grad) {
            Tensor g = Tensor::scalar(n.grad[static_cast<Index>(i)]);
            g = g.reshaped(n.inputs[i]->value.shape());
            n.inputs[i]->accumulate_grad(g);
          }
      },
      "stack_scalars");
}

// ---- depthwise 3d convolution ----------------------------------------------

Var dwconv3d(const Var& x, const Var& kernel, const Var& bias, std::array<Index, 3> stride) {
  require_rank(x.value(), 4, "dwconv3d input");
  require_rank(kernel.value(), 4, "dwconv3d kernel");
  require_rank(bias.value(), 1, "dwconv3d bias");
  const Index t = x.value().dim(0), h = x.value().dim(1), w = x.value().dim(2), c = x.value().dim(3);
  const Index kc = kernel.value().dim(0), kt = kernel.value().dim(1), kh = kernel.value().dim(2),
              kw = kernel.value().dim(3);
  if (kc != c || bias.value().dim(0) != c)
    throw DimensionError("dwconv3d: channel mismatch, input " + shape_str(x.shape()) + " kernel " +
                         shape_str(kernel.shape()));
  const Index st = stride[0], sh = stride[1], sw = stride[2];
  if (st < 1 || sh < 1 || sw < 1) throw ConfigError("dwconv3d: stride must be positive");
  if (st == 1 && sh == 1 && sw == 1 && (kt % 2 == 0 || kh % 2 == 0 || kw % 2 == 0))
    throw DimensionError("dwconv3d: stride-1 same padding requires odd kernel dims");
  const Index pt = (kt - 1) / 2, ph = (kh - 1) / 2, pw2 = (kw - 1) / 2;
  if (kt > t + 2 * pt || kh > h + 2 * ph || kw > w + 2 * pw2)
    throw DimensionError("dwconv3d: kernel exceeds padded input");
  const Index to = (t + 2 * pt - kt) / st + 1;
  const Index ho = (h + 2 * ph - kh) / sh + 1;
  const Index wo = (w + 2 * pw2 - kw) / sw + 1;

  Tensor out({to, ho, wo, c});
  const Real* xd = x.value().data();
  const Real* kd = kernel.value().data();
  for (Index ot = 0; ot < to; ++ot)
    for (Index oh = 0; oh < ho; ++oh)
      for (Index ow = 0; ow < wo; ++ow) {
        Real* o = out.data() + ((ot * ho + oh) * wo + ow) * c;
        for (Index ci = 0; ci < c; ++ci) o[ci] = bias.value()[ci];
        for (Index dt = 0; dt < kt; ++dt) {
          const Index it = ot * st - pt + dt;
          if (it < 0 || it >= t) continue;
          for (Index dh = 0; dh < kh; ++dh) {
            const Index ih = oh * sh - ph + dh;
            if (ih < 0 || ih >= h) continue;
            for (Index dw = 0; dw < kw; ++dw) {
              const Index iw = ow * sw - pw2 + dw;
              if (iw < 0 || iw >= w) continue;
              const Real* xp = xd + ((it * h + ih) * w + iw) * c;
              const Real* kp = kd + ((dt * kh + dh) * kw + dw);
              for (Index ci = 0; ci < c; ++ci) o[ci] += xp[ci] * kp[ci * kt * kh * kw];
            }
          }
        }
      }

  auto geom = std::array<Index, 12>{t, h, w, c, kt, kh, kw, st, sh, sw, to, ho};
  const Index wo_cap = wo;
  return make_node(
      std::move(out), {x.node(), kernel.node(), bias.node()},
      [geom, wo_cap](Node& n) {
        const auto [t, h, w, c, kt, kh, kw, st, sh, sw, to, ho] = geom;
        const Index wo = wo_cap;
        const Index pt = (kt - 1) / 2, ph = (kh - 1) / 2, pw2 = (kw - 1) / 2;
        const Tensor& xv = n.inputs[0]->value;
        const Tensor& kv = n.inputs[1]->value;
        const bool need_x = n.inputs[0]->requires_grad;
        const bool need_k = n.inputs[1]->requires_grad;
        const bool need_b = n.inputs[2]->requires_grad;
        Tensor* gx = need_x ? &n.inputs[0]->ensure_grad() : nullptr;
        Tensor* gk = need_k ? &n.inputs[1]->ensure_grad() : nullptr;
        Tensor* gb = need_b ? &n.inputs[2]->ensure_grad() : nullptr;
        for (Index ot = 0; ot < to; ++ot)
          for (Index oh = 0; oh < ho; ++oh)
            for (Index ow = 0; ow < wo; ++ow) {
              const Real* g = n.grad.data() + ((ot * ho + oh) * wo + ow) * c;
              if (need_b)
                for (Index ci = 0; ci < c; ++ci) (*gb)[ci] += g[ci];
              for (Index dt = 0; dt < kt; ++dt) {
                const Index it = ot * st - pt + dt;
                if (it < 0 || it >= t) continue;
                for (Index dh = 0; dh < kh; ++dh) {
                  const Index ih = oh * sh - ph + dh;
                  if (ih < 0 || ih >= h) continue;
                  for (Index dw = 0; dw < kw; ++dw) {
                    const Index iw = ow * sw - pw2 + dw;
                    if (iw < 0 || iw >= w) continue;
                    const Index xoff = ((it * h + ih) * w + iw) * c;
                    const Index koff = (dt * kh + dh) * kw + dw;
                    for (Index ci = 0; ci < c; ++ci) {
                      if (need_x) (*gx)[xoff + ci] += g[ci] * kv[ci * kt * kh * kw + koff];
                      if (need_k) (*gk)[ci * kt * kh * kw + koff] += g[ci] * xv[xoff + ci];
                    }
                  }
                }
              }
            }
      },
      "dwconv3d");
}

// ---- per-channel normalization ----------------------------------------------

Var channel_norm(const Var& x, const Var& gamma, const Var& beta, Real eps) {
  require_rank(x.value(), 4, "channel_norm input");
  const Index t = x.value().dim(0), h = x.value().dim(1), w = x.value().dim(2), c = x.value().dim(3);
  if (gamma.value().dim(0) != c || beta.value().dim(0) != c)
    throw DimensionError("channel_norm: affine params mismatch channels " + std::to_string(c));
  const Index n = t * h * w;
  if (n < 2) throw ContractError("channel_norm: needs at least 2 positions per channel");

  std::vector<Real> mean(static_cast<size_t>(c), Real(0));
  std::vector<Real> inv_std(static_cast<size_t>(c), Real(0));
  const Real* xd = x.value().data();
  for (Index p = 0; p < n; ++p)
    for (Index ci = 0; ci < c; ++ci) mean[static_cast<size_t>(ci)] += xd[p * c + ci];
  for (Index ci = 0; ci < c; ++ci) mean[static_cast<size_t>(ci)] /= static_cast<Real>(n);
  for (Index p = 0; p < n; ++p)
    for (Index ci = 0; ci < c; ++ci) {
      const Real d = xd[p * c + ci] - mean[static_cast<size_t>(ci)];
      inv_std[static_cast<size_t>(ci)] += d * d;
    }
  for (Index ci = 0; ci < c; ++ci)
    inv_std[static_cast<size_t>(ci)] =
        Real(1) / std::sqrt(inv_std[static_cast<size_t>(ci)] / static_cast<Real>(n) + eps);

  Tensor out(x.value().shape());
  for (Index p = 0; p < n; ++p)
    for (Index ci = 0; ci < c; ++ci) {
      const size_t cs = static_cast<size_t>(ci);
      const Real xn = (xd[p * c + ci] - mean[cs]) * inv_std[cs];
      out[p * c + ci] = gamma.value()[ci] * xn + beta.value()[ci];
    }

  return make_node(
      std::move(out), {x.node(), gamma.node(), beta.node()},
      [n, c, mean, inv_std](Node& nd) {
        const Tensor& xv = nd.inputs[0]->value;
        const Tensor& gv = nd.inputs[1]->value;
        const bool need_x = nd.inputs[0]->requires_grad;
        const bool need_g = nd.inputs[1]->requires_grad;
        const bool need_b = nd.inputs[2]->requires_grad;
        Tensor* gx = need_x ? &nd.inputs[0]->ensure_grad() : nullptr;
        Tensor* gg = need_g ? &nd.inputs[1]->ensure_grad() : nullptr;
        Tensor* gb = need_b ? &nd.inputs[2]->ensure_grad() : nullptr;
        for (Index ci = 0; ci < c; ++ci) {
          const size_t cs = static_cast<size_t>(ci);
          // Accumulate per-channel sums of dy and dy·x̂ first.
          Real sum_dy = Real(0), sum_dy_xn = Real(0);
          for (Index p = 0; p < n; ++p) {
            const Real xn = (xv[p * c + ci] - mean[cs]) * inv_std[cs];
            const Real dy = nd.grad[p * c + ci];
            sum_dy += dy;
            sum_dy_xn += dy * xn;
          }
          if (need_g) (*gg)[ci] += sum_dy_xn;
          if (need_b) (*gb)[ci] += sum_dy;
          if (need_x) {
            const Real scale = gv[ci] * inv_std[cs];
            for (Index p = 0; p < n; ++p) {
              const Real xn = (xv[p * c + ci] - mean[cs]) * inv_std[cs];
              const Real dy = nd.grad[p * c + ci];
              (*gx)[p * c + ci] +=
                  scale * (dy - sum_dy / static_cast<Real>(n) - xn * sum_dy_xn / static_cast<Real>(n));
            }
          }
        }
      },
      "channel_norm");
}

// ---- trilinear interpolation -------------------------------------------------

Var trilinear(const Var& features, const Var& coords) {
  require_rank(features.value(), 4, "trilinear features");
  require_rank(coords.value(), 2, "trilinear coords");
  if (coords.value().dim(1) != 3)
    throw DimensionError("trilinear: coords must be (M,3), got " + shape_str(coords.shape()));
  const Index t = features.value().dim(0), h = features.value().dim(1), w = features.value().dim(2),
              c = features.value().dim(3);
  const Index m = coords.value().dim(0);
  const Index ext[3] = {t, h, w};
  for (Index i = 0; i < m; ++i)
    for (Index a = 0; a < 3; ++a) {
      const Real v = coords.value()[i * 3 + a];
      if (v < Real(-1e-9) || v > static_cast<Real>(ext[a] - 1) + Real(1e-9))
        throw ContractError("trilinear: point outside the valid volume on axis " + std::to_string(a));
    }

  Tensor out({m, c});
  const Real* fd = features.value().data();
  const Real* cd = coords.value().data();
  for (Index i = 0; i < m; ++i) {
    const Real pt = cd[i * 3 + 0], ph = cd[i * 3 + 1], pw = cd[i * 3 + 2];
    const Index t0 = static_cast<Index>(std::floor(pt));
    const Index h0 = static_cast<Index>(std::floor(ph));
    const Index w0 = static_cast<Index>(std::floor(pw));
    const Real ft = pt - static_cast<Real>(t0), fh = ph - static_cast<Real>(h0),
               fw = pw - static_cast<Real>(w0);
    Real* o = out.data() + i * c;
    for (int bt = 0; bt < 2; ++bt) {
      const Index ti = t0 + bt;
      const Real wt = bt ? ft : Real(1) - ft;
      if (wt == Real(0) || ti < 0 || ti >= t) continue;
      for (int bh = 0; bh < 2; ++bh) {
        const Index hi = h0 + bh;
        const Real wh = bh ? fh : Real(1) - fh;
        if (wh == Real(0) || hi < 0 || hi >= h) continue;
        for (int bw = 0; bw < 2; ++bw) {
          const Index wi = w0 + bw;
          const Real ww = bw ? fw : Real(1) - fw;
          if (ww == Real(0) || wi < 0 || wi >= w) continue;
          const Real wgt = wt * wh * ww;
          const Real* f = fd + ((ti * h + hi) * w + wi) * c;
          for (Index ci = 0; ci < c; ++ci) o[ci] += wgt * f[ci];
        }
      }
    }
  }

  const std::array<Index, 5> geom{t, h, w, c, m};
  return make_node(
      std::move(out), {features.node(), coords.node()},
      [geom](Node& n) {
        const auto [t, h, w, c, m] = geom;
        const Tensor& fv = n.inputs[0]->value;
        const Tensor& cv = n.inputs[1]->value;
        const bool need_f = n.inputs[0]->requires_grad;
        const bool need_c = n.inputs[1]->requires_grad;
        Tensor* gf = need_f ? &n.inputs[0]->ensure_grad() : nullptr;
        Tensor* gc = need_c ? &n.inputs[1]->ensure_grad() : nullptr;
        auto fetch = [&](Index ti, Index hi, Index wi, Index ci) -> Real {
          if (ti < 0 || ti >= t || hi < 0 || hi >= h || wi < 0 || wi >= w) return Real(0);
          return fv[((ti * h + hi) * w + wi) * c + ci];
        };
        for (Index i = 0; i < m; ++i) {
          const Real pt = cv[i * 3 + 0], ph = cv[i * 3 + 1], pw = cv[i * 3 + 2];
          const Index t0 = static_cast<Index>(std::floor(pt));
          const Index h0 = static_cast<Index>(std::floor(ph));
          const Index w0 = static_cast<Index>(std::floor(pw));
          const Real ft = pt - static_cast<Real>(t0), fh = ph - static_cast<Real>(h0),
                     fw = pw - static_cast<Real>(w0);
          const Real* g = n.grad.data() + i * c;
          Real d_pt = Real(0), d_ph = Real(0), d_pw = Real(0);
          for (int bt = 0; bt < 2; ++bt) {
            const Index ti = t0 + bt;
            const Real wt = bt ? ft : Real(1) - ft;
            const Real dwt = bt ? Real(1) : Real(-1);
            for (int bh = 0; bh < 2; ++bh) {
              const Index hi = h0 + bh;
              const Real wh = bh ? fh : Real(1) - fh;
              const Real dwh = bh ? Real(1) : Real(-1);
              for (int bw = 0; bw < 2; ++bw) {
                const Index wi = w0 + bw;
                const Real ww = bw ? fw : Real(1) - fw;
                const Real dww = bw ? Real(1) : Real(-1);
                Real gdot = Real(0);
                if (need_c) {
                  for (Index ci = 0; ci < c; ++ci) gdot += g[ci] * fetch(ti, hi, wi, ci);
                  d_pt += dwt * wh * ww * gdot;
                  d_ph += wt * dwh * ww * gdot;
                  d_pw += wt * wh * dww * gdot;
                }
                if (need_f && !(ti < 0 || ti >= t || hi < 0 || hi >= h || wi < 0 || wi >= w)) {
                  const Real wgt = wt * wh * ww;
                  if (wgt != Real(0)) {
                    Real* dst = gf->data() + ((ti * h + hi) * w + wi) * c;
                    for (Index ci = 0; ci < c; ++ci) dst[ci] += wgt * g[ci];
                  }
                }
              }
            }
          }
          if (need_c) {
            (*gc)[i * 3 + 0] += d_pt;
            (*gc)[i * 3 + 1] += d_ph;
            (*gc)[i * 3 + 2] += d_pw;
          }
        }
      },
      "trilinear");
}

}  // namespace ad

Tensor finite_diff_grad(const std::function<Real(const Tensor&)>& f, const Tensor& x, Real eps) {
  if (!(eps > Real(0))) throw ContractError("finite_diff_grad: eps must be positive");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    const Real orig = probe[i];
    probe[i] = orig + eps;
    const Real fp = f(probe);
    probe[i] = orig - eps;
    const Real fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("finite_diff_grad: non-finite function value at coordinate " + std::to_string(i));
    grad[i] = (fp - fm) / (2 * eps);
  }
  return grad;
}

}  // namespace d2st
