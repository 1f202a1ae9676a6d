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

#include "d2st/matching.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace d2st {

using ad::Var;

void Episode::validate() const {
  if (way < 1 || shot < 1 || queries_per_class < 1)
    throw ContractError("episode: way, shot and queries_per_class must be positive");
  if (static_cast<Index>(support.size()) != way * shot)
    throw ContractError("episode: expected " + std::to_string(way * shot) + " support videos, got " +
                        std::to_string(support.size()));
  if (static_cast<Index>(query.size()) != way * queries_per_class)
    throw ContractError("episode: expected " + std::to_string(way * queries_per_class) +
                        " query videos, got " + std::to_string(query.size()));
}

const char* metric_name(Metric m) { return m == Metric::kBiMhm ? "bimhm" : "otam"; }

Metric metric_from_name(const std::string& name) {
  if (name == "bimhm") return Metric::kBiMhm;
  if (name == "otam") return Metric::kOtam;
  throw ConfigError("unknown matching metric '" + name + "'");
}

// ---- distance matrix ---------------------------------------------------------

Var frame_distance_matrix(const Var& a, const Var& b) {
  require_rank(a.value(), 2, "frame_distance_matrix lhs");
  require_rank(b.value(), 2, "frame_distance_matrix rhs");
  const Index ta = a.value().dim(0), d = a.value().dim(1);
  const Index tb = b.value().dim(0);
  if (b.value().dim(1) != d)
    throw DimensionError("frame_distance_matrix: feature dims differ, " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  Tensor out({ta, tb});
  for (Index i = 0; i < ta; ++i)
    for (Index j = 0; j < tb; ++j) {
      Real acc = Real(0);
      const Real* ai = a.value().data() + i * d;
      const Real* bj = b.value().data() + j * d;
      for (Index k = 0; k < d; ++k) {
        const Real diff = ai[k] - bj[k];
        acc += diff * diff;
      }
      out[i * tb + j] = std::sqrt(acc);
    }
  return ad::make_node(
      std::move(out), {a.node(), b.node()},
      [ta, tb, d](ad::Node& n) {
        const Tensor& av = n.inputs[0]->value;
        const Tensor& bv = n.inputs[1]->value;
        const bool need_a = n.inputs[0]->requires_grad;
        const bool need_b = n.inputs[1]->requires_grad;
        Tensor* ga = need_a ? &n.inputs[0]->ensure_grad() : nullptr;
        Tensor* gb = need_b ? &n.inputs[1]->ensure_grad() : nullptr;
        for (Index i = 0; i < ta; ++i)
          for (Index j = 0; j < tb; ++j) {
            const Real g = n.grad[i * tb + j];
            if (g == Real(0)) continue;
            const Real dist = n.value[i * tb + j];
            if (dist < Real(1e-12)) continue;  // subgradient 0 at coincident frames
            const Real s = g / dist;
            for (Index k = 0; k < d; ++k) {
              const Real diff = av[i * d + k] - bv[j * d + k];
              if (need_a) (*ga)[i * d + k] += s * diff;
              if (need_b) (*gb)[j * d + k] -= s * diff;
            }
          }
      },
      "frame_distance_matrix");
}

// ---- Bi-MHM -------------------------------------------------------------------

namespace {

Real bimhm_forward(const Tensor& d, std::vector<Index>* row_arg, std::vector<Index>* col_arg) {
  const Index tq = d.dim(0), tc = d.dim(1);
  if (tq < 1 || tc < 1) throw ContractError("bimhm_distance: empty distance matrix");
  Real acc = Real(0);
  for (Index i = 0; i < tq; ++i) {
    Index best = 0;
    for (Index j = 1; j < tc; ++j)
      if (d[i * tc + j] < d[i * tc + best]) best = j;
    acc += d[i * tc + best] / (Real(2) * static_cast<Real>(tq));
    if (row_arg) row_arg->push_back(best);
  }
  for (Index j = 0; j < tc; ++j) {
    Index best = 0;
    for (Index i = 1; i < tq; ++i)
      if (d[i * tc + j] < d[best * tc + j]) best = i;
    acc += d[best * tc + j] / (Real(2) * static_cast<Real>(tc));
    if (col_arg) col_arg->push_back(best);
  }
  return acc;
}

}  // namespace

Real bimhm_distance_value(const Tensor& d) { return bimhm_forward(d, nullptr, nullptr); }

Var bimhm_distance(const Var& d) {
  require_rank(d.value(), 2, "bimhm_distance");
  std::vector<Index> row_arg, col_arg;
  const Real val = bimhm_forward(d.value(), &row_arg, &col_arg);
  const Index tq = d.value().dim(0), tc = d.value().dim(1);
  return ad::make_node(
      Tensor::scalar(val), {d.node()},
      [tq, tc, row_arg, col_arg](ad::Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        Tensor& g = n.inputs[0]->ensure_grad();
        const Real go = n.grad[0];
        for (Index i = 0; i < tq; ++i)
          g[i * tc + row_arg[static_cast<size_t>(i)]] += go / (Real(2) * static_cast<Real>(tq));
        for (Index j = 0; j < tc; ++j)
          g[col_arg[static_cast<size_t>(j)] * tc + j] += go / (Real(2) * static_cast<Real>(tc));
      },
      "bimhm_distance");
}

// ---- OTAM ----------------------------------------------------------------------

namespace {

struct AlignPath {
  Real cost = Real(0);
  std::vector<std::pair<Index, Index>> cells;
};

// Minimum-cost monotone path entering at any cell of row 0 and leaving at any
// cell of the last row; moves are down (i+1,j), diag (i+1,j+1) and right
// (i,j+1). Ties prefer diag, then down, then right.
AlignPath best_alignment(const Tensor& d) {
  const Index n = d.dim(0), m = d.dim(1);
  if (n < 1 || m < 1) throw ContractError("otam_distance: empty distance matrix");
  Tensor cost({n, m});
  std::vector<int> parent(static_cast<size_t>(n * m), -1);  // 0 diag, 1 down, 2 right
  for (Index j = 0; j < m; ++j) cost[j] = d[j];
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < m; ++j) {
      if (i == 0 && j == 0) continue;
      Real best = Real(0);
      int par = -1;
      if (i > 0) {
        if (j > 0) {
          best = cost[(i - 1) * m + (j - 1)];
          par = 0;
          if (cost[(i - 1) * m + j] < best) {
            best = cost[(i - 1) * m + j];
            par = 1;
          }
        } else {
          best = cost[(i - 1) * m + j];
          par = 1;
        }
        if (j > 0 && cost[i * m + (j - 1)] < best) {
          best = cost[i * m + (j - 1)];
          par = 2;
        }
        cost[i * m + j] = d[i * m + j] + best;
        parent[static_cast<size_t>(i * m + j)] = par;
      } else {
        // Row 0: free entry at any column wins over accumulating rightward.
        const Real through = cost[j - 1] + d[j];
        if (through < d[j]) {
          cost[j] = through;
          parent[static_cast<size_t>(j)] = 2;
        }
      }
    }
  }
  Index end = 0;
  for (Index j = 1; j < m; ++j)
    if (cost[(n - 1) * m + j] < cost[(n - 1) * m + end]) end = j;

  AlignPath path;
  path.cost = cost[(n - 1) * m + end];
  Index i = n - 1, j = end;
  while (true) {
    path.cells.emplace_back(i, j);
    const int par = parent[static_cast<size_t>(i * m + j)];
    if (par < 0) break;
    if (par == 0) {
      --i;
      --j;
    } else if (par == 1) {
      --i;
    } else {
      --j;
    }
  }
  std::reverse(path.cells.begin(), path.cells.end());
  return path;
}

Tensor transpose2d(const Tensor& d) {
  const Index n = d.dim(0), m = d.dim(1);
  Tensor t({m, n});
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < m; ++j) t[j * n + i] = d[i * m + j];
  return t;
}

}  // namespace

Real otam_distance_value(const Tensor& d) {
  return (best_alignment(d).cost + best_alignment(transpose2d(d)).cost) / Real(2);
}

Var otam_distance(const Var& d) {
  require_rank(d.value(), 2, "otam_distance");
  AlignPath fwd = best_alignment(d.value());
  AlignPath bwd = best_alignment(transpose2d(d.value()));
  const Real val = (fwd.cost + bwd.cost) / Real(2);
  const Index m = d.value().dim(1);
  return ad::make_node(
      Tensor::scalar(val), {d.node()},
      [fwd, bwd, m](ad::Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        Tensor& g = n.inputs[0]->ensure_grad();
        const Real half = n.grad[0] / Real(2);
        for (const auto& [i, j] : fwd.cells) g[i * m + j] += half;
        for (const auto& [j, i] : bwd.cells) g[i * m + j] += half;  // transposed coordinates
      },
      "otam_distance");
}

// ---- prototypes and classification ----------------------------------------------

Var class_prototype(const std::vector<Var>& support_features) {
  if (support_features.empty()) throw ContractError("class_prototype: empty support set");
  Var acc = support_features[0];
  for (size_t k = 1; k < support_features.size(); ++k) acc = ad::add(acc, support_features[k]);
  return ad::scale(acc, Real(1) / static_cast<Real>(support_features.size()));
}

Var classify_query(const Var& query_features, const std::vector<Var>& prototypes, Metric metric,
                   Real temperature) {
  if (prototypes.empty()) throw ConfigError("classify_query: no prototypes");
  if (!(temperature > Real(0))) throw ConfigError("classify_query: temperature must be positive");
  std::vector<Var> logits;
  logits.reserve(prototypes.size());
  for (const Var& proto : prototypes) {
    Var d = frame_distance_matrix(query_features, proto);
    Var dist = metric == Metric::kBiMhm ? bimhm_distance(d) : otam_distance(d);
    logits.push_back(ad::scale(dist, Real(-1) / temperature));
  }
  return ad::stack_scalars(logits);
}

Var cross_entropy_mean(const Var& logits, const std::vector<Index>& labels) {
  require_rank(logits.value(), 2, "cross_entropy_mean");
  const Index b = logits.value().dim(0), n = logits.value().dim(1);
  if (static_cast<Index>(labels.size()) != b)
    throw DimensionError("cross_entropy_mean: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(b) + " rows");
  for (Index i = 0; i < b; ++i)
    if (labels[static_cast<size_t>(i)] < 0 || labels[static_cast<size_t>(i)] >= n)
      throw ContractError("cross_entropy_mean: label out of range");
  Real loss = Real(0);
  for (Index i = 0; i < b; ++i) {
    const Real* row = logits.value().data() + i * n;
    Real mx = row[0];
    for (Index j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    Real lse = Real(0);
    for (Index j = 0; j < n; ++j) lse += std::exp(row[j] - mx);
    lse = mx + std::log(lse);
    loss += lse - row[labels[static_cast<size_t>(i)]];
  }
  loss /= static_cast<Real>(b);
  return ad::make_node(
      Tensor::scalar(loss), {logits.node()},
      [b, n, labels](ad::Node& nd) {
        if (!nd.inputs[0]->requires_grad) return;
        const Tensor& lv = nd.inputs[0]->value;
        Tensor& g = nd.inputs[0]->ensure_grad();
        const Real go = nd.grad[0] / static_cast<Real>(b);
        for (Index i = 0; i < b; ++i) {
          const Real* row = lv.data() + i * n;
          Real mx = row[0];
          for (Index j = 1; j < n; ++j) mx = std::max(mx, row[j]);
          Real z = Real(0);
          for (Index j = 0; j < n; ++j) z += std::exp(row[j] - mx);
          for (Index j = 0; j < n; ++j) {
            const Real p = std::exp(row[j] - mx) / z;
            g[i * n + j] += go * (p - (j == labels[static_cast<size_t>(i)] ? Real(1) : Real(0)));
          }
        }
      },
      "cross_entropy_mean");
}

// ---- episode loss -----------------------------------------------------------------

Var episode_loss(ModelAssembly& model, const Episode& episode, const MatchingConfig& mcfg) {
  episode.validate();
  std::vector<Var> prototypes;
  prototypes.reserve(static_cast<size_t>(episode.way));
  for (Index c = 0; c < episode.way; ++c) {
    std::vector<Var> feats;
    for (Index k = 0; k < episode.shot; ++k) {
      const Video& v = episode.support[static_cast<size_t>(c * episode.shot + k)];
      if (v.label != c) throw ContractError("episode support not grouped by class");
      feats.push_back(model.forward_video(v.frames));
    }
    prototypes.push_back(class_prototype(feats));
  }
  std::vector<Var> logit_rows;
  std::vector<Index> labels;
  for (const Video& q : episode.query) {
    Var qf = model.forward_video(q.frames);
    logit_rows.push_back(classify_query(qf, prototypes, mcfg.metric, mcfg.temperature));
    labels.push_back(q.label);
  }
  // Assemble a (B,N) logits matrix from the per-query rows.
  std::vector<Var> flat;
  for (auto& row : logit_rows)
    for (Index j = 0; j < episode.way; ++j) flat.push_back(ad::slice_lastdim(row, j, j + 1));
  Var stacked = ad::concat_lastdim(flat);
  Var logits = ad::reshape(stacked, {static_cast<Index>(logit_rows.size()), episode.way});
  return cross_entropy_mean(logits, labels);
}

// ---- optimizer ----------------------------------------------------------------------

Adam::Adam(std::vector<Parameter*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (Parameter* p : params_) {
    if (!p->trainable) throw ContractError("Adam: received a frozen parameter");
    m_.push_back(Tensor::zeros(p->value.shape()));
    v_.push_back(Tensor::zeros(p->value.shape()));
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void Adam::step() {
  ++t_;
  const Real bc1 = Real(1) - std::pow(cfg_.beta1, static_cast<Real>(t_));
  const Real bc2 = Real(1) - std::pow(cfg_.beta2, static_cast<Real>(t_));
  for (size_t idx = 0; idx < params_.size(); ++idx) {
    Parameter* p = params_[idx];
    Tensor& m = m_[idx];
    Tensor& v = v_[idx];
    for (Index i = 0; i < p->value.size(); ++i) {
      const Real g = p->grad[i];
      m[i] = cfg_.beta1 * m[i] + (Real(1) - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (Real(1) - cfg_.beta2) * g * g;
      const Real mhat = m[i] / bc1;
      const Real vhat = v[i] / bc2;
      p->value[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
  }
}

// ---- training and evaluation -----------------------------------------------------------

TrainResult train_episodes(ModelAssembly& model, EpisodeSource& source, const AdamConfig& opt_cfg,
                           Index steps, const MatchingConfig& mcfg) {
  ParameterPartition part = model.partition_parameters();
  Adam opt(part.tunable, opt_cfg);
  TrainResult result;
  result.loss_trace.reserve(static_cast<size_t>(steps));
  for (Index step = 0; step < steps; ++step) {
    Episode ep = source.next();
    Var loss = episode_loss(model, ep, mcfg);
    const Real lv = loss.value()[0];
    if (!std::isfinite(lv))
      throw NumericError("train_episodes: non-finite loss at step " + std::to_string(step));
    opt.zero_grad();
    ad::backward(loss);
    opt.step();
    result.loss_trace.push_back(lv);
  }
  return result;
}

namespace {

double episode_accuracy(ModelAssembly& model, const Episode& ep, const MatchingConfig& mcfg) {
  ad::NoGradGuard no_grad;
  ep.validate();
  std::vector<Var> prototypes;
  for (Index c = 0; c < ep.way; ++c) {
    std::vector<Var> feats;
    for (Index k = 0; k < ep.shot; ++k)
      feats.push_back(model.forward_video(ep.support[static_cast<size_t>(c * ep.shot + k)].frames));
    prototypes.push_back(class_prototype(feats));
  }
  Index correct = 0;
  for (const Video& q : ep.query) {
    Var logits = classify_query(model.forward_video(q.frames), prototypes, mcfg.metric,
                                mcfg.temperature);
    Index best = 0;
    for (Index j = 1; j < ep.way; ++j)
      if (logits.value()[j] > logits.value()[best]) best = j;
    if (best == q.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ep.query.size());
}

}  // namespace

EvalResult evaluate(ModelAssembly& model, EpisodeSource& source, Index episode_count,
                    const MatchingConfig& mcfg, int worker_threads) {
  if (episode_count < 1) throw ContractError("evaluate: episode_count must be >= 1");
  EvalResult res;
  res.episode_count = episode_count;
  res.per_episode.assign(static_cast<size_t>(episode_count), 0.0);

  const int workers = std::max(1, worker_threads);
  if (workers == 1) {
    for (Index e = 0; e < episode_count; ++e) {
      Episode ep = source.episode_at(static_cast<std::uint64_t>(e));
      res.per_episode[static_cast<size_t>(e)] = episode_accuracy(model, ep, mcfg);
    }
  } else {
    std::vector<std::thread> pool;
    std::atomic<Index> cursor{0};
    for (int wkr = 0; wkr < workers; ++wkr) {
      pool.emplace_back([&]() {
        while (true) {
          const Index e = cursor.fetch_add(1);
          if (e >= episode_count) break;
          Episode ep = source.episode_at(static_cast<std::uint64_t>(e));
          res.per_episode[static_cast<size_t>(e)] = episode_accuracy(model, ep, mcfg);
        }
      });
    }
    for (auto& th : pool) th.join();
  }

  double sum = 0.0;
  for (double a : res.per_episode) sum += a;
  res.mean_accuracy = sum / static_cast<double>(episode_count);
  double var = 0.0;
  for (double a : res.per_episode) {
    const double dev = a - res.mean_accuracy;
    var += dev * dev;
  }
  if (episode_count > 1) {
    var /= static_cast<double>(episode_count - 1);
    res.ci95_halfwidth = 1.96 * std::sqrt(var / static_cast<double>(episode_count));
  } else {
    res.ci95_halfwidth = 0.0;
  }
  return res;
}

}  // namespace d2st
