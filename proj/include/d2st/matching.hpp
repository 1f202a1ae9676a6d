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

#include <cstdint>
#include <vector>

#include "d2st/backbone.hpp"

namespace d2st {

// One video: frames in [0,1] with shape (T, H_img, W_img, 3).
struct Video {
  Tensor frames;
  Index label = 0;
  std::uint64_t seed = 0;
};

using VideoSample = Video;

// N-way K-shot task instance. Labels are episode-local in [0, way).
struct Episode {
  Index way = 0;
  Index shot = 0;
  Index queries_per_class = 0;
  std::vector<Video> support;  // way*shot entries, grouped by class
  std::vector<Video> query;    // way*queries_per_class entries

  void validate() const;
};

class EpisodeSource {
 public:
  virtual ~EpisodeSource() = default;
  virtual Episode next() = 0;
  // Random access with a derived seed; evaluation results are then
  // independent of worker count.
  virtual Episode episode_at(std::uint64_t index) = 0;
};

enum class Metric { kBiMhm, kOtam };

const char* metric_name(Metric m);
Metric metric_from_name(const std::string& name);

// ---- differentiable matching ops ------------------------------------------

// D[i][j] = ||a_i - b_j||_2 for row features.
ad::Var frame_distance_matrix(const ad::Var& a, const ad::Var& b);

// Bidirectional mean of row-wise and column-wise minima:
// (1/(2Tq))·sum_i min_j D[i][j] + (1/(2Tc))·sum_j min_i D[i][j].
ad::Var bimhm_distance(const ad::Var& d);

// Monotone alignment cost with relaxed start/end columns, averaged with the
// transpose-path cost. Hard minima throughout; ties break deterministically.
ad::Var otam_distance(const ad::Var& d);

Real bimhm_distance_value(const Tensor& d);
Real otam_distance_value(const Tensor& d);

// Frame-wise mean of the K support feature sequences of one class.
ad::Var class_prototype(const std::vector<ad::Var>& support_features);

// logit_c = -distance(query, prototype_c) / temperature.
ad::Var classify_query(const ad::Var& query_features, const std::vector<ad::Var>& prototypes,
                       Metric metric, Real temperature);

// Mean cross-entropy of softmax(logits) rows against labels.
ad::Var cross_entropy_mean(const ad::Var& logits, const std::vector<Index>& labels);

// ---- episodic training and evaluation --------------------------------------

struct MatchingConfig {
  Metric metric = Metric::kBiMhm;
  Real temperature = Real(1);
};

ad::Var episode_loss(ModelAssembly& model, const Episode& episode, const MatchingConfig& mcfg);

struct AdamConfig {
  Real learning_rate = Real(1e-3);
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real epsilon = Real(1e-8);
};

// Adaptive first-order optimizer with per-parameter moment estimates and
// bias correction.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig cfg);

  void zero_grad();
  void step();
  Index step_count() const { return t_; }

 private:
  std::vector<Parameter*> params_;
  AdamConfig cfg_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  Index t_ = 0;
};

struct TrainResult {
  std::vector<Real> loss_trace;
};

TrainResult train_episodes(ModelAssembly& model, EpisodeSource& source, const AdamConfig& opt_cfg,
                           Index steps, const MatchingConfig& mcfg);

struct EvalResult {
  double mean_accuracy = 0.0;
  double ci95_halfwidth = 0.0;
  Index episode_count = 0;
  std::vector<double> per_episode;
};

EvalResult evaluate(ModelAssembly& model, EpisodeSource& source, Index episode_count,
                    const MatchingConfig& mcfg, int worker_threads = 1);

}  // namespace d2st
