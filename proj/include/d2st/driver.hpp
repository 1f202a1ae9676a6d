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

#include <map>
#include <string>

#include "d2st/bench.hpp"
#include "d2st/checkpoint.hpp"
#include "d2st/gradcheck.hpp"

namespace d2st {

struct TrainArtifacts {
  std::string checkpoint_path;
  std::string loss_trace_path;
  std::vector<Real> loss_trace;
  std::uint64_t frozen_digest = 0;
};

TrainArtifacts cmd_train(const RunConfig& cfg);

struct EvalRecord {
  double accuracy = 0;
  double ci95 = 0;
  Index episodes = 0;
  double wallclock_s = 0;
  std::string record_path;
};

// checkpoint_path may be empty: evaluates the freshly initialized model.
EvalRecord cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path);

struct GradcheckReport {
  std::vector<GradCheckEntry> entries;
  bool all_pass = false;
  double wallclock_s = 0;
  std::string report_path;
};

GradcheckReport cmd_gradcheck(const RunConfig& cfg);

struct BenchReport {
  std::vector<BenchRow> rows;
  double dense_match_error = 0;  // aDSTA vs dense attention, all-token grid
  std::string csv_path;
};

BenchReport cmd_bench(const RunConfig& cfg);

struct VizRow {
  Index stage = 0;
  std::string pathway;
  Index point = 0;
  double t = 0, h = 0, w = 0;
  double importance = 0;
  Index nearest_frame = 0;
};

struct VizExport {
  std::vector<VizRow> rows;  // grouped by (stage, pathway), sorted by importance
  std::map<std::string, double> pathway_importance_sum;  // "stage/pathway" -> sum over all M points
  Index token_count = 0;
  std::string csv_path;
};

// input_video_path may be empty: a deterministic synthetic video is rendered
// from the config. top_k == 0 exports all points.
VizExport cmd_viz(const RunConfig& cfg, const std::string& checkpoint_path,
                  const std::string& input_video_path, Index top_k);

std::string cmd_gendata(const RunConfig& cfg);

}  // namespace d2st
