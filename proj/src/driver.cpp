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

#include "d2st/driver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "d2st/io.hpp"
#include "d2st/version.hpp"

namespace d2st {

namespace {

namespace fs = std::filesystem;

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

std::string out_path(const RunConfig& cfg, const std::string& file) {
  fs::create_directories(cfg.out_dir);
  return (fs::path(cfg.out_dir) / file).string();
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot write '" + path + "'");
  os << content;
}

std::string fmt_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

TrainArtifacts cmd_train(const RunConfig& cfg) {
  cfg.validate();
  ModelAssembly model = build_assembly(cfg);
  SynthEpisodeSource source(cfg.class_pool(), cfg.way, cfg.shot, cfg.queries_per_class,
                            cfg.train_seed, cfg.geometry());
  MatchingConfig mcfg{cfg.metric, cfg.temperature};

  TrainArtifacts art;
  art.frozen_digest = model.frozen_digest();
  TrainResult result = train_episodes(model, source, cfg.optimizer, cfg.train_steps, mcfg);
  art.loss_trace = result.loss_trace;
  if (model.frozen_digest() != art.frozen_digest)
    throw ContractError("frozen backbone changed during training");

  art.checkpoint_path = out_path(cfg, "checkpoint.d2st");
  save_checkpoint(art.checkpoint_path, cfg, model);

  std::string trace = "step,loss\n";
  for (size_t i = 0; i < art.loss_trace.size(); ++i)
    trace += std::to_string(i) + "," + fmt_real(static_cast<double>(art.loss_trace[i])) + "\n";
  art.loss_trace_path = out_path(cfg, "loss_trace.csv");
  write_text(art.loss_trace_path, trace);
  return art;
}

EvalRecord cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path) {
  cfg.validate();
  ModelAssembly model = build_assembly(cfg);
  if (!checkpoint_path.empty()) load_checkpoint_into(checkpoint_path, cfg, model);

  SynthEpisodeSource source(cfg.class_pool(), cfg.way, cfg.shot, cfg.queries_per_class, cfg.eval_seed,
                            cfg.geometry());
  MatchingConfig mcfg{cfg.metric, cfg.temperature};

  const double t0 = now_seconds();
  EvalResult res = evaluate(model, source, cfg.episode_count, mcfg, cfg.eval_workers);
  const double elapsed = now_seconds() - t0;

  EvalRecord rec;
  rec.accuracy = res.mean_accuracy;
  rec.ci95 = res.ci95_halfwidth;
  rec.episodes = res.episode_count;
  rec.wallclock_s = elapsed;

  std::string body;
  body += "record=eval\n";
  body += "accuracy=" + fmt_real(rec.accuracy) + "\n";
  body += "ci95=" + fmt_real(rec.ci95) + "\n";
  body += "episodes=" + std::to_string(rec.episodes) + "\n";
  body += "metric=" + std::string(metric_name(cfg.metric)) + "\n";
  body += "family=" + std::string(family_name(cfg.episode_family)) + "\n";
  body += "checkpoint=" + (checkpoint_path.empty() ? std::string("<init>") : checkpoint_path) + "\n";
  body += "source_digest=" + std::string(kSourceDigest) + "\n";
  body += "config=" + cfg.to_json() + "\n";
  body += "wallclock_s=" + fmt_real(rec.wallclock_s) + "\n";
  rec.record_path = out_path(cfg, "eval_record.txt");
  write_text(rec.record_path, body);
  return rec;
}

GradcheckReport cmd_gradcheck(const RunConfig& cfg) {
  GradcheckReport report;
  const double t0 = now_seconds();
  report.entries = run_gradcheck(cfg.adapter_seed);
  report.wallclock_s = now_seconds() - t0;
  report.all_pass = true;
  std::string body = "op,max_rel_err,tolerance,status\n";
  for (const auto& e : report.entries) {
    report.all_pass = report.all_pass && e.pass;
    body += e.op + "," + fmt_real(e.max_rel_err) + "," + fmt_real(e.tolerance) + "," +
            (e.pass ? "pass" : "FAIL") + "\n";
  }
  report.report_path = out_path(cfg, "gradcheck.csv");
  write_text(report.report_path, body);
  return report;
}

namespace {

double median_ms(const std::vector<double>& samples) {
  std::vector<double> s = samples;
  std::sort(s.begin(), s.end());
  const size_t n = s.size();
  return n % 2 ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
}

template <typename F>
double time_median_ms(F&& fn, int runs) {
  std::vector<double> ms;
  for (int r = 0; r < runs; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return median_ms(ms);
}

}  // namespace

BenchReport cmd_bench(const RunConfig& cfg) {
  BenchReport report;
  SeededRng rng(cfg.adapter_seed ^ 0xbe9cull);
  constexpr int kRuns = 11;

  struct Case {
    std::array<Index, 3> vol;
    Index channels;
    SamplingKernel kernel;
  };
  const std::vector<Case> cases = {
      {{4, 4, 4}, 16, {2, 2}},
      {{8, 8, 8}, 32, {2, 4}},
      {{8, 8, 8}, 32, {8, 2}},
      {{8, 16, 16}, 32, {2, 4}},
  };

  for (const auto& c : cases) {
    const Index tokens = c.vol[0] * c.vol[1] * c.vol[2];
    const Index m = c.kernel.point_count();
    AdstaConfig acfg;
    acfg.variant = c.kernel.n_t == c.kernel.n_s
                       ? AdstaVariant::kUniform
                       : (c.kernel.n_s > c.kernel.n_t ? AdstaVariant::kSpatial : AdstaVariant::kTemporal);
    acfg.kernel = c.kernel;
    AdstaModule module(c.channels, acfg, c.vol);
    SeededRng mrng = rng.fork(tokens);
    module.init_params(mrng);
    const Tensor features = mrng.normal_tensor({c.vol[0], c.vol[1], c.vol[2], c.channels}, 0, 1);

    BenchRow row;
    row.label = std::to_string(c.vol[0]) + "x" + std::to_string(c.vol[1]) + "x" +
                std::to_string(c.vol[2]) + "_m" + std::to_string(m);
    row.tokens = tokens;
    row.points = m;
    row.channels = c.channels;
    row.flops_dense = attention_core_flops_dense(tokens, c.channels);
    row.flops_sparse = attention_core_flops_sparse(tokens, m, c.channels);
    row.ms_dense = time_median_ms(
        [&]() {
          Tensor out = dense_attention_reference(features, module.wq.value, module.wk.value,
                                                 module.wv.value, module.wo.value, 1);
        },
        kRuns);
    row.ms_sparse = time_median_ms(
        [&]() {
          ad::NoGradGuard ng;
          ad::Var out = module.forward(ad::Var::constant(features));
        },
        kRuns);
    AdapterConfig acfg_full;
    acfg_full.spatial = acfg;
    acfg_full.temporal = acfg;
    row.adapter_params = count_tunable_params(acfg_full, c.channels * 4);
    report.rows.push_back(row);
  }

  // Correctness cross-check: all-token grid with zero offsets must reproduce
  // dense attention over the tokens.
  {
    const std::array<Index, 3> vol{4, 4, 4};
    const Index channels = 8;
    AdstaConfig acfg;
    acfg.variant = AdstaVariant::kUniform;
    acfg.kernel = SamplingKernel{4, 4};
    acfg.use_dpe = false;
    AdstaModule module(channels, acfg, vol);
    SeededRng mrng = rng.fork(999);
    module.init_params(mrng);  // offset head stays zero: no deformation
    const Tensor features = mrng.normal_tensor({vol[0], vol[1], vol[2], channels}, 0, 1);
    ad::NoGradGuard ng;
    ad::Var sparse = module.forward(ad::Var::constant(features));
    Tensor dense = dense_attention_reference(features, module.wq.value, module.wk.value,
                                             module.wv.value, module.wo.value, 1);
    double worst = 0;
    for (Index i = 0; i < dense.size(); ++i)
      worst = std::max(worst, static_cast<double>(std::abs(dense[i] - sparse.value()[i])));
    report.dense_match_error = worst;
  }

  std::string body =
      "label,tokens,points,channels,flops_dense,flops_sparse,flop_ratio,ms_dense,ms_sparse,adapter_params\n";
  for (const auto& r : report.rows) {
    body += r.label + "," + std::to_string(r.tokens) + "," + std::to_string(r.points) + "," +
            std::to_string(r.channels) + "," + fmt_real(r.flops_dense) + "," +
            fmt_real(r.flops_sparse) + "," + fmt_real(r.flops_dense / r.flops_sparse) + "," +
            fmt_real(r.ms_dense) + "," + fmt_real(r.ms_sparse) + "," +
            std::to_string(r.adapter_params) + "\n";
  }
  body += "# dense_match_error=" + fmt_real(report.dense_match_error) + "\n";
  report.csv_path = out_path(cfg, "bench.csv");
  write_text(report.csv_path, body);
  return report;
}

VizExport cmd_viz(const RunConfig& cfg, const std::string& checkpoint_path,
                  const std::string& input_video_path, Index top_k) {
  cfg.validate();
  if (cfg.adapter.pathway_kind != PathwayKind::kAdsta)
    throw ConfigError("cmd_viz requires aDSTA pathways");
  ModelAssembly model = build_assembly(cfg);
  if (!checkpoint_path.empty()) load_checkpoint_into(checkpoint_path, cfg, model);

  Tensor frames;
  if (input_video_path.empty()) {
    SeededRng vrng(cfg.eval_seed ^ 0x71deull);
    VideoSample sample = render_video(cfg.class_pool().front(), vrng, cfg.geometry());
    frames = sample.frames;
  } else {
    TensorArchive arc = load_archive(input_video_path);
    const Tensor* t = arc.find("frames");
    if (!t) throw ConfigError("'" + input_video_path + "' holds no 'frames' tensor");
    frames = *t;
  }

  std::map<Index, AdapterTraces> traces;
  {
    ad::NoGradGuard ng;
    model.forward_video(frames, &traces);
  }

  VizExport exp;
  exp.token_count = cfg.backbone.frames * cfg.backbone.grid_h * cfg.backbone.grid_w;
  std::string body = "stage,pathway,point,t,h,w,importance,nearest_frame\n";
  for (auto& [stage, tr] : traces) {
    auto emit = [&](const char* pathway, const AdstaTrace& a) {
      const Index m = a.importance.dim(0);
      double sum = 0;
      std::vector<Index> order(static_cast<size_t>(m));
      for (Index i = 0; i < m; ++i) {
        order[static_cast<size_t>(i)] = i;
        sum += static_cast<double>(a.importance[i]);
      }
      std::stable_sort(order.begin(), order.end(), [&](Index lhs, Index rhs) {
        return a.importance[lhs] > a.importance[rhs];
      });
      exp.pathway_importance_sum["stage" + std::to_string(stage) + "/" + pathway] = sum;
      const Index limit = top_k > 0 ? std::min(top_k, m) : m;
      for (Index r = 0; r < limit; ++r) {
        const Index p = order[static_cast<size_t>(r)];
        VizRow row;
        row.stage = stage;
        row.pathway = pathway;
        row.point = p;
        row.t = static_cast<double>(a.coords[p * 3 + 0]);
        row.h = static_cast<double>(a.coords[p * 3 + 1]);
        row.w = static_cast<double>(a.coords[p * 3 + 2]);
        row.importance = static_cast<double>(a.importance[p]);
        row.nearest_frame = std::min(cfg.backbone.frames - 1,
                                     std::max(Index(0), static_cast<Index>(std::llround(row.t))));
        exp.rows.push_back(row);
        body += std::to_string(row.stage) + "," + row.pathway + "," + std::to_string(row.point) +
                "," + fmt_real(row.t) + "," + fmt_real(row.h) + "," + fmt_real(row.w) + "," +
                fmt_real(row.importance) + "," + std::to_string(row.nearest_frame) + "\n";
      }
    };
    if (tr.spatial) emit("spatial", *tr.spatial);
    if (tr.temporal) emit("temporal", *tr.temporal);
  }
  for (const auto& [key, sum] : exp.pathway_importance_sum)
    body += "# importance_sum " + key + "=" + fmt_real(sum) + " tokens=" +
            std::to_string(exp.token_count) + "\n";
  exp.csv_path = out_path(cfg, "viz_points.csv");
  write_text(exp.csv_path, body);
  return exp;
}

std::string cmd_gendata(const RunConfig& cfg) {
  cfg.validate();
  SeededRng rng(cfg.train_seed);
  Episode ep = sample_episode(cfg.class_pool(), cfg.way, cfg.shot, cfg.queries_per_class, rng,
                              cfg.geometry());
  const std::string dir = out_path(cfg, "episode_" + std::to_string(cfg.train_seed));
  export_episode(ep, cfg.class_pool(), dir);
  return dir;
}

}  // namespace d2st
