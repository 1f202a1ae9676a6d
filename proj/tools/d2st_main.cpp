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

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "d2st/driver.hpp"

namespace {

using namespace d2st;

// Master seed fan-out: one flag drives the adapter, train and eval streams.
void apply_seed(RunConfig& cfg, std::uint64_t seed) {
  SeededRng rng(seed);
  cfg.adapter_seed = rng.next_u64();
  cfg.train_seed = rng.next_u64();
  cfg.eval_seed = rng.next_u64();
}

int dispatch(const std::string& cmd, RunConfig& cfg, const std::string& checkpoint,
             const std::string& input_video, Index topk) {
  if (cmd == "train") {
    TrainArtifacts art = cmd_train(cfg);
    std::cout << "checkpoint: " << art.checkpoint_path << "\n";
    std::cout << "loss trace: " << art.loss_trace_path << " (" << art.loss_trace.size()
              << " steps)\n";
    if (!art.loss_trace.empty())
      std::cout << "final loss: " << static_cast<double>(art.loss_trace.back()) << "\n";
  } else if (cmd == "eval") {
    EvalRecord rec = cmd_eval(cfg, checkpoint);
    std::cout << "accuracy: " << rec.accuracy << " +/- " << rec.ci95 << " over " << rec.episodes
              << " episodes\n";
    std::cout << "record: " << rec.record_path << "\n";
  } else if (cmd == "gradcheck") {
    GradcheckReport rep = cmd_gradcheck(cfg);
    for (const auto& e : rep.entries)
      std::cout << (e.pass ? "  pass  " : "  FAIL  ") << e.op << "  max_rel_err=" << e.max_rel_err
                << "\n";
    std::cout << "report: " << rep.report_path << " (" << rep.wallclock_s << " s)\n";
    if (!rep.all_pass) return 2;
  } else if (cmd == "bench") {
    BenchReport rep = cmd_bench(cfg);
    std::cout << "label tokens M flop_ratio ms_dense ms_sparse\n";
    for (const auto& r : rep.rows)
      std::cout << r.label << " " << r.tokens << " " << r.points << " "
                << r.flops_dense / r.flops_sparse << " " << r.ms_dense << " " << r.ms_sparse
                << "\n";
    std::cout << "dense-vs-sparse all-token match error: " << rep.dense_match_error << "\n";
    std::cout << "table: " << rep.csv_path << "\n";
  } else if (cmd == "viz") {
    VizExport exp = cmd_viz(cfg, checkpoint, input_video, topk);
    std::cout << "exported " << exp.rows.size() << " points to " << exp.csv_path << "\n";
    for (const auto& [key, sum] : exp.pathway_importance_sum)
      std::cout << key << " importance sum " << sum << " (tokens " << exp.token_count << ")\n";
  } else if (cmd == "gen-data") {
    std::cout << "episode directory: " << cmd_gendata(cfg) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-pathway deformable spatio-temporal adapter workbench"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  std::string config_path;
  std::string checkpoint;
  std::string input_video;
  std::string out_dir;
  std::string metric;
  std::uint64_t seed = 0;
  bool seed_set = false;
  Index episodes = 0;
  Index topk = 50;

  app.add_option("--config", config_path, "JSON run configuration file");
  app.add_option("--seed", seed, "master seed for adapter/train/eval streams")
      ->each([&seed_set](const std::string&) { seed_set = true; });
  app.add_option("--episodes", episodes, "evaluation episode count");
  app.add_option("--metric", metric, "matching metric: bimhm or otam");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--checkpoint", checkpoint, "checkpoint path");
  app.add_option("--topk", topk, "points per pathway in viz export (0 = all)");

  for (const char* name : {"train", "eval", "gradcheck", "bench", "viz", "gen-data"})
    app.add_subcommand(name);

  CLI11_PARSE(app, argc, argv);

  try {
    d2st::RunConfig cfg =
        config_path.empty() ? d2st::default_run_config() : d2st::RunConfig::from_file(config_path);
    if (seed_set) apply_seed(cfg, seed);
    if (episodes > 0) cfg.episode_count = episodes;
    if (!metric.empty()) cfg.metric = d2st::metric_from_name(metric);
    if (!out_dir.empty()) {
      cfg.out_dir = out_dir;
    } else if (const char* env = std::getenv("D2ST_OUT_DIR"); env && *env && cfg.out_dir == "out") {
      cfg.out_dir = env;
    }
    return dispatch(app.get_subcommands().front()->get_name(), cfg, checkpoint, input_video, topk);
  } catch (const d2st::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
