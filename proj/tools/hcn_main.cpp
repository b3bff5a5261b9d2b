// Copyright 2026 The HCN Authors
// SPDX-License-Identifier: Apache-2.0
//
// hcn: train, evaluate and run hierarchical co-occurrence networks.
// Exit status 0 on success, 1 on usage or config errors, 2 on runtime failure.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"

#include "hcn/cli.hpp"
#include "hcn/config.hpp"
#include "hcn/error.hpp"

namespace {

namespace fs = std::filesystem;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool with_config) {
  if (with_config) cmd->add_option("--config", c.config, "run config (JSON)")->required();
  cmd->add_option("--seed", c.seed, "override the config seed");
  cmd->add_option("--out", c.out, "output directory (default: the config's output_dir)");
}

hcn::RunConfig load(const Common& c) {
  hcn::RunConfig cfg = hcn::load_run_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.output_dir = c.out;
  return cfg;
}

void emit(const std::string& text, const std::string& out_dir, const std::string& file) {
  if (out_dir.empty()) {
    std::cout << text;
    std::cout.flush();
    return;
  }
  fs::create_directories(out_dir);
  const fs::path path = fs::path(out_dir) / file;
  std::FILE* f = std::fopen(path.string().c_str(), "wb");
  if (f == nullptr) throw hcn::Error("cannot write " + path.string());
  std::fwrite(text.data(), 1, text.size(), f);
  std::fclose(f);
  spdlog::info("wrote {}", path.string());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical co-occurrence networks for skeleton action recognition and detection"};
  app.require_subcommand(1);

  Common c;
  std::string checkpoint, data, split = "val";
  std::size_t top_k = 5;

  CLI::App* train = app.add_subcommand("train", "train a recognition or detection model");
  add_common(train, c, true);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint (JSON report on stdout)");
  add_common(eval, c, false);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--data", data, "JSON Lines data (default: a split of the checkpoint config)");
  eval->add_option("--split", split, "train or val, when --data is not given");

  CLI::App* predict = app.add_subcommand("predict", "top-k classes for each sample");
  add_common(predict, c, false);
  predict->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  predict->add_option("--data", data, "JSON Lines samples")->required();
  predict->add_option("--top-k", top_k, "classes to report per sample");

  CLI::App* detect = app.add_subcommand("detect", "temporal detections as JSON Lines");
  add_common(detect, c, false);
  detect->add_option("--checkpoint", checkpoint, "detection checkpoint file")->required();
  detect->add_option("--data", data, "JSON Lines sequences")->required();

  CLI::App* ablate = app.add_subcommand("ablate", "variant x fusion comparison over seeds");
  add_common(ablate, c, true);

  CLI::App* synth = app.add_subcommand("synth", "write the configured synthetic dataset");
  add_common(synth, c, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    hcn::init_logging();
    if (train->parsed()) {
      const hcn::TrainSummary s = hcn::cmd_train(load(c));
      std::cout << hcn::summary_json(s) << "\n";
    } else if (eval->parsed()) {
      const std::optional<fs::path> d = data.empty() ? std::nullopt : std::optional<fs::path>(data);
      emit(hcn::eval_report_json(hcn::cmd_eval(checkpoint, d, split)) + "\n", c.out, "eval.json");
    } else if (predict->parsed()) {
      emit(hcn::predictions_jsonl(hcn::cmd_predict(checkpoint, data, top_k)), c.out,
           "predictions.jsonl");
    } else if (detect->parsed()) {
      emit(hcn::cmd_detect(checkpoint, data), c.out, "detections.jsonl");
    } else if (ablate->parsed()) {
      hcn::RunConfig cfg = load(c);
      // --seed shifts the whole seed list so the seed count is kept.
      if (c.seed) {
        for (std::size_t i = 0; i < cfg.ablation.seeds.size(); ++i) cfg.ablation.seeds[i] = *c.seed + i;
      }
      std::cout << hcn::ablation_csv(hcn::cmd_ablate(cfg));
    } else if (synth->parsed()) {
      hcn::RunConfig cfg = hcn::load_run_config(c.config);
      if (!c.out.empty()) cfg.output_dir = c.out;
      // Here --seed picks the generator seed.
      if (c.seed && cfg.data.synth) cfg.data.synth->seed = *c.seed;
      if (c.seed && cfg.data.detection_synth) cfg.data.detection_synth->seed = *c.seed;
      const fs::path path = cfg.output_dir / "synth.jsonl";
      const std::size_t n = hcn::cmd_synth(cfg, path);
      spdlog::info("wrote {} samples to {}", n, path.string());
    }
  } catch (const hcn::UsageError& e) {
    std::cerr << "hcn: error: " << e.what() << "\n";
    return 1;
  } catch (const hcn::ConfigError& e) {
    std::cerr << "hcn: error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "hcn: runtime error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
