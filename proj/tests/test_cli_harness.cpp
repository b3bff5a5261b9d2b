// Copyright 2026 The HCN Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "hcn/checkpoint.hpp"
#include "hcn/cli.hpp"
#include "hcn/dataset_io.hpp"
#include "hcn/error.hpp"
#include "hcn/synth.hpp"

using namespace hcn;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "hcn_cli_test" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::size_t lines(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

const char* kTiny = R"({
  "task": "recognize",
  "seed": 3,
  "model": {"joints": 6, "frames": 16, "classes": 3, "max_persons": 1, "dropout": 0.2,
            "channels": {"conv1": 8, "conv2": 8, "conv3": 8, "conv4": 8, "conv5": 16, "conv6": 16, "fc7": 16}},
  "training": {"batch_size": 8, "total_steps": 12, "eval_every": 5},
  "data": {"synth": {"classes": 3, "samples_per_class": 6, "frames": 20, "joints": 6}}
})";

RunConfig tiny(const fs::path& out) {
  RunConfig c = parse_run_config(kTiny);
  c.output_dir = out;
  return c;
}

RunConfig tiny_detect(const fs::path& out) {
  RunConfig c = parse_run_config(R"({
    "task": "detect", "seed": 1,
    "model": {"joints": 6, "classes": 2,
              "channels": {"conv1": 8, "conv2": 8, "conv3": 8, "conv4": 8, "conv5": 8, "conv6": 8, "fc7": 8}},
    "detection": {"scales": [30, 60], "rpn_channels": 8, "head_hidden": 8},
    "training": {"total_steps": 3, "eval_every": 3},
    "data": {"detection_synth": {"sequences": 1, "classes": 2, "joints": 6, "frames": 160,
                                 "actions_per_sequence": 2, "min_action": 30, "max_action": 50}}
  })");
  c.output_dir = out;
  return c;
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(HCN_BINARY) + " " + args + " >" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config validation") {
  CHECK_NOTHROW(parse_run_config(kTiny));
  auto j = nlohmann::json::parse(kTiny);
  j["modle"] = 1;
  try {
    parse_run_config(j.dump());
    FAIL("unknown key accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("modle") != std::string::npos);
  }
  j = nlohmann::json::parse(kTiny);
  j["training"]["batchsize"] = 4;
  CHECK_THROWS_AS(parse_run_config(j.dump()), ConfigError);
  j = nlohmann::json::parse(kTiny);
  j.erase("seed");
  try {
    parse_run_config(j.dump());
    FAIL("missing seed accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("seed") != std::string::npos);
  }
  j = nlohmann::json::parse(kTiny);
  j["data"] = {{"path", "/nonexistent/data.jsonl"}};
  CHECK_THROWS_AS(parse_run_config(j.dump()), ConfigError);
  CHECK_NOTHROW(parse_run_config(j.dump(), {}, false));
  j = nlohmann::json::parse(kTiny);
  j["model"]["fusion"] = "late_median";
  CHECK_THROWS_AS(parse_run_config(j.dump()), ConfigError);
  CHECK_THROWS_AS(parse_run_config("{ not json"), ConfigError);

  const RunConfig c = parse_run_config(kTiny);
  const std::string canon = run_config_json(c);
  CHECK(run_config_json(parse_run_config(canon)) == canon);
}

TEST_CASE("checkpoint round trip is bit exact") {
  const fs::path dir = scratch("ckpt");
  RunConfig cfg = tiny(dir);
  Rng rng(cfg.seed);
  HcnModel m = build_model(cfg.model, rng);
  const DataSplits data = load_data(cfg);
  TrainState st = make_train_state(m, cfg.seed);
  train_loop(m, data.train, data.val, st, Schedule{8, 4, 4});
  const EvalResult before = evaluate(m, data.val, 4);

  save_checkpoint(make_checkpoint(cfg, m.params, st, {"accuracy", 0.5, 4}), dir / "a.ckpt");
  const Checkpoint back = load_checkpoint(dir / "a.ckpt");
  REQUIRE(back.parameters.size() == m.params.size());
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    CHECK(back.parameters[i].first == m.params[i].name);
    CHECK(back.parameters[i].second == m.params[i].value);
  }
  CHECK(back.state.step == st.step);
  CHECK(back.state.seed == st.seed);
  CHECK(back.state.first_moment == st.first_moment);
  CHECK(back.state.second_moment == st.second_moment);
  CHECK(back.state.weight_decay == st.weight_decay);
  CHECK(back.best.value == 0.5);
  CHECK(back.best.step == 4);
  CHECK(run_config_json(back.config) == run_config_json(cfg));

  Rng other(99);
  HcnModel fresh = build_model(back.config.model, other);
  restore_parameters(back, fresh.params);
  const EvalResult after = evaluate(fresh, data.val, 4);
  CHECK(after.loss == before.loss);
  CHECK(after.accuracy == before.accuracy);
  CHECK(after.predictions == before.predictions);

  // Resuming from the checkpoint continues the same trajectory.
  TrainState resumed = back.state;
  TrainState cont = st;
  train_loop(m, data.train, data.val, cont, Schedule{8, 3, 3});
  train_loop(fresh, data.train, data.val, resumed, Schedule{8, 3, 3});
  for (std::size_t i = 0; i < m.params.size(); ++i) CHECK(fresh.params[i].value == m.params[i].value);

  // Saving what was loaded reproduces the file byte for byte.
  save_checkpoint(back, dir / "b.ckpt");
  CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));

  std::string bytes = slurp(dir / "a.ckpt");
  bytes.replace(0, 16, "hcn-checkpoint 7");
  spit(dir / "v7.ckpt", bytes);
  CHECK_THROWS_AS(load_checkpoint(dir / "v7.ckpt"), DataError);
  spit(dir / "short.ckpt", slurp(dir / "a.ckpt").substr(0, 400));
  CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), DataError);
  spit(dir / "junk.ckpt", "hello");
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), DataError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), Error);

  RunConfig wide = cfg;
  wide.model.channels.fc7 = 32;
  Rng r2(0);
  HcnModel mismatch = build_model(wide.model, r2);
  CHECK_THROWS_AS(restore_parameters(back, mismatch.params), ConfigError);
}

TEST_CASE("train writes artifacts and eval reproduces them") {
  const fs::path dir = scratch("train");
  const TrainSummary s = cmd_train(tiny(dir));
  for (const char* f : {"metrics.csv", "best.ckpt", "final.ckpt", "config.json", "summary.json"})
    CHECK_MESSAGE(fs::exists(dir / f), f);
  const std::string csv = slurp(dir / "metrics.csv");
  CHECK(csv.rfind("step,split,loss,accuracy,mAP,learning_rate\n", 0) == 0);
  const MetricsHistory h = parse_metrics_csv(csv);
  CHECK(h.size() == 6);
  CHECK(s.steps == 12);

  const auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
  for (const char* k : {"best_acc", "best_step", "final_acc", "steps", "wall_time"}) CHECK(summary.contains(k));
  CHECK(summary["best_acc"].get<double>() == s.best);

  const EvalReport fin = cmd_eval(dir / "final.ckpt", std::nullopt, "val");
  CHECK(fin.value == s.final_value);
  CHECK(fin.loss == h.back().loss);
  const EvalReport best = cmd_eval(dir / "best.ckpt", std::nullopt, "val");
  CHECK(best.value == s.best);
  CHECK(nlohmann::json::parse(eval_report_json(fin))["accuracy"].get<double>() == fin.value);

  // Same config and seed: identical metrics.
  const fs::path again = scratch("train_again");
  cmd_train(tiny(again));
  CHECK(slurp(again / "metrics.csv") == csv);
  const Checkpoint c1 = load_checkpoint(dir / "final.ckpt"), c2 = load_checkpoint(again / "final.ckpt");
  CHECK(c1.parameters == c2.parameters);
  CHECK(c1.state.first_moment == c2.state.first_moment);
  RunConfig other = tiny(scratch("train_other"));
  other.seed = 4;
  cmd_train(other);
  CHECK(slurp(other.output_dir / "metrics.csv") != csv);
}

TEST_CASE("predict and external data") {
  const fs::path dir = scratch("predict");
  RunConfig cfg = tiny(dir);
  cmd_train(cfg);
  CHECK(cmd_synth(cfg, dir / "samples.jsonl") == 18);
  const auto preds = cmd_predict(dir / "final.ckpt", dir / "samples.jsonl", 3);
  REQUIRE(preds.size() == 18);
  for (const Prediction& p : preds) {
    REQUIRE(p.top.size() == 3);
    double sum = 0.0;
    for (const auto& [cls, prob] : p.top) sum += prob;
    CHECK(std::fabs(sum - 1.0) < 1e-6);
    CHECK(p.top[0].second >= p.top[1].second);
    CHECK(p.top[1].second >= p.top[2].second);
  }
  CHECK(lines(predictions_jsonl(preds)) == 18);
  CHECK(cmd_predict(dir / "final.ckpt", dir / "samples.jsonl", 1)[0].top.size() == 1);

  const EvalReport all = cmd_eval(dir / "final.ckpt", dir / "samples.jsonl");
  CHECK(all.samples == 18);

  // Unlabeled samples can be predicted but not evaluated.
  Dataset unlabeled = load_jsonl(dir / "samples.jsonl");
  for (auto& x : unlabeled) x.label.reset();
  save_jsonl(unlabeled, dir / "unlabeled.jsonl");
  CHECK(cmd_predict(dir / "final.ckpt", dir / "unlabeled.jsonl", 2).size() == 18);
  CHECK_THROWS_AS(cmd_eval(dir / "final.ckpt", dir / "unlabeled.jsonl"), DataError);

  // Data with a different joint count is rejected with a message.
  SynthSpec s;
  s.classes = 3;
  s.samples_per_class = 1;
  s.joints = 8;
  save_jsonl(synth_generate(s), dir / "wrong.jsonl");
  try {
    cmd_eval(dir / "final.ckpt", dir / "wrong.jsonl");
    FAIL("mismatched data accepted");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("joints") != std::string::npos);
  }
}

TEST_CASE("ablation table schema") {
  const fs::path dir = scratch("ablate");
  RunConfig cfg = tiny(dir);
  cfg.model.max_persons = 2;
  cfg.data.synth->persons = 2;
  cfg.training.total_steps = 2;
  cfg.training.eval_every = 2;
  const auto cells = cmd_ablate(cfg);
  CHECK(cells.size() == 8);
  const std::string table = slurp(dir / "ablation.csv");
  CHECK(table.rfind("variant,fusion,n_seeds,mean_accuracy,std_accuracy,delta_vs_local\n", 0) == 0);
  CHECK(lines(table) == 9);
  CHECK(lines(slurp(dir / "ablation_runs.csv")) == 25);
  for (const AblationCell& c : cells) {
    CHECK(c.n_seeds == 3);
    CHECK(std::isfinite(c.mean));
    CHECK(c.std >= 0.0);
    for (const AblationCell& o : cells)
      if (o.fusion == c.fusion && o.variant != c.variant) {
        const double g = c.variant == Variant::kGlobal ? c.mean : o.mean;
        const double l = c.variant == Variant::kGlobal ? o.mean : c.mean;
        CHECK(c.delta_vs_local == g - l);
      }
  }
  CHECK(fs::exists(dir / "runs" / "local_late_concat_seed2" / "metrics.csv"));

  const std::vector<AblationRun> runs{{Variant::kGlobal, FusionMode::kEarly, 0, 0.5, 0.6},
                                      {Variant::kGlobal, FusionMode::kEarly, 1, 0.7, 0.7},
                                      {Variant::kLocal, FusionMode::kEarly, 0, 0.4, 0.4}};
  const auto agg = aggregate_ablation(runs);
  REQUIRE(agg.size() == 2);
  CHECK(std::fabs(agg[0].mean - 0.6) < 1e-15);
  CHECK(std::fabs(agg[0].std - std::sqrt(0.02)) < 1e-15);
  CHECK(agg[1].std == 0.0);
  CHECK(std::fabs(agg[0].delta_vs_local - 0.2) < 1e-15);
}

TEST_CASE("detect command") {
  const fs::path dir = scratch("detect");
  const RunConfig cfg = tiny_detect(dir);
  const TrainSummary s = cmd_train(cfg);
  CHECK(s.metric == "mAP");
  CHECK(nlohmann::json::parse(slurp(dir / "summary.json")).contains("best_map"));
  const EvalReport r = cmd_eval(dir / "final.ckpt", std::nullopt);
  CHECK(r.value == s.final_value);

  Dataset seqs = load_data(cfg).train;
  SkeletonSequence short_seq = seqs[0];
  short_seq.id = "short";
  short_seq.persons[0] = Tensor({20, 6, 3});
  short_seq.segments.clear();
  save_jsonl({short_seq}, dir / "short.jsonl");
  CHECK(cmd_detect(dir / "final.ckpt", dir / "short.jsonl").empty());

  save_jsonl(seqs, dir / "seqs.jsonl");
  const std::string out = cmd_detect(dir / "final.ckpt", dir / "seqs.jsonl");
  std::istringstream in(out);
  for (std::string line; std::getline(in, line);) {
    const auto j = nlohmann::json::parse(line);
    for (const char* k : {"sequence_id", "start", "end", "class", "score"}) CHECK(j.contains(k));
    CHECK(j["start"].get<double>() < j["end"].get<double>());
  }
  // A recognition checkpoint is not a detector.
  const fs::path rec = scratch("detect_rec");
  cmd_train(tiny(rec));
  CHECK_THROWS_AS(cmd_detect(rec / "final.ckpt", dir / "short.jsonl"), ConfigError);
}

TEST_CASE("executable exit codes and outputs") {
  const fs::path dir = scratch("exe");
  const fs::path log = dir / "log.txt";
  spit(dir / "tiny.json", kTiny);
  auto j = nlohmann::json::parse(kTiny);
  j["bogus"] = true;
  spit(dir / "bad.json", j.dump());

  CHECK(run_cli("--help", log) == 0);
  CHECK(run_cli("", log) == 1);
  CHECK(run_cli("train", log) == 1);
  CHECK(run_cli("train --config " + (dir / "nope.json").string(), log) == 1);
  CHECK(run_cli("train --config " + (dir / "bad.json").string(), log) == 1);
  CHECK(slurp(log).find("bogus") != std::string::npos);

  const fs::path run = dir / "run";
  CHECK(run_cli("train --config " + (dir / "tiny.json").string() + " --out " + run.string(), log) == 0);
  CHECK(fs::exists(run / "metrics.csv"));
  CHECK(run_cli("train --config " + (dir / "tiny.json").string() + " --out " + (dir / "run2").string(), log) == 0);
  CHECK(slurp(run / "metrics.csv") == slurp(dir / "run2" / "metrics.csv"));
  CHECK(run_cli("train --config " + (dir / "tiny.json").string() + " --seed 8 --out " + (dir / "run3").string(), log) == 0);
  CHECK(slurp(run / "metrics.csv") != slurp(dir / "run3" / "metrics.csv"));

  CHECK(run_cli("eval --checkpoint " + (run / "final.ckpt").string() + " --out " + run.string(), log) == 0);
  CHECK(nlohmann::json::parse(slurp(run / "eval.json"))["accuracy"].get<double>() ==
        nlohmann::json::parse(slurp(run / "summary.json"))["final_acc"].get<double>());
  CHECK(run_cli("eval --checkpoint " + (dir / "tiny.json").string(), log) == 2);
  CHECK(run_cli("eval --checkpoint " + (run / "final.ckpt").string() + " --split test", log) == 1);

  CHECK(run_cli("synth --config " + (dir / "tiny.json").string() + " --out " + dir.string(), log) == 0);
  CHECK(run_cli("predict --checkpoint " + (run / "final.ckpt").string() + " --data " +
                    (dir / "synth.jsonl").string() + " --top-k 2 --out " + run.string(), log) == 0);
  CHECK(lines(slurp(run / "predictions.jsonl")) == 18);

  const fs::path det = dir / "det";
  cmd_train(tiny_detect(det));
  SkeletonSequence s;
  s.id = "short";
  s.persons.push_back(Tensor({10, 6, 3}));
  save_jsonl({s}, dir / "short.jsonl");
  CHECK(run_cli("detect --checkpoint " + (det / "final.ckpt").string() + " --data " +
                    (dir / "short.jsonl").string() + " --out " + det.string(), log) == 0);
  CHECK(fs::exists(det / "detections.jsonl"));
  CHECK(slurp(det / "detections.jsonl").empty());
  CHECK(run_cli("detect --checkpoint " + (run / "final.ckpt").string() + " --data " +
                    (dir / "short.jsonl").string(), log) == 1);
}
