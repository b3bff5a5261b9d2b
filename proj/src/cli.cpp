// Copyright 2026 The HCN Authors
// SPDX-License-Identifier: Apache-2.0

#include "hcn/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>

#include <spdlog/cfg/env.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "json.hpp"

#include "hcn/dataset_io.hpp"
#include "hcn/detection.hpp"
#include "hcn/error.hpp"
#include "hcn/synth.hpp"

namespace hcn {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw Error("cannot write " + path.string());
}

std::string fmt_double(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

// Samples must match the model input layout and label range.
void check_compatible(const Dataset& data, const ModelConfig& model, bool labeled,
                      const std::string& what) {
  for (const SkeletonSequence& s : data) {
    if (s.joints() != model.joints || s.coords() != model.coords) {
      throw DataError(what + ": sample '" + s.id + "' has " + std::to_string(s.joints()) +
                      " joints x " + std::to_string(s.coords()) + " coords, the model expects " +
                      std::to_string(model.joints) + " x " + std::to_string(model.coords));
    }
    if (labeled && !s.label) throw DataError(what + ": sample '" + s.id + "' has no label");
    if (s.label && *s.label >= model.classes) {
      throw DataError(what + ": sample '" + s.id + "' has label " + std::to_string(*s.label) +
                      ", the model has " + std::to_string(model.classes) + " classes");
    }
    for (const Segment& g : s.segments) {
      if (g.label >= model.classes) {
        throw DataError(what + ": sequence '" + s.id + "' has segment class " +
                        std::to_string(g.label) + ", the model has " +
                        std::to_string(model.classes) + " classes");
      }
    }
  }
}

Schedule schedule_of(const RunConfig& c) {
  return Schedule{c.training.batch_size, c.training.total_steps, c.training.eval_every};
}

TrainState state_of(const RunConfig& c, const HcnModel& model, std::uint64_t seed) {
  TrainState state = make_train_state(model, seed, c.training.adam);
  if (state.weight_decay.count("fc7.weight")) {
    if (c.training.weight_decay == 0.0) {
      state.weight_decay.erase("fc7.weight");
    } else {
      state.weight_decay["fc7.weight"] = c.training.weight_decay;
    }
  }
  return state;
}

void log_eval(const MetricRecord& r) {
  if (std::isnan(r.map)) {
    spdlog::info("step {} {} loss {:.4f} accuracy {:.4f} lr {:.3g}", r.step, r.split, r.loss,
                 r.accuracy, r.learning_rate);
  } else {
    spdlog::info("step {} {} mAP {:.4f} lr {:.3g}", r.step, r.split, r.map, r.learning_rate);
  }
}

double last_val(const MetricsHistory& h, bool map) {
  for (auto it = h.rbegin(); it != h.rend(); ++it) {
    if (it->split == "val") return map ? it->map : it->accuracy;
  }
  return kNaN;
}

double best_val(const MetricsHistory& h, bool map) {
  double best = kNaN;
  for (const MetricRecord& r : h) {
    if (r.split != "val") continue;
    const double v = map ? r.map : r.accuracy;
    if (std::isnan(best) || v > best) best = v;
  }
  return best;
}

// First evaluation step reaching the best value.
std::uint64_t best_step_of(const MetricsHistory& h, bool map) {
  const double best = best_val(h, map);
  for (const MetricRecord& r : h) {
    if (r.split == "val" && (map ? r.map : r.accuracy) == best) return r.step;
  }
  return 0;
}

std::map<std::string, std::vector<TemporalWindow>> detect_all(DetectionModel& model,
                                                             const Dataset& data) {
  std::map<std::string, std::vector<TemporalWindow>> out;
  for (const SkeletonSequence& s : data) {
    if (out.count(s.id)) throw DataError("duplicate sequence id '" + s.id + "'");
    out[s.id] = detect(model, s);
  }
  return out;
}

HcnModel restore_recognizer(const Checkpoint& ckpt) {
  if (ckpt.config.task != Task::kRecognize) {
    throw ConfigError("checkpoint is a detection model; use the detect command");
  }
  Rng rng(0);
  HcnModel model = build_model(ckpt.config.model, rng);
  restore_parameters(ckpt, model.params);
  return model;
}

DetectionModel restore_detector(const Checkpoint& ckpt) {
  if (ckpt.config.task != Task::kDetect) {
    throw ConfigError("checkpoint is a recognition model; detect needs a detection checkpoint");
  }
  Rng rng(0);
  DetectionModel model = build_detection_model(ckpt.config.detection, rng);
  restore_parameters(ckpt, model.backbone.params);
  return model;
}

std::string cell_name(Variant v, FusionMode f, std::uint64_t seed) {
  return to_string(v) + "_" + to_string(f) + "_seed" + std::to_string(seed);
}

}  // namespace

void init_logging(const std::string& default_level) {
  auto logger = spdlog::get("hcn");
  if (!logger) logger = spdlog::stderr_color_mt("hcn");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(default_level));
  spdlog::cfg::load_env_levels();
}

DataSplits load_data(const RunConfig& config) {
  const DataConfig& d = config.data;
  Dataset all;
  if (d.path) {
    all = load_jsonl(*d.path);
  } else if (d.synth) {
    all = synth_generate(*d.synth);
  } else if (d.detection_synth) {
    all = synth_detection(*d.detection_synth);
  } else {
    throw ConfigError("config: data: give one of path, synth, detection_synth");
  }

  DataSplits out;
  if (config.task == Task::kDetect) {
    out.train = std::move(all);
    out.val = d.val_path ? load_jsonl(*d.val_path) : out.train;
    check_compatible(out.train, config.detection.backbone, false, "training data");
    check_compatible(out.val, config.detection.backbone, false, "validation data");
    return out;
  }

  if (d.val_path) {
    out.train = std::move(all);
    out.val = load_jsonl(*d.val_path);
  } else if (d.validate_on_train) {
    out.train = std::move(all);
  } else {
    auto [train, val] = split_dataset(all, d.train_fraction, d.split_seed);
    out.train = std::move(train);
    out.val = std::move(val);
  }
  if (d.validate_on_train) out.val = out.train;
  if (out.train.empty()) throw ConfigError("config: data: the training split is empty");
  if (out.val.empty()) {
    throw ConfigError(
        "config: data: the validation split is empty (lower train_fraction, give val_path or "
        "set validate_on_train)");
  }
  check_compatible(out.train, config.model, true, "training data");
  check_compatible(out.val, config.model, true, "validation data");
  return out;
}

TrainSummary cmd_train(const RunConfig& config) {
  const auto t0 = std::chrono::steady_clock::now();
  const DataSplits data = load_data(config);
  const fs::path dir = config.output_dir;
  fs::create_directories(dir);
  write_text(dir / "config.json", run_config_json(config) + "\n");

  TrainSummary summary;
  TrainHooks hooks;
  hooks.on_eval = log_eval;
  Rng rng(config.seed);
  if (config.task == Task::kRecognize) {
    spdlog::info("training on {} samples, validating on {}", data.train.size(), data.val.size());
    HcnModel model = build_model(config.model, rng);
    TrainState state = state_of(config, model, config.seed);
    hooks.on_best = [&](const MetricRecord& r, const HcnModel& m, const TrainState& s) {
      save_checkpoint(make_checkpoint(config, m.params, s, BestMetric{"accuracy", r.accuracy, r.step}),
                      dir / "best.ckpt");
    };
    summary.history = train_loop(model, data.train, data.val, state, schedule_of(config), hooks);
    summary.metric = "accuracy";
    summary.final_value = last_val(summary.history, false);
    summary.best = best_val(summary.history, false);
    summary.steps = state.step;
    summary.best_step = best_step_of(summary.history, false);
    save_checkpoint(make_checkpoint(config, model.params, state,
                                    BestMetric{"accuracy", summary.best, summary.best_step}),
                    dir / "final.ckpt");
  } else {
    spdlog::info("training detection on {} sequences", data.train.size());
    DetectionModel model = build_detection_model(config.detection, rng);
    TrainState state = make_train_state(model.backbone, config.seed, config.training.adam);
    hooks.on_best = [&](const MetricRecord& r, const HcnModel& m, const TrainState& s) {
      save_checkpoint(make_checkpoint(config, m.params, s, BestMetric{"mAP", r.map, r.step}),
                      dir / "best.ckpt");
    };
    const DetectionSchedule schedule{config.training.total_steps, config.training.eval_every};
    summary.history = train_detection(model, data.train, data.val, state, schedule, hooks);
    summary.metric = "mAP";
    summary.final_value = last_val(summary.history, true);
    summary.best = best_val(summary.history, true);
    summary.steps = state.step;
    summary.best_step = best_step_of(summary.history, true);
    save_checkpoint(make_checkpoint(config, model.backbone.params, state,
                                    BestMetric{"mAP", summary.best, summary.best_step}),
                    dir / "final.ckpt");
  }
  write_metrics_csv(summary.history, dir / "metrics.csv");
  summary.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_text(dir / "summary.json", summary_json(summary) + "\n");
  return summary;
}

std::string summary_json(const TrainSummary& s) {
  const bool map = s.metric == "mAP";
  json j;
  j[map ? "best_map" : "best_acc"] = number_or_null(s.best);
  j["best_step"] = s.best_step;
  j[map ? "final_map" : "final_acc"] = number_or_null(s.final_value);
  j["steps"] = s.steps;
  j["wall_time"] = s.wall_time;
  return j.dump(2);
}

EvalReport cmd_eval(const fs::path& checkpoint, const std::optional<fs::path>& data,
                    const std::string& split) {
  if (split != "train" && split != "val") {
    throw UsageError("split must be \"train\" or \"val\", got \"" + split + "\"");
  }
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const RunConfig& config = ckpt.config;
  Dataset eval_data;
  EvalReport report;
  if (data) {
    eval_data = load_jsonl(*data);
    report.split = data->string();
  } else {
    DataSplits splits = load_data(config);
    eval_data = split == "train" ? std::move(splits.train) : std::move(splits.val);
    report.split = split;
  }
  if (eval_data.empty()) throw DataError("evaluation data is empty");
  report.samples = eval_data.size();

  if (config.task == Task::kRecognize) {
    check_compatible(eval_data, config.model, true, "evaluation data");
    HcnModel model = restore_recognizer(ckpt);
    const EvalResult r = evaluate(model, eval_data, config.training.batch_size);
    report.metric = "accuracy";
    report.value = r.accuracy;
    report.loss = r.loss;
  } else {
    check_compatible(eval_data, config.detection.backbone, false, "evaluation data");
    DetectionModel model = restore_detector(ckpt);
    report.metric = "mAP";
    report.value = evaluate_map(detect_all(model, eval_data), eval_data).map;
    report.loss = kNaN;
  }
  return report;
}

std::string eval_report_json(const EvalReport& r) {
  json j;
  j["metric"] = r.metric;
  j[r.metric] = number_or_null(r.value);
  j["loss"] = number_or_null(r.loss);
  j["samples"] = r.samples;
  j["split"] = r.split;
  return j.dump();
}

std::vector<Prediction> cmd_predict(const fs::path& checkpoint, const fs::path& data,
                                    std::size_t top_k) {
  if (top_k == 0) throw UsageError("top-k must be >= 1");
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  HcnModel model = restore_recognizer(ckpt);
  const Dataset samples = load_jsonl(data);
  check_compatible(samples, ckpt.config.model, false, "prediction data");
  std::vector<Prediction> out;
  for (const SkeletonSequence& s : samples) {
    const std::vector<double> probs = predict(model, s);
    std::vector<std::size_t> order(probs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
    Prediction p{s.id, {}};
    for (std::size_t i = 0; i < std::min(top_k, order.size()); ++i) {
      p.top.emplace_back(order[i], probs[order[i]]);
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::string predictions_jsonl(const std::vector<Prediction>& predictions) {
  std::string out;
  for (const Prediction& p : predictions) {
    json top = json::array();
    for (const auto& [c, prob] : p.top) top.push_back({{"class", c}, {"probability", prob}});
    out += json{{"id", p.id}, {"top", top}}.dump() + "\n";
  }
  return out;
}

std::string cmd_detect(const fs::path& checkpoint, const fs::path& data) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  DetectionModel model = restore_detector(ckpt);
  const Dataset sequences = load_jsonl(data);
  check_compatible(sequences, ckpt.config.detection.backbone, false, "detection data");
  return detections_jsonl(detect_all(model, sequences));
}

AblationRun run_ablation_cell(const RunConfig& config, const DataSplits& data, Variant variant,
                              FusionMode fusion, std::uint64_t seed,
                              const fs::path& metrics_path) {
  RunConfig c = config;
  c.model.variant = variant;
  c.model.fusion = fusion;
  c.seed = seed;
  c.model.validate();
  Rng rng(seed);
  HcnModel model = build_model(c.model, rng);
  TrainState state = state_of(c, model, seed);
  TrainHooks hooks;
  hooks.on_eval = log_eval;
  const MetricsHistory h = train_loop(model, data.train, data.val, state, schedule_of(c), hooks);
  if (!metrics_path.empty()) write_metrics_csv(h, metrics_path);
  return AblationRun{variant, fusion, seed, last_val(h, false), best_val(h, false)};
}

std::vector<AblationCell> aggregate_ablation(const std::vector<AblationRun>& runs) {
  std::vector<AblationCell> cells;
  std::vector<std::vector<double>> values;
  for (const AblationRun& r : runs) {
    auto it = std::find_if(cells.begin(), cells.end(), [&](const AblationCell& c) {
      return c.variant == r.variant && c.fusion == r.fusion;
    });
    if (it == cells.end()) {
      cells.push_back(AblationCell{r.variant, r.fusion, 0, 0.0, 0.0, kNaN});
      values.emplace_back();
      it = cells.end() - 1;
    }
    values[static_cast<std::size_t>(it - cells.begin())].push_back(r.final_accuracy);
  }
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const std::vector<double>& v = values[i];
    const double n = static_cast<double>(v.size());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    cells[i].n_seeds = v.size();
    cells[i].mean = mean;
    cells[i].std = v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  }
  for (AblationCell& c : cells) {
    const AblationCell* global = nullptr;
    const AblationCell* local = nullptr;
    for (const AblationCell& o : cells) {
      if (o.fusion != c.fusion) continue;
      (o.variant == Variant::kGlobal ? global : local) = &o;
    }
    if (global && local) c.delta_vs_local = global->mean - local->mean;
  }
  return cells;
}

std::vector<AblationCell> cmd_ablate(const RunConfig& config) {
  if (config.task != Task::kRecognize) throw ConfigError("config: ablate needs task \"recognize\"");
  const AblationConfig& a = config.ablation;
  if (a.seeds.empty() || a.variants.empty() || a.fusions.empty()) {
    throw ConfigError("config: ablation: seeds, variants and fusions must be non-empty");
  }
  const DataSplits data = load_data(config);
  const fs::path dir = config.output_dir;
  fs::create_directories(dir);
  write_text(dir / "config.json", run_config_json(config) + "\n");
  std::vector<AblationRun> runs;
  for (Variant v : a.variants) {
    for (FusionMode f : a.fusions) {
      for (std::uint64_t seed : a.seeds) {
        spdlog::info("ablation cell {}", cell_name(v, f, seed));
        runs.push_back(run_ablation_cell(config, data, v, f, seed,
                                         dir / "runs" / cell_name(v, f, seed) / "metrics.csv"));
        // Rewritten after every cell so a partial sweep leaves usable output.
        write_text(dir / "ablation_runs.csv", ablation_runs_csv(runs));
      }
    }
  }
  const std::vector<AblationCell> cells = aggregate_ablation(runs);
  write_text(dir / "ablation.csv", ablation_csv(cells));
  return cells;
}

std::string ablation_csv(const std::vector<AblationCell>& cells) {
  std::string out = "variant,fusion,n_seeds,mean_accuracy,std_accuracy,delta_vs_local\n";
  for (const AblationCell& c : cells) {
    out += to_string(c.variant) + "," + to_string(c.fusion) + "," + std::to_string(c.n_seeds) +
           "," + fmt_double(c.mean) + "," + fmt_double(c.std) + "," +
           fmt_double(c.delta_vs_local) + "\n";
  }
  return out;
}

std::string ablation_runs_csv(const std::vector<AblationRun>& runs) {
  std::string out = "variant,fusion,seed,final_accuracy,best_accuracy\n";
  for (const AblationRun& r : runs) {
    out += to_string(r.variant) + "," + to_string(r.fusion) + "," + std::to_string(r.seed) + "," +
           fmt_double(r.final_accuracy) + "," + fmt_double(r.best_accuracy) + "\n";
  }
  return out;
}

std::size_t cmd_synth(const RunConfig& config, const fs::path& out) {
  Dataset data;
  if (config.data.synth) {
    data = synth_generate(*config.data.synth);
  } else if (config.data.detection_synth) {
    data = synth_detection(*config.data.detection_synth);
  } else {
    throw ConfigError("config: data: synth needs data.synth or data.detection_synth");
  }
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_jsonl(data, out);
  return data.size();
}

}  // namespace hcn
