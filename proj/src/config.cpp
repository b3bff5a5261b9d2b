// Copyright 2026 The HCN Authors
// SPDX-License-Identifier: Apache-2.0

#include "hcn/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "hcn/error.hpp"

namespace hcn {
namespace {

using nlohmann::json;

// Reads keys from one JSON object and rejects those never asked for.
static_assert(std::is_same_v<std::size_t, std::uint64_t>, "size_t must be 64-bit");

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + "must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json* raw(const std::string& key) {
    known_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void read(const std::string& key, std::uint64_t& out, std::uint64_t min = 0) {
    if (const json* v = raw(key)) {
      if (!v->is_number_integer() || v->get<long long>() < static_cast<long long>(min)) {
        throw ConfigError(where(key) + "expected an integer >= " + std::to_string(min));
      }
      out = v->get<std::uint64_t>();
    }
  }
  void read(const std::string& key, double& out) {
    if (const json* v = raw(key)) {
      if (!v->is_number()) throw ConfigError(where(key) + "expected a number");
      out = v->get<double>();
    }
  }
  void read(const std::string& key, bool& out) {
    if (const json* v = raw(key)) {
      if (!v->is_boolean()) throw ConfigError(where(key) + "expected true or false");
      out = v->get<bool>();
    }
  }
  std::optional<std::string> text(const std::string& key) {
    if (const json* v = raw(key)) {
      if (!v->is_string()) throw ConfigError(where(key) + "expected a string");
      return v->get<std::string>();
    }
    return std::nullopt;
  }
  std::optional<Section> child(const std::string& key) {
    if (const json* v = raw(key)) return Section(*v, path_ + key + ".");
    return std::nullopt;
  }
  template <typename Parse>
  auto parsed(const std::string& key, Parse parse) -> std::optional<decltype(parse(""))> {
    if (auto s = text(key)) {
      try {
        return parse(*s);
      } catch (const UsageError& e) {
        throw ConfigError(where(key) + e.what());
      }
    }
    return std::nullopt;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!known_.count(it.key())) {
        std::string allowed;
        for (const std::string& k : known_) allowed += (allowed.empty() ? "" : ", ") + k;
        throw ConfigError("config: unknown key '" + path_ + it.key() + "' (allowed: " + allowed +
                          ")");
      }
    }
  }

  std::string where(const std::string& key = "") const {
    return "config: " + path_ + key + (key.empty() ? " " : ": ");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> known_;
};

void read_model(Section s, ModelConfig& m) {
  if (auto preset = s.text("preset")) {
    if (*preset == "ntu") {
      m = ModelConfig::ntu();
    } else if (*preset == "sbu") {
      m = ModelConfig::sbu();
    } else {
      throw ConfigError(s.where("preset") + "expected \"ntu\" or \"sbu\"");
    }
  }
  s.read("joints", m.joints, 1);
  s.read("coords", m.coords, 1);
  s.read("frames", m.frames, 1);
  s.read("classes", m.classes, 1);
  if (auto ch = s.child("channels")) {
    ch->read("conv1", m.channels.conv1, 1);
    ch->read("conv2", m.channels.conv2, 1);
    ch->read("conv3", m.channels.conv3, 1);
    ch->read("conv4", m.channels.conv4, 0);
    ch->read("conv5", m.channels.conv5, 1);
    ch->read("conv6", m.channels.conv6, 1);
    ch->read("fc7", m.channels.fc7, 1);
    ch->finish();
  }
  if (auto p = s.child("pools")) {
    p->read("conv3", m.pools.conv3);
    p->read("conv4", m.pools.conv4);
    p->read("conv5", m.pools.conv5);
    p->read("conv6", m.pools.conv6);
    p->finish();
  }
  s.read("temporal_kernel", m.temporal_kernel, 1);
  s.read("spatial_kernel", m.spatial_kernel, 1);
  s.read("dropout", m.dropout);
  s.read("max_persons", m.max_persons, 1);
  if (auto f = s.parsed("fusion", parse_fusion_mode)) m.fusion = *f;
  if (auto v = s.parsed("variant", parse_variant)) m.variant = *v;
  s.read("include_conv4", m.include_conv4);
  s.finish();
}

void read_detection(Section s, DetectionConfig& d) {
  if (const json* v = s.raw("scales")) {
    if (!v->is_array() || v->empty()) throw ConfigError(s.where("scales") + "expected a list of numbers");
    d.scales.clear();
    for (const json& x : *v) {
      if (!x.is_number()) throw ConfigError(s.where("scales") + "expected a list of numbers");
      d.scales.push_back(x.get<double>());
    }
  }
  s.read("pos_iou", d.pos_iou);
  s.read("neg_iou", d.neg_iou);
  s.read("anchor_batch", d.anchor_batch, 1);
  s.read("positive_fraction", d.positive_fraction);
  s.read("pre_nms_top", d.pre_nms_top, 1);
  s.read("post_nms_top", d.post_nms_top, 1);
  s.read("proposal_nms", d.proposal_nms);
  s.read("final_nms", d.final_nms);
  s.read("head_fg_iou", d.head_fg_iou);
  s.read("min_score", d.min_score);
  s.read("crop_len", d.crop_len, 1);
  s.read("rpn_channels", d.rpn_channels, 1);
  s.read("head_hidden", d.head_hidden, 1);
  s.read("reg_weight", d.reg_weight);
  s.finish();
}

void read_training(Section s, TrainingConfig& t) {
  s.read("batch_size", t.batch_size, 1);
  s.read("total_steps", t.total_steps);
  s.read("eval_every", t.eval_every);
  s.read("lr", t.adam.base_lr);
  s.read("decay_rate", t.adam.decay_rate);
  s.read("decay_steps", t.adam.decay_steps);
  s.read("beta1", t.adam.beta1);
  s.read("beta2", t.adam.beta2);
  s.read("epsilon", t.adam.epsilon);
  s.read("weight_decay", t.weight_decay);
  s.finish();
  if (t.eval_every == 0) throw ConfigError("config: training.eval_every: must be >= 1");
}

DirectionMode parse_directions(const std::string& s) {
  if (s == "shared") return DirectionMode::kShared;
  if (s == "per_joint") return DirectionMode::kPerJoint;
  throw UsageError("expected \"shared\" or \"per_joint\"");
}

std::string to_string(DirectionMode d) { return d == DirectionMode::kShared ? "shared" : "per_joint"; }

std::filesystem::path resolve(const std::string& p, const std::filesystem::path& base) {
  std::filesystem::path path(p);
  if (path.is_relative() && !base.empty()) path = base / path;
  return path.lexically_normal();
}

void read_data(Section s, DataConfig& d, const std::filesystem::path& base) {
  if (auto p = s.text("path")) d.path = resolve(*p, base);
  if (auto p = s.text("val_path")) d.val_path = resolve(*p, base);
  s.read("train_fraction", d.train_fraction);
  s.read("split_seed", d.split_seed);
  s.read("validate_on_train", d.validate_on_train);
  if (auto g = s.child("synth")) {
    SynthSpec spec;
    g->read("classes", spec.classes);
    g->read("samples_per_class", spec.samples_per_class);
    g->read("frames", spec.frames);
    g->read("joints", spec.joints);
    g->read("persons", spec.persons);
    g->read("noise_sigma", spec.noise_sigma);
    g->read("seed", spec.seed);
    g->read("amplitude", spec.amplitude);
    g->read("walk_sigma", spec.walk_sigma);
    if (auto dir = g->parsed("directions", parse_directions)) spec.directions = *dir;
    g->finish();
    d.synth = spec;
  }
  if (auto g = s.child("detection_synth")) {
    DetectionSynthSpec spec;
    g->read("sequences", spec.sequences);
    g->read("classes", spec.classes);
    g->read("joints", spec.joints);
    g->read("frames", spec.frames);
    g->read("actions_per_sequence", spec.actions_per_sequence);
    g->read("min_action", spec.min_action);
    g->read("max_action", spec.max_action);
    g->read("noise_sigma", spec.noise_sigma);
    g->read("seed", spec.seed);
    g->finish();
    d.detection_synth = spec;
  }
  s.finish();
}

void read_ablation(Section s, AblationConfig& a) {
  if (const json* v = s.raw("seeds")) {
    if (!v->is_array() || v->empty()) throw ConfigError(s.where("seeds") + "expected a list of integers");
    a.seeds.clear();
    for (const json& x : *v) {
      if (!x.is_number_integer() || x.get<long long>() < 0) {
        throw ConfigError(s.where("seeds") + "expected a list of non-negative integers");
      }
      a.seeds.push_back(x.get<std::uint64_t>());
    }
  }
  auto strings = [&](const char* key, auto parse, auto& out) {
    if (const json* v = s.raw(key)) {
      if (!v->is_array() || v->empty()) throw ConfigError(s.where(key) + "expected a list of names");
      out.clear();
      for (const json& x : *v) {
        if (!x.is_string()) throw ConfigError(s.where(key) + "expected a list of names");
        try {
          out.push_back(parse(x.get<std::string>()));
        } catch (const UsageError& e) {
          throw ConfigError(s.where(key) + e.what());
        }
      }
    }
  };
  strings("variants", parse_variant, a.variants);
  strings("fusions", parse_fusion_mode, a.fusions);
  s.finish();
}

}  // namespace

std::string to_string(Task task) { return task == Task::kRecognize ? "recognize" : "detect"; }

void RunConfig::validate(bool check_paths) const {
  try {
    model.validate();
  } catch (const UsageError& e) {
    throw ConfigError(std::string("config: model: ") + e.what());
  }
  if (task == Task::kDetect) {
    try {
      detection.validate();
    } catch (const UsageError& e) {
      throw ConfigError(std::string("config: detection: ") + e.what());
    }
  }
  const int sources = (data.path ? 1 : 0) + (data.synth ? 1 : 0) + (data.detection_synth ? 1 : 0);
  if (sources > 1) throw ConfigError("config: data: give only one of path, synth, detection_synth");
  if (data.val_path && !data.path) throw ConfigError("config: data.val_path requires data.path");
  if (check_paths && data.path && !std::filesystem::exists(*data.path)) {
    throw ConfigError("config: data.path: file not found: " + data.path->string());
  }
  if (check_paths && data.val_path && !std::filesystem::exists(*data.val_path)) {
    throw ConfigError("config: data.val_path: file not found: " + data.val_path->string());
  }
  if (!(data.train_fraction > 0.0 && data.train_fraction <= 1.0)) {
    throw ConfigError("config: data.train_fraction: must be in (0, 1]");
  }
  try {
    if (data.synth) data.synth->validate();
    if (data.detection_synth) data.detection_synth->validate();
  } catch (const UsageError& e) {
    throw ConfigError(std::string("config: data: ") + e.what());
  }
  if (task == Task::kRecognize && data.detection_synth) {
    throw ConfigError("config: data.detection_synth requires task \"detect\"");
  }
  if (task == Task::kDetect && data.synth) {
    throw ConfigError("config: data.synth requires task \"recognize\"");
  }
}

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir,
                           bool check_paths) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: malformed JSON (") + e.what() + ")");
  }
  Section root(j, "");
  RunConfig c;
  if (auto t = root.text("task")) {
    if (*t == "recognize") {
      c.task = Task::kRecognize;
    } else if (*t == "detect") {
      c.task = Task::kDetect;
      c.model = DetectionConfig::default_backbone();
    } else {
      throw ConfigError("config: task: expected \"recognize\" or \"detect\"");
    }
  }
  if (!root.has("seed")) throw ConfigError("config: seed: required (no implicit seeding)");
  root.read("seed", c.seed);
  if (auto out = root.text("output_dir")) c.output_dir = resolve(*out, base_dir);
  if (auto m = root.child("model")) read_model(*m, c.model);
  if (auto d = root.child("detection")) read_detection(*d, c.detection);
  if (auto t = root.child("training")) read_training(*t, c.training);
  if (auto d = root.child("data")) read_data(*d, c.data, base_dir);
  if (auto a = root.child("ablation")) read_ablation(*a, c.ablation);
  root.finish();
  c.detection.backbone = c.model;
  c.detection.classes = c.model.classes;
  c.validate(check_paths);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.parent_path());
}

std::string run_config_json(const RunConfig& c, int indent) {
  json j;
  j["task"] = to_string(c.task);
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir.string();
  const ModelConfig& m = c.model;
  j["model"] = {
      {"joints", m.joints},
      {"coords", m.coords},
      {"frames", m.frames},
      {"classes", m.classes},
      {"channels",
       {{"conv1", m.channels.conv1},
        {"conv2", m.channels.conv2},
        {"conv3", m.channels.conv3},
        {"conv4", m.channels.conv4},
        {"conv5", m.channels.conv5},
        {"conv6", m.channels.conv6},
        {"fc7", m.channels.fc7}}},
      {"pools",
       {{"conv3", m.pools.conv3}, {"conv4", m.pools.conv4}, {"conv5", m.pools.conv5},
        {"conv6", m.pools.conv6}}},
      {"temporal_kernel", m.temporal_kernel},
      {"spatial_kernel", m.spatial_kernel},
      {"dropout", m.dropout},
      {"max_persons", m.max_persons},
      {"fusion", to_string(m.fusion)},
      {"variant", to_string(m.variant)},
      {"include_conv4", m.include_conv4},
  };
  const DetectionConfig& d = c.detection;
  j["detection"] = {
      {"scales", d.scales},
      {"pos_iou", d.pos_iou},
      {"neg_iou", d.neg_iou},
      {"anchor_batch", d.anchor_batch},
      {"positive_fraction", d.positive_fraction},
      {"pre_nms_top", d.pre_nms_top},
      {"post_nms_top", d.post_nms_top},
      {"proposal_nms", d.proposal_nms},
      {"final_nms", d.final_nms},
      {"head_fg_iou", d.head_fg_iou},
      {"min_score", d.min_score},
      {"crop_len", d.crop_len},
      {"rpn_channels", d.rpn_channels},
      {"head_hidden", d.head_hidden},
      {"reg_weight", d.reg_weight},
  };
  const TrainingConfig& t = c.training;
  j["training"] = {
      {"batch_size", t.batch_size},     {"total_steps", t.total_steps},
      {"eval_every", t.eval_every},     {"lr", t.adam.base_lr},
      {"decay_rate", t.adam.decay_rate}, {"decay_steps", t.adam.decay_steps},
      {"beta1", t.adam.beta1},          {"beta2", t.adam.beta2},
      {"epsilon", t.adam.epsilon},      {"weight_decay", t.weight_decay},
  };
  json data = {{"train_fraction", c.data.train_fraction},
               {"split_seed", c.data.split_seed},
               {"validate_on_train", c.data.validate_on_train}};
  if (c.data.path) data["path"] = c.data.path->string();
  if (c.data.val_path) data["val_path"] = c.data.val_path->string();
  if (const auto& s = c.data.synth) {
    data["synth"] = {{"classes", s->classes},       {"samples_per_class", s->samples_per_class},
                     {"frames", s->frames},         {"joints", s->joints},
                     {"persons", s->persons},       {"noise_sigma", s->noise_sigma},
                     {"seed", s->seed},             {"amplitude", s->amplitude},
                     {"walk_sigma", s->walk_sigma}, {"directions", to_string(s->directions)}};
  }
  if (const auto& s = c.data.detection_synth) {
    data["detection_synth"] = {{"sequences", s->sequences},
                               {"classes", s->classes},
                               {"joints", s->joints},
                               {"frames", s->frames},
                               {"actions_per_sequence", s->actions_per_sequence},
                               {"min_action", s->min_action},
                               {"max_action", s->max_action},
                               {"noise_sigma", s->noise_sigma},
                               {"seed", s->seed}};
  }
  j["data"] = std::move(data);
  json variants = json::array(), fusions = json::array();
  for (Variant v : c.ablation.variants) variants.push_back(to_string(v));
  for (FusionMode f : c.ablation.fusions) fusions.push_back(to_string(f));
  j["ablation"] = {{"seeds", c.ablation.seeds}, {"variants", variants}, {"fusions", fusions}};
  return j.dump(indent);
}

}  // namespace hcn
