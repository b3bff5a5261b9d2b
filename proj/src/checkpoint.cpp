// Copyright 2026 The HCN Authors
// SPDX-License-Identifier: Apache-2.0

#include "hcn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"

#include "hcn/error.hpp"

namespace hcn {
namespace {

using nlohmann::json;

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

template <typename T>
void put(std::string& out, T v) {
  v = to_little(v);
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.append(b, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& data, std::string file) : data_(data), file_(std::move(file)) {}

  std::string line() {
    const std::size_t nl = data_.find('\n', pos_);
    if (nl == std::string::npos) fail("truncated header");
    std::string s = data_.substr(pos_, nl - pos_);
    pos_ = nl + 1;
    return s;
  }
  std::string bytes(std::size_t n) {
    if (data_.size() - pos_ < n) fail("truncated data");
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename T>
  T get() {
    const std::string b = bytes(sizeof(T));
    T v;
    std::memcpy(&v, b.data(), sizeof(T));
    return to_little(v);
  }
  // "<tag> <number>" header lines.
  std::uint64_t tagged(const std::string& tag) {
    const std::string l = line();
    if (l.rfind(tag + " ", 0) != 0) fail("expected '" + tag + "' section");
    try {
      return std::stoull(l.substr(tag.size() + 1));
    } catch (const std::exception&) {
      fail("bad '" + tag + "' length");
    }
  }
  bool done() const { return pos_ == data_.size(); }
  [[noreturn]] void fail(const std::string& what) const {
    throw DataError("checkpoint " + file_ + ": " + what);
  }

 private:
  const std::string& data_;
  std::string file_;
  std::size_t pos_ = 0;
};

void put_tensor(std::string& out, const std::string& name, const Tensor& t) {
  put(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put(out, static_cast<std::uint64_t>(d));
  for (double v : t.data()) put(out, v);
}

json adam_json(const AdamConfig& a) {
  return {{"base_lr", a.base_lr}, {"decay_rate", a.decay_rate}, {"decay_steps", a.decay_steps},
          {"beta1", a.beta1},     {"beta2", a.beta2},           {"epsilon", a.epsilon}};
}

}  // namespace

Checkpoint make_checkpoint(const RunConfig& config, const ParameterStore& params,
                           const TrainState& state, const BestMetric& best) {
  Checkpoint c;
  c.config = config;
  for (std::size_t i = 0; i < params.size(); ++i) {
    c.parameters.emplace_back(params[i].name, params[i].value);
  }
  c.state = state;
  c.best = best;
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const std::string config = run_config_json(checkpoint.config, -1);
  const TrainState& s = checkpoint.state;
  json state = {{"step", s.step},
                {"seed", s.seed},
                {"adam", adam_json(s.adam)},
                {"weight_decay", s.weight_decay},
                {"best", {{"name", checkpoint.best.name},
                          {"value", checkpoint.best.value},
                          {"step", checkpoint.best.step}}}};
  const std::string state_text = state.dump();

  std::string out = "hcn-checkpoint " + std::to_string(kCheckpointVersion) + "\n";
  out += "config " + std::to_string(config.size()) + "\n" + config + "\n";
  out += "state " + std::to_string(state_text.size()) + "\n" + state_text + "\n";
  const std::size_t count =
      checkpoint.parameters.size() + s.first_moment.size() + s.second_moment.size();
  out += "tensors " + std::to_string(count) + "\n";
  for (const auto& [name, t] : checkpoint.parameters) put_tensor(out, "param/" + name, t);
  for (const auto& [name, t] : s.first_moment) put_tensor(out, "adam.m/" + name, t);
  for (const auto& [name, t] : s.second_moment) put_tensor(out, "adam.v/" + name, t);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw Error("cannot write checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint " + path.string());
  const std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(data, path.string());

  if (data.rfind("hcn-checkpoint ", 0) != 0) r.fail("not a checkpoint file");
  const std::string magic = r.line();
  if (magic != "hcn-checkpoint " + std::to_string(kCheckpointVersion)) {
    r.fail("unsupported format version '" + magic.substr(15) + "' (this build reads version " +
           std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint c;
  const std::string config = r.bytes(r.tagged("config"));
  if (r.line() != "") r.fail("malformed config section");
  c.config = parse_run_config(config, {}, false);

  const std::string state_text = r.bytes(r.tagged("state"));
  if (r.line() != "") r.fail("malformed state section");
  try {
    const json s = json::parse(state_text);
    c.state.step = s.at("step").get<std::uint64_t>();
    c.state.seed = s.at("seed").get<std::uint64_t>();
    const json& a = s.at("adam");
    c.state.adam = AdamConfig{a.at("base_lr").get<double>(), a.at("decay_rate").get<double>(),
                              a.at("decay_steps").get<double>(), a.at("beta1").get<double>(),
                              a.at("beta2").get<double>(), a.at("epsilon").get<double>()};
    c.state.weight_decay = s.at("weight_decay").get<std::map<std::string, double>>();
    const json& b = s.at("best");
    c.best = BestMetric{b.at("name").get<std::string>(), b.at("value").get<double>(),
                        b.at("step").get<std::uint64_t>()};
  } catch (const json::exception& e) {
    r.fail(std::string("malformed state: ") + e.what());
  }

  const std::uint64_t count = r.tagged("tensors");
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = r.bytes(r.get<std::uint32_t>());
    const std::uint32_t rank = r.get<std::uint32_t>();
    if (rank > 8) r.fail("tensor '" + name + "' has implausible rank");
    Shape shape(rank);
    for (std::size_t& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) v = r.get<double>();
    Tensor t(shape, std::move(values));
    if (name.rfind("param/", 0) == 0) {
      c.parameters.emplace_back(name.substr(6), std::move(t));
    } else if (name.rfind("adam.m/", 0) == 0) {
      c.state.first_moment[name.substr(7)] = std::move(t);
    } else if (name.rfind("adam.v/", 0) == 0) {
      c.state.second_moment[name.substr(7)] = std::move(t);
    } else {
      r.fail("unknown tensor '" + name + "'");
    }
  }
  if (!r.done()) r.fail("trailing bytes");
  return c;
}

void restore_parameters(const Checkpoint& checkpoint, ParameterStore& params) {
  if (checkpoint.parameters.size() != params.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(checkpoint.parameters.size()) +
                      " parameters, the model has " + std::to_string(params.size()));
  }
  for (const auto& [name, t] : checkpoint.parameters) {
    if (!params.contains(name)) throw ConfigError("checkpoint parameter '" + name + "' not in model");
    Parameter& p = params.get(name);
    if (p.value.shape() != t.shape()) {
      throw ConfigError("checkpoint parameter '" + name + "' has shape " + shape_str(t.shape()) +
                        ", model expects " + shape_str(p.value.shape()));
    }
    p.value = t;
  }
}

}  // namespace hcn
