#include "v2m/cli/config.hpp"

#include "v2m/core/error.hpp"
#include "v2m/core/serialize.hpp"

namespace v2m::cli {

namespace {

bool same_kind(const nlohmann::json& a, const nlohmann::json& b) {
  if (a.is_number() && b.is_number()) return !(a.is_number_integer() && b.is_number_float());
  return a.type() == b.type();
}

}  // namespace

const nlohmann::json& Config::defaults() {
  static const nlohmann::json d = {
      {"seed", 0},
      {"threads", 1},
      {"data.clips", 64},
      {"data.min_s", 4.0},
      {"data.max_s", 30.0},
      {"data.noise", 0.05},
      {"data.period_min", 4},
      {"data.period_max", 8},
      {"data.event_prob", 0.5},
      {"adaptor.strategy", "softmax"},
      {"adaptor.sigmoid_norm", "per_group"},
      {"adaptor.dim", 64},
      {"adaptor.heads", 4},
      {"adaptor.gate_filters", 4},
      {"model.hidden", 64},
      {"model.layers", 2},
      {"model.heads", 4},
      {"model.ffn", 256},
      {"model.time_dim", 32},
      {"encoder.channels", 8},
      {"encoder.freq_bins", 4},
      {"encoder.upsample", 2},
      {"optim.beta1", 0.9},
      {"optim.beta2", 0.999},
      {"optim.eps", 1e-8},
      {"optim.weight_decay", 0.01},
      {"optim.grad_clip", 1.0},
      {"pretrain.steps", 200},
      {"pretrain.batch", 16},
      {"pretrain.lr", 5e-5},
      {"pretrain.window_min_s", 4.0},
      {"pretrain.window_max_s", 30.0},
      {"pretrain.tau_init", 0.07},
      {"pretrain.loss", "temporal"},
      {"pretrain.symmetric", false},
      {"pretrain.log_every", 50},
      {"train.steps", 500},
      {"train.uncond_steps", 0},
      {"train.batch", 8},
      {"train.lr", 5e-5},
      {"train.window_min_s", 4.0},
      {"train.window_max_s", 30.0},
      {"train.cond_drop", 0.2},
      {"train.icl", false},
      {"train.icl_prob", 0.8},
      {"train.log_every", 50},
      {"sample.ode_steps", 25},
      {"sample.cfg_scale", 4.0},
      {"sample.runs", 5},
      {"eval.tolerance_s", 0.1},
  };
  return d;
}

Config::Config() : values_(defaults()) {}

void Config::merge(const nlohmann::json& flat) {
  if (!flat.is_object()) throw ConfigError("config must be a flat JSON object");
  for (const auto& [key, value] : flat.items()) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    nlohmann::json v = value;
    if (it->is_number_float() && v.is_number_integer()) v = v.get<double>();
    if (!same_kind(*it, v)) {
      throw ConfigError("config key '" + key + "' expects " + std::string(it->type_name()) + ", got " + v.type_name());
    }
    *it = v;
  }
}

void Config::merge_file(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  merge(j);
}

void Config::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  nlohmann::json v;
  try {
    if (it->is_string()) {
      v = value;
    } else if (it->is_boolean()) {
      if (value != "true" && value != "false") throw ConfigError("config key '" + key + "' expects true or false");
      v = value == "true";
    } else if (it->is_number_integer()) {
      std::size_t used = 0;
      v = std::stoll(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
    } else {
      std::size_t used = 0;
      v = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
    }
  } catch (const std::logic_error&) {
    throw ConfigError("config key '" + key + "' cannot parse '" + value + "'");
  }
  *it = v;
}

const nlohmann::json& Config::at(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return *it;
}

void Config::write_resolved(const std::filesystem::path& dir) const {
  io::write_text(dir / "config.resolved.json", values_.dump(2) + "\n");
}

}  // namespace v2m::cli
