#pragma once

// Experiment configuration and its JSON file form.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "sliceops/ddqn.hpp"
#include "sliceops/env_gnb.hpp"
#include "sliceops/registry.hpp"
#include "sliceops/xrl_reward.hpp"

namespace sliceops {

enum class Mode { kRl, kXrl };

inline std::string to_string(Mode m) { return m == Mode::kRl ? "rl" : "xrl"; }

inline Mode mode_from_string(const std::string& s) {
  if (s == "rl") return Mode::kRl;
  if (s == "xrl") return Mode::kXrl;
  throw std::invalid_argument("mode must be 'rl' or 'xrl', got '" + s + "'");
}

enum class ExplainerMethod { kKernelShap, kOcclusion };

struct ExplainerConfig {
  ExplainerMethod method = ExplainerMethod::kKernelShap;
  std::size_t background_size = 32;
  std::size_t batch_size = 32;
};

struct ExperimentConfig {
  Mode mode = Mode::kXrl;
  std::uint64_t seed = 1;
  int episodes = 700;
  int eval_episodes = 20;
  std::string out_dir = "out";
  GnbConfig gnb;
  std::vector<SliceSpec> slices = default_slices();
  std::vector<AgentConfig> agents = std::vector<AgentConfig>(3);
  RewardConfig reward;
  ExplainerConfig explainer;
  RetrainPolicy monitor;

  /// The RL baseline is the composite reward with the XAI term switched off.
  double effective_xai_weight() const { return mode == Mode::kRl ? 0.0 : reward.xai_weight; }

  void validate() const {
    gnb.validate();
    if (slices.empty()) throw std::invalid_argument("config needs at least one slice");
    std::set<std::string> ids;
    for (const auto& s : slices) {
      s.validate();
      if (s.slice_id.find_first_not_of("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_") !=
          std::string::npos)
        throw std::invalid_argument("slice id '" + s.slice_id + "' may only contain letters, digits and '_'");
      if (!ids.insert(s.slice_id).second) throw std::invalid_argument("duplicate slice id " + s.slice_id);
    }
    if (agents.size() != slices.size()) throw std::invalid_argument("one agent config per slice is required");
    for (const auto& a : agents) {
      a.validate();
      if (static_cast<int>(a.layer_dims.back()) != gnb.capacity_prb / gnb.alloc_step_prb)
        throw std::invalid_argument("network output width must equal the number of PRB levels");
    }
    reward.validate();
    monitor.validate();
    if (episodes < 0 || eval_episodes < 0) throw std::invalid_argument("episode counts must be >= 0");
    if (explainer.background_size == 0 || explainer.batch_size == 0)
      throw std::invalid_argument("explainer batch sizes must be > 0");
  }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw std::invalid_argument("unknown key '" + k + "' in " + where);
}

inline void apply_agent(AgentConfig& a, const nlohmann::json& j, const std::string& where) {
  reject_unknown(j,
                 {"gamma", "lr", "batch_size", "buffer_capacity", "target_sync_steps", "train_every_steps", "epsilon",
                  "hidden_layers"},
                 where);
  a.gamma = j.value("gamma", a.gamma);
  a.lr = j.value("lr", a.lr);
  a.batch_size = j.value("batch_size", a.batch_size);
  a.buffer_capacity = j.value("buffer_capacity", a.buffer_capacity);
  a.target_sync_steps = j.value("target_sync_steps", a.target_sync_steps);
  a.train_every_steps = j.value("train_every_steps", a.train_every_steps);
  if (j.contains("epsilon")) {
    const auto& e = j.at("epsilon");
    reject_unknown(e, {"start", "min", "decay"}, where + ".epsilon");
    a.epsilon.start = e.value("start", a.epsilon.start);
    a.epsilon.min = e.value("min", a.epsilon.min);
    a.epsilon.decay = e.value("decay", a.epsilon.decay);
  }
  if (j.contains("hidden_layers")) {
    std::vector<std::size_t> dims = {a.layer_dims.front()};
    for (const auto& h : j.at("hidden_layers")) dims.push_back(h.get<std::size_t>());
    dims.push_back(a.layer_dims.back());
    a.layer_dims = dims;
  }
}

}  // namespace detail

/// Missing keys keep their defaults; unknown keys are rejected.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using detail::reject_unknown;
  reject_unknown(j,
                 {"capacity_prb", "alloc_step_prb", "prb_bandwidth_hz", "tti_ms", "snr_mean_db", "episode_ttis", "slices",
                  "agent", "agents", "reward", "explainer", "monitor", "experiment"},
                 "config");
  ExperimentConfig c;
  c.gnb.capacity_prb = j.value("capacity_prb", c.gnb.capacity_prb);
  c.gnb.alloc_step_prb = j.value("alloc_step_prb", c.gnb.alloc_step_prb);
  c.gnb.prb_bandwidth_hz = j.value("prb_bandwidth_hz", c.gnb.prb_bandwidth_hz);
  c.gnb.tti_seconds = j.value("tti_ms", c.gnb.tti_seconds * 1e3) / 1e3;
  c.gnb.snr_mean_db = j.value("snr_mean_db", c.gnb.snr_mean_db);
  c.gnb.episode_ttis = j.value("episode_ttis", c.gnb.episode_ttis);

  if (j.contains("slices")) {
    c.slices.clear();
    for (const auto& s : j.at("slices")) {
      reject_unknown(s, {"id", "class", "sla_latency_ms", "arrival_mean_pkts_per_tti", "packet_size_bits"}, "slices[]");
      SliceSpec spec;
      spec.slice_id = s.at("id").get<std::string>();
      spec.service_class = service_class_from_string(s.at("class").get<std::string>());
      spec.sla_latency_ms = s.at("sla_latency_ms").get<double>();
      spec.arrival_mean_pkts_per_tti = s.at("arrival_mean_pkts_per_tti").get<double>();
      spec.packet_size_bits = s.value("packet_size_bits", spec.packet_size_bits);
      c.slices.push_back(spec);
    }
  }

  const int levels = c.gnb.alloc_step_prb > 0 ? c.gnb.capacity_prb / c.gnb.alloc_step_prb : 0;
  AgentConfig base;
  if (levels > 0) base.layer_dims.back() = static_cast<std::size_t>(levels);
  if (j.contains("agent")) detail::apply_agent(base, j.at("agent"), "agent");
  c.agents.assign(c.slices.size(), base);
  if (j.contains("agents")) {
    for (const auto& [id, section] : j.at("agents").items()) {
      std::size_t i = 0;
      while (i < c.slices.size() && c.slices[i].slice_id != id) ++i;
      if (i == c.slices.size()) throw std::invalid_argument("agents section for unknown slice '" + id + "'");
      detail::apply_agent(c.agents[i], section, "agents." + id);
    }
  }

  if (j.contains("reward")) {
    const auto& r = j.at("reward");
    reject_unknown(r, {"xai_weight", "xai_cap", "resource_cost", "refresh_every"}, "reward");
    c.reward.xai_weight = r.value("xai_weight", c.reward.xai_weight);
    c.reward.xai_cap = r.value("xai_cap", c.reward.xai_cap);
    c.reward.resource_cost = r.value("resource_cost", c.reward.resource_cost);
    c.reward.refresh_every = r.value("refresh_every", c.reward.refresh_every);
  }
  if (j.contains("explainer")) {
    const auto& e = j.at("explainer");
    reject_unknown(e, {"method", "background_size", "batch_size"}, "explainer");
    const std::string method = e.value("method", std::string("kernel_shap"));
    if (method == "kernel_shap") c.explainer.method = ExplainerMethod::kKernelShap;
    else if (method == "occlusion") c.explainer.method = ExplainerMethod::kOcclusion;
    else throw std::invalid_argument("explainer.method must be kernel_shap or occlusion");
    c.explainer.background_size = e.value("background_size", c.explainer.background_size);
    c.explainer.batch_size = e.value("batch_size", c.explainer.batch_size);
  }
  if (j.contains("monitor")) {
    const auto& m = j.at("monitor");
    reject_unknown(m, {"relative_drop_threshold", "window"}, "monitor");
    c.monitor.relative_drop_threshold = m.value("relative_drop_threshold", c.monitor.relative_drop_threshold);
    c.monitor.window = m.value("window", c.monitor.window);
  }
  if (j.contains("experiment")) {
    const auto& x = j.at("experiment");
    reject_unknown(x, {"mode", "seed", "episodes", "eval_episodes", "out"}, "experiment");
    if (x.contains("mode")) c.mode = mode_from_string(x.at("mode").get<std::string>());
    c.seed = x.value("seed", c.seed);
    c.episodes = x.value("episodes", c.episodes);
    c.eval_episodes = x.value("eval_episodes", c.eval_episodes);
    c.out_dir = x.value("out", c.out_dir);
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  try {
    return config_from_json(j);
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

}  // namespace sliceops
