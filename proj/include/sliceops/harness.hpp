#pragma once

// Experiment driver: multi-agent training over the gNB environment,
// greedy evaluation, RL/XRL comparison and explanation dumps.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "sliceops/config.hpp"
#include "sliceops/ddqn.hpp"
#include "sliceops/env_gnb.hpp"
#include "sliceops/service.hpp"
#include "sliceops/shap.hpp"
#include "sliceops/xrl_reward.hpp"

namespace sliceops {

// ---------------------------------------------------------------------------
// Seeding

enum class SeedStream : std::uint64_t { kInit = 1, kAct, kTrain, kXai, kEnv, kEval, kExplain };

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, SeedStream stream, std::uint64_t index) {
  return splitmix64(splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(stream)) ^ index);
}

// ---------------------------------------------------------------------------
// Statistics

/// Linear-interpolation quantile of sorted data (position q * (n - 1)).
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct BoxStats {
  std::size_t n = 0;
  double mean = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double lower_whisker = 0.0;
  double upper_whisker = 0.0;
  std::vector<double> outliers;
};

/// Whiskers reach the most extreme samples inside [Q1 - 1.5 IQR, Q3 + 1.5 IQR],
/// never falling inside the box.
inline BoxStats box_stats(std::vector<double> samples) {
  BoxStats b;
  b.n = samples.size();
  if (samples.empty()) {
    b.mean = b.q1 = b.median = b.q3 = b.lower_whisker = b.upper_whisker = std::numeric_limits<double>::quiet_NaN();
    return b;
  }
  std::sort(samples.begin(), samples.end());
  b.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
  b.q1 = quantile_sorted(samples, 0.25);
  b.median = quantile_sorted(samples, 0.5);
  b.q3 = quantile_sorted(samples, 0.75);
  const double iqr = b.q3 - b.q1;
  const double lo = b.q1 - 1.5 * iqr, hi = b.q3 + 1.5 * iqr;
  b.lower_whisker = b.q3;
  b.upper_whisker = b.q1;
  for (double v : samples) {
    if (v < lo || v > hi) {
      b.outliers.push_back(v);
    } else {
      b.lower_whisker = std::min(b.lower_whisker, v);
      b.upper_whisker = std::max(b.upper_whisker, v);
    }
  }
  b.lower_whisker = std::min(b.lower_whisker, b.q1);
  b.upper_whisker = std::max(b.upper_whisker, b.q3);
  return b;
}

struct CdfPoint {
  double value;
  double probability;
};

inline std::vector<CdfPoint> empirical_cdf(std::vector<double> samples) {
  std::sort(samples.begin(), samples.end());
  std::vector<CdfPoint> cdf;
  const double n = static_cast<double>(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (i + 1 < samples.size() && samples[i + 1] == samples[i]) continue;
    cdf.push_back({samples[i], static_cast<double>(i + 1) / n});
  }
  return cdf;
}

inline nlohmann::json box_to_json(const BoxStats& b) {
  return {{"n", b.n},           {"mean", b.mean},
          {"q1", b.q1},         {"median", b.median},
          {"q3", b.q3},         {"lower_whisker", b.lower_whisker},
          {"upper_whisker", b.upper_whisker}, {"outliers", b.outliers}};
}

// ---------------------------------------------------------------------------
// Metrics CSV

struct MetricsRow {
  int episode = 0;
  std::string slice_id;
  Mode mode = Mode::kRl;
  double reward_sla = 0.0;
  double reward_xai = 0.0;
  double reward_total = 0.0;
  double mean_latency_ms = 0.0;
  double dropped_pct = 0.0;
  double alloc_prb_mean = 0.0;
  double epsilon = 0.0;
  double wall_time_s = 0.0;
};

inline const char* metrics_csv_header() {
  return "episode,slice_id,mode,reward_sla,reward_xai,reward_total,mean_latency_ms,dropped_pct,alloc_prb_mean,epsilon,"
         "wall_time_s";
}

inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline std::string format_metrics_row(const MetricsRow& r) {
  std::string s = std::to_string(r.episode) + "," + r.slice_id + "," + to_string(r.mode);
  for (double v : {r.reward_sla, r.reward_xai, r.reward_total, r.mean_latency_ms, r.dropped_pct, r.alloc_prb_mean,
                   r.epsilon, r.wall_time_s})
    s += "," + format_number(v);
  return s;
}

inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << metrics_csv_header() << '\n';
  for (const auto& r : rows) out << format_metrics_row(r) << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != metrics_csv_header())
    throw std::runtime_error(path.string() + ": unexpected CSV header");
  std::vector<MetricsRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 11) throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected 11 columns");
    try {
      MetricsRow r;
      r.episode = std::stoi(cells[0]);
      r.slice_id = cells[1];
      r.mode = mode_from_string(cells[2]);
      double* fields[] = {&r.reward_sla, &r.reward_xai, &r.reward_total, &r.mean_latency_ms,
                          &r.dropped_pct, &r.alloc_prb_mean, &r.epsilon, &r.wall_time_s};
      for (std::size_t k = 0; k < 8; ++k) *fields[k] = std::stod(cells[k + 3]);
      rows.push_back(r);
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Evaluation

struct SliceEvaluation {
  std::string slice_id;
  ServiceClass service_class = ServiceClass::kUrllc;
  std::vector<double> latency_samples;  // per-TTI mean wait, TTIs that served traffic
  std::vector<double> dropped_pct;      // per episode
  std::vector<double> episode_reward;   // per episode, mean SLA reward per TTI
  double mean_alloc_prb = 0.0;

  double mean_reward() const {
    if (episode_reward.empty()) return 0.0;
    return std::accumulate(episode_reward.begin(), episode_reward.end(), 0.0) / episode_reward.size();
  }
  double mean_latency_ms() const {
    if (latency_samples.empty()) return 0.0;
    return std::accumulate(latency_samples.begin(), latency_samples.end(), 0.0) / latency_samples.size();
  }
};

struct EvaluationReport {
  std::uint64_t seed = 0;
  int episodes = 0;
  std::vector<SliceEvaluation> slices;

  const SliceEvaluation* find(ServiceClass c) const {
    for (const auto& s : slices)
      if (s.service_class == c) return &s;
    return nullptr;
  }
};

inline nlohmann::json report_to_json(const EvaluationReport& r) {
  nlohmann::json slices = nlohmann::json::array();
  for (const auto& s : r.slices) {
    nlohmann::json cdf = nlohmann::json::array();
    for (const auto& p : empirical_cdf(s.latency_samples)) cdf.push_back({p.value, p.probability});
    slices.push_back({{"slice_id", s.slice_id},
                      {"class", to_string(s.service_class)},
                      {"latency_samples", s.latency_samples},
                      {"dropped_pct", s.dropped_pct},
                      {"episode_reward", s.episode_reward},
                      {"mean_alloc_prb", s.mean_alloc_prb},
                      {"mean_reward", s.mean_reward()},
                      {"mean_latency_ms", s.mean_latency_ms()},
                      {"latency_box", box_to_json(box_stats(s.latency_samples))},
                      {"dropped_box", box_to_json(box_stats(s.dropped_pct))},
                      {"latency_cdf", cdf}});
  }
  return {{"seed", r.seed}, {"episodes", r.episodes}, {"slices", slices}};
}

inline EvaluationReport report_from_json(const nlohmann::json& j) {
  EvaluationReport r;
  r.seed = j.at("seed").get<std::uint64_t>();
  r.episodes = j.at("episodes").get<int>();
  for (const auto& s : j.at("slices")) {
    SliceEvaluation e;
    e.slice_id = s.at("slice_id").get<std::string>();
    e.service_class = service_class_from_string(s.at("class").get<std::string>());
    e.latency_samples = s.at("latency_samples").get<std::vector<double>>();
    e.dropped_pct = s.at("dropped_pct").get<std::vector<double>>();
    e.episode_reward = s.at("episode_reward").get<std::vector<double>>();
    e.mean_alloc_prb = s.value("mean_alloc_prb", 0.0);
    r.slices.push_back(std::move(e));
  }
  return r;
}

inline double dropped_percent(std::int64_t dropped, std::int64_t arrived) {
  if (arrived <= 0) return 0.0;
  return std::clamp(100.0 * static_cast<double>(dropped) / static_cast<double>(arrived), 0.0, 100.0);
}

/// Greedy (epsilon = 0) rollout of one policy per slice.
inline EvaluationReport evaluate(const ExperimentConfig& cfg, const std::vector<MlpParams>& policies,
                                 std::uint64_t seed, int episodes) {
  if (policies.size() != cfg.slices.size()) throw std::invalid_argument("need one policy per slice");
  GnbEnv<> env(cfg.gnb, cfg.slices);
  const ActionCodec codec(cfg.gnb);
  const std::size_t n = cfg.slices.size();
  EvaluationReport report;
  report.seed = seed;
  report.episodes = episodes;
  report.slices.resize(n);
  std::vector<double> alloc_sum(n, 0.0);
  std::int64_t ttis = 0;
  for (std::size_t i = 0; i < n; ++i) {
    report.slices[i].slice_id = cfg.slices[i].slice_id;
    report.slices[i].service_class = cfg.slices[i].service_class;
  }
  std::vector<int> requested(n);
  for (int ep = 0; ep < episodes; ++ep) {
    auto obs = env.reset(derive_seed(seed, SeedStream::kEval, static_cast<std::uint64_t>(ep)));
    std::vector<std::int64_t> arrived(n, 0), dropped(n, 0);
    std::vector<double> reward(n, 0.0);
    int t = 0;
    while (!env.done()) {
      for (std::size_t i = 0; i < n; ++i) requested[i] = codec.to_prb(greedy_action(predict(policies[i], obs[i])));
      StepOutcome out = env.step_requests(requested);
      for (std::size_t i = 0; i < n; ++i) {
        const SliceStep& s = out.slices[i];
        if (s.served_packets > 0) report.slices[i].latency_samples.push_back(s.mean_wait_ms);
        arrived[i] += s.arrived_bits;
        dropped[i] += s.dropped_bits;
        alloc_sum[i] += s.granted_prb;
        reward[i] += sla_reward(s.mean_wait_ms, s.dropped_bits, s.granted_prb, cfg.slices[i].sla_latency_ms,
                                cfg.gnb.capacity_prb, cfg.reward.resource_cost);
      }
      obs = std::move(out.next_observation);
      ++t;
      ++ttis;
    }
    for (std::size_t i = 0; i < n; ++i) {
      report.slices[i].dropped_pct.push_back(dropped_percent(dropped[i], arrived[i]));
      report.slices[i].episode_reward.push_back(t > 0 ? reward[i] / t : 0.0);
    }
  }
  for (std::size_t i = 0; i < n; ++i) report.slices[i].mean_alloc_prb = ttis > 0 ? alloc_sum[i] / ttis : 0.0;
  return report;
}

// ---------------------------------------------------------------------------
// Training

struct TrainResult {
  std::vector<MetricsRow> rows;
  std::vector<MlpParams> policies;
  EvaluationReport evaluation;
  std::vector<std::int64_t> xai_refreshes;  // per slice
};

/// Recomputes the attribution-entropy bonus from fresh replay samples.
/// Draws only from `rng`, so the training stream is unaffected.
inline double refresh_xai_reward(const DdqnAgent& agent, const ExperimentConfig& cfg, Rng& rng) {
  const auto batch = agent.buffer().sample(cfg.explainer.batch_size, rng);
  std::vector<Explanation> expl;
  expl.reserve(batch.size());
  if (cfg.explainer.method == ExplainerMethod::kKernelShap) {
    std::vector<std::vector<double>> background;
    for (const auto& t : agent.buffer().sample(cfg.explainer.background_size, rng))
      background.emplace_back(t.state.begin(), t.state.end());
    for (const auto& t : batch) expl.push_back(explain_state(agent.online(), t.state, background));
  } else {
    const std::vector<double> zero(kFeatureCount, 0.0);
    for (const auto& t : batch) {
      Explanation e;
      e.action_index = greedy_action(predict(agent.online(), t.state));
      QValueModel model(agent.online(), e.action_index);
      e.phi = occlusion_attribution(model, t.state, zero);
      expl.push_back(std::move(e));
    }
  }
  return xai_reward(make_snapshot(expl, agent.train_steps()), cfg.reward);
}

using RowCallback = std::function<void(const MetricsRow&)>;

inline TrainResult train(const ExperimentConfig& cfg, const RowCallback& on_row = {}) {
  cfg.validate();
  const std::size_t n = cfg.slices.size();
  GnbEnv<> env(cfg.gnb, cfg.slices);
  const ActionCodec codec(cfg.gnb);
  const double wx = cfg.effective_xai_weight();

  std::vector<DdqnAgent> agents;
  std::vector<Rng> act_rng, train_rng, xai_rng;
  for (std::size_t i = 0; i < n; ++i) {
    agents.emplace_back(cfg.agents[i], derive_seed(cfg.seed, SeedStream::kInit, i));
    act_rng.emplace_back(derive_seed(cfg.seed, SeedStream::kAct, i));
    train_rng.emplace_back(derive_seed(cfg.seed, SeedStream::kTrain, i));
    xai_rng.emplace_back(derive_seed(cfg.seed, SeedStream::kXai, i));
  }
  std::vector<double> cached_xai(n, 0.0);

  TrainResult result;
  result.xai_refreshes.assign(n, 0);
  std::vector<int> actions(n), requested(n);
  std::int64_t global_step = 0;

  for (int ep = 0; ep < cfg.episodes; ++ep) {
    const auto started = std::chrono::steady_clock::now();
    auto obs = env.reset(derive_seed(cfg.seed, SeedStream::kEnv, static_cast<std::uint64_t>(ep)));
    std::vector<double> eps(n), sum_sla(n, 0.0), sum_xai(n, 0.0), sum_total(n, 0.0), sum_wait(n, 0.0), sum_alloc(n, 0.0);
    std::vector<int> wait_count(n, 0);
    std::vector<std::int64_t> arrived(n, 0), dropped(n, 0);
    for (std::size_t i = 0; i < n; ++i) eps[i] = epsilon_at(cfg.agents[i].epsilon, ep);
    int t = 0;

    while (!env.done()) {
      for (std::size_t i = 0; i < n; ++i) {
        actions[i] = agents[i].act(obs[i], eps[i], act_rng[i]);
        requested[i] = codec.to_prb(actions[i]);
      }
      StepOutcome out = env.step_requests(requested);
      ++global_step;
      for (std::size_t i = 0; i < n; ++i) {
        const SliceStep& s = out.slices[i];
        const double r_sla = sla_reward(s.mean_wait_ms, s.dropped_bits, s.granted_prb, cfg.slices[i].sla_latency_ms,
                                        cfg.gnb.capacity_prb, cfg.reward.resource_cost);
        const double r_xai = wx > 0.0 ? cached_xai[i] : 0.0;
        const double r = composite_reward(r_sla, r_xai, wx);
        agents[i].remember(Transition{obs[i], actions[i], r, out.next_observation[i], out.done});
        if (global_step % cfg.agents[i].train_every_steps == 0) {
          const auto loss = agents[i].train_step(train_rng[i]);
          if (loss && wx > 0.0 && agents[i].train_steps() % cfg.reward.refresh_every == 0) {
            cached_xai[i] = refresh_xai_reward(agents[i], cfg, xai_rng[i]);
            ++result.xai_refreshes[i];
          }
        }
        sum_sla[i] += r_sla;
        sum_xai[i] += r_xai;
        sum_total[i] += r;
        if (s.served_packets > 0) {
          sum_wait[i] += s.mean_wait_ms;
          ++wait_count[i];
        }
        sum_alloc[i] += s.granted_prb;
        arrived[i] += s.arrived_bits;
        dropped[i] += s.dropped_bits;
      }
      obs = std::move(out.next_observation);
      ++t;
    }

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    for (std::size_t i = 0; i < n; ++i) {
      MetricsRow row;
      row.episode = ep;
      row.slice_id = cfg.slices[i].slice_id;
      row.mode = cfg.mode;
      row.reward_sla = sum_sla[i] / t;
      row.reward_xai = sum_xai[i] / t;
      row.reward_total = sum_total[i] / t;
      row.mean_latency_ms = wait_count[i] > 0 ? sum_wait[i] / wait_count[i] : 0.0;
      row.dropped_pct = dropped_percent(dropped[i], arrived[i]);
      row.alloc_prb_mean = sum_alloc[i] / t;
      row.epsilon = eps[i];
      row.wall_time_s = std::max(wall, 1e-9);
      if (on_row) on_row(row);
      result.rows.push_back(row);
    }
  }

  for (const auto& a : agents) result.policies.push_back(a.online());
  result.evaluation = evaluate(cfg, result.policies, derive_seed(cfg.seed, SeedStream::kEval, 0), cfg.eval_episodes);
  return result;
}

// ---------------------------------------------------------------------------
// Comparison

struct ModeSummary {
  double urllc_median_latency_ms = std::numeric_limits<double>::quiet_NaN();
  double mmtc_drop_upper_whisker = std::numeric_limits<double>::quiet_NaN();
  double final_reward_mean = std::numeric_limits<double>::quiet_NaN();
  double final_reward_sla_mean = std::numeric_limits<double>::quiet_NaN();
  double mean_wall_time_s = std::numeric_limits<double>::quiet_NaN();
};

struct ComparisonSummary {
  ModeSummary rl;
  ModeSummary xrl;
  int final_window = 50;

  ModeSummary delta() const {
    return {xrl.urllc_median_latency_ms - rl.urllc_median_latency_ms,
            xrl.mmtc_drop_upper_whisker - rl.mmtc_drop_upper_whisker, xrl.final_reward_mean - rl.final_reward_mean,
            xrl.final_reward_sla_mean - rl.final_reward_sla_mean, xrl.mean_wall_time_s - rl.mean_wall_time_s};
  }
};

/// `final_window` episodes at the end of the run feed the reward means.
inline ModeSummary summarize(const EvaluationReport& report, const std::vector<MetricsRow>& rows, int final_window) {
  ModeSummary s;
  if (const auto* u = report.find(ServiceClass::kUrllc)) s.urllc_median_latency_ms = box_stats(u->latency_samples).median;
  if (const auto* m = report.find(ServiceClass::kMmtc)) s.mmtc_drop_upper_whisker = box_stats(m->dropped_pct).upper_whisker;
  if (!rows.empty()) {
    int last = 0;
    for (const auto& r : rows) last = std::max(last, r.episode);
    const int first = last - final_window + 1;
    double total = 0, sla = 0, wall = 0;
    std::size_t k = 0;
    for (const auto& r : rows) {
      wall += r.wall_time_s;
      if (r.episode < first) continue;
      total += r.reward_total;
      sla += r.reward_sla;
      ++k;
    }
    if (k > 0) {
      s.final_reward_mean = total / k;
      s.final_reward_sla_mean = sla / k;
    }
    s.mean_wall_time_s = wall / rows.size();
  }
  return s;
}

inline ComparisonSummary compare(const EvaluationReport& rl_report, const std::vector<MetricsRow>& rl_rows,
                                 const EvaluationReport& xrl_report, const std::vector<MetricsRow>& xrl_rows,
                                 int final_window = 50) {
  ComparisonSummary c;
  c.final_window = final_window;
  c.rl = summarize(rl_report, rl_rows, final_window);
  c.xrl = summarize(xrl_report, xrl_rows, final_window);
  return c;
}

inline nlohmann::json summary_to_json(const ModeSummary& s) {
  auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
  return {{"urllc_median_latency_ms", num(s.urllc_median_latency_ms)},
          {"mmtc_drop_upper_whisker_pct", num(s.mmtc_drop_upper_whisker)},
          {"final_reward_mean", num(s.final_reward_mean)},
          {"final_reward_sla_mean", num(s.final_reward_sla_mean)},
          {"mean_episode_wall_time_s", num(s.mean_wall_time_s)}};
}

inline nlohmann::json comparison_to_json(const ComparisonSummary& c) {
  return {{"final_window", c.final_window},
          {"rl", summary_to_json(c.rl)},
          {"xrl", summary_to_json(c.xrl)},
          {"delta_xrl_minus_rl", summary_to_json(c.delta())},
          {"reference",
           {{"urllc_median_latency_ms", {{"rl", 3.75}, {"xrl", 1.5}}},
            {"mmtc_drop_upper_whisker_pct", {{"rl", 11.7}, {"xrl", 4.8}}},
            {"median_episode_time_s", {{"rl", 6.0}, {"xrl", 16.0}}}}}};
}

inline std::string comparison_table(const ComparisonSummary& c) {
  const ModeSummary d = c.delta();
  auto line = [](const char* name, double rl, double xrl, double delta, const char* ref) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "%-34s %12.4f %12.4f %12.4f   %s\n", name, rl, xrl, delta, ref);
    return std::string(buf);
  };
  std::string out;
  char head[200];
  std::snprintf(head, sizeof head, "%-34s %12s %12s %12s   %s\n", "metric", "rl", "xrl", "xrl-rl", "reference (rl / xrl)");
  out += head;
  out += line("urllc median latency [ms]", c.rl.urllc_median_latency_ms, c.xrl.urllc_median_latency_ms,
              d.urllc_median_latency_ms, "3.75 / 1.5");
  out += line("mmtc dropped upper whisker [%]", c.rl.mmtc_drop_upper_whisker, c.xrl.mmtc_drop_upper_whisker,
              d.mmtc_drop_upper_whisker, "11.7 / 4.8");
  const std::string reward_name = "reward_total, last " + std::to_string(c.final_window) + " ep";
  const std::string sla_name = "reward_sla, last " + std::to_string(c.final_window) + " ep";
  out += line(reward_name.c_str(), c.rl.final_reward_mean, c.xrl.final_reward_mean, d.final_reward_mean, "-");
  out += line(sla_name.c_str(), c.rl.final_reward_sla_mean, c.xrl.final_reward_sla_mean, d.final_reward_sla_mean, "-");
  out += line("episode wall time [s]", c.rl.mean_wall_time_s, c.xrl.mean_wall_time_s, d.mean_wall_time_s,
              "6 / 16 (median, other hardware)");
  return out;
}

// ---------------------------------------------------------------------------
// Explanation dumps

struct WaterfallRecord {
  std::string phase;
  int episode = 0;
  std::string slice_id;
  int prb_allocation = 0;
  Observation state{};
  Explanation explanation;
};

inline nlohmann::json waterfall_to_json(const WaterfallRecord& w) {
  nlohmann::json j = explanation_to_json(w.explanation);
  return {{"episode", w.episode},
          {"slice_id", w.slice_id},
          {"action_index", w.explanation.action_index},
          {"prb_allocation", w.prb_allocation},
          {"base_value", w.explanation.base_value},
          {"fx", w.explanation.fx},
          {"features", j.at("features")}};
}

/// Rolls the environment half an episode with random actions (exploration)
/// and half greedily (exploitation), then explains the last state of each
/// phase for `slice_index` against a background sampled from the rollout.
inline std::vector<WaterfallRecord> explain_rollout(const ExperimentConfig& cfg, const std::vector<MlpParams>& policies,
                                                    std::uint64_t env_seed, int episode_tag, std::size_t slice_index) {
  if (policies.size() != cfg.slices.size()) throw std::invalid_argument("need one policy per slice");
  if (slice_index >= cfg.slices.size()) throw std::out_of_range("slice index out of range");
  GnbEnv<> env(cfg.gnb, cfg.slices);
  const ActionCodec codec(cfg.gnb);
  Rng rng(derive_seed(env_seed, SeedStream::kExplain, 0));
  const std::size_t n = cfg.slices.size();
  auto obs = env.reset(env_seed);
  std::vector<Observation> visited;
  std::vector<int> requested(n);
  const int half = std::max(1, cfg.gnb.episode_ttis / 2);

  std::vector<WaterfallRecord> records;
  for (const auto& [phase, epsilon] : {std::pair<std::string, double>{"exploration", 1.0}, {"exploitation", 0.0}}) {
    for (int t = 0; t < half && !env.done(); ++t) {
      for (std::size_t i = 0; i < n; ++i) requested[i] = codec.to_prb(act(policies[i], obs[i], epsilon, rng));
      obs = env.step_requests(requested).next_observation;
      visited.push_back(obs[slice_index]);
    }
    WaterfallRecord w;
    w.phase = phase;
    w.episode = episode_tag;
    w.slice_id = cfg.slices[slice_index].slice_id;
    w.state = obs[slice_index];
    records.push_back(std::move(w));
  }

  std::vector<std::vector<double>> background;
  std::uniform_int_distribution<std::size_t> pick(0, visited.size() - 1);
  for (std::size_t k = 0; k < cfg.explainer.background_size; ++k) {
    const Observation& s = visited[pick(rng)];
    background.emplace_back(s.begin(), s.end());
  }
  for (auto& w : records) {
    w.explanation = explain_state(policies[slice_index], w.state, background);
    w.prb_allocation = codec.to_prb(w.explanation.action_index);
  }
  return records;
}

}  // namespace sliceops
