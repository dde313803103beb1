// sliceops: train, evaluate, compare, explain, serve, watch.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "sliceops/sliceops.hpp"

namespace fs = std::filesystem;
using namespace sliceops;

namespace {

struct CommonFlags {
  std::string config;
  std::string mode;
  std::optional<std::uint64_t> seed;
  std::optional<int> episodes;
  std::string out;
  std::string service_url;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "Experiment config (JSON)");
  cmd->add_option("--mode", f.mode, "rl or xrl")->check(CLI::IsMember({"rl", "xrl"}));
  cmd->add_option("--seed", f.seed, "Random seed");
  cmd->add_option("--episodes", f.episodes, "Episode count");
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--service-url", f.service_url, "SliceOps service base URL, e.g. http://127.0.0.1:8080");
}

ExperimentConfig resolve(const CommonFlags& f) {
  ExperimentConfig cfg = f.config.empty() ? ExperimentConfig{} : load_config(f.config);
  if (!f.mode.empty()) cfg.mode = mode_from_string(f.mode);
  if (f.seed) cfg.seed = *f.seed;
  if (f.episodes) cfg.episodes = *f.episodes;
  if (!f.out.empty()) cfg.out_dir = f.out;
  cfg.validate();
  return cfg;
}

void write_json(const fs::path& p, const nlohmann::json& j) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  return nlohmann::json::parse(in);
}

/// Production policies, one per configured slice, from the service or from
/// the local registry under <out>/registry.
std::vector<MlpParams> load_policies(const ExperimentConfig& cfg, const std::string& service_url) {
  std::vector<MlpParams> policies;
  if (!service_url.empty()) {
    ServiceClient client(service_url);
    for (const auto& s : cfg.slices) {
      const auto a = client.production(s.slice_id);
      if (!a) throw std::runtime_error("no production model for slice " + s.slice_id);
      if (sha256_hex(a->params) != a->checksum) throw std::runtime_error("checksum mismatch for " + a->model_id);
      policies.push_back(deserialize(a->params));
    }
    return policies;
  }
  ModelRegistry registry(fs::path(cfg.out_dir) / "registry");
  for (const auto& s : cfg.slices) {
    const auto prod = registry.production(s.slice_id);
    if (!prod) throw std::runtime_error("no production model for slice " + s.slice_id + " in " + cfg.out_dir + "/registry");
    registry.get(prod->artifact.model_id);  // checksum gate
    policies.push_back(prod->params);
  }
  return policies;
}

int cmd_train(const CommonFlags& f) {
  const ExperimentConfig cfg = resolve(f);
  fs::create_directories(cfg.out_dir);
  std::cerr << "training " << to_string(cfg.mode) << " for " << cfg.episodes << " episodes (seed " << cfg.seed << ")\n";
  const TrainResult result = train(cfg, [&](const MetricsRow& r) {
    if (r.slice_id == cfg.slices.front().slice_id && (r.episode + 1) % 10 == 0)
      std::cerr << "  episode " << r.episode + 1 << "  eps " << r.epsilon << "  wall " << r.wall_time_s << "s\n";
  });
  write_metrics_csv(fs::path(cfg.out_dir) / "metrics.csv", result.rows);
  write_json(fs::path(cfg.out_dir) / "report.json", report_to_json(result.evaluation));
  fs::create_directories(fs::path(cfg.out_dir) / "models");

  std::unique_ptr<ServiceClient> client;
  std::unique_ptr<ModelRegistry> local;
  if (!f.service_url.empty()) client = std::make_unique<ServiceClient>(f.service_url);
  else local = std::make_unique<ModelRegistry>(fs::path(cfg.out_dir) / "registry");

  for (std::size_t i = 0; i < cfg.slices.size(); ++i) {
    const auto& eval = result.evaluation.slices[i];
    const auto req = make_registration(cfg.slices[i].slice_id, result.policies[i], {eval.mean_reward(), eval.mean_latency_ms()});
    std::ofstream(fs::path(cfg.out_dir) / "models" / (cfg.slices[i].slice_id + ".mlp")) << req.params;
    const RegistrationResult reg = client ? client->register_model(req) : local->register_model(req);
    if (client) client->promote(reg.model_id);
    else local->promote(reg.model_id);
    std::cout << cfg.slices[i].slice_id << ": " << reg.model_id << " eval_reward=" << eval.mean_reward()
              << " eval_latency_ms=" << eval.mean_latency_ms() << '\n';
  }
  return 0;
}

int cmd_evaluate(const CommonFlags& f) {
  const ExperimentConfig cfg = resolve(f);
  const auto policies = load_policies(cfg, f.service_url);
  const int episodes = f.episodes ? *f.episodes : cfg.eval_episodes;
  const EvaluationReport report = evaluate(cfg, policies, cfg.seed, episodes);
  fs::create_directories(cfg.out_dir);
  write_json(fs::path(cfg.out_dir) / "evaluation.json", report_to_json(report));
  for (const auto& s : report.slices) {
    const BoxStats lat = box_stats(s.latency_samples), drop = box_stats(s.dropped_pct);
    std::cout << s.slice_id << ": median latency " << lat.median << " ms, dropped upper whisker " << drop.upper_whisker
              << " %, mean reward " << s.mean_reward() << '\n';
  }
  return 0;
}

int cmd_compare(const std::string& rl_dir, const std::string& xrl_dir, const std::string& report_name,
                int final_window, const std::string& out) {
  const auto rl_report = report_from_json(read_json(fs::path(rl_dir) / report_name));
  const auto xrl_report = report_from_json(read_json(fs::path(xrl_dir) / report_name));
  const auto rl_rows = read_metrics_csv(fs::path(rl_dir) / "metrics.csv");
  const auto xrl_rows = read_metrics_csv(fs::path(xrl_dir) / "metrics.csv");
  const ComparisonSummary c = compare(rl_report, rl_rows, xrl_report, xrl_rows, final_window);
  std::cout << comparison_table(c);
  if (!out.empty()) {
    fs::create_directories(out);
    write_json(fs::path(out) / "comparison.json", comparison_to_json(c));
  }
  return 0;
}

int cmd_explain(const CommonFlags& f, int episode_tag, const std::string& slice) {
  const ExperimentConfig cfg = resolve(f);
  const auto policies = load_policies(cfg, f.service_url);
  std::size_t index = cfg.slices.size();
  for (std::size_t i = 0; i < cfg.slices.size(); ++i) {
    const bool match = slice.empty() ? cfg.slices[i].service_class == ServiceClass::kUrllc : cfg.slices[i].slice_id == slice;
    if (match) {
      index = i;
      break;
    }
  }
  if (index == cfg.slices.size()) throw std::runtime_error("no slice to explain");
  const auto records = explain_rollout(cfg, policies, cfg.seed, episode_tag, index);
  fs::create_directories(cfg.out_dir);
  for (const auto& w : records) {
    const fs::path p = fs::path(cfg.out_dir) / ("waterfall_" + std::to_string(episode_tag) + "_" + w.phase + ".json");
    write_json(p, waterfall_to_json(w));
    std::cout << p.string() << ": action " << w.explanation.action_index << " (" << w.prb_allocation
              << " PRB), E[f]=" << w.explanation.base_value << " f(x)=" << w.explanation.fx << '\n';
  }
  return 0;
}

HttpFrontend* g_frontend = nullptr;

int cmd_serve(const CommonFlags& f, const std::string& registry_dir, const std::string& host, int port) {
  const ExperimentConfig cfg = resolve(f);
  auto registry = std::make_shared<ModelRegistry>(registry_dir);
  auto service = std::make_shared<SliceOpsService>(registry, cfg.gnb, cfg.monitor);

  // Background for explanations: states visited under random allocations.
  GnbEnv<> env(cfg.gnb, cfg.slices);
  const ActionCodec codec(cfg.gnb);
  Rng rng(derive_seed(cfg.seed, SeedStream::kExplain, 1));
  std::uniform_int_distribution<int> any(0, codec.action_count() - 1);
  auto obs = env.reset(cfg.seed);
  std::vector<std::vector<Observation>> seen(cfg.slices.size());
  std::vector<int> req(cfg.slices.size());
  while (!env.done()) {
    for (auto& r : req) r = codec.to_prb(any(rng));
    obs = env.step_requests(req).next_observation;
    for (std::size_t i = 0; i < obs.size(); ++i) seen[i].push_back(obs[i]);
  }
  for (std::size_t i = 0; i < cfg.slices.size(); ++i) {
    std::vector<Observation> sample;
    std::uniform_int_distribution<std::size_t> pick(0, seen[i].size() - 1);
    for (std::size_t k = 0; k < cfg.explainer.background_size; ++k) sample.push_back(seen[i][pick(rng)]);
    service->set_background(cfg.slices[i].slice_id, to_background(sample));
  }

  HttpFrontend frontend(service);
  g_frontend = &frontend;
  std::signal(SIGINT, [](int) {
    if (g_frontend) g_frontend->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_frontend) g_frontend->stop();
  });
  std::cerr << "serving on " << host << ":" << port << " (registry " << registry_dir << ")\n";
  if (!frontend.listen(host, port)) {
    std::cerr << "cannot listen on " << host << ":" << port << '\n';
    return 1;
  }
  return 0;
}

int cmd_watch(const CommonFlags& f, int max_cycles, int max_polls, int poll_ms) {
  if (f.service_url.empty()) throw std::runtime_error("watch requires --service-url");
  const ExperimentConfig cfg = resolve(f);
  ServiceClient client(f.service_url);
  WatchOptions opts;
  opts.max_cycles = max_cycles;
  opts.max_polls = max_polls;
  opts.poll_interval = std::chrono::milliseconds(poll_ms);
  const auto cycles = run_watch(cfg, client, opts, std::cerr);
  std::cout << "retrain cycles: " << cycles.size() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SliceOps: explanation-guided DRL slicing with a model lifecycle service"};
  app.require_subcommand(1);

  CommonFlags train_f, eval_f, explain_f, serve_f, watch_f;
  auto* train_cmd = app.add_subcommand("train", "Train RL or XRL agents, evaluate, register and promote");
  add_common(train_cmd, train_f);

  auto* eval_cmd = app.add_subcommand("evaluate", "Greedy evaluation of the production policies");
  add_common(eval_cmd, eval_f);

  std::string rl_dir, xrl_dir, cmp_out, report_name = "report.json";
  int final_window = 50;
  auto* cmp_cmd = app.add_subcommand("compare", "Compare an RL and an XRL run directory");
  cmp_cmd->add_option("--rl", rl_dir, "RL run directory")->required();
  cmp_cmd->add_option("--xrl", xrl_dir, "XRL run directory")->required();
  cmp_cmd->add_option("--report", report_name, "Report file inside each directory");
  cmp_cmd->add_option("--final-window", final_window, "Episodes at the end of training used for reward means");
  cmp_cmd->add_option("--out", cmp_out, "Directory for comparison.json");

  int episode_tag = 0;
  std::string explain_slice;
  auto* explain_cmd = app.add_subcommand("explain", "Dump waterfall explanations for exploration/exploitation states");
  add_common(explain_cmd, explain_f);
  explain_cmd->add_option("--episode", episode_tag, "Episode tag written into the dumps");
  explain_cmd->add_option("--slice", explain_slice, "Slice id (default: the URLLC slice)");

  std::string registry_dir = "registry", host = "127.0.0.1";
  int port = 8080;
  auto* serve_cmd = app.add_subcommand("serve", "Run the SliceOps HTTP service");
  add_common(serve_cmd, serve_f);
  serve_cmd->add_option("--registry", registry_dir, "Registry directory");
  serve_cmd->add_option("--host", host, "Bind address");
  serve_cmd->add_option("--port", port, "Port");

  int max_cycles = -1, max_polls = -1, poll_ms = 1000;
  auto* watch_cmd = app.add_subcommand("watch", "Poll retrain events and retrain/promote affected slices");
  add_common(watch_cmd, watch_f);
  watch_cmd->add_option("--max-cycles", max_cycles, "Stop after this many retrain cycles");
  watch_cmd->add_option("--max-polls", max_polls, "Stop after this many polling rounds");
  watch_cmd->add_option("--poll-ms", poll_ms, "Polling interval in milliseconds");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return cmd_train(train_f);
    if (*eval_cmd) return cmd_evaluate(eval_f);
    if (*cmp_cmd) return cmd_compare(rl_dir, xrl_dir, report_name, final_window, cmp_out);
    if (*explain_cmd) return cmd_explain(explain_f, episode_tag, explain_slice);
    if (*serve_cmd) return cmd_serve(serve_f, registry_dir, host, port);
    if (*watch_cmd) return cmd_watch(watch_f, max_cycles, max_polls, poll_ms);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
