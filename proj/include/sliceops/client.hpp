#pragma once

// HTTP client for the SliceOps service and the retrain watch loop.

#include <chrono>
#include <functional>
#include <optional>
#include <ostream>
#include <regex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "sliceops/harness.hpp"
#include "sliceops/registry.hpp"

#include "httplib.h"

namespace sliceops {

class ServiceUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class HttpStatusError : public std::runtime_error {
 public:
  HttpStatusError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

struct RetryPolicy {
  int attempts = 5;
  std::chrono::milliseconds initial_backoff{200};
  std::chrono::milliseconds max_backoff{5000};
};

class ServiceClient {
 public:
  explicit ServiceClient(const std::string& base_url, RetryPolicy retry = {}) : client_(base_url), retry_(retry) {
    client_.set_connection_timeout(std::chrono::seconds(5));
    client_.set_read_timeout(std::chrono::seconds(30));
  }

  bool healthy() {
    auto res = client_.Get("/healthz");
    return res && res->status == 200;
  }

  RegistrationResult register_model(const RegistrationRequest& r) {
    const nlohmann::json body = {{"slice_id", r.slice_id},
                                 {"params", r.params},
                                 {"checksum", r.checksum},
                                 {"metrics",
                                  {{"eval_reward", r.metrics.eval_reward},
                                   {"eval_latency_ms", r.metrics.eval_latency_ms}}}};
    const auto j = call("POST", "/v1/models", body.dump(), 201);
    return {j.at("model_id").get<std::string>(), j.at("version").get<std::int64_t>()};
  }

  ModelArtifact promote(const std::string& model_id) {
    const auto j = call("POST", "/v1/models/" + model_id + "/promote", "{}", 200);
    ModelArtifact a;
    a.model_id = j.at("model_id").get<std::string>();
    a.version = j.at("version").get<std::int64_t>();
    a.slice_id = j.at("slice_id").get<std::string>();
    a.stage = stage_from_string(j.at("stage").get<std::string>());
    return a;
  }

  ModelArtifact get(const std::string& model_id) { return artifact_from_json(call("GET", "/v1/models/" + model_id, "", 200)); }

  nlohmann::json list(const std::string& slice_id = "", const std::string& stage = "") {
    std::string path = "/v1/models?slice_id=" + slice_id + "&stage=" + stage;
    return call("GET", path, "", 200).at("models");
  }

  std::optional<ModelArtifact> production(const std::string& slice_id) {
    const auto models = list(slice_id, "production");
    if (models.empty()) return std::nullopt;
    return get(models.front().at("model_id").get<std::string>());
  }

  nlohmann::json infer(const std::string& slice_id, std::span<const double> state, bool explain) {
    const nlohmann::json body = {{"state", std::vector<double>(state.begin(), state.end())}, {"explain", explain}};
    return call("POST", "/v1/slices/" + slice_id + "/actions", body.dump(), 200);
  }

  nlohmann::json post_episode(const std::string& slice_id, double reward) {
    return call("POST", "/v1/slices/" + slice_id + "/episodes", nlohmann::json{{"reward", reward}}.dump(), 202);
  }

  nlohmann::json metrics(const std::string& slice_id) {
    return call("GET", "/v1/slices/" + slice_id + "/metrics", "", 200);
  }

 private:
  /// Transport failures are retried with doubling backoff; HTTP error
  /// statuses are returned to the caller immediately.
  nlohmann::json call(const std::string& method, const std::string& path, const std::string& body, int expected) {
    auto backoff = retry_.initial_backoff;
    for (int attempt = 1;; ++attempt) {
      httplib::Result res = method == "GET" ? client_.Get(path) : client_.Post(path, body, "application/json");
      if (res) {
        nlohmann::json j = res->body.empty() ? nlohmann::json::object() : nlohmann::json::parse(res->body);
        if (res->status != expected)
          throw HttpStatusError(res->status, method + " " + path + " -> " + std::to_string(res->status) + ": " +
                                                 j.value("error", res->body));
        return j;
      }
      if (attempt >= retry_.attempts)
        throw ServiceUnavailable(method + " " + path + ": service unreachable after " + std::to_string(attempt) +
                                 " attempts (" + httplib::to_string(res.error()) + ")");
      std::this_thread::sleep_for(backoff);
      backoff = std::min(backoff * 2, retry_.max_backoff);
    }
  }

  httplib::Client client_;
  RetryPolicy retry_;
};

struct WatchOptions {
  int max_cycles = -1;  // < 0: unbounded
  int max_polls = -1;   // < 0: unbounded
  std::chrono::milliseconds poll_interval{1000};
};

struct WatchCycle {
  RetrainEvent event;
  RegistrationResult registered;
};

/// Polls every slice's metrics; each open retrain event is resolved by
/// training a fresh set of agents, then registering and promoting the
/// affected slice's policy. Returns the completed cycles.
inline std::vector<WatchCycle> run_watch(const ExperimentConfig& cfg, ServiceClient& client, const WatchOptions& opts,
                                         std::ostream& log) {
  std::vector<WatchCycle> cycles;
  for (int poll = 0; opts.max_polls < 0 || poll < opts.max_polls; ++poll) {
    for (std::size_t i = 0; i < cfg.slices.size(); ++i) {
      if (opts.max_cycles >= 0 && static_cast<int>(cycles.size()) >= opts.max_cycles) return cycles;
      const std::string& slice_id = cfg.slices[i].slice_id;
      const auto m = client.metrics(slice_id);
      if (!m.contains("open_retrain_event")) continue;
      const RetrainEvent ev = event_from_json(m.at("open_retrain_event"));
      log << "retrain event " << ev.event_id << " for " << slice_id << ": rolling mean " << ev.rolling_mean
          << " < baseline " << ev.baseline << '\n';

      ExperimentConfig run = cfg;
      run.seed = derive_seed(cfg.seed, SeedStream::kInit, 1000 + static_cast<std::uint64_t>(ev.event_id));
      const TrainResult trained = train(run);
      const SliceEvaluation& eval = trained.evaluation.slices[i];
      const auto reg = client.register_model(
          make_registration(slice_id, trained.policies[i], {eval.mean_reward(), eval.mean_latency_ms()}));
      client.promote(reg.model_id);
      log << "promoted " << reg.model_id << " (eval_reward " << eval.mean_reward() << ")\n";
      cycles.push_back({ev, reg});
    }
    if (opts.max_cycles >= 0 && static_cast<int>(cycles.size()) >= opts.max_cycles) return cycles;
    if (opts.max_polls < 0 || poll + 1 < opts.max_polls) std::this_thread::sleep_for(opts.poll_interval);
  }
  return cycles;
}

}  // namespace sliceops
