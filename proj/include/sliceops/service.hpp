#pragma once

// The SliceOps instance: registry + inference + KPI monitoring, and an
// HTTP/JSON front end over it.

#include <atomic>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

// Eigen must precede httplib.h: <resolv.h> defines a `_res` macro.
#include "sliceops/ddqn.hpp"
#include "sliceops/env_gnb.hpp"
#include "sliceops/registry.hpp"
#include "sliceops/shap.hpp"

#include "httplib.h"

namespace sliceops {

inline nlohmann::json explanation_to_json(const Explanation& e) {
  nlohmann::json features = nlohmann::json::array();
  for (std::size_t i = 0; i < e.phi.size(); ++i)
    features.push_back({{"name", i < e.feature_names.size() ? e.feature_names[i] : "f" + std::to_string(i)},
                        {"value", i < e.feature_values.size() ? e.feature_values[i] : 0.0},
                        {"phi", e.phi[i]}});
  return {{"action_index", e.action_index}, {"base_value", e.base_value}, {"fx", e.fx}, {"features", features}};
}

inline Explanation explanation_from_json(const nlohmann::json& j) {
  Explanation e;
  e.action_index = j.at("action_index").get<int>();
  e.base_value = j.at("base_value").get<double>();
  e.fx = j.at("fx").get<double>();
  for (const auto& f : j.at("features")) {
    e.feature_names.push_back(f.at("name").get<std::string>());
    e.feature_values.push_back(f.at("value").get<double>());
    e.phi.push_back(f.at("phi").get<double>());
  }
  return e;
}

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NoProductionModel : public std::runtime_error {
 public:
  explicit NoProductionModel(const std::string& slice_id)
      : std::runtime_error("no model in production for slice " + slice_id) {}
};

struct InferenceResult {
  int action_index = 0;
  int prb_allocation = 0;
  std::string model_id;
  std::int64_t version = 0;
  std::optional<Explanation> explanation;
};

struct SliceMetrics {
  double rolling_mean_reward = 0.0;
  std::size_t window_size = 0;
  std::size_t window_capacity = 0;
  std::optional<RetrainEvent> open_event;
};

class SliceOpsService {
 public:
  SliceOpsService(std::shared_ptr<ModelRegistry> registry, GnbConfig gnb, RetrainPolicy policy = {})
      : registry_(std::move(registry)), codec_(gnb), policy_(policy) {
    policy_.validate();
    if (!registry_) throw std::invalid_argument("service needs a registry");
  }

  ModelRegistry& registry() { return *registry_; }
  const RetrainPolicy& policy() const { return policy_; }

  /// Background rows used when an inference request asks for an explanation.
  void set_background(const std::string& slice_id, std::vector<std::vector<double>> rows) {
    std::lock_guard lock(mu_);
    background_[slice_id] = std::make_shared<const std::vector<std::vector<double>>>(std::move(rows));
  }

  RegistrationResult register_model(const RegistrationRequest& req) { return registry_->register_model(req); }

  /// Promotion resolves any open retrain event of the slice and restarts its
  /// monitoring window.
  ModelArtifact promote(const std::string& model_id) {
    ModelArtifact a = registry_->promote(model_id);
    std::lock_guard lock(mu_);
    auto& m = monitor(a.slice_id);
    m.window.clear();
    m.open_event.reset();
    return a;
  }

  InferenceResult infer(const std::string& slice_id, std::span<const double> state, bool explain) const {
    if (state.size() != kFeatureCount)
      throw ValidationError("state must have " + std::to_string(kFeatureCount) + " entries, got " +
                            std::to_string(state.size()));
    for (double v : state)
      if (!std::isfinite(v)) throw ValidationError("state entries must be finite");
    const auto prod = registry_->production(slice_id);
    if (!prod) throw NoProductionModel(slice_id);

    InferenceResult r;
    r.model_id = prod->artifact.model_id;
    r.version = prod->artifact.version;
    Observation obs{};
    std::copy(state.begin(), state.end(), obs.begin());
    r.action_index = greedy_action(predict(prod->params, obs));
    r.prb_allocation = codec_.to_prb(r.action_index);
    if (explain) {
      std::shared_ptr<const std::vector<std::vector<double>>> bg;
      {
        std::lock_guard lock(mu_);
        auto it = background_.find(slice_id);
        if (it != background_.end()) bg = it->second;
      }
      // Without a configured background the all-zero state is the reference.
      static const std::vector<std::vector<double>> kZero{std::vector<double>(kFeatureCount, 0.0)};
      r.explanation = explain_state(prod->params, obs, bg ? *bg : kZero);
    }
    return r;
  }

  std::optional<RetrainEvent> record_episode(const std::string& slice_id, double reward) {
    if (!std::isfinite(reward)) throw ValidationError("reward must be finite");
    {
      std::lock_guard lock(mu_);
      monitor(slice_id).window.push(reward);
    }
    return check_degradation(slice_id);
  }

  /// Opens a retrain event when the rolling mean drops below
  /// (1 - threshold) * eval_reward of the production model. At most one
  /// event stays open per slice.
  std::optional<RetrainEvent> check_degradation(const std::string& slice_id) {
    const auto prod = registry_->production(slice_id);
    std::lock_guard lock(mu_);
    auto& m = monitor(slice_id);
    if (!prod || m.open_event) return std::nullopt;
    const double baseline = prod->artifact.metrics.eval_reward;
    if (!is_degraded(m.window, baseline, policy_)) return std::nullopt;
    m.open_event = RetrainEvent{++event_counter_, slice_id, m.window.mean(), baseline, utc_timestamp()};
    return m.open_event;
  }

  SliceMetrics metrics(const std::string& slice_id) const {
    std::lock_guard lock(mu_);
    SliceMetrics out;
    out.window_capacity = policy_.window;
    auto it = monitors_.find(slice_id);
    if (it == monitors_.end()) return out;
    out.rolling_mean_reward = it->second.window.mean();
    out.window_size = it->second.window.size();
    out.open_event = it->second.open_event;
    return out;
  }

 private:
  struct SliceMonitor {
    MonitorWindow window;
    std::optional<RetrainEvent> open_event;
  };

  SliceMonitor& monitor(const std::string& slice_id) {
    auto it = monitors_.find(slice_id);
    if (it == monitors_.end()) it = monitors_.emplace(slice_id, SliceMonitor{MonitorWindow(policy_.window), {}}).first;
    return it->second;
  }

  std::shared_ptr<ModelRegistry> registry_;
  ActionCodec codec_;
  RetrainPolicy policy_;
  mutable std::mutex mu_;
  std::map<std::string, SliceMonitor> monitors_;
  std::map<std::string, std::shared_ptr<const std::vector<std::vector<double>>>> background_;
  std::int64_t event_counter_ = 0;
};

// ---------------------------------------------------------------------------
// HTTP front end

inline int http_status(RegistryErrc code) {
  switch (code) {
    case RegistryErrc::kNotFound: return 404;
    case RegistryErrc::kInvalidTransition: return 409;
    case RegistryErrc::kChecksumMismatch:
    case RegistryErrc::kParseError: return 400;
    case RegistryErrc::kIntegrity: return 500;
  }
  return 500;
}

class HttpFrontend {
 public:
  explicit HttpFrontend(std::shared_ptr<SliceOpsService> service) : service_(std::move(service)) { install_routes(); }
  ~HttpFrontend() { stop(); }

  HttpFrontend(const HttpFrontend&) = delete;
  HttpFrontend& operator=(const HttpFrontend&) = delete;

  /// Blocks until stop() is called.
  bool listen(const std::string& host, int port) { return server_.listen(host, port); }

  /// Binds an ephemeral port and serves on a background thread.
  int start_background(const std::string& host = "127.0.0.1") {
    const int port = server_.bind_to_any_port(host);
    if (port <= 0) throw std::runtime_error("cannot bind HTTP port");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port;
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

 private:
  using Json = nlohmann::json;

  static void reply(httplib::Response& res, int status, const Json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void error(httplib::Response& res, int status, const std::string& message) {
    reply(res, status, Json{{"error", message}});
  }

  template <class F>
  static void guarded(httplib::Response& res, F&& f) {
    try {
      f();
    } catch (const RegistryError& e) {
      error(res, http_status(e.code()), e.what());
    } catch (const NoProductionModel& e) {
      error(res, 503, e.what());
    } catch (const ValidationError& e) {
      error(res, 400, e.what());
    } catch (const Json::exception& e) {
      error(res, 400, std::string("bad request body: ") + e.what());
    } catch (const std::invalid_argument& e) {
      error(res, 400, e.what());
    } catch (const std::exception& e) {
      error(res, 500, e.what());
    }
  }

  void install_routes() {
    server_.Get("/healthz", [](const httplib::Request&, httplib::Response& res) { reply(res, 200, {{"status", "ok"}}); });

    server_.Post("/v1/models", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const Json body = Json::parse(req.body);
        RegistrationRequest r;
        r.slice_id = body.at("slice_id").get<std::string>();
        r.params = body.at("params").get<std::string>();
        r.checksum = body.at("checksum").get<std::string>();
        if (body.contains("metrics")) {
          r.metrics.eval_reward = body["metrics"].value("eval_reward", 0.0);
          r.metrics.eval_latency_ms = body["metrics"].value("eval_latency_ms", 0.0);
        }
        const RegistrationResult out = service_->register_model(r);
        reply(res, 201, {{"model_id", out.model_id}, {"version", out.version}});
      });
    });

    server_.Get("/v1/models", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        std::optional<std::string> slice;
        std::optional<Stage> stage;
        if (req.has_param("slice_id") && !req.get_param_value("slice_id").empty())
          slice = req.get_param_value("slice_id");
        if (req.has_param("stage") && !req.get_param_value("stage").empty())
          stage = stage_from_string(req.get_param_value("stage"));
        Json list = Json::array();
        for (const auto& a : service_->registry().list(slice, stage)) list.push_back(artifact_to_json(a, false));
        reply(res, 200, {{"models", list}});
      });
    });

    server_.Get(R"(/v1/models/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { reply(res, 200, artifact_to_json(service_->registry().get(req.matches[1]))); });
    });

    server_.Post(R"(/v1/models/([^/]+)/promote)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { reply(res, 200, artifact_to_json(service_->promote(req.matches[1]), false)); });
    });

    server_.Post(R"(/v1/slices/([^/]+)/actions)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const Json body = Json::parse(req.body);
        const auto& st = body.at("state");
        if (!st.is_array()) throw ValidationError("state must be an array");
        std::vector<double> state;
        for (const auto& v : st) {
          if (!v.is_number()) throw ValidationError("state entries must be numbers");
          state.push_back(v.get<double>());
        }
        const bool explain = body.value("explain", false);
        const InferenceResult r = service_->infer(req.matches[1], state, explain);
        Json out = {{"action_index", r.action_index},
                    {"prb_allocation", r.prb_allocation},
                    {"model_id", r.model_id},
                    {"version", r.version}};
        if (r.explanation) out["explanation"] = explanation_to_json(*r.explanation);
        reply(res, 200, out);
      });
    });

    server_.Post(R"(/v1/slices/([^/]+)/episodes)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const Json body = Json::parse(req.body);
        const auto event = service_->record_episode(req.matches[1], body.at("reward").get<double>());
        Json out = {{"accepted", true}};
        if (event) out["retrain_event"] = event_to_json(*event);
        reply(res, 202, out);
      });
    });

    server_.Get(R"(/v1/slices/([^/]+)/metrics)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const SliceMetrics m = service_->metrics(req.matches[1]);
        Json out = {{"rolling_mean_reward", m.rolling_mean_reward},
                    {"window", m.window_capacity},
                    {"window_fill", m.window_size}};
        if (m.open_event) out["open_retrain_event"] = event_to_json(*m.open_event);
        reply(res, 200, out);
      });
    });
  }

  std::shared_ptr<SliceOpsService> service_;
  httplib::Server server_;
  std::thread thread_;
};

}  // namespace sliceops
