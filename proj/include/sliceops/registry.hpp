#pragma once

// Versioned model registry with staging -> production -> archived stages,
// and the KPI monitor that raises retrain events.
//
// On disk a registry is a directory with one immutable JSON document per
// artifact under artifacts/ and an index.json holding the mutable stages.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "json.hpp"

#include "sliceops/mlp.hpp"

namespace sliceops {

inline std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 digest failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xF];
  }
  return out;
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

enum class Stage { kStaging, kProduction, kArchived };

inline std::string to_string(Stage s) {
  switch (s) {
    case Stage::kStaging: return "staging";
    case Stage::kProduction: return "production";
    case Stage::kArchived: return "archived";
  }
  return "?";
}

inline Stage stage_from_string(const std::string& s) {
  if (s == "staging") return Stage::kStaging;
  if (s == "production") return Stage::kProduction;
  if (s == "archived") return Stage::kArchived;
  throw std::invalid_argument("unknown stage '" + s + "'");
}

enum class RegistryErrc { kNotFound, kInvalidTransition, kChecksumMismatch, kParseError, kIntegrity };

class RegistryError : public std::runtime_error {
 public:
  RegistryError(RegistryErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  RegistryErrc code() const { return code_; }

 private:
  RegistryErrc code_;
};

struct ArtifactMetrics {
  double eval_reward = 0.0;
  double eval_latency_ms = 0.0;
};

struct ModelArtifact {
  std::string model_id;
  std::int64_t version = 0;
  std::string slice_id;
  Stage stage = Stage::kStaging;
  std::string params;
  std::string checksum;
  ArtifactMetrics metrics;
  std::string created_at;
};

struct RegistrationRequest {
  std::string slice_id;
  std::string params;
  std::string checksum;
  ArtifactMetrics metrics;
};

inline RegistrationRequest make_registration(const std::string& slice_id, const MlpParams& params,
                                             ArtifactMetrics metrics) {
  RegistrationRequest r{slice_id, serialize(params), {}, metrics};
  r.checksum = sha256_hex(r.params);
  return r;
}

struct RegistrationResult {
  std::string model_id;
  std::int64_t version = 0;
};

/// A parsed, verified production model. Immutable once published.
struct ProductionModel {
  ModelArtifact artifact;
  MlpParams params;
};

inline nlohmann::json artifact_to_json(const ModelArtifact& a, bool with_params = true) {
  nlohmann::json j = {
      {"model_id", a.model_id},
      {"version", a.version},
      {"slice_id", a.slice_id},
      {"stage", to_string(a.stage)},
      {"checksum", a.checksum},
      {"metrics", {{"eval_reward", a.metrics.eval_reward}, {"eval_latency_ms", a.metrics.eval_latency_ms}}},
      {"created_at", a.created_at},
  };
  if (with_params) j["params"] = a.params;
  return j;
}

inline ModelArtifact artifact_from_json(const nlohmann::json& j) {
  ModelArtifact a;
  a.model_id = j.at("model_id").get<std::string>();
  a.version = j.at("version").get<std::int64_t>();
  a.slice_id = j.at("slice_id").get<std::string>();
  if (j.contains("stage")) a.stage = stage_from_string(j.at("stage").get<std::string>());
  a.params = j.at("params").get<std::string>();
  a.checksum = j.at("checksum").get<std::string>();
  a.metrics.eval_reward = j.at("metrics").at("eval_reward").get<double>();
  a.metrics.eval_latency_ms = j.at("metrics").at("eval_latency_ms").get<double>();
  a.created_at = j.value("created_at", "");
  return a;
}

class ModelRegistry {
 public:
  /// In-memory registry.
  ModelRegistry() = default;

  /// Persistent registry rooted at `dir`; existing contents are re-scanned.
  explicit ModelRegistry(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(*dir_ / "artifacts");
    load();
  }

  RegistrationResult register_model(const RegistrationRequest& req) {
    if (req.slice_id.empty()) throw RegistryError(RegistryErrc::kParseError, "slice_id must not be empty");
    try {
      (void)deserialize(req.params);
    } catch (const ParseError& e) {
      throw RegistryError(RegistryErrc::kParseError, std::string("malformed params: ") + e.what());
    }
    if (sha256_hex(req.params) != req.checksum)
      throw RegistryError(RegistryErrc::kChecksumMismatch, "checksum does not match params");

    std::lock_guard lock(mu_);
    ModelArtifact a;
    a.slice_id = req.slice_id;
    a.version = ++last_version_[req.slice_id];
    a.model_id = req.slice_id + "-v" + std::to_string(a.version);
    a.stage = Stage::kStaging;
    a.params = req.params;
    a.checksum = req.checksum;
    a.metrics = req.metrics;
    a.created_at = utc_timestamp();
    if (dir_) write_artifact_doc(a);
    entries_[a.model_id] = Entry{a, false};
    order_.push_back(a.model_id);
    persist_index();
    return {a.model_id, a.version};
  }

  /// Verifies the checksum on every read; persistent registries re-read the
  /// artifact document from disk.
  ModelArtifact get(const std::string& model_id) const {
    std::lock_guard lock(mu_);
    return verified(model_id);
  }

  std::vector<ModelArtifact> list(const std::optional<std::string>& slice_id = std::nullopt,
                                  const std::optional<Stage>& stage = std::nullopt) const {
    std::lock_guard lock(mu_);
    std::vector<ModelArtifact> out;
    for (const auto& id : order_) {
      const ModelArtifact& a = entries_.at(id).artifact;
      if (slice_id && a.slice_id != *slice_id) continue;
      if (stage && a.stage != *stage) continue;
      out.push_back(a);
    }
    return out;
  }

  /// Makes `model_id` the production model of its slice and archives the
  /// previous one, in one critical section.
  ModelArtifact promote(const std::string& model_id) {
    std::lock_guard lock(mu_);
    ModelArtifact a = verified(model_id);
    if (a.stage == Stage::kArchived)
      throw RegistryError(RegistryErrc::kInvalidTransition, "cannot promote archived model " + model_id);
    if (a.stage == Stage::kProduction) return a;
    auto prod = std::make_shared<ProductionModel>();
    try {
      prod->params = deserialize(a.params);
    } catch (const ParseError& e) {
      throw RegistryError(RegistryErrc::kIntegrity, std::string("stored params unreadable: ") + e.what());
    }
    for (auto& [id, entry] : entries_)
      if (entry.artifact.slice_id == a.slice_id && entry.artifact.stage == Stage::kProduction)
        entry.artifact.stage = Stage::kArchived;
    entries_.at(model_id).artifact.stage = Stage::kProduction;
    a.stage = Stage::kProduction;
    prod->artifact = a;
    production_[a.slice_id] = std::move(prod);
    persist_index();
    return a;
  }

  std::shared_ptr<const ProductionModel> production(const std::string& slice_id) const {
    std::lock_guard lock(mu_);
    auto it = production_.find(slice_id);
    return it == production_.end() ? nullptr : it->second;
  }

  std::size_t production_count(const std::string& slice_id) const {
    std::lock_guard lock(mu_);
    std::size_t n = 0;
    for (const auto& [id, entry] : entries_)
      if (entry.artifact.slice_id == slice_id && entry.artifact.stage == Stage::kProduction) ++n;
    return n;
  }

  const std::optional<std::filesystem::path>& directory() const { return dir_; }

 private:
  struct Entry {
    ModelArtifact artifact;
    bool corrupt = false;
  };

  std::filesystem::path artifact_path(const std::string& model_id) const {
    return *dir_ / "artifacts" / (model_id + ".json");
  }

  ModelArtifact verified(const std::string& model_id) const {
    auto it = entries_.find(model_id);
    if (it == entries_.end()) throw RegistryError(RegistryErrc::kNotFound, "no model " + model_id);
    if (it->second.corrupt) throw RegistryError(RegistryErrc::kIntegrity, "stored artifact " + model_id + " is corrupt");
    ModelArtifact a = it->second.artifact;
    if (dir_) {
      ModelArtifact on_disk;
      try {
        on_disk = read_artifact_doc(artifact_path(model_id));
      } catch (const std::exception& e) {
        throw RegistryError(RegistryErrc::kIntegrity, "cannot read artifact " + model_id + ": " + e.what());
      }
      a.params = on_disk.params;
      a.checksum = on_disk.checksum;
    }
    if (sha256_hex(a.params) != a.checksum)
      throw RegistryError(RegistryErrc::kIntegrity, "checksum verification failed for " + model_id);
    return a;
  }

  static ModelArtifact read_artifact_doc(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    return artifact_from_json(nlohmann::json::parse(in));
  }

  void write_artifact_doc(const ModelArtifact& a) const {
    nlohmann::json j = artifact_to_json(a);
    j.erase("stage");
    write_file_atomic(artifact_path(a.model_id), j.dump(2));
  }

  static void write_file_atomic(const std::filesystem::path& p, const std::string& content) {
    const std::filesystem::path tmp = p.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw std::runtime_error("cannot write " + tmp.string());
      out << content;
      if (!out) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, p);
  }

  void persist_index() const {
    if (!dir_) return;
    nlohmann::json idx = {{"artifacts", nlohmann::json::array()}};
    for (const auto& id : order_)
      idx["artifacts"].push_back({{"model_id", id}, {"stage", to_string(entries_.at(id).artifact.stage)}});
    write_file_atomic(*dir_ / "index.json", idx.dump(2));
  }

  void load() {
    std::map<std::string, Stage> stages;
    std::vector<std::string> indexed;
    const auto index_path = *dir_ / "index.json";
    if (std::filesystem::exists(index_path)) {
      std::ifstream in(index_path);
      const auto idx = nlohmann::json::parse(in);
      for (const auto& e : idx.at("artifacts")) {
        indexed.push_back(e.at("model_id").get<std::string>());
        stages[indexed.back()] = stage_from_string(e.at("stage").get<std::string>());
      }
    }
    // Documents written after the last index update come back as staging.
    std::vector<std::string> found;
    for (const auto& f : std::filesystem::directory_iterator(*dir_ / "artifacts"))
      if (f.path().extension() == ".json") found.push_back(f.path().stem().string());
    std::sort(found.begin(), found.end());
    for (const auto& id : found)
      if (!stages.count(id)) indexed.push_back(id);

    for (const auto& id : indexed) {
      Entry entry;
      try {
        entry.artifact = read_artifact_doc(artifact_path(id));
        entry.corrupt = sha256_hex(entry.artifact.params) != entry.artifact.checksum;
      } catch (const std::exception&) {
        entry.corrupt = true;
        entry.artifact.model_id = id;
        const auto dash = id.rfind("-v");
        entry.artifact.slice_id = dash == std::string::npos ? id : id.substr(0, dash);
        if (dash != std::string::npos) entry.artifact.version = std::atoll(id.c_str() + dash + 2);
      }
      entry.artifact.stage = stages.count(id) ? stages[id] : Stage::kStaging;
      auto& last = last_version_[entry.artifact.slice_id];
      last = std::max(last, entry.artifact.version);
      if (entry.artifact.stage == Stage::kProduction && !entry.corrupt) {
        auto prod = std::make_shared<ProductionModel>();
        try {
          prod->params = deserialize(entry.artifact.params);
          prod->artifact = entry.artifact;
          production_[entry.artifact.slice_id] = std::move(prod);
        } catch (const ParseError&) {
          entry.corrupt = true;
        }
      }
      order_.push_back(id);
      entries_[id] = std::move(entry);
    }
  }

  std::optional<std::filesystem::path> dir_;
  mutable std::mutex mu_;
  std::map<std::string, Entry> entries_;
  std::vector<std::string> order_;
  std::map<std::string, std::int64_t> last_version_;
  std::map<std::string, std::shared_ptr<const ProductionModel>> production_;
};

// ---------------------------------------------------------------------------
// Monitoring

struct RetrainPolicy {
  double relative_drop_threshold = 0.20;
  std::size_t window = 50;

  void validate() const {
    if (!(relative_drop_threshold > 0.0 && relative_drop_threshold < 1.0))
      throw std::invalid_argument("relative_drop_threshold must lie in (0, 1)");
    if (window == 0) throw std::invalid_argument("monitor window must be >= 1");
  }
};

class MonitorWindow {
 public:
  explicit MonitorWindow(std::size_t capacity = 50) : capacity_(capacity) {}

  void push(double reward) {
    values_.push_back(reward);
    if (values_.size() > capacity_) values_.pop_front();
  }
  void clear() { values_.clear(); }
  std::size_t size() const { return values_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool full() const { return values_.size() == capacity_; }
  double mean() const {
    if (values_.empty()) return 0.0;
    return std::accumulate(values_.begin(), values_.end(), 0.0) / static_cast<double>(values_.size());
  }

 private:
  std::size_t capacity_;
  std::deque<double> values_;
};

struct RetrainEvent {
  std::int64_t event_id = 0;
  std::string slice_id;
  double rolling_mean = 0.0;
  double baseline = 0.0;
  std::string timestamp;
};

inline nlohmann::json event_to_json(const RetrainEvent& e) {
  return {{"event_id", e.event_id},
          {"slice_id", e.slice_id},
          {"rolling_mean", e.rolling_mean},
          {"baseline", e.baseline},
          {"timestamp", e.timestamp}};
}

inline RetrainEvent event_from_json(const nlohmann::json& j) {
  return {j.at("event_id").get<std::int64_t>(), j.at("slice_id").get<std::string>(),
          j.at("rolling_mean").get<double>(), j.at("baseline").get<double>(), j.value("timestamp", "")};
}

/// True when the window is full and its mean has fallen below
/// (1 - threshold) * baseline.
inline bool is_degraded(const MonitorWindow& w, double baseline, const RetrainPolicy& policy) {
  return w.full() && w.mean() < (1.0 - policy.relative_drop_threshold) * baseline;
}

}  // namespace sliceops
