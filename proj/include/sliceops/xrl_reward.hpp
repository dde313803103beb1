#pragma once

// Entropy mapper and composite reward: attribution vectors are turned into
// probability distributions, their batch-maximum entropy into an XAI bonus
// that is added to the SLA reward.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "sliceops/shap.hpp"

namespace sliceops {

struct RewardConfig {
  double xai_weight = 1.0;
  double xai_cap = 2.0;
  double resource_cost = 0.5;
  std::int64_t refresh_every = 10;

  void validate() const {
    if (!(xai_weight >= 0 && xai_cap >= 0 && resource_cost >= 0))
      throw std::invalid_argument("reward weights must be non-negative");
    if (refresh_every <= 0) throw std::invalid_argument("refresh_every must be > 0");
  }
};

inline std::vector<double> softmax(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("softmax of an empty vector");
  double hi = v[0];
  for (double x : v) {
    if (!std::isfinite(x)) throw std::invalid_argument("softmax input must be finite");
    hi = std::max(hi, x);
  }
  std::vector<double> p(v.size());
  double z = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) z += (p[i] = std::exp(v[i] - hi));
  for (double& x : p) x /= z;
  return p;
}

/// Shannon entropy in nats, 0 ln 0 := 0.
inline double entropy(std::span<const double> p) {
  double total = 0.0;
  for (double x : p) {
    if (!(x >= 0.0)) throw std::invalid_argument("probabilities must be non-negative");
    total += x;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("probabilities must sum to 1");
  double h = 0.0;
  for (double x : p)
    if (x > 0.0) h -= x * std::log(x);
  return std::max(0.0, h);
}

/// Entropy of softmax(|phi|).
inline double attribution_entropy(std::span<const double> phi) {
  std::vector<double> mag(phi.size());
  std::transform(phi.begin(), phi.end(), mag.begin(), [](double x) { return std::abs(x); });
  return entropy(softmax(mag));
}

struct EntropySnapshot {
  std::vector<double> entropies;
  double h_max = 0.0;
  std::int64_t computed_at = 0;
};

inline EntropySnapshot make_snapshot(std::span<const Explanation> explanations, std::int64_t train_step) {
  EntropySnapshot s;
  s.computed_at = train_step;
  for (const auto& e : explanations) s.entropies.push_back(attribution_entropy(e.phi));
  if (!s.entropies.empty()) s.h_max = *std::max_element(s.entropies.begin(), s.entropies.end());
  return s;
}

inline double xai_reward(const EntropySnapshot& snapshot, const RewardConfig& config) {
  if (snapshot.entropies.empty()) throw std::invalid_argument("empty entropy snapshot");
  if (snapshot.h_max < 1e-6) return config.xai_cap;
  return std::min(config.xai_cap, 1.0 / snapshot.h_max);
}

/// +1 when the slice met its SLA this TTI, -1 otherwise, minus a resource
/// cost proportional to the granted share. Dropped traffic counts as a
/// violation.
inline double sla_reward(double mean_wait_ms, std::int64_t dropped_bits, int granted_prb, double sla_latency_ms,
                         int capacity_prb, double resource_cost) {
  const bool met = mean_wait_ms <= sla_latency_ms && dropped_bits == 0;
  return (met ? 1.0 : -1.0) - resource_cost * (static_cast<double>(granted_prb) / capacity_prb);
}

inline double sla_reward(double mean_wait_ms, int granted_prb, double sla_latency_ms, int capacity_prb,
                         double resource_cost) {
  return sla_reward(mean_wait_ms, 0, granted_prb, sla_latency_ms, capacity_prb, resource_cost);
}

inline double composite_reward(double r_sla, double r_xai, double xai_weight) { return r_sla + xai_weight * r_xai; }

}  // namespace sliceops
