#pragma once

// Per-slice double-DQN agent.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "sliceops/env_gnb.hpp"
#include "sliceops/mlp.hpp"

namespace sliceops {

struct EpsilonSchedule {
  double start = 1.0;
  double min = 0.01;
  double decay = 0.995;
};

struct AgentConfig {
  double gamma = 0.99;
  double lr = 0.001;
  std::size_t batch_size = 32;
  std::size_t buffer_capacity = 20000;
  std::int64_t target_sync_steps = 200;
  std::int64_t train_every_steps = 1;
  EpsilonSchedule epsilon;
  std::vector<std::size_t> layer_dims = default_layer_dims();

  void validate() const {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in [0, 1)");
    if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be > 0");
    if (batch_size == 0 || batch_size > buffer_capacity)
      throw std::invalid_argument("batch_size must be in [1, buffer_capacity]");
    if (target_sync_steps <= 0 || train_every_steps <= 0)
      throw std::invalid_argument("target_sync_steps and train_every_steps must be > 0");
    if (!(epsilon.min > 0.0 && epsilon.min <= epsilon.start && epsilon.start <= 1.0))
      throw std::invalid_argument("epsilon.min must lie in (0, epsilon.start]");
    if (!(epsilon.decay > 0.0 && epsilon.decay <= 1.0)) throw std::invalid_argument("epsilon.decay must lie in (0, 1]");
    if (layer_dims.size() < 2 || layer_dims.front() != kFeatureCount)
      throw std::invalid_argument("network input width must equal the observation width");
  }
};

inline double epsilon_at(const EpsilonSchedule& s, std::int64_t episode) {
  if (episode < 0) throw std::invalid_argument("episode must be >= 0");
  return std::max(s.min, s.start * std::pow(s.decay, static_cast<double>(episode)));
}

/// Action k requests (k + 1) allocation steps, so zero PRBs is never requested.
class ActionCodec {
 public:
  ActionCodec() = default;
  explicit ActionCodec(const GnbConfig& config) : step_(config.alloc_step_prb), capacity_(config.capacity_prb) {}

  int action_count() const { return capacity_ / step_; }
  int to_prb(int action) const {
    if (action < 0 || action >= action_count()) throw std::out_of_range("action index out of range");
    return (action + 1) * step_;
  }
  int to_action(int prb) const {
    if (prb < step_ || prb > capacity_ || prb % step_ != 0) throw std::out_of_range("PRB count not on the action grid");
    return prb / step_ - 1;
  }

 private:
  int step_ = 10;
  int capacity_ = 100;
};

struct Transition {
  Observation state{};
  int action = 0;
  double reward = 0.0;
  Observation next_state{};
  bool done = false;
};

/// Fixed-capacity ring; the oldest transition is overwritten first.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("replay capacity must be > 0");
    data_.reserve(std::min<std::size_t>(capacity, 1 << 16));
  }

  void push(const Transition& t) {
    if (data_.size() < capacity_) {
      data_.push_back(t);
    } else {
      data_[head_] = t;
      head_ = (head_ + 1) % capacity_;
    }
  }

  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }

  /// i = 0 is the oldest stored transition.
  const Transition& at(std::size_t i) const {
    if (i >= data_.size()) throw std::out_of_range("replay index out of range");
    return data_[(head_ + i) % data_.size()];
  }

  std::vector<Transition> sample(std::size_t n, Rng& rng) const {
    if (data_.empty()) throw std::logic_error("cannot sample from an empty replay buffer");
    std::uniform_int_distribution<std::size_t> pick(0, data_.size() - 1);
    std::vector<Transition> out;
    out.reserve(n);
    for (std::size_t k = 0; k < n; ++k) out.push_back(data_[pick(rng)]);
    return out;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<Transition> data_;
};

inline int greedy_action(std::span<const double> q) {
  return static_cast<int>(std::max_element(q.begin(), q.end()) - q.begin());
}

/// Epsilon-greedy. Always consumes one uniform draw so the random stream does
/// not depend on epsilon.
inline int act(const MlpParams& params, const Observation& obs, double epsilon, Rng& rng) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw std::invalid_argument("epsilon must lie in [0, 1]");
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (coin(rng) < epsilon) {
    std::uniform_int_distribution<int> any(0, static_cast<int>(params.output_dim()) - 1);
    return any(rng);
  }
  return greedy_action(predict(params, obs));
}

/// Double-DQN targets: the online net picks the next action, the target net
/// scores it.
inline std::vector<double> td_targets(std::span<const Transition> batch, const MlpParams& online,
                                      const MlpParams& target, double gamma) {
  std::vector<double> y(batch.size());
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const Transition& t = batch[k];
    if (t.done) {
      y[k] = t.reward;
      continue;
    }
    const int a_star = greedy_action(predict(online, t.next_state));
    y[k] = t.reward + gamma * predict(target, t.next_state)[static_cast<std::size_t>(a_star)];
  }
  return y;
}

/// MSE between Q(s, a) and fixed targets; gradient flows through the taken action only.
inline double regression_step(MlpParams& params, AdamState& adam, std::span<const Transition> batch,
                              std::span<const double> targets, double lr) {
  Gradients grads = zero_params(params.layer_dims);
  std::vector<double> dy(params.output_dim(), 0.0);
  const double n = static_cast<double>(batch.size());
  double loss = 0.0;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    ForwardCache cache = forward(params, batch[k].state);
    const auto a = static_cast<std::size_t>(batch[k].action);
    const double err = cache.output()[a] - targets[k];
    loss += err * err / n;
    std::fill(dy.begin(), dy.end(), 0.0);
    dy[a] = 2.0 * err / n;
    accumulate_gradients(params, cache, dy, grads);
  }
  adam_step(params, adam, grads, lr);
  return loss;
}

class DdqnAgent {
 public:
  DdqnAgent(AgentConfig config, std::uint64_t seed)
      : config_(std::move(config)),
        online_(init_mlp(config_.layer_dims, seed)),
        target_(online_),
        adam_(AdamState::for_params(online_)),
        buffer_(config_.buffer_capacity) {
    config_.validate();
  }

  const AgentConfig& config() const { return config_; }
  const MlpParams& online() const { return online_; }
  const MlpParams& target() const { return target_; }
  MlpParams& mutable_online() { return online_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  std::int64_t train_steps() const { return train_steps_; }

  int act(const Observation& obs, double epsilon, Rng& rng) const { return sliceops::act(online_, obs, epsilon, rng); }

  void remember(const Transition& t) {
    if (t.action < 0 || static_cast<std::size_t>(t.action) >= online_.output_dim())
      throw std::out_of_range("transition action out of range");
    buffer_.push(t);
  }

  /// Returns std::nullopt (and leaves parameters untouched) while the buffer
  /// holds fewer than batch_size transitions.
  std::optional<double> train_step(Rng& rng) {
    if (buffer_.size() < config_.batch_size) return std::nullopt;
    const std::vector<Transition> batch = buffer_.sample(config_.batch_size, rng);
    return train_on(batch);
  }

  /// One Adam step on a caller-supplied batch; counts toward target sync.
  double train_on(std::span<const Transition> batch) {
    const std::vector<double> y = td_targets(batch, online_, target_, config_.gamma);
    const double loss = regression_step(online_, adam_, batch, y, config_.lr);
    ++train_steps_;
    if (train_steps_ % config_.target_sync_steps == 0) sync_target();
    return loss;
  }

  void sync_target() { target_ = online_; }

 private:
  AgentConfig config_;
  MlpParams online_;
  MlpParams target_;
  AdamState adam_;
  ReplayBuffer buffer_;
  std::int64_t train_steps_ = 0;
};

}  // namespace sliceops
