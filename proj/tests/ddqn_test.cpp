#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "sliceops/ddqn.hpp"

using namespace sliceops;

namespace {

Observation random_obs(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Observation o;
  for (double& v : o) v = u(rng);
  return o;
}

std::vector<Transition> random_batch(std::size_t n, Rng& rng, double reward = NAN, bool done = false) {
  std::uniform_int_distribution<int> a(0, 9);
  std::uniform_real_distribution<double> r(-1.0, 1.0);
  std::vector<Transition> batch;
  for (std::size_t k = 0; k < n; ++k)
    batch.push_back({random_obs(rng), a(rng), std::isnan(reward) ? r(rng) : reward, random_obs(rng), done});
  return batch;
}

/// A network whose output is its bias vector.
MlpParams constant_net(const std::vector<double>& q) {
  auto p = zero_params(default_layer_dims());
  p.layers.back().biases = q;
  return p;
}

}  // namespace

TEST(Epsilon, Schedule) {
  const EpsilonSchedule s;
  EXPECT_EQ(epsilon_at(s, 0), 1.0);
  EXPECT_NEAR(epsilon_at(s, 500), std::pow(0.995, 500), 1e-15);
  EXPECT_NEAR(epsilon_at(s, 500), 0.0816, 5e-5);
  EXPECT_EQ(epsilon_at(s, 100000), 0.01);
  EXPECT_THROW(epsilon_at(s, -1), std::invalid_argument);
}

TEST(ActionCodec, BijectiveOnGrid) {
  const ActionCodec c(GnbConfig{});
  ASSERT_EQ(c.action_count(), 10);
  for (int a = 0; a < 10; ++a) {
    EXPECT_EQ(c.to_prb(a), (a + 1) * 10);
    EXPECT_EQ(c.to_action(c.to_prb(a)), a);
  }
  EXPECT_THROW(c.to_prb(10), std::out_of_range);
  EXPECT_THROW(c.to_prb(-1), std::out_of_range);
  EXPECT_THROW(c.to_action(0), std::out_of_range);
  EXPECT_THROW(c.to_action(15), std::out_of_range);
}

TEST(ReplayBuffer, EvictsOldestFirst) {
  ReplayBuffer buf(20000);
  for (int k = 0; k < 20000 + 137; ++k) {
    Transition t;
    t.reward = k;
    buf.push(t);
    ASSERT_LE(buf.size(), 20000u);
  }
  EXPECT_EQ(buf.size(), 20000u);
  EXPECT_EQ(buf.at(0).reward, 137.0);
  EXPECT_EQ(buf.at(19999).reward, 20136.0);
  for (std::size_t i = 1; i < buf.size(); ++i) ASSERT_EQ(buf.at(i).reward, buf.at(i - 1).reward + 1);
}

TEST(ReplayBuffer, SamplesOnlyStoredTransitions) {
  ReplayBuffer buf(4);
  for (int k = 0; k < 10; ++k) {
    Transition t;
    t.reward = k;
    buf.push(t);
  }
  Rng rng(1);
  for (const auto& t : buf.sample(1000, rng)) {
    EXPECT_GE(t.reward, 6.0);
    EXPECT_LE(t.reward, 9.0);
  }
  ReplayBuffer empty(3);
  EXPECT_THROW(empty.sample(1, rng), std::logic_error);
}

TEST(Act, GreedyPicksArgmaxWithLowestIndexTies) {
  Rng rng(0);
  std::vector<double> q(10, 0.0);
  EXPECT_EQ(act(constant_net(q), Observation{}, 0.0, rng), 0);
  q[9] = 1.0;
  for (int i = 0; i < 100; ++i) EXPECT_EQ(act(constant_net(q), Observation{}, 0.0, rng), 9);
  q[4] = 1.0;
  EXPECT_EQ(act(constant_net(q), Observation{}, 0.0, rng), 4);
  EXPECT_THROW(act(constant_net(q), Observation{}, 1.5, rng), std::invalid_argument);
}

TEST(Act, FullExplorationIsUniform) {
  Rng rng(77);
  const auto p = init_mlp(default_layer_dims(), 1);
  const int n = 100000;
  std::vector<int> counts(10, 0);
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(act(p, Observation{}, 1.0, rng))];
  const double expected = n / 10.0;
  const double sigma = std::sqrt(n * 0.1 * 0.9);
  for (int c : counts) EXPECT_NEAR(c, expected, 3 * sigma);
}

TEST(TdTargets, TerminalIsReward) {
  Rng rng(3);
  auto batch = random_batch(32, rng, 1.0, true);
  const auto online = init_mlp(default_layer_dims(), 1), target = init_mlp(default_layer_dims(), 2);
  const auto y = td_targets(batch, online, target, 0.99);
  for (double v : y) EXPECT_EQ(v, 1.0);
  // perturbing s' changes nothing for terminal transitions
  for (auto& t : batch) t.next_state = random_obs(rng);
  EXPECT_EQ(td_targets(batch, online, target, 0.99), y);
}

TEST(TdTargets, DoubleQExample) {
  std::vector<double> q_online(10, 0.0), q_target(10, 5.0);
  q_online[3] = 1.0;  // online argmax a* = 3
  q_target[3] = 2.0;  // target picks its own max elsewhere, but a* is scored
  Transition t{Observation{}, 0, 1.0, Observation{}, false};
  const std::vector<Transition> batch{t};
  const auto y = td_targets(batch, constant_net(q_online), constant_net(q_target), 0.99);
  EXPECT_NEAR(y[0], 2.98, 1e-12);
}

TEST(TdTargets, EqualNetsReduceToDqn) {
  Rng rng(4);
  const auto batch = random_batch(32, rng);
  const auto net = init_mlp(default_layer_dims(), 9);
  const auto y = td_targets(batch, net, net, 0.9);
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const auto q = predict(net, batch[k].next_state);
    EXPECT_DOUBLE_EQ(y[k], batch[k].reward + 0.9 * *std::max_element(q.begin(), q.end()));
  }
}

TEST(Training, FixedBatchLossStrictlyDecreases) {
  Rng rng(5);
  AgentConfig cfg;
  DdqnAgent agent(cfg, 11);
  const auto batch = random_batch(32, rng);
  // Fixed targets from the initial networks: plain regression on one batch.
  const auto y = td_targets(batch, agent.online(), agent.target(), cfg.gamma);
  MlpParams p = agent.online();
  AdamState adam = AdamState::for_params(p);
  double prev = INFINITY;
  for (int step = 0; step < 200; ++step) {
    const double loss = regression_step(p, adam, batch, y, cfg.lr);
    ASSERT_LT(loss, prev) << "step " << step;
    prev = loss;
  }
}

TEST(Training, GammaZeroRegressesToReward) {
  Rng rng(6);
  AgentConfig cfg;
  cfg.gamma = 0.0;
  cfg.target_sync_steps = 50;
  DdqnAgent agent(cfg, 12);
  const auto batch = random_batch(32, rng, 5.0);
  for (int step = 0; step < 3000; ++step) agent.train_on(batch);
  for (const auto& t : batch) EXPECT_NEAR(predict(agent.online(), t.state)[static_cast<std::size_t>(t.action)], 5.0, 0.1);
}

TEST(Training, SmallBufferIsNoOp) {
  Rng rng(7);
  DdqnAgent agent(AgentConfig{}, 13);
  const auto before = agent.online();
  for (const auto& t : random_batch(31, rng)) agent.remember(t);
  EXPECT_FALSE(agent.train_step(rng).has_value());
  EXPECT_EQ(agent.online(), before);
  EXPECT_EQ(agent.train_steps(), 0);
  agent.remember(random_batch(1, rng)[0]);
  EXPECT_TRUE(agent.train_step(rng).has_value());
  EXPECT_NE(agent.online(), before);
}

TEST(Training, TargetSyncsEveryConfiguredSteps) {
  Rng rng(8);
  AgentConfig cfg;
  cfg.target_sync_steps = 20;
  DdqnAgent agent(cfg, 14);
  for (const auto& t : random_batch(64, rng)) agent.remember(t);
  const auto initial_target = agent.target();
  for (int step = 1; step <= 60; ++step) {
    agent.train_step(rng);
    if (step % 20 == 0) {
      ASSERT_EQ(agent.target(), agent.online()) << "step " << step;
    } else {
      ASSERT_NE(agent.target(), agent.online()) << "step " << step;
    }
    if (step < 20) {
      ASSERT_EQ(agent.target(), initial_target);
    }
  }
}

TEST(Training, DeterministicUnderSeed) {
  auto run = [] {
    Rng data(9), train(10);
    DdqnAgent agent(AgentConfig{}, 15);
    for (const auto& t : random_batch(100, data)) agent.remember(t);
    std::vector<double> losses;
    for (int i = 0; i < 50; ++i) losses.push_back(*agent.train_step(train));
    return losses;
  };
  EXPECT_EQ(run(), run());
}

TEST(Agent, RejectsOutOfRangeAction) {
  DdqnAgent agent(AgentConfig{}, 1);
  Transition t;
  t.action = 10;
  EXPECT_THROW(agent.remember(t), std::out_of_range);
}

TEST(AgentConfig, Validation) {
  AgentConfig c;
  c.gamma = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = AgentConfig{};
  c.batch_size = 30000;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = AgentConfig{};
  c.epsilon.min = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = AgentConfig{};
  c.layer_dims = {4, 24, 10};
  EXPECT_THROW(c.validate(), std::invalid_argument);
}
