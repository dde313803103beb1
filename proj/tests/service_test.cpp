#include <cmath>
#include <random>
#include <thread>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <gtest/gtest.h>

#include "sliceops/client.hpp"
#include "sliceops/service.hpp"

using namespace sliceops;

namespace {

std::shared_ptr<SliceOpsService> make_service(RetrainPolicy policy = {0.2, 5}) {
  return std::make_shared<SliceOpsService>(std::make_shared<ModelRegistry>(), GnbConfig{}, policy);
}

std::vector<double> random_state(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.2);
  std::vector<double> s(5);
  for (double& v : s) v = u(rng);
  return s;
}

}  // namespace

TEST(Service, InferenceMatchesLocalPolicy) {
  auto svc = make_service();
  const auto params = init_mlp(default_layer_dims(), 21);
  const auto reg = svc->register_model(make_registration("urllc", params, {1.0, 1.0}));
  svc->promote(reg.model_id);
  const MlpParams local = deserialize(serialize(params));
  std::mt19937_64 rng(1);
  for (int i = 0; i < 500; ++i) {
    const auto s = random_state(rng);
    const InferenceResult r = svc->infer("urllc", s, false);
    EXPECT_EQ(r.action_index, greedy_action(predict(local, s)));
    EXPECT_EQ(r.prb_allocation, (r.action_index + 1) * 10);
    EXPECT_EQ(r.model_id, reg.model_id);
    EXPECT_FALSE(r.explanation.has_value());
  }
}

TEST(Service, ExplanationSatisfiesLocalAccuracy) {
  auto svc = make_service();
  const auto params = init_mlp(default_layer_dims(), 22);
  svc->promote(svc->register_model(make_registration("urllc", params, {1.0, 1.0})).model_id);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) {
    const auto r = svc->infer("urllc", random_state(rng), true);
    ASSERT_TRUE(r.explanation.has_value());
    EXPECT_LE(r.explanation->local_accuracy_gap(), 1e-6);
  }
  std::vector<std::vector<double>> bg;
  for (int i = 0; i < 16; ++i) bg.push_back(random_state(rng));
  svc->set_background("urllc", bg);
  const auto s = random_state(rng);
  const auto r = svc->infer("urllc", s, true);
  Observation obs;
  std::copy(s.begin(), s.end(), obs.begin());
  const Explanation local = explain_state(params, obs, bg);
  EXPECT_EQ(r.explanation->phi, local.phi);
  EXPECT_EQ(r.explanation->base_value, local.base_value);
}

TEST(Service, ValidationAndMissingModel) {
  auto svc = make_service();
  EXPECT_THROW(svc->infer("urllc", std::vector<double>(5, 0.0), false), NoProductionModel);
  svc->promote(svc->register_model(make_registration("urllc", init_mlp(default_layer_dims(), 1), {})).model_id);
  EXPECT_THROW(svc->infer("urllc", std::vector<double>(4, 0.0), false), ValidationError);
  EXPECT_THROW(svc->infer("urllc", std::vector<double>{0, 0, NAN, 0, 0}, false), ValidationError);
  EXPECT_THROW(svc->record_episode("urllc", INFINITY), ValidationError);
}

TEST(Service, DegradationFiresOnceUntilPromotion) {
  auto svc = make_service({0.2, 5});
  const auto params = init_mlp(default_layer_dims(), 3);
  svc->promote(svc->register_model(make_registration("urllc", params, {2.0, 1.0})).model_id);

  for (int i = 0; i < 4; ++i) EXPECT_FALSE(svc->record_episode("urllc", 1.55).has_value());
  const auto ev = svc->record_episode("urllc", 1.55);
  ASSERT_TRUE(ev.has_value());
  EXPECT_EQ(ev->slice_id, "urllc");
  EXPECT_NEAR(ev->rolling_mean, 1.55, 1e-12);
  EXPECT_EQ(ev->baseline, 2.0);
  EXPECT_FALSE(ev->timestamp.empty());
  for (int i = 0; i < 10; ++i) EXPECT_FALSE(svc->record_episode("urllc", 0.0).has_value());
  EXPECT_TRUE(svc->metrics("urllc").open_event.has_value());

  svc->promote(svc->register_model(make_registration("urllc", params, {2.0, 1.0})).model_id);
  EXPECT_FALSE(svc->metrics("urllc").open_event.has_value());
  EXPECT_EQ(svc->metrics("urllc").window_size, 0u);
  for (int i = 0; i < 5; ++i) EXPECT_FALSE(svc->record_episode("urllc", 1.7).has_value());
}

TEST(Service, NoEventWithoutProductionModel) {
  auto svc = make_service({0.2, 2});
  for (int i = 0; i < 5; ++i) EXPECT_FALSE(svc->record_episode("embb", -100.0).has_value());
}

class HttpTest : public ::testing::Test {
 protected:
  void SetUp() override {
    service_ = make_service({0.2, 5});
    frontend_ = std::make_unique<HttpFrontend>(service_);
    port_ = frontend_->start_background();
    url_ = "http://127.0.0.1:" + std::to_string(port_);
  }
  void TearDown() override { frontend_->stop(); }

  std::shared_ptr<SliceOpsService> service_;
  std::unique_ptr<HttpFrontend> frontend_;
  int port_ = 0;
  std::string url_;
};

TEST_F(HttpTest, RegisterPromoteInferRoundTrip) {
  ServiceClient client(url_);
  EXPECT_TRUE(client.healthy());
  const auto params = init_mlp(default_layer_dims(), 31);
  const auto req = make_registration("urllc", params, {1.5, 2.5});
  const auto reg = client.register_model(req);
  EXPECT_EQ(reg.model_id, "urllc-v1");
  const auto promoted = client.promote(reg.model_id);
  EXPECT_EQ(promoted.stage, Stage::kProduction);

  const auto fetched = client.get(reg.model_id);
  EXPECT_EQ(fetched.params, req.params);
  EXPECT_EQ(fetched.checksum, req.checksum);
  EXPECT_EQ(fetched.metrics.eval_reward, 1.5);
  const MlpParams local = deserialize(fetched.params);

  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const auto s = random_state(rng);
    const auto j = client.infer("urllc", s, i % 10 == 0);
    EXPECT_EQ(j.at("action_index").get<int>(), greedy_action(predict(local, s)));
    if (i % 10 == 0) {
      const Explanation e = explanation_from_json(j.at("explanation"));
      EXPECT_LE(e.local_accuracy_gap(), 1e-6);
      EXPECT_EQ(e.phi.size(), 5u);
    }
  }
  EXPECT_EQ(client.list("urllc", "production").size(), 1u);
  EXPECT_EQ(client.production("urllc")->model_id, reg.model_id);
  EXPECT_FALSE(client.production("embb").has_value());
}

TEST_F(HttpTest, StatusCodes) {
  httplib::Client http(url_);
  auto res = http.Get("/v1/models/none-v1");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 404);
  res = http.Post("/v1/models/none-v1/promote", "{}", "application/json");
  EXPECT_EQ(res->status, 404);
  res = http.Post("/v1/models", "{not json", "application/json");
  EXPECT_EQ(res->status, 400);
  auto req = make_registration("urllc", init_mlp(default_layer_dims(), 1), {});
  nlohmann::json body = {{"slice_id", "urllc"}, {"params", req.params}, {"checksum", "00"}};
  res = http.Post("/v1/models", body.dump(), "application/json");
  EXPECT_EQ(res->status, 400);
  res = http.Post("/v1/slices/urllc/actions", R"({"state":[0,0,0,0,0]})", "application/json");
  EXPECT_EQ(res->status, 503);

  ServiceClient client(url_);
  const auto a = client.register_model(req);
  const auto b = client.register_model(req);
  client.promote(a.model_id);
  client.promote(b.model_id);
  res = http.Post("/v1/models/" + a.model_id + "/promote", "{}", "application/json");
  EXPECT_EQ(res->status, 409);
  res = http.Post("/v1/slices/urllc/actions", R"({"state":[0,0,0,0]})", "application/json");
  EXPECT_EQ(res->status, 400);
  res = http.Post("/v1/slices/urllc/actions", R"({"state":[0,0,"x",0,0]})", "application/json");
  EXPECT_EQ(res->status, 400);
  res = http.Post("/v1/slices/urllc/episodes", R"({"reward":1.0})", "application/json");
  EXPECT_EQ(res->status, 202);
  res = http.Get("/healthz");
  EXPECT_EQ(res->status, 200);
}

TEST_F(HttpTest, EpisodesOpenRetrainEvent) {
  ServiceClient client(url_);
  const auto reg = client.register_model(make_registration("mmtc", init_mlp(default_layer_dims(), 2), {2.0, 0.0}));
  client.promote(reg.model_id);
  for (int i = 0; i < 4; ++i) EXPECT_FALSE(client.post_episode("mmtc", 1.55).contains("retrain_event"));
  EXPECT_TRUE(client.post_episode("mmtc", 1.55).contains("retrain_event"));
  EXPECT_FALSE(client.post_episode("mmtc", 1.55).contains("retrain_event"));
  const auto m = client.metrics("mmtc");
  EXPECT_NEAR(m.at("rolling_mean_reward").get<double>(), 1.55, 1e-12);
  EXPECT_EQ(m.at("window").get<int>(), 5);
  ASSERT_TRUE(m.contains("open_retrain_event"));
  EXPECT_EQ(m.at("open_retrain_event").at("slice_id"), "mmtc");
}

TEST_F(HttpTest, ConcurrentPromotionsOverHttp) {
  ServiceClient setup(url_);
  std::vector<std::string> ids;
  for (int k = 0; k < 6; ++k)
    ids.push_back(setup.register_model(make_registration("embb", init_mlp(default_layer_dims(), k), {})).model_id);
  std::vector<std::thread> threads;
  std::atomic<int> unexpected{0};
  for (const auto& id : ids)
    threads.emplace_back([&, id] {
      ServiceClient c(url_);
      try {
        c.promote(id);
      } catch (const HttpStatusError& e) {
        if (e.status() != 409) ++unexpected;
      }
    });
  for (auto& t : threads) t.join();
  EXPECT_EQ(unexpected, 0);
  EXPECT_EQ(service_->registry().production_count("embb"), 1u);
  EXPECT_EQ(setup.list("embb", "production").size(), 1u);
}

TEST(Client, UnreachableServiceFailsAfterRetries) {
  // Bind and close a socket so nothing is listening on its port.
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  ASSERT_GE(fd, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ASSERT_EQ(::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr), 0);
  socklen_t len = sizeof addr;
  ASSERT_EQ(::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len), 0);
  const int port = ntohs(addr.sin_port);
  ::close(fd);
  ServiceClient client("http://127.0.0.1:" + std::to_string(port),
                       RetryPolicy{3, std::chrono::milliseconds(10), std::chrono::milliseconds(20)});
  const auto start = std::chrono::steady_clock::now();
  EXPECT_THROW(client.metrics("urllc"), ServiceUnavailable);
  EXPECT_LT(std::chrono::steady_clock::now() - start, std::chrono::seconds(10));
}
