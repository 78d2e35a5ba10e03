#include <catch_amalgamated.hpp>

#include "disa/assembler.hpp"
#include "disa/interp.hpp"
#include "disa/replay.hpp"
#include "disa/service.hpp"
#include "test_util.hpp"

using namespace disa;

namespace {

std::string image_b64(const std::string& fixture) {
  return base64_encode(encode_image(assemble(testutil::load_fixture(fixture))));
}

nlohmann::json parse(const httplib::Result& res) {
  REQUIRE(res);
  return nlohmann::json::parse(res->body);
}

}  // namespace

TEST_CASE("service end-to-end over http") {
  ServerConfig cfg;
  cfg.port = 0;  // ephemeral
  RegistryService service(cfg);
  int port = service.start();
  httplib::Client client("127.0.0.1", port);

  SECTION("healthz") {
    auto res = client.Get("/healthz");
    REQUIRE(res->status == 200);
    REQUIRE(parse(res).at("status") == "ok");
  }

  SECTION("put, acquire, metrics, sweep") {
    nlohmann::json body{
        {"image", image_b64("ten_blocks.dasm")},
        {"pipeline",
         {{"master_seed", 0},
          {"stages", nlohmann::json::array({{{"plugin", "bilr"}, {"config", nlohmann::json::object()}},
                                            {{"plugin", "stack_pad"}, {"config", nlohmann::json::object()}}})}}},
        {"policy", {{"target_pool_size", 3}, {"generator_parallelism", 2}}}};
    auto put = client.Put("/images/demo", body.dump(), "application/json");
    REQUIRE(put->status == 200);
    REQUIRE(parse(put).at("ok") == true);

    REQUIRE(service.registry().wait_for_fresh("demo", 1, 20'000));
    auto acq = client.Get("/images/demo/acquire");
    REQUIRE(acq->status == 200);
    auto aj = parse(acq);
    REQUIRE(aj.contains("variant_id"));
    REQUIRE(aj.contains("master_seed"));
    REQUIRE(aj.at("digest").get<std::string>().size() == 64);

    // the served bytes are a behaving variant of the base image
    auto variant = decode_image(base64_decode(aj.at("image").get<std::string>()));
    auto base = assemble(testutil::load_fixture("ten_blocks.dasm"));
    Rng rng(2);
    for (const auto& in : testutil::random_inputs(rng, 10))
      REQUIRE(same_behavior(execute(base, in), execute(variant, in)));

    auto m = client.Get("/images/demo/metrics");
    REQUIRE(m->status == 200);
    REQUIRE(parse(m).at("acquire_count").get<int>() == 1);

    auto agg = client.Get("/metrics");
    REQUIRE(agg->status == 200);
    REQUIRE(parse(agg).at("images").contains("demo"));

    auto sweep = client.Post("/images/demo/expire-sweep", "{}", "application/json");
    REQUIRE(sweep->status == 200);
    REQUIRE(parse(sweep).at("expired").get<int>() == 0);
  }

  SECTION("error mapping") {
    auto missing = client.Get("/images/ghost/acquire");
    REQUIRE(missing->status == 404);
    REQUIRE(parse(missing).at("code") == "unknown_image");

    auto bad = client.Put("/images/demo", "{not json", "application/json");
    REQUIRE(bad->status == 400);
    REQUIRE(parse(bad).at("code") == "bad_request");

    auto bad_image = client.Put("/images/demo",
                                nlohmann::json{{"image", "AAAA"}}.dump(), "application/json");
    REQUIRE(bad_image->status == 400);

    auto missing_metrics = client.Get("/images/ghost/metrics");
    REQUIRE(missing_metrics->status == 404);
  }
  service.stop();
}

TEST_CASE("pool exhaustion surfaces as 503") {
  ServerConfig cfg;
  cfg.port = 0;
  cfg.stub_generation = true;
  cfg.generation_delay_ms = 3000;  // effectively blocks replenishment
  RegistryService service(cfg);
  int port = service.start();
  httplib::Client client("127.0.0.1", port);

  nlohmann::json body{{"image", image_b64("loop_sum.dasm")},
                      {"policy",
                       {{"target_pool_size", 1},
                        {"max_deploys_per_variant", 1},
                        {"on_empty", "reject"}}}};
  REQUIRE(client.Put("/images/tiny", body.dump(), "application/json")->status == 200);
  REQUIRE(service.registry().wait_for_fresh("tiny", 1, 10'000));

  REQUIRE(client.Get("/images/tiny/acquire")->status == 200);
  auto second = client.Get("/images/tiny/acquire");
  REQUIRE(second->status == 503);
  REQUIRE(parse(second).at("code") == "pool_exhausted");
  service.stop();
}

TEST_CASE("replay: simulator matches the live registry on the same trace") {
  const double kScale = 0.05;  // compress wall time 20x
  ServerConfig cfg;
  cfg.port = 0;
  cfg.stub_generation = true;
  cfg.generation_delay_ms = static_cast<int64_t>(1000 * 0.8 * kScale);  // 0.8 s scaled
  RegistryService service(cfg);
  int port = service.start();

  sim::SimConfig sc;
  sc.arrival.kind = sim::ArrivalModel::Kind::Poisson;
  sc.arrival.rate_per_sec = 25;
  sc.generation.kind = sim::GenerationModel::Kind::Fixed;
  sc.generation.fixed_seconds = 0.8;
  sc.policy.target_pool_size = 4;
  sc.policy.generator_parallelism = 2;
  sc.policy.max_deploys_per_variant = 1;
  sc.policy.on_empty = PoolPolicy::OnEmpty::ReuseLeastDeployed;
  sc.horizon_seconds = 12;
  sc.rng_seed = 99;

  nlohmann::json body{{"image", image_b64("loop_sum.dasm")},
                      {"policy", nlohmann::json(sc.policy)}};
  httplib::Client client("127.0.0.1", port);
  REQUIRE(client.Put("/images/replayed", body.dump(), "application/json")->status == 200);
  REQUIRE(service.registry().wait_for_fresh("replayed", 4, 10'000));

  auto report = sim::replay_against_registry(sc, "127.0.0.1", port, "replayed", kScale);
  REQUIRE(report.policy_supported);
  REQUIRE(report.live_requests == report.simulated.requests);
  INFO("sim uniqueness " << report.simulated.uniqueness_ratio << " live "
                         << report.live_uniqueness_ratio);
  REQUIRE(report.uniqueness_divergence <= 0.08);  // short trace, loose bound
  service.stop();
}

TEST_CASE("replay flags a policy the live estimator cannot support") {
  ServerConfig cfg;
  cfg.port = 0;
  cfg.stub_generation = true;
  RegistryService service(cfg);
  int port = service.start();
  httplib::Client client("127.0.0.1", port);

  sim::SimConfig sc;
  sc.arrival.kind = sim::ArrivalModel::Kind::Trace;
  sc.arrival.trace_times = {0.01, 0.02};
  sc.generation.fixed_seconds = 0.01;
  sc.policy.target_pool_size = 2;
  sc.policy.max_deploys_per_variant.reset();  // unlimited: repeats are normal
  sc.horizon_seconds = 1;

  nlohmann::json body{{"image", image_b64("loop_sum.dasm")},
                      {"policy", nlohmann::json(sc.policy)}};
  REQUIRE(client.Put("/images/mismatch", body.dump(), "application/json")->status == 200);
  REQUIRE(service.registry().wait_for_fresh("mismatch", 2, 10'000));
  auto report = sim::replay_against_registry(sc, "127.0.0.1", port, "mismatch", 1.0);
  REQUIRE(!report.policy_supported);
  service.stop();
}

TEST_CASE("replay against a dead endpoint errors") {
  sim::SimConfig sc;
  sc.arrival.kind = sim::ArrivalModel::Kind::Trace;
  sc.arrival.trace_times = {0.0};
  sc.policy.max_deploys_per_variant = 1;
  sc.horizon_seconds = 1;
  REQUIRE_THROWS_AS(sim::replay_against_registry(sc, "127.0.0.1", 1, "x", 1.0),
                    sim::ReplayError);
}
