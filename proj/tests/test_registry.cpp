#include <catch_amalgamated.hpp>

#include <atomic>
#include <filesystem>
#include <thread>

#include "disa/assembler.hpp"
#include "disa/interp.hpp"
#include "disa/registry.hpp"
#include "test_util.hpp"

using namespace disa;

namespace {

ProgramImage base_image() { return assemble(testutil::load_fixture("ten_blocks.dasm")); }

PipelineSpec default_pipeline() {
  PipelineSpec spec;
  spec.stages = {{"bilr", {}}, {"stack_pad", {}}, {"global_shuffle", {}}, {"heap_pad", {}}};
  return spec;
}

// instant stub: returns the base bytes untouched
GeneratorFn instant_stub() {
  return [](const ProgramImage& base, const PipelineSpec&, uint64_t) {
    return GeneratedVariant{encode_image(base), 0.1};
  };
}

// fast for the first `fast_calls`, then parks until `release` flips
struct GatedGenerator {
  std::shared_ptr<std::atomic<int>> budget;
  std::shared_ptr<std::atomic<bool>> release = std::make_shared<std::atomic<bool>>(false);

  explicit GatedGenerator(int fast_calls)
      : budget(std::make_shared<std::atomic<int>>(fast_calls)) {}

  GeneratorFn fn() const {
    auto b = budget;
    auto r = release;
    return [b, r](const ProgramImage& base, const PipelineSpec&, uint64_t) {
      if (b->fetch_sub(1) <= 0)
        while (!r->load()) std::this_thread::sleep_for(std::chrono::milliseconds(2));
      return GeneratedVariant{encode_image(base), 0.1};
    };
  }
};

}  // namespace

TEST_CASE("put_image fills the pool to its target") {
  Registry::Options opt;
  opt.generator = instant_stub();
  Registry reg(opt);
  PoolPolicy policy;
  policy.target_pool_size = 4;
  reg.put_image("demo", base_image(), default_pipeline(), policy);
  REQUIRE(reg.wait_for_fresh("demo", 4, 5000));
  auto m = reg.metrics(std::string("demo"));
  REQUIRE(m.at("variants_by_state").at("fresh").get<int>() == 4);
  REQUIRE(m.at("acquire_count").get<int>() == 0);
  REQUIRE(m.at("uniqueness_ratio").get<double>() == 1.0);
}

TEST_CASE("put_image validates its inputs") {
  Registry reg;
  PoolPolicy ok;
  REQUIRE_THROWS_AS(reg.put_image("bad/name", base_image(), {}, ok), RegistryError);
  PoolPolicy zero;
  zero.target_pool_size = 0;
  REQUIRE_THROWS_AS(reg.put_image("demo", base_image(), {}, zero), std::invalid_argument);
  PipelineSpec bogus;
  bogus.stages = {{"not_a_plugin", {}}};
  REQUIRE_THROWS_AS(reg.put_image("demo", base_image(), bogus, ok), RegistryError);
  REQUIRE_THROWS_AS(reg.put_image("demo", ProgramImage{}, {}, ok), RegistryError);
}

TEST_CASE("re-putting an image expires the old pool and resets accounting") {
  Registry::Options opt;
  opt.generator = instant_stub();
  Registry reg(opt);
  PoolPolicy policy;
  policy.target_pool_size = 2;
  reg.put_image("app", base_image(), default_pipeline(), policy);
  REQUIRE(reg.wait_for_fresh("app", 2, 5000));
  (void)reg.acquire("app");
  auto before = reg.metrics(std::string("app"));
  REQUIRE(before.at("acquire_count").get<int>() == 1);

  reg.put_image("app", base_image(), default_pipeline(), policy);
  auto after = reg.metrics(std::string("app"));
  REQUIRE(after.at("acquire_count").get<int>() == 0);
  REQUIRE(after.at("uniqueness_ratio").get<double>() == 1.0);
  REQUIRE(after.at("variants_by_state").at("deployed").get<int>() == 0);
  REQUIRE(reg.wait_for_fresh("app", 2, 5000));
}

TEST_CASE("acquire with a drained pool and reject policy reports exhaustion") {
  GatedGenerator gate(1);  // one instant variant, then the generator parks
  Registry::Options opt;
  opt.generator = gate.fn();
  Registry reg(opt);
  PoolPolicy policy;
  policy.target_pool_size = 1;
  policy.max_deploys_per_variant = 1;
  policy.on_empty = PoolPolicy::OnEmpty::Reject;
  reg.put_image("one", base_image(), {}, policy);
  REQUIRE(reg.wait_for_fresh("one", 1, 5000));

  auto first = reg.acquire("one");
  REQUIRE(first.first_deploy);
  try {
    reg.acquire("one");
    FAIL("expected pool exhaustion");
  } catch (const RegistryError& e) {
    REQUIRE(e.code == RegistryError::Code::PoolExhausted);
  }
  gate.release->store(true);
  reg.shutdown();
}

TEST_CASE("acquire of an unknown image errors") {
  Registry reg;
  try {
    reg.acquire("ghost");
    FAIL("expected unknown image");
  } catch (const RegistryError& e) {
    REQUIRE(e.code == RegistryError::Code::UnknownImage);
  }
}

TEST_CASE("max_deploys=1 with replenishment keeping pace serves unique variants") {
  Registry::Options opt;
  opt.generator = instant_stub();
  Registry reg(opt);
  PoolPolicy policy;
  policy.target_pool_size = 8;
  policy.max_deploys_per_variant = 1;
  policy.generator_parallelism = 2;
  policy.on_empty = PoolPolicy::OnEmpty::Reject;
  reg.put_image("uniq", base_image(), {}, policy);

  std::set<uint64_t> ids;
  for (int i = 0; i < 1000; ++i) {
    REQUIRE(reg.wait_for_fresh("uniq", 1, 5000));
    auto got = reg.acquire("uniq");
    REQUIRE(got.first_deploy);
    REQUIRE(ids.insert(got.descriptor.variant_id).second);
  }
  auto m = reg.metrics(std::string("uniq"));
  REQUIRE(m.at("uniqueness_ratio").get<double>() == 1.0);
  REQUIRE(m.at("acquire_count").get<int>() == 1000);
}

TEST_CASE("selection is uniform over a fixed pool of four") {
  Registry::Options opt;
  opt.generator = instant_stub();
  opt.seed = 20260810;  // deterministic selection stream
  Registry reg(opt);
  PoolPolicy policy;
  // unlimited deploys: the same four variants keep filling the pool slots,
  // so no replenishment kicks in and every draw is over exactly four
  policy.target_pool_size = 4;
  reg.put_image("chi", base_image(), {}, policy);
  REQUIRE(reg.wait_for_fresh("chi", 4, 5000));

  std::map<uint64_t, uint64_t> counts;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) counts[reg.acquire("chi").descriptor.variant_id] += 1;
  REQUIRE(counts.size() == 4);
  double expected = draws / 4.0;
  double chi2 = 0;
  for (auto& [vid, n] : counts) chi2 += (n - expected) * (n - expected) / expected;
  // chi-square critical value, 3 dof, significance 0.001
  REQUIRE(chi2 < 16.266);
  auto m = reg.metrics(std::string("chi"));
  REQUIRE(m.at("variants_generated").get<int>() == 4);  // pool never regrew
}

TEST_CASE("concurrent stress: served variants are always live and transitions legal") {
  Registry::Options opt;
  opt.generator = instant_stub();
  opt.log_transitions = true;
  Registry reg(opt);
  PoolPolicy policy;
  policy.target_pool_size = 6;
  policy.max_deploys_per_variant = 1;
  policy.generator_parallelism = 2;
  policy.on_empty = PoolPolicy::OnEmpty::ReuseLeastDeployed;
  reg.put_image("stress", base_image(), {}, policy);
  REQUIRE(reg.wait_for_fresh("stress", 1, 5000));

  constexpr int kThreads = 16;
  constexpr int kPerThread = 625;  // 10,000 ops total
  std::atomic<int> bad{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < kThreads; ++t) {
    threads.emplace_back([&] {
      for (int i = 0; i < kPerThread; ++i) {
        auto got = reg.acquire("stress");
        if (!got.bytes || got.bytes->empty() || got.descriptor.digest_hex.empty() ||
            got.descriptor.state != VariantState::Deployed)
          ++bad;
      }
    });
  }
  for (auto& t : threads) t.join();
  REQUIRE(bad.load() == 0);

  auto log = reg.transition_log();
  REQUIRE(!log.empty());
  auto legal = [](VariantState from, VariantState to) {
    using S = VariantState;
    if (from == S::Generating && (to == S::Fresh || to == S::Expired)) return true;
    if (from == S::Fresh && (to == S::Deployed || to == S::Expired)) return true;
    if (from == S::Deployed && (to == S::Deployed || to == S::Expired)) return true;
    return false;
  };
  for (const auto& tr : log) {
    INFO("variant " << tr.variant_id << " " << to_string(tr.from) << " -> " << to_string(tr.to));
    REQUIRE(legal(tr.from, tr.to));
  }
  auto m = reg.metrics(std::string("stress"));
  REQUIRE(m.at("acquire_count").get<int>() == kThreads * kPerThread);
}

TEST_CASE("expire_sweep honors ttl and is idempotent") {
  GatedGenerator gate(3);
  Registry::Options opt;
  opt.generator = gate.fn();
  Registry reg(opt);
  PoolPolicy policy;
  policy.target_pool_size = 3;
  policy.variant_ttl_ms = 60'000;
  reg.put_image("aging", base_image(), {}, policy);
  REQUIRE(reg.wait_for_fresh("aging", 3, 5000));

  auto m0 = reg.metrics(std::string("aging"));
  REQUIRE(m0.at("storage_bytes").get<uint64_t>() > 0);

  int64_t now = wall_clock_ms();
  REQUIRE(reg.expire_sweep(now) == 0);  // nothing old enough yet
  REQUIRE(reg.expire_sweep(now + 120'000) == 3);
  REQUIRE(reg.expire_sweep(now + 120'000) == 0);  // idempotent

  auto m1 = reg.metrics(std::string("aging"));
  REQUIRE(m1.at("storage_bytes").get<uint64_t>() == 0);
  REQUIRE(m1.at("variants_by_state").at("expired").get<int>() == 3);
  gate.release->store(true);
  reg.shutdown();
}

TEST_CASE("sweep without ttl expires nothing") {
  Registry::Options opt;
  opt.generator = instant_stub();
  Registry reg(opt);
  PoolPolicy policy;
  policy.target_pool_size = 2;
  reg.put_image("forever", base_image(), {}, policy);
  REQUIRE(reg.wait_for_fresh("forever", 2, 5000));
  REQUIRE(reg.expire_sweep(wall_clock_ms() + 1'000'000'000) == 0);
}

TEST_CASE("generation duration percentiles are ordered") {
  std::atomic<int> call{0};
  Registry::Options opt;
  opt.generator = [&call](const ProgramImage& base, const PipelineSpec&, uint64_t) {
    int n = ++call;
    return GeneratedVariant{encode_image(base), double(n)};
  };
  Registry reg(opt);
  PoolPolicy policy;
  policy.target_pool_size = 8;
  reg.put_image("timed", base_image(), {}, policy);
  REQUIRE(reg.wait_for_fresh("timed", 8, 5000));
  auto m = reg.metrics(std::string("timed"));
  auto g = m.at("generation_ms");
  REQUIRE(g.at("p50").get<double>() <= g.at("p95").get<double>());
  REQUIRE(g.at("p95").get<double>() <= g.at("p99").get<double>());
  REQUIRE(g.at("count").get<int>() == 8);
}

TEST_CASE("the real pipeline generator produces behaving variants") {
  Registry reg;  // default: full lift/compose/emit pipeline
  PoolPolicy policy;
  policy.target_pool_size = 2;
  reg.put_image("real", base_image(), default_pipeline(), policy);
  REQUIRE(reg.wait_for_fresh("real", 2, 20'000));
  auto got = reg.acquire("real");
  auto variant = decode_image(*got.bytes);
  auto base = base_image();
  Rng rng(3);
  for (const auto& in : testutil::random_inputs(rng, 20))
    REQUIRE(same_behavior(execute(base, in), execute(variant, in)));
  REQUIRE(to_hex(sha256(*got.bytes)) == got.descriptor.digest_hex);
}

TEST_CASE("registry persists and recovers from disk") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / ("disa_reg_test_" + std::to_string(::getpid()));
  fs::remove_all(dir);

  PoolPolicy policy;
  policy.target_pool_size = 2;
  policy.max_deploys_per_variant = 5;
  uint64_t served_id = 0;
  {
    Registry::Options opt;
    opt.data_dir = dir.string();
    opt.generator = instant_stub();
    Registry reg(opt);
    reg.put_image("persisted", base_image(), default_pipeline(), policy);
    REQUIRE(reg.wait_for_fresh("persisted", 2, 5000));
    served_id = reg.acquire("persisted").descriptor.variant_id;
    reg.shutdown();
  }
  REQUIRE(fs::exists(dir / "persisted" / "manifest.json"));
  size_t blobs = 0;
  for (auto& e : fs::directory_iterator(dir / "persisted" / "blobs")) ++blobs, (void)e;
  REQUIRE(blobs >= 1);

  {
    Registry::Options opt;
    opt.data_dir = dir.string();
    opt.generator = instant_stub();
    Registry reg(opt);
    auto names = reg.image_names();
    REQUIRE(names == std::vector<std::string>{"persisted"});
    auto m = reg.metrics(std::string("persisted"));
    REQUIRE(m.at("variants_generated").get<int>() >= 2);
    auto got = reg.acquire("persisted");
    REQUIRE(!got.bytes->empty());
    (void)served_id;
    reg.shutdown();
  }
  fs::remove_all(dir);
}
