// Acceptance suite. Each criterion prints exactly one [PASS]/[FAIL] line;
// the process exits nonzero if any executed criterion failed.
//
//   acceptance          runs all eight criteria
//   acceptance <n>      runs criterion n only
//
// Criteria:
//   1  equivalence: every plain fixture x 7 plugins + 5 pipelines x 50 inputs
//      diverges nowhere; attack fixtures trap only after hardening
//   2  diversity: 20 master seeds -> >= 19 distinct emitted digests
//   3  composition warnings: disjoint facets silent, consumed facet warns once
//   4  liveness vs. brute-force path oracle on 200 random CFGs
//   5  registry: 1000 unique serves under max_deploys=1; 16-thread stress
//      never serves an expired/generating variant
//   6  chi-square selection uniformity over a fixed pool of 4 (alpha 0.001)
//   7  simulator vs. independent Monte-Carlo oracle (+-0.02) and vs. the live
//      registry replay (<= 0.03 divergence, 1000-request trace)
//   8  byte-identical transform reruns, identical sim reruns (via the CLI)

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>
#include <vector>

#include "disa/assembler.hpp"
#include "disa/emitter.hpp"
#include "disa/interp.hpp"
#include "disa/lifter.hpp"
#include "disa/liveness.hpp"
#include "disa/registry.hpp"
#include "disa/replay.hpp"
#include "disa/rng.hpp"
#include "disa/service.hpp"
#include "disa/sim.hpp"
#include "disa/transforms.hpp"
#include "test_util.hpp"

using namespace disa;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

const std::set<std::string> kAttackFixtures = {"canary_overflow.dasm", "cfi_corrupt.dasm"};

std::vector<std::string> plain_fixtures() {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(FIXTURES_DIR)) {
    auto name = e.path().filename().string();
    if (e.path().extension() == ".dasm" && !kAttackFixtures.count(name)) names.push_back(name);
  }
  std::sort(names.begin(), names.end());
  return names;
}

std::vector<std::pair<std::string, PipelineSpec>> canonical_configs() {
  std::vector<std::pair<std::string, PipelineSpec>> configs;
  for (const auto& [name, plugin] : plugin_catalog()) {
    PipelineSpec p;
    p.master_seed = 1337;
    p.stages = {{name, {}}};
    configs.emplace_back("plugin:" + name, p);
  }
  auto pipeline = [&](const std::string& label, std::vector<std::string> plugins) {
    PipelineSpec p;
    p.master_seed = 99;
    for (auto& pl : plugins) p.stages.push_back({pl, {}});
    configs.emplace_back("pipeline:" + label, p);
  };
  pipeline("bilr", {"bilr"});
  pipeline("stack+globals", {"stack_pad", "global_shuffle"});
  pipeline("i2d+cfi", {"indirect_to_direct", "cfi_check"});
  pipeline("diversity4", {"bilr", "stack_pad", "global_shuffle", "heap_pad"});
  pipeline("harden+diversify", {"canary", "bilr", "heap_pad"});
  return configs;
}

GeneratorFn instant_stub() {
  return [](const ProgramImage& base, const PipelineSpec&, uint64_t) {
    return GeneratedVariant{encode_image(base), 0.1};
  };
}

// ---------------------------------------------------------------- criterion 1

Outcome criterion_equivalence() {
  auto t0 = std::chrono::steady_clock::now();
  Rng rng(20260810);
  auto inputs = testutil::random_inputs(rng, 50, 6, 16);
  auto configs = canonical_configs();
  auto fixtures = plain_fixtures();
  if (fixtures.size() < 30)
    return {false, "only " + std::to_string(fixtures.size()) + " fixtures"};

  size_t divergences = 0, runs = 0;
  std::string first_bad;
  for (const auto& fixture : fixtures) {
    auto img = assemble(testutil::load_fixture(fixture));
    auto ir = lift(img);
    for (const auto& [label, spec] : configs) {
      auto out = emit(compose(spec, ir).ir);
      for (const auto& in : inputs) {
        ++runs;
        if (!same_behavior(execute(img, in), execute(out, in))) {
          ++divergences;
          if (first_bad.empty()) first_bad = fixture + " under " + label;
        }
      }
    }
  }

  // attack fixtures: benign before, trapping only after their hardening pass
  auto overflow = assemble(testutil::load_fixture("canary_overflow.dasm"));
  PipelineSpec canary_only;
  canary_only.master_seed = 7;
  canary_only.stages = {{"canary", {}}};
  auto hardened = emit(compose(canary_only, lift(overflow)).ir);
  bool overflow_ok = execute(overflow, {5}).termination.kind == TerminationKind::Halt &&
                     execute(hardened, {5}).termination.kind == TerminationKind::Trap;

  auto corrupt = assemble(testutil::load_fixture("cfi_corrupt.dasm"));
  PipelineSpec cfi_only;
  cfi_only.master_seed = 7;
  cfi_only.stages = {{"cfi_check", {}}};
  auto checked = emit(compose(cfi_only, lift(corrupt)).ir);
  bool corrupt_ok = execute(corrupt, {7}).termination.kind != TerminationKind::Trap &&
                    execute(checked, {7}).termination.kind == TerminationKind::Trap &&
                    execute(checked, {0}).output == execute(corrupt, {0}).output &&
                    execute(checked, {1}).output == execute(corrupt, {1}).output;

  auto secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ostringstream d;
  d << fixtures.size() << " fixtures x " << configs.size() << " configs x " << inputs.size()
    << " inputs (" << runs << " runs, " << divergences << " divergences";
  if (!first_bad.empty()) d << ", first: " << first_bad;
  d << "), attack fixtures " << (overflow_ok && corrupt_ok ? "trap post-transform only" : "WRONG")
    << ", " << std::fixed << std::setprecision(1) << secs << "s";
  bool time_ok = secs < 120.0;
  return {divergences == 0 && overflow_ok && corrupt_ok && time_ok, d.str()};
}

// ---------------------------------------------------------------- criterion 2

Outcome criterion_diversity() {
  auto ir = lift(assemble(testutil::load_fixture("ten_blocks.dasm")));
  if (ir.blocks.size() < 10)
    return {false, "fixture has only " + std::to_string(ir.blocks.size()) + " blocks"};
  PipelineSpec spec;
  spec.stages = {{"bilr", {}}, {"stack_pad", {}}, {"global_shuffle", {}}, {"heap_pad", {}}};
  std::set<std::string> digests;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    spec.master_seed = seed;
    digests.insert(to_hex(digest(emit(compose(spec, ir).ir))));
  }
  return {digests.size() >= 19,
          std::to_string(digests.size()) + " distinct digests from 20 master seeds (need >= 19)"};
}

// ---------------------------------------------------------------- criterion 3

Outcome criterion_composition() {
  auto ir = lift(assemble(testutil::load_fixture("mixed_calls.dasm")));
  PipelineSpec disjoint;
  disjoint.master_seed = 5;
  disjoint.stages = {{"stack_pad", {}}, {"global_shuffle", {}}};
  auto a = compose(disjoint, ir);

  auto jt = lift(assemble(testutil::load_fixture("jumptable_dispatch.dasm")));
  PipelineSpec consuming;
  consuming.master_seed = 5;
  consuming.stages = {{"indirect_to_direct", {}}, {"cfi_check", {}}};
  auto b = compose(consuming, jt);

  bool disjoint_ok = a.warnings.empty();
  bool consumed_ok =
      b.warnings.size() == 1 &&
      b.warnings[0].message == "facet indirect-branches consumed by earlier stage";
  std::ostringstream d;
  d << "[stack_pad, global_shuffle]: " << a.warnings.size()
    << " warnings; [indirect_to_direct, cfi_check]: " << b.warnings.size() << " warning(s)";
  if (!b.warnings.empty()) d << " ('" << b.warnings[0].message << "')";
  return {disjoint_ok && consumed_ok, d.str()};
}

// ---------------------------------------------------------------- criterion 4

Outcome criterion_liveness_oracle() {
  Rng rng(424242);
  size_t mismatches = 0, instructions = 0;
  for (int trial = 0; trial < 200; ++trial) {
    auto ir = lift(assemble(testutil::random_cfg_source(rng, 8)));
    auto cfg = compute_cfg(ir);
    auto live = compute_liveness(ir, cfg);
    for (const auto& [id, in] : ir.instructions) {
      ++instructions;
      if (live.dead_before.at(id) != testutil::oracle_dead_before(ir, cfg, id)) ++mismatches;
    }
  }
  return {mismatches == 0, "200 random CFGs, " + std::to_string(instructions) +
                               " instructions, " + std::to_string(mismatches) + " mismatches"};
}

// ---------------------------------------------------------------- criterion 5

Outcome criterion_registry_policy() {
  auto base = assemble(testutil::load_fixture("ten_blocks.dasm"));

  // (a) unique serves with replenishment keeping pace
  Registry::Options opt;
  opt.generator = instant_stub();
  Registry reg(opt);
  PoolPolicy policy;
  policy.target_pool_size = 8;
  policy.max_deploys_per_variant = 1;
  policy.generator_parallelism = 2;
  policy.on_empty = PoolPolicy::OnEmpty::Reject;
  reg.put_image("uniq", base, {}, policy);
  std::set<uint64_t> ids;
  bool all_unique = true;
  for (int i = 0; i < 1000; ++i) {
    if (!reg.wait_for_fresh("uniq", 1, 10'000)) return {false, "replenishment stalled"};
    auto got = reg.acquire("uniq");
    if (!ids.insert(got.descriptor.variant_id).second) all_unique = false;
  }
  double uniqueness = reg.metrics(std::string("uniq")).at("uniqueness_ratio").get<double>();

  // (b) concurrent stress: nothing expired or generating is ever served
  Registry::Options sopt;
  sopt.generator = instant_stub();
  sopt.log_transitions = true;
  Registry sreg(sopt);
  PoolPolicy spolicy;
  spolicy.target_pool_size = 6;
  spolicy.max_deploys_per_variant = 1;
  spolicy.generator_parallelism = 2;
  spolicy.on_empty = PoolPolicy::OnEmpty::ReuseLeastDeployed;
  sreg.put_image("stress", base, {}, spolicy);
  sreg.wait_for_fresh("stress", 1, 10'000);
  std::atomic<int> bad{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < 16; ++t)
    threads.emplace_back([&] {
      for (int i = 0; i < 625; ++i) {
        auto got = sreg.acquire("stress");
        if (!got.bytes || got.bytes->empty() ||
            got.descriptor.state != VariantState::Deployed)
          ++bad;
      }
    });
  for (auto& t : threads) t.join();
  size_t illegal = 0;
  for (const auto& tr : sreg.transition_log()) {
    using S = VariantState;
    bool ok = (tr.from == S::Generating && (tr.to == S::Fresh || tr.to == S::Expired)) ||
              (tr.from == S::Fresh && (tr.to == S::Deployed || tr.to == S::Expired)) ||
              (tr.from == S::Deployed && (tr.to == S::Deployed || tr.to == S::Expired));
    if (!ok) ++illegal;
  }
  std::ostringstream d;
  d << "1000 acquires, " << ids.size() << " distinct ids, uniqueness " << uniqueness
    << "; stress 16x625 ops, " << bad.load() << " bad responses, " << illegal
    << " illegal transitions";
  return {all_unique && ids.size() == 1000 && uniqueness == 1.0 && bad.load() == 0 &&
              illegal == 0,
          d.str()};
}

// ---------------------------------------------------------------- criterion 6

Outcome criterion_selection_uniformity() {
  Registry::Options opt;
  opt.generator = instant_stub();
  opt.seed = 1729;
  Registry reg(opt);
  PoolPolicy policy;
  policy.target_pool_size = 4;  // unlimited deploys keep the same four servable
  reg.put_image("chi", assemble(testutil::load_fixture("loop_sum.dasm")), {}, policy);
  if (!reg.wait_for_fresh("chi", 4, 10'000)) return {false, "pool never filled"};
  std::map<uint64_t, uint64_t> counts;
  const int draws = 10'000;
  for (int i = 0; i < draws; ++i) counts[reg.acquire("chi").descriptor.variant_id] += 1;
  if (counts.size() != 4)
    return {false, "pool changed size: " + std::to_string(counts.size()) + " variants seen"};
  double expected = draws / 4.0;
  double chi2 = 0;
  for (auto& [vid, n] : counts) chi2 += (n - expected) * (n - expected) / expected;
  std::ostringstream d;
  d << "chi-square " << chi2 << " over 10,000 draws, 3 dof (critical 16.266 at alpha=0.001)";
  return {chi2 < 16.266, d.str()};
}

// ---------------------------------------------------------------- criterion 7

Outcome criterion_simulator_validity() {
  struct Case {
    double rate, gen_s;
    uint32_t target, par;
  };
  const Case cases[] = {
      {2.0, 1.0, 4, 1}, {1.0, 0.5, 4, 1}, {4.0, 1.0, 8, 2}, {1.0, 2.0, 2, 1}, {2.0, 0.2, 4, 1},
  };
  double worst_mc = 0;
  int idx = 0;
  for (const auto& c : cases) {
    ++idx;
    testutil::McParams p;
    p.rate = c.rate;
    p.gen_seconds = c.gen_s;
    p.target = c.target;
    p.parallelism = c.par;
    double oracle = testutil::mc_repeat_probability(p, 987);

    sim::SimConfig cfg;
    cfg.arrival.kind = sim::ArrivalModel::Kind::Poisson;
    cfg.arrival.rate_per_sec = c.rate;
    cfg.generation.kind = sim::GenerationModel::Kind::Fixed;
    cfg.generation.fixed_seconds = c.gen_s;
    cfg.policy.target_pool_size = c.target;
    cfg.policy.generator_parallelism = c.par;
    cfg.policy.max_deploys_per_variant = 1;
    cfg.policy.on_empty = PoolPolicy::OnEmpty::ReuseLeastDeployed;
    cfg.horizon_seconds = 150'000.0 / c.rate;
    cfg.rng_seed = 31 + idx;
    auto res = sim::simulate(cfg);
    worst_mc = std::max(worst_mc, std::abs(res.repeat_serve_probability - oracle));
  }

  // live replay: 1000-request trace against an in-process registry; keep the
  // scaled inter-arrival gap well above the loopback round-trip so the client
  // holds the schedule
  const double kScale = 0.05;  // 20x compression
  ServerConfig scfg;
  scfg.port = 0;
  scfg.stub_generation = true;
  scfg.generation_delay_ms = static_cast<int64_t>(1000 * 1.0 * kScale);
  RegistryService service(scfg);
  int port = service.start();

  sim::SimConfig rc;
  rc.arrival.kind = sim::ArrivalModel::Kind::Poisson;
  rc.arrival.rate_per_sec = 10;
  rc.generation.kind = sim::GenerationModel::Kind::Fixed;
  rc.generation.fixed_seconds = 1.0;
  rc.policy.target_pool_size = 8;
  rc.policy.generator_parallelism = 4;
  rc.policy.max_deploys_per_variant = 1;
  rc.policy.on_empty = PoolPolicy::OnEmpty::ReuseLeastDeployed;
  rc.horizon_seconds = 100;  // ~1000 arrivals at 10/s
  rc.rng_seed = 555;

  nlohmann::json body{
      {"image", base64_encode(encode_image(assemble(testutil::load_fixture("loop_sum.dasm"))))},
      {"policy", nlohmann::json(rc.policy)}};
  httplib::Client client("127.0.0.1", port);
  client.Put("/images/replayed", body.dump(), "application/json");
  service.registry().wait_for_fresh("replayed", 8, 10'000);
  auto report = sim::replay_against_registry(rc, "127.0.0.1", port, "replayed", kScale);
  service.stop();

  std::ostringstream d;
  d << "worst |sim - MC| = " << std::fixed << std::setprecision(4) << worst_mc
    << " (tol 0.02); replay: " << report.live_requests << " requests, |uniqueness| = "
    << report.uniqueness_divergence << ", |empty| = " << report.pool_empty_divergence
    << " (tol 0.03)";
  bool replay_ok = report.live_requests >= 900 && report.uniqueness_divergence <= 0.03 &&
                   report.pool_empty_divergence <= 0.03;
  return {worst_mc <= 0.02 && replay_ok, d.str()};
}

// ---------------------------------------------------------------- criterion 8

Outcome criterion_determinism() {
  auto dir = fs::temp_directory_path() / "disa_acceptance";
  fs::create_directories(dir);
  auto sh = [&](const std::string& cmd) { return std::system((cmd + " >/dev/null 2>&1").c_str()); };
  std::string bin = DISA_BIN;

  auto base = dir / "base.disa";
  {
    auto img = assemble(testutil::load_fixture("ten_blocks.dasm"));
    auto bytes = encode_image(img);
    std::ofstream f(base, std::ios::binary);
    f.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  }
  auto spec = dir / "pipeline.json";
  {
    std::ofstream f(spec);
    f << R"({"master_seed": 20260810, "stages": [
          {"plugin": "bilr"}, {"plugin": "stack_pad"},
          {"plugin": "global_shuffle"}, {"plugin": "heap_pad"}]})";
  }
  auto v1 = dir / "v1.disa", v2 = dir / "v2.disa";
  bool tf_ok =
      sh(bin + " transform " + base.string() + " --pipeline " + spec.string() + " -o " + v1.string()) == 0 &&
      sh(bin + " transform " + base.string() + " --pipeline " + spec.string() + " -o " + v2.string()) == 0;
  auto read_all = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  };
  bool bytes_equal = tf_ok && read_all(v1) == read_all(v2) && !read_all(v1).empty();

  auto simcfg = dir / "sim.json";
  {
    std::ofstream f(simcfg);
    f << R"({"arrival": {"kind": "poisson", "rate_per_sec": 2.0},
             "generation_time": {"kind": "fixed", "seconds": 1.0},
             "policy": {"target_pool_size": 4, "max_deploys_per_variant": 1,
                        "generator_parallelism": 1, "on_empty": "reuse_least_deployed"},
             "horizon_seconds": 2000, "rng_seed": 9})";
  }
  auto s1 = dir / "s1.json", s2 = dir / "s2.json";
  bool sim_ok =
      std::system((bin + " sim --config " + simcfg.string() + " > " + s1.string() + " 2>/dev/null").c_str()) == 0 &&
      std::system((bin + " sim --config " + simcfg.string() + " > " + s2.string() + " 2>/dev/null").c_str()) == 0;
  bool sim_equal = sim_ok && read_all(s1) == read_all(s2) && !read_all(s1).empty();

  std::ostringstream d;
  d << "transform reruns byte-identical: " << (bytes_equal ? "yes" : "NO")
    << "; sim reruns identical: " << (sim_equal ? "yes" : "NO");
  return {bytes_equal && sim_equal, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int number;
    const char* title;
    Outcome (*run)();
  };
  const Criterion criteria[] = {
      {1, "equivalence suite", criterion_equivalence},
      {2, "diversity across master seeds", criterion_diversity},
      {3, "composition semantics", criterion_composition},
      {4, "liveness vs. brute-force oracle", criterion_liveness_oracle},
      {5, "registry pool policy", criterion_registry_policy},
      {6, "selection uniformity (chi-square)", criterion_selection_uniformity},
      {7, "simulator validity (MC oracle + live replay)", criterion_simulator_validity},
      {8, "determinism of transform and sim", criterion_determinism},
  };

  int only = 0;
  if (argc > 1) only = std::atoi(argv[1]);

  bool all_pass = true;
  for (const auto& c : criteria) {
    if (only && c.number != only) continue;
    Outcome outcome;
    try {
      outcome = c.run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    all_pass = all_pass && outcome.pass;
    std::cout << (outcome.pass ? "[PASS]" : "[FAIL]") << " criterion " << c.number << ": "
              << c.title << " — " << outcome.detail << "\n";
  }
  return all_pass ? 0 : 1;
}
