#pragma once

// Validates the simulator against a live registry: the same arrival schedule
// drives both, and the report compares uniqueness and empty-pool outcomes.
// Wall-clock time can be compressed with time_scale (0.1 = 10x faster);
// generation on the live side should use the service's sleep-stub hook with
// the same scaled delay.
//
// The live-side empty-pool estimate counts repeat responses and rejections,
// which coincides with "arrival found no fresh variant" under
// max_deploys_per_variant = 1 policies; replay is only meaningful there.

#include <httplib.h>

#include <chrono>
#include <set>
#include <string>
#include <thread>

#include <json.hpp>

#include "disa/sim.hpp"

namespace disa::sim {

struct ReplayReport {
  SimResult simulated;
  uint64_t live_requests = 0;
  uint64_t live_served = 0;
  uint64_t live_rejected = 0;
  uint64_t live_unique = 0;
  double live_uniqueness_ratio = 1.0;
  double live_pool_empty_fraction = 0.0;
  double uniqueness_divergence = 0.0;
  double pool_empty_divergence = 0.0;
  bool policy_supported = true;  // false when the policy breaks the estimator
};

inline void to_json(nlohmann::json& j, const ReplayReport& r) {
  j = nlohmann::json{{"simulated", r.simulated},
                     {"live",
                      {{"requests", r.live_requests},
                       {"served", r.live_served},
                       {"rejected", r.live_rejected},
                       {"unique", r.live_unique},
                       {"uniqueness_ratio", r.live_uniqueness_ratio},
                       {"pool_empty_fraction", r.live_pool_empty_fraction}}},
                     {"uniqueness_divergence", r.uniqueness_divergence},
                     {"pool_empty_divergence", r.pool_empty_divergence},
                     {"policy_supported", r.policy_supported}};
}

class ReplayError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline ReplayReport replay_against_registry(const SimConfig& config, const std::string& host,
                                            int port, const std::string& image_name,
                                            double time_scale = 1.0) {
  ReplayReport report;
  report.simulated = simulate(config);
  report.policy_supported = config.policy.max_deploys_per_variant &&
                            *config.policy.max_deploys_per_variant == 1;

  Rng rng(config.rng_seed);
  auto arrivals = materialize_arrivals(config, rng);

  httplib::Client client(host, port);
  client.set_connection_timeout(5, 0);
  client.set_read_timeout(30, 0);
  if (auto health = client.Get("/healthz"); !health || health->status != 200)
    throw ReplayError("registry endpoint unreachable at " + host + ":" + std::to_string(port));

  std::set<uint64_t> seen;
  uint64_t repeats = 0;
  auto start = std::chrono::steady_clock::now();
  for (double t : arrivals) {
    auto due = start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                           std::chrono::duration<double>(t * time_scale));
    std::this_thread::sleep_until(due);
    ++report.live_requests;
    auto res = client.Get("/images/" + image_name + "/acquire");
    if (!res) throw ReplayError("acquire request failed mid-replay");
    if (res->status == 200) {
      auto j = nlohmann::json::parse(res->body);
      uint64_t vid = j.at("variant_id").get<uint64_t>();
      ++report.live_served;
      if (seen.insert(vid).second)
        ++report.live_unique;
      else
        ++repeats;
    } else if (res->status == 503) {
      ++report.live_rejected;
    } else {
      throw ReplayError("unexpected acquire status " + std::to_string(res->status));
    }
  }

  report.live_uniqueness_ratio =
      report.live_served ? double(report.live_unique) / double(report.live_served) : 1.0;
  report.live_pool_empty_fraction =
      report.live_requests ? double(repeats + report.live_rejected) / double(report.live_requests)
                           : 0.0;
  report.uniqueness_divergence =
      std::abs(report.live_uniqueness_ratio - report.simulated.uniqueness_ratio);
  report.pool_empty_divergence =
      std::abs(report.live_pool_empty_fraction - report.simulated.pool_empty_fraction);
  return report;
}

}  // namespace disa::sim
