#pragma once

// Discrete-event simulator for the registry's pool policy: requests arrive
// (poisson or trace), variant generation takes modeled time, and the same
// lifecycle/selection rules as the live registry decide what each request
// gets. Deterministic given rng_seed.
//
// Event ordering: (time, kind, sequence) with generation-complete < ttl-expiry
// < arrival at equal times.
//
// Sampling recipes (fixed so results are reproducible everywhere):
//   exponential inter-arrival: -ln(1 - u) / rate
//   lognormal service:         exp(mu + sigma * z),
//                              z = sqrt(-2 ln(1-u1)) * cos(2*pi*u2)

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "disa/registry.hpp"
#include "disa/rng.hpp"

namespace disa::sim {

struct ArrivalModel {
  enum class Kind { Poisson, Trace };
  Kind kind = Kind::Poisson;
  double rate_per_sec = 1.0;        // poisson
  std::string trace_path;           // trace file: one arrival time per line
  std::vector<double> trace_times;  // inline trace (wins over the path)
};

struct GenerationModel {
  enum class Kind { Fixed, Lognormal };
  Kind kind = Kind::Fixed;
  double fixed_seconds = 1.0;
  double mu = 0.0;
  double sigma = 1.0;
};

struct SimConfig {
  ArrivalModel arrival;
  GenerationModel generation;
  PoolPolicy policy;
  double horizon_seconds = 60.0;
  uint64_t rng_seed = 0;
  uint64_t variant_size_bytes = 1024;
  bool warm_start = true;  // pool pre-filled to target at t=0
  std::string event_log_csv;  // optional path

  void check() const {
    policy.check();
    if (horizon_seconds <= 0) throw std::invalid_argument("horizon must be > 0");
    if (arrival.kind == ArrivalModel::Kind::Poisson && arrival.rate_per_sec <= 0)
      throw std::invalid_argument("poisson rate must be > 0");
  }
};

struct SimResult {
  uint64_t requests = 0;
  uint64_t served = 0;
  uint64_t rejected = 0;
  uint64_t generated = 0;
  uint64_t unique_first_deploys = 0;
  double uniqueness_ratio = 1.0;
  double repeat_serve_probability = 0.0;
  double pool_empty_fraction = 0.0;
  double mean_storage_bytes = 0.0;
  uint64_t max_storage_bytes = 0;
  double replacement_rate_per_s = 0.0;

  bool operator==(const SimResult&) const = default;
};

inline void to_json(nlohmann::json& j, const SimResult& r) {
  j = nlohmann::json{{"requests", r.requests},
                     {"served", r.served},
                     {"rejected", r.rejected},
                     {"generated", r.generated},
                     {"unique_first_deploys", r.unique_first_deploys},
                     {"uniqueness_ratio", r.uniqueness_ratio},
                     {"repeat_serve_probability", r.repeat_serve_probability},
                     {"pool_empty_fraction", r.pool_empty_fraction},
                     {"mean_storage_bytes", r.mean_storage_bytes},
                     {"max_storage_bytes", r.max_storage_bytes},
                     {"replacement_rate_per_s", r.replacement_rate_per_s}};
}

inline void from_json(const nlohmann::json& j, ArrivalModel& a) {
  a = ArrivalModel{};
  auto kind = j.at("kind").get<std::string>();
  if (kind == "poisson") {
    a.kind = ArrivalModel::Kind::Poisson;
    j.at("rate_per_sec").get_to(a.rate_per_sec);
  } else if (kind == "trace") {
    a.kind = ArrivalModel::Kind::Trace;
    if (j.contains("path")) j.at("path").get_to(a.trace_path);
    if (j.contains("times")) j.at("times").get_to(a.trace_times);
  } else {
    throw std::invalid_argument("arrival.kind must be poisson or trace");
  }
}
inline void to_json(nlohmann::json& j, const ArrivalModel& a) {
  if (a.kind == ArrivalModel::Kind::Poisson)
    j = nlohmann::json{{"kind", "poisson"}, {"rate_per_sec", a.rate_per_sec}};
  else if (!a.trace_times.empty())
    j = nlohmann::json{{"kind", "trace"}, {"times", a.trace_times}};
  else
    j = nlohmann::json{{"kind", "trace"}, {"path", a.trace_path}};
}

inline void from_json(const nlohmann::json& j, GenerationModel& g) {
  g = GenerationModel{};
  auto kind = j.at("kind").get<std::string>();
  if (kind == "fixed") {
    g.kind = GenerationModel::Kind::Fixed;
    j.at("seconds").get_to(g.fixed_seconds);
  } else if (kind == "lognormal") {
    g.kind = GenerationModel::Kind::Lognormal;
    j.at("mu").get_to(g.mu);
    j.at("sigma").get_to(g.sigma);
  } else {
    throw std::invalid_argument("generation_time.kind must be fixed or lognormal");
  }
}
inline void to_json(nlohmann::json& j, const GenerationModel& g) {
  if (g.kind == GenerationModel::Kind::Fixed)
    j = nlohmann::json{{"kind", "fixed"}, {"seconds", g.fixed_seconds}};
  else
    j = nlohmann::json{{"kind", "lognormal"}, {"mu", g.mu}, {"sigma", g.sigma}};
}

inline void from_json(const nlohmann::json& j, SimConfig& c) {
  c = SimConfig{};
  j.at("arrival").get_to(c.arrival);
  j.at("generation_time").get_to(c.generation);
  j.at("policy").get_to(c.policy);
  j.at("horizon_seconds").get_to(c.horizon_seconds);
  if (j.contains("rng_seed")) j.at("rng_seed").get_to(c.rng_seed);
  if (j.contains("variant_size_bytes")) j.at("variant_size_bytes").get_to(c.variant_size_bytes);
  if (j.contains("warm_start")) j.at("warm_start").get_to(c.warm_start);
  if (j.contains("event_log_csv")) j.at("event_log_csv").get_to(c.event_log_csv);
}
inline void to_json(nlohmann::json& j, const SimConfig& c) {
  j = nlohmann::json{{"arrival", c.arrival},
                     {"generation_time", c.generation},
                     {"policy", c.policy},
                     {"horizon_seconds", c.horizon_seconds},
                     {"rng_seed", c.rng_seed},
                     {"variant_size_bytes", c.variant_size_bytes},
                     {"warm_start", c.warm_start}};
  if (!c.event_log_csv.empty()) j["event_log_csv"] = c.event_log_csv;
}

class SimError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::vector<double> load_trace(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw SimError("cannot open trace file: " + path);
  std::vector<double> times;
  std::string line;
  while (std::getline(f, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream is(line);
    double t;
    if (is >> t) times.push_back(t);
  }
  if (!std::is_sorted(times.begin(), times.end()))
    throw SimError("trace times must be non-decreasing");
  return times;
}

// Arrival times over [0, horizon], deterministic for the given rng.
inline std::vector<double> materialize_arrivals(const SimConfig& cfg, Rng& rng) {
  std::vector<double> times;
  if (cfg.arrival.kind == ArrivalModel::Kind::Trace) {
    times = cfg.arrival.trace_times.empty() ? load_trace(cfg.arrival.trace_path)
                                            : cfg.arrival.trace_times;
    while (!times.empty() && times.back() > cfg.horizon_seconds) times.pop_back();
    return times;
  }
  double t = 0;
  for (;;) {
    double u = rng.next_double();
    t += -std::log1p(-u) / cfg.arrival.rate_per_sec;
    if (t > cfg.horizon_seconds) break;
    times.push_back(t);
  }
  return times;
}

inline double sample_generation_seconds(const GenerationModel& g, Rng& rng) {
  if (g.kind == GenerationModel::Kind::Fixed) return g.fixed_seconds;
  double u1 = rng.next_double();
  double u2 = rng.next_double();
  double z = std::sqrt(-2.0 * std::log1p(-u1)) * std::cos(2.0 * M_PI * u2);
  return std::exp(g.mu + g.sigma * z);
}

inline SimResult simulate(const SimConfig& cfg) {
  cfg.check();
  Rng rng(cfg.rng_seed);

  // live pool with O(log n) operations; expired variants drop out entirely
  struct Live {
    uint64_t deploy_count = 0;
    bool fresh = true;
  };
  std::map<uint64_t, Live> live;
  std::vector<uint64_t> eligible;  // fresh + deployed-under-limit, uniform pick
  std::map<uint64_t, size_t> eligible_pos;
  std::set<std::pair<uint64_t, uint64_t>> reuse_order;  // (deploy_count, id), deployed only
  size_t fresh_count = 0;

  auto eligible_add = [&](uint64_t id) {
    eligible_pos[id] = eligible.size();
    eligible.push_back(id);
  };
  auto eligible_remove = [&](uint64_t id) {
    auto it = eligible_pos.find(id);
    if (it == eligible_pos.end()) return;
    size_t pos = it->second;
    uint64_t last = eligible.back();
    eligible[pos] = last;
    eligible_pos[last] = pos;
    eligible.pop_back();
    eligible_pos.erase(it);
  };

  enum EventKind : int { GenComplete = 0, TtlExpiry = 1, Arrival = 2 };
  struct Event {
    double time;
    int kind;
    uint64_t seq;
    uint64_t payload;  // variant id for expiries, unused otherwise
    bool operator>(const Event& o) const {
      if (time != o.time) return time > o.time;
      if (kind != o.kind) return kind > o.kind;
      return seq > o.seq;
    }
  };
  std::priority_queue<Event, std::vector<Event>, std::greater<>> events;
  uint64_t seq = 0;

  auto arrivals = materialize_arrivals(cfg, rng);
  for (double t : arrivals) events.push({t, Arrival, seq++, 0});

  uint64_t next_id = 1;
  uint64_t generating = 0;

  SimResult res;
  std::ofstream log;
  if (!cfg.event_log_csv.empty()) {
    log.open(cfg.event_log_csv);
    if (!log) throw SimError("cannot open event log: " + cfg.event_log_csv);
    log << "time,event,variant_id,pool_fresh_count\n";
  }
  auto log_event = [&](double t, const char* what, uint64_t vid) {
    if (log.is_open()) log << t << "," << what << "," << vid << "," << fresh_count << "\n";
  };

  // time-weighted storage accounting
  double last_t = 0, storage_integral = 0;
  auto tick = [&](double now) {
    uint64_t storage = live.size() * cfg.variant_size_bytes;
    storage_integral += storage * (now - last_t);
    res.max_storage_bytes = std::max(res.max_storage_bytes, storage);
    last_t = now;
  };

  auto at_limit_count = [&](uint64_t deploys) {
    return cfg.policy.max_deploys_per_variant && deploys >= *cfg.policy.max_deploys_per_variant;
  };

  auto spawn_fresh = [&](double created) {
    uint64_t id = next_id++;
    live[id] = Live{0, true};
    ++fresh_count;
    eligible_add(id);
    if (cfg.policy.variant_ttl_ms)
      events.push({created + *cfg.policy.variant_ttl_ms / 1000.0, TtlExpiry, seq++, id});
    return id;
  };

  if (cfg.warm_start)
    for (uint32_t i = 0; i < cfg.policy.target_pool_size; ++i) spawn_fresh(0);

  // eligible == servable; deployed variants with budget left fill pool slots
  auto replenish = [&](double now) {
    while (generating < cfg.policy.generator_parallelism &&
           eligible.size() + generating < cfg.policy.target_pool_size) {
      ++generating;
      double d = sample_generation_seconds(cfg.generation, rng);
      events.push({now + d, GenComplete, seq++, 0});
      log_event(now, "generation_start", 0);
    }
  };
  replenish(0);

  auto expire = [&](uint64_t id) {
    auto it = live.find(id);
    if (it == live.end()) return;
    if (it->second.fresh)
      --fresh_count;
    else
      reuse_order.erase({it->second.deploy_count, id});
    eligible_remove(id);
    live.erase(it);
  };

  auto serve = [&](uint64_t id, double now) {
    Live& v = live.at(id);
    if (v.deploy_count == 0) res.unique_first_deploys += 1;
    if (v.fresh) {
      v.fresh = false;
      --fresh_count;
    } else {
      reuse_order.erase({v.deploy_count, id});
    }
    v.deploy_count += 1;
    reuse_order.insert({v.deploy_count, id});
    res.served += 1;
    log_event(now, "served", id);
    if (at_limit_count(v.deploy_count)) {
      if (cfg.policy.on_empty == PoolPolicy::OnEmpty::Reject)
        expire(id);  // retired right after the response
      else
        eligible_remove(id);  // kept as reuse fodder only
    }
  };

  while (!events.empty()) {
    Event ev = events.top();
    events.pop();
    if (ev.time > cfg.horizon_seconds) break;
    tick(ev.time);

    switch (ev.kind) {
      case GenComplete: {
        --generating;
        res.generated += 1;
        uint64_t id = spawn_fresh(ev.time);
        log_event(ev.time, "generation_complete", id);
        replenish(ev.time);
        break;
      }
      case TtlExpiry: {
        if (live.count(ev.payload)) {
          expire(ev.payload);
          log_event(ev.time, "ttl_expired", ev.payload);
          replenish(ev.time);
        }
        break;
      }
      case Arrival: {
        res.requests += 1;
        if (!eligible.empty()) {
          serve(eligible[rng.bounded(eligible.size())], ev.time);
        } else {
          res.pool_empty_fraction += 1;  // normalized later
          if (cfg.policy.on_empty == PoolPolicy::OnEmpty::ReuseLeastDeployed &&
              !reuse_order.empty()) {
            serve(reuse_order.begin()->second, ev.time);
          } else {
            res.rejected += 1;
            log_event(ev.time, "rejected", 0);
          }
        }
        replenish(ev.time);
        break;
      }
    }
  }
  tick(cfg.horizon_seconds);

  res.uniqueness_ratio =
      res.served ? double(res.unique_first_deploys) / double(res.served) : 1.0;
  res.repeat_serve_probability = 1.0 - res.uniqueness_ratio;
  res.pool_empty_fraction =
      res.requests ? res.pool_empty_fraction / double(res.requests) : 0.0;
  res.mean_storage_bytes = storage_integral / cfg.horizon_seconds;
  res.replacement_rate_per_s = double(res.generated) / cfg.horizon_seconds;
  return res;
}

}  // namespace disa::sim
