#pragma once

// Hardened-registry core: stores base images, keeps a pool of diversified
// variants per image topped up by background generator threads, serves a
// random fresh variant per acquire, expires variants by deploy count or TTL,
// and keeps the books for uniqueness/storage/timing metrics.
//
// Variant lifecycle: generating -> fresh -> deployed (repeatable) -> expired,
// plus fresh -> expired via TTL or image replacement. Expired blobs are
// deleted immediately; the records stay for metrics history.
//
// Selection rule: uniform over every servable variant, where servable means
// fresh, or deployed with deploy budget left. With bounded max_deploys and
// on_empty=reject a variant expires the moment it hits its budget; with
// on_empty=reuse_least_deployed at-limit variants are retained as a last
// resort and served least-deployed-first when nothing servable remains, so
// the registry degrades diversity instead of availability.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "disa/digest.hpp"
#include "disa/emitter.hpp"
#include "disa/encoding.hpp"
#include "disa/lifter.hpp"
#include "disa/rng.hpp"
#include "disa/transforms.hpp"

namespace disa {

// ------------------------------------------------------------------- policy

struct PoolPolicy {
  uint32_t target_pool_size = 1;
  std::optional<uint64_t> max_deploys_per_variant;  // nullopt = unlimited
  std::optional<int64_t> variant_ttl_ms;            // nullopt = no expiry
  uint32_t generator_parallelism = 1;
  enum class OnEmpty { ReuseLeastDeployed, Reject };
  OnEmpty on_empty = OnEmpty::ReuseLeastDeployed;

  bool operator==(const PoolPolicy&) const = default;

  void check() const {
    if (target_pool_size < 1) throw std::invalid_argument("target_pool_size must be >= 1");
    if (generator_parallelism < 1)
      throw std::invalid_argument("generator_parallelism must be >= 1");
    if (max_deploys_per_variant && *max_deploys_per_variant < 1)
      throw std::invalid_argument("max_deploys_per_variant must be >= 1");
    if (variant_ttl_ms && *variant_ttl_ms < 1)
      throw std::invalid_argument("variant_ttl_ms must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const PoolPolicy& p) {
  j = nlohmann::json{
      {"target_pool_size", p.target_pool_size},
      {"max_deploys_per_variant",
       p.max_deploys_per_variant ? nlohmann::json(*p.max_deploys_per_variant)
                                 : nlohmann::json(nullptr)},
      {"variant_ttl_ms",
       p.variant_ttl_ms ? nlohmann::json(*p.variant_ttl_ms) : nlohmann::json(nullptr)},
      {"generator_parallelism", p.generator_parallelism},
      {"on_empty",
       p.on_empty == PoolPolicy::OnEmpty::Reject ? "reject" : "reuse_least_deployed"}};
}

inline void from_json(const nlohmann::json& j, PoolPolicy& p) {
  p = PoolPolicy{};
  if (j.contains("target_pool_size")) j.at("target_pool_size").get_to(p.target_pool_size);
  if (j.contains("max_deploys_per_variant") && !j.at("max_deploys_per_variant").is_null())
    p.max_deploys_per_variant = j.at("max_deploys_per_variant").get<uint64_t>();
  if (j.contains("variant_ttl_ms") && !j.at("variant_ttl_ms").is_null())
    p.variant_ttl_ms = j.at("variant_ttl_ms").get<int64_t>();
  if (j.contains("generator_parallelism"))
    j.at("generator_parallelism").get_to(p.generator_parallelism);
  if (j.contains("on_empty")) {
    auto s = j.at("on_empty").get<std::string>();
    if (s == "reject")
      p.on_empty = PoolPolicy::OnEmpty::Reject;
    else if (s == "reuse_least_deployed")
      p.on_empty = PoolPolicy::OnEmpty::ReuseLeastDeployed;
    else
      throw std::invalid_argument("on_empty must be reject or reuse_least_deployed");
  }
}

// ------------------------------------------------------------------ variant

enum class VariantState : uint8_t { Generating, Fresh, Deployed, Expired };

inline const char* to_string(VariantState s) {
  switch (s) {
    case VariantState::Generating: return "generating";
    case VariantState::Fresh: return "fresh";
    case VariantState::Deployed: return "deployed";
    case VariantState::Expired: return "expired";
  }
  return "?";
}

inline std::optional<VariantState> variant_state_from_string(const std::string& s) {
  for (auto v : {VariantState::Generating, VariantState::Fresh, VariantState::Deployed,
                 VariantState::Expired})
    if (s == to_string(v)) return v;
  return std::nullopt;
}

struct Variant {
  uint64_t variant_id = 0;
  std::string image_name;
  uint64_t master_seed = 0;
  std::string digest_hex;  // set once the pipeline finished
  VariantState state = VariantState::Generating;
  uint64_t deploy_count = 0;
  int64_t created_at_ms = 0;
  int64_t last_deployed_at_ms = 0;
  double generation_duration_ms = 0;
  uint64_t size_bytes = 0;
  std::shared_ptr<const std::vector<uint8_t>> bytes;  // null once expired
};

struct StateTransition {
  std::string image;
  uint64_t variant_id;
  VariantState from;
  VariantState to;
};

class RegistryError : public std::runtime_error {
 public:
  enum class Code { UnknownImage, PoolExhausted, BadRequest };
  RegistryError(Code c, const std::string& msg) : std::runtime_error(msg), code(c) {}
  Code code;
};

// --------------------------------------------------------------------- misc

inline int64_t wall_clock_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

inline bool valid_image_name(const std::string& name) {
  if (name.empty() || name.size() > 64) return false;
  for (char c : name)
    if (!isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '_' && c != '-')
      return false;
  if (name == "." || name == "..") return false;
  return true;
}

struct GeneratedVariant {
  std::vector<uint8_t> bytes;
  double duration_ms = 0;
};

// Pure function run outside any registry lock.
using GeneratorFn = std::function<GeneratedVariant(
    const ProgramImage& base, const PipelineSpec& pipeline, uint64_t master_seed)>;

inline GeneratorFn pipeline_generator() {
  return [](const ProgramImage& base, const PipelineSpec& pipeline, uint64_t master_seed) {
    auto t0 = std::chrono::steady_clock::now();
    PipelineSpec seeded = pipeline;
    seeded.master_seed = master_seed;
    auto out = emit(compose(seeded, lift(base)).ir);
    auto bytes = encode_image(out);
    auto t1 = std::chrono::steady_clock::now();
    return GeneratedVariant{std::move(bytes),
                            std::chrono::duration<double, std::milli>(t1 - t0).count()};
  };
}

// ----------------------------------------------------------------- registry

class Registry {
 public:
  struct Options {
    std::string data_dir;  // empty: in-memory only
    GeneratorFn generator = pipeline_generator();
    std::optional<uint64_t> seed;  // master-seed source; default: random_device
    bool log_transitions = false;  // keep a transition log for tests
  };

  Registry() : Registry(Options{}) {}

  explicit Registry(Options options) : options_(std::move(options)) {
    uint64_t s;
    if (options_.seed) {
      s = *options_.seed;
    } else {
      std::random_device rd;
      s = (static_cast<uint64_t>(rd()) << 32) ^ rd();
    }
    seed_source_ = std::make_unique<SplitMix64>(s);
    select_rng_ = std::make_unique<Rng>(seed_source_->next());
    if (!options_.data_dir.empty()) recover_from_disk();
  }

  ~Registry() { shutdown(); }

  Registry(const Registry&) = delete;
  Registry& operator=(const Registry&) = delete;

  void shutdown() {
    {
      std::lock_guard lock(mu_);
      if (stopping_) return;
      stopping_ = true;
      for (auto& [name, entry] : images_) entry->stop = true;
    }
    work_cv_.notify_all();
    for (auto& t : workers_)
      if (t.joinable()) t.join();
    workers_.clear();
  }

  void put_image(const std::string& name, const ProgramImage& image,
                 const PipelineSpec& pipeline, const PoolPolicy& policy) {
    if (!valid_image_name(name))
      throw RegistryError(RegistryError::Code::BadRequest, "invalid image name");
    policy.check();
    if (image.code.empty())
      throw RegistryError(RegistryError::Code::BadRequest, "image has no code");
    for (const auto& stage : pipeline.stages)
      if (!plugin_catalog().count(stage.plugin))
        throw RegistryError(RegistryError::Code::BadRequest,
                            "unknown plugin '" + stage.plugin + "'");

    std::shared_ptr<ImageEntry> entry;
    {
      std::lock_guard lock(mu_);
      if (stopping_)
        throw RegistryError(RegistryError::Code::BadRequest, "registry is shutting down");
      if (auto it = images_.find(name); it != images_.end()) {
        // replacement: retire the old pool entirely
        it->second->stop = true;
        for (auto& [vid, v] : it->second->variants)
          if (v.state != VariantState::Expired) expire_variant(*it->second, v);
        persist(*it->second);
      }
      entry = std::make_shared<ImageEntry>();
      entry->name = name;
      entry->base = image;
      entry->pipeline = pipeline;
      entry->policy = policy;
      entry->created_at_ms = wall_clock_ms();
      images_[name] = entry;
      persist(*entry);
      for (uint32_t i = 0; i < policy.generator_parallelism; ++i)
        workers_.emplace_back([this, entry] { generator_loop(entry); });
    }
    work_cv_.notify_all();
  }

  struct AcquireResult {
    Variant descriptor;  // snapshot taken at deploy time
    std::shared_ptr<const std::vector<uint8_t>> bytes;
    bool first_deploy = false;
  };

  AcquireResult acquire(const std::string& name) {
    std::lock_guard lock(mu_);
    auto entry = find_entry(name);
    auto& e = *entry;

    std::vector<Variant*> eligible;
    for (auto& [vid, v] : e.variants) {
      if (v.state == VariantState::Fresh)
        eligible.push_back(&v);
      else if (v.state == VariantState::Deployed && !at_deploy_limit(e, v))
        eligible.push_back(&v);
    }

    Variant* pick = nullptr;
    if (!eligible.empty()) {
      pick = eligible[select_rng_->bounded(eligible.size())];
    } else {
      ++e.empty_pool_events;
      if (e.policy.on_empty == PoolPolicy::OnEmpty::Reject)
        throw RegistryError(RegistryError::Code::PoolExhausted,
                            "pool exhausted for image '" + name + "'");
      // degraded mode: least-deployed live variant, oldest id breaking ties
      for (auto& [vid, v] : e.variants) {
        if (v.state != VariantState::Deployed) continue;
        if (!pick || v.deploy_count < pick->deploy_count ||
            (v.deploy_count == pick->deploy_count && v.variant_id < pick->variant_id))
          pick = &v;
      }
      if (!pick)
        throw RegistryError(RegistryError::Code::PoolExhausted,
                            "pool exhausted for image '" + name + "'");
    }

    bool first = pick->deploy_count == 0;
    set_state(e, *pick, VariantState::Deployed);
    pick->deploy_count += 1;
    pick->last_deployed_at_ms = wall_clock_ms();
    ++e.acquire_count;
    if (first) ++e.unique_responses;

    AcquireResult result{*pick, pick->bytes, first};

    // bounded deploy budgets retire the variant right after the response,
    // unless reuse mode needs it around as a last resort
    if (e.policy.max_deploys_per_variant &&
        pick->deploy_count >= *e.policy.max_deploys_per_variant &&
        e.policy.on_empty == PoolPolicy::OnEmpty::Reject) {
      expire_variant(e, *pick);
    }
    persist(e);
    work_cv_.notify_all();
    return result;
  }

  size_t expire_sweep(int64_t now_ms) {
    std::lock_guard lock(mu_);
    size_t expired = 0;
    for (auto& [name, entry] : images_) {
      if (!entry->policy.variant_ttl_ms) continue;
      size_t here = 0;
      for (auto& [vid, v] : entry->variants) {
        if (v.state != VariantState::Fresh && v.state != VariantState::Deployed) continue;
        if (v.created_at_ms + *entry->policy.variant_ttl_ms <= now_ms) {
          expire_variant(*entry, v);
          ++here;
        }
      }
      if (here) persist(*entry);
      expired += here;
    }
    if (expired) work_cv_.notify_all();
    return expired;
  }

  nlohmann::json metrics(const std::optional<std::string>& name = std::nullopt) {
    std::lock_guard lock(mu_);
    if (name) {
      auto entry = find_entry(*name);
      return image_metrics(*entry);
    }
    nlohmann::json agg;
    uint64_t acquires = 0, uniques = 0, empties = 0, storage = 0, generated = 0;
    std::vector<double> durations;
    nlohmann::json images = nlohmann::json::object();
    for (auto& [n, entry] : images_) {
      images[n] = image_metrics(*entry);
      acquires += entry->acquire_count;
      uniques += entry->unique_responses;
      empties += entry->empty_pool_events;
      generated += entry->generated_count;
      storage += live_storage(*entry);
      for (auto& [vid, v] : entry->variants)
        if (v.state != VariantState::Generating && v.generation_duration_ms > 0)
          durations.push_back(v.generation_duration_ms);
    }
    agg["images"] = images;
    agg["acquire_count"] = acquires;
    agg["uniqueness_ratio"] = acquires ? double(uniques) / double(acquires) : 1.0;
    agg["empty_pool_events"] = empties;
    agg["storage_bytes"] = storage;
    agg["variants_generated"] = generated;
    agg["generation_ms"] = duration_stats(durations);
    return agg;
  }

  // Test/ops helper: block until an image has n fresh variants.
  bool wait_for_fresh(const std::string& name, size_t n, int64_t timeout_ms) {
    std::unique_lock lock(mu_);
    auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    for (;;) {
      auto it = images_.find(name);
      if (it != images_.end()) {
        size_t fresh = 0;
        for (auto& [vid, v] : it->second->variants)
          if (v.state == VariantState::Fresh) ++fresh;
        if (fresh >= n) return true;
      }
      if (fresh_cv_.wait_until(lock, deadline) == std::cv_status::timeout) return false;
    }
  }

  std::vector<StateTransition> transition_log() {
    std::lock_guard lock(mu_);
    return transitions_;
  }

  std::vector<std::string> image_names() {
    std::lock_guard lock(mu_);
    std::vector<std::string> names;
    for (auto& [n, e] : images_) names.push_back(n);
    return names;
  }

 private:
  struct ImageEntry {
    std::string name;
    ProgramImage base;
    PipelineSpec pipeline;
    PoolPolicy policy;
    int64_t created_at_ms = 0;
    uint64_t next_variant_id = 1;
    std::map<uint64_t, Variant> variants;
    std::set<uint64_t> used_seeds;
    uint64_t acquire_count = 0;
    uint64_t unique_responses = 0;
    uint64_t empty_pool_events = 0;
    uint64_t generated_count = 0;
    bool stop = false;  // set when replaced or registry shuts down
  };

  std::shared_ptr<ImageEntry> find_entry(const std::string& name) {
    auto it = images_.find(name);
    if (it == images_.end())
      throw RegistryError(RegistryError::Code::UnknownImage, "unknown image '" + name + "'");
    return it->second;
  }

  bool at_deploy_limit(const ImageEntry& e, const Variant& v) const {
    return e.policy.max_deploys_per_variant &&
           v.deploy_count >= *e.policy.max_deploys_per_variant;
  }

  void set_state(ImageEntry& e, Variant& v, VariantState to) {
    if (options_.log_transitions) transitions_.push_back({e.name, v.variant_id, v.state, to});
    v.state = to;
  }

  void expire_variant(ImageEntry& e, Variant& v) {
    if (v.state == VariantState::Expired) return;
    set_state(e, v, VariantState::Expired);
    v.bytes.reset();  // drop the blob; the record stays for metrics
    if (!options_.data_dir.empty() && !v.digest_hex.empty()) {
      bool shared = false;
      for (auto& [vid, other] : e.variants)
        if (other.variant_id != v.variant_id && other.state != VariantState::Expired &&
            other.digest_hex == v.digest_hex)
          shared = true;
      if (!shared) {
        std::error_code ec;
        std::filesystem::remove(blob_path(e.name, v.digest_hex), ec);
      }
    }
  }

  uint64_t live_storage(const ImageEntry& e) const {
    uint64_t total = 0;
    for (auto& [vid, v] : e.variants)
      if (v.state == VariantState::Fresh || v.state == VariantState::Deployed)
        total += v.size_bytes;
    return total;
  }

  static nlohmann::json duration_stats(std::vector<double> samples) {
    nlohmann::json j;
    if (samples.empty()) {
      j["count"] = 0;
      return j;
    }
    std::sort(samples.begin(), samples.end());
    double sum = 0;
    for (double d : samples) sum += d;
    auto pct = [&](double q) {
      size_t rank = static_cast<size_t>(std::ceil(q * samples.size()));
      if (rank == 0) rank = 1;
      return samples[rank - 1];
    };
    j["count"] = samples.size();
    j["mean"] = sum / samples.size();
    j["p50"] = pct(0.50);
    j["p95"] = pct(0.95);
    j["p99"] = pct(0.99);
    return j;
  }

  nlohmann::json image_metrics(ImageEntry& e) {
    nlohmann::json j;
    uint64_t per_state[4] = {};
    uint64_t counts[4] = {};
    std::vector<double> durations;
    for (auto& [vid, v] : e.variants) {
      counts[static_cast<int>(v.state)] += 1;
      if (v.state == VariantState::Fresh || v.state == VariantState::Deployed)
        per_state[static_cast<int>(v.state)] += v.size_bytes;
      if (v.state != VariantState::Generating && v.generation_duration_ms > 0)
        durations.push_back(v.generation_duration_ms);
    }
    j["image"] = e.name;
    j["acquire_count"] = e.acquire_count;
    j["uniqueness_ratio"] =
        e.acquire_count ? double(e.unique_responses) / double(e.acquire_count) : 1.0;
    j["empty_pool_events"] = e.empty_pool_events;
    j["variants_generated"] = e.generated_count;
    j["storage_bytes"] = live_storage(e);
    j["storage_bytes_by_state"] = {{"fresh", per_state[1]}, {"deployed", per_state[2]}};
    j["variants_by_state"] = {{"generating", counts[0]},
                              {"fresh", counts[1]},
                              {"deployed", counts[2]},
                              {"expired", counts[3]}};
    double elapsed_s = std::max<int64_t>(1, wall_clock_ms() - e.created_at_ms) / 1000.0;
    j["replacement_rate_per_s"] = double(e.generated_count) / elapsed_s;
    j["generation_ms"] = duration_stats(durations);
    return j;
  }

  // ---------------------------------------------------------- generation

  void generator_loop(std::shared_ptr<ImageEntry> entry) {
    for (;;) {
      uint64_t vid = 0;
      uint64_t seed = 0;
      {
        std::unique_lock lock(mu_);
        work_cv_.wait(lock, [&] {
          if (stopping_ || entry->stop) return true;
          return pool_deficit(*entry) > 0;
        });
        if (stopping_ || entry->stop) return;
        seed = fresh_seed(*entry);
        vid = entry->next_variant_id++;
        Variant v;
        v.variant_id = vid;
        v.image_name = entry->name;
        v.master_seed = seed;
        v.state = VariantState::Generating;
        v.created_at_ms = wall_clock_ms();
        entry->variants.emplace(vid, std::move(v));
      }

      GeneratedVariant gen;
      bool failed = false;
      std::string error;
      try {
        gen = options_.generator(entry->base, entry->pipeline, seed);
      } catch (const std::exception& e) {
        failed = true;
        error = e.what();
      }

      {
        std::lock_guard lock(mu_);
        auto it = entry->variants.find(vid);
        if (it == entry->variants.end()) continue;
        Variant& v = it->second;
        if (failed || entry->stop) {
          set_state(*entry, v, VariantState::Expired);
          continue;
        }
        v.digest_hex = to_hex(sha256(gen.bytes));
        v.size_bytes = gen.bytes.size();
        v.generation_duration_ms = gen.duration_ms;
        v.created_at_ms = wall_clock_ms();
        v.bytes = std::make_shared<const std::vector<uint8_t>>(std::move(gen.bytes));
        set_state(*entry, v, VariantState::Fresh);
        entry->generated_count += 1;
        write_blob(*entry, v);
        persist(*entry);
      }
      fresh_cv_.notify_all();
      work_cv_.notify_all();
    }
  }

  // the pool target counts servable variants: fresh, in flight, or deployed
  // with deploy budget left; an immortal deployed variant still fills a slot
  size_t pool_deficit(const ImageEntry& e) const {
    size_t filled = 0;
    for (auto& [vid, v] : e.variants) {
      if (v.state == VariantState::Fresh || v.state == VariantState::Generating)
        ++filled;
      else if (v.state == VariantState::Deployed && !at_deploy_limit(e, v))
        ++filled;
    }
    return filled < e.policy.target_pool_size ? e.policy.target_pool_size - filled : 0;
  }

  // master seeds are never reused within an image
  uint64_t fresh_seed(ImageEntry& e) {
    for (;;) {
      uint64_t s = seed_source_->next();
      if (e.used_seeds.insert(s).second) return s;
    }
  }

  // --------------------------------------------------------- persistence

  std::filesystem::path image_dir(const std::string& name) const {
    return std::filesystem::path(options_.data_dir) / name;
  }
  std::filesystem::path blob_path(const std::string& name, const std::string& digest_hex) const {
    return image_dir(name) / "blobs" / (digest_hex + ".disa");
  }

  void write_blob(const ImageEntry& e, const Variant& v) {
    if (options_.data_dir.empty() || !v.bytes) return;
    auto dir = image_dir(e.name) / "blobs";
    std::filesystem::create_directories(dir);
    auto path = blob_path(e.name, v.digest_hex);
    if (std::filesystem::exists(path)) return;  // content-addressed
    auto tmp = path;
    tmp += ".tmp";
    {
      std::ofstream f(tmp, std::ios::binary);
      f.write(reinterpret_cast<const char*>(v.bytes->data()),
              static_cast<std::streamsize>(v.bytes->size()));
    }
    std::filesystem::rename(tmp, path);
  }

  void persist(const ImageEntry& e) {
    if (options_.data_dir.empty()) return;
    auto dir = image_dir(e.name);
    std::filesystem::create_directories(dir);
    nlohmann::json j;
    j["name"] = e.name;
    j["base_image"] = base64_encode(encode_image(e.base));
    j["pipeline"] = e.pipeline;
    j["policy"] = e.policy;
    j["created_at_ms"] = e.created_at_ms;
    j["next_variant_id"] = e.next_variant_id;
    j["acquire_count"] = e.acquire_count;
    j["unique_responses"] = e.unique_responses;
    j["empty_pool_events"] = e.empty_pool_events;
    j["generated_count"] = e.generated_count;
    j["used_seeds"] = e.used_seeds;
    nlohmann::json vs = nlohmann::json::array();
    for (auto& [vid, v] : e.variants) {
      vs.push_back({{"variant_id", v.variant_id},
                    {"master_seed", v.master_seed},
                    {"digest", v.digest_hex},
                    {"state", to_string(v.state)},
                    {"deploy_count", v.deploy_count},
                    {"created_at_ms", v.created_at_ms},
                    {"last_deployed_at_ms", v.last_deployed_at_ms},
                    {"generation_duration_ms", v.generation_duration_ms},
                    {"size_bytes", v.size_bytes}});
    }
    j["variants"] = vs;
    auto tmp = dir / "manifest.json.tmp";
    {
      std::ofstream f(tmp);
      f << j.dump(2);
    }
    std::filesystem::rename(tmp, dir / "manifest.json");
  }

  void recover_from_disk() {
    namespace fs = std::filesystem;
    if (!fs::exists(options_.data_dir)) return;
    for (const auto& dirent : fs::directory_iterator(options_.data_dir)) {
      auto manifest = dirent.path() / "manifest.json";
      if (!fs::exists(manifest)) continue;
      std::ifstream f(manifest);
      nlohmann::json j = nlohmann::json::parse(f);
      auto entry = std::make_shared<ImageEntry>();
      entry->name = j.at("name").get<std::string>();
      entry->base = decode_image(base64_decode(j.at("base_image").get<std::string>()));
      entry->pipeline = j.at("pipeline").get<PipelineSpec>();
      entry->policy = j.at("policy").get<PoolPolicy>();
      entry->created_at_ms = j.at("created_at_ms").get<int64_t>();
      entry->next_variant_id = j.at("next_variant_id").get<uint64_t>();
      entry->acquire_count = j.at("acquire_count").get<uint64_t>();
      entry->unique_responses = j.at("unique_responses").get<uint64_t>();
      entry->empty_pool_events = j.at("empty_pool_events").get<uint64_t>();
      entry->generated_count = j.at("generated_count").get<uint64_t>();
      for (auto s : j.at("used_seeds")) entry->used_seeds.insert(s.get<uint64_t>());
      for (const auto& vj : j.at("variants")) {
        Variant v;
        v.variant_id = vj.at("variant_id").get<uint64_t>();
        v.image_name = entry->name;
        v.master_seed = vj.at("master_seed").get<uint64_t>();
        v.digest_hex = vj.at("digest").get<std::string>();
        auto st = variant_state_from_string(vj.at("state").get<std::string>());
        v.state = st.value_or(VariantState::Expired);
        v.deploy_count = vj.at("deploy_count").get<uint64_t>();
        v.created_at_ms = vj.at("created_at_ms").get<int64_t>();
        v.last_deployed_at_ms = vj.at("last_deployed_at_ms").get<int64_t>();
        v.generation_duration_ms = vj.at("generation_duration_ms").get<double>();
        v.size_bytes = vj.at("size_bytes").get<uint64_t>();
        // a crash mid-generation leaves no blob worth keeping
        if (v.state == VariantState::Generating) v.state = VariantState::Expired;
        if (v.state == VariantState::Fresh || v.state == VariantState::Deployed) {
          auto path = blob_path(entry->name, v.digest_hex);
          std::ifstream blob(path, std::ios::binary);
          if (blob) {
            auto data = std::make_shared<std::vector<uint8_t>>(
                (std::istreambuf_iterator<char>(blob)), std::istreambuf_iterator<char>());
            v.bytes = std::move(data);
          } else {
            v.state = VariantState::Expired;
          }
        }
        entry->variants.emplace(v.variant_id, std::move(v));
      }
      std::string name = entry->name;
      images_[name] = entry;
      for (uint32_t i = 0; i < entry->policy.generator_parallelism; ++i)
        workers_.emplace_back([this, entry] { generator_loop(entry); });
    }
  }

  Options options_;
  std::mutex mu_;
  std::condition_variable work_cv_;   // wakes generator threads
  std::condition_variable fresh_cv_;  // wakes wait_for_fresh
  std::map<std::string, std::shared_ptr<ImageEntry>> images_;
  std::vector<std::thread> workers_;
  std::unique_ptr<SplitMix64> seed_source_;
  std::unique_ptr<Rng> select_rng_;
  std::vector<StateTransition> transitions_;
  bool stopping_ = false;
};

}  // namespace disa
