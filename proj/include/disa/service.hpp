#pragma once

// HTTP+JSON front end for the registry.
//
//   PUT  /images/{name}              {image: b64, pipeline: {...}, policy: {...}}
//   GET  /images/{name}/acquire   -> {variant_id, master_seed, digest, image}
//   POST /images/{name}/expire-sweep [{now_ms}] -> {expired}
//   GET  /images/{name}/metrics
//   GET  /metrics
//   GET  /healthz
//
// Errors: {"error": "...", "code": "bad_request" | "unknown_image" |
// "pool_exhausted"} with statuses 400/404/503. All randomness is server-side.

#include <httplib.h>

#include <memory>
#include <optional>
#include <string>
#include <thread>

#include <json.hpp>

#include "disa/encoding.hpp"
#include "disa/registry.hpp"

namespace disa {

struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 8787;
  std::string data_dir;
  // test hooks: replace pipeline generation with a sleep that returns the
  // base image, so timing-sensitive studies run without transform cost
  bool stub_generation = false;
  int64_t generation_delay_ms = 0;
  std::optional<PoolPolicy> default_policy;
  std::optional<PipelineSpec> default_pipeline;
};

inline void from_json(const nlohmann::json& j, ServerConfig& c) {
  c = ServerConfig{};
  if (j.contains("listen")) {
    const auto& l = j.at("listen");
    if (l.contains("host")) l.at("host").get_to(c.host);
    if (l.contains("port")) l.at("port").get_to(c.port);
  }
  if (j.contains("data_dir")) j.at("data_dir").get_to(c.data_dir);
  if (j.contains("generation")) {
    const auto& g = j.at("generation");
    if (g.contains("stub")) g.at("stub").get_to(c.stub_generation);
    if (g.contains("delay_ms")) g.at("delay_ms").get_to(c.generation_delay_ms);
  }
  if (j.contains("defaults")) {
    const auto& d = j.at("defaults");
    if (d.contains("policy")) c.default_policy = d.at("policy").get<PoolPolicy>();
    if (d.contains("pipeline")) c.default_pipeline = d.at("pipeline").get<PipelineSpec>();
  }
}

class RegistryService {
 public:
  explicit RegistryService(ServerConfig config)
      : config_(std::move(config)), registry_(registry_options(config_)) {
    wire_routes();
  }

  ~RegistryService() { stop(); }

  Registry& registry() { return registry_; }

  // Binds to the configured port (or an ephemeral one when port == 0) and
  // serves on a background thread. Returns the bound port.
  int start() {
    int port = config_.port;
    if (port == 0) {
      port = server_.bind_to_any_port(config_.host);
      if (port < 0) throw std::runtime_error("bind failed on " + config_.host);
      serving_ = std::thread([this] { server_.listen_after_bind(); });
    } else {
      if (!server_.bind_to_port(config_.host, port))
        throw std::runtime_error("bind failed on " + config_.host + ":" + std::to_string(port));
      serving_ = std::thread([this] { server_.listen_after_bind(); });
    }
    server_.wait_until_ready();
    return port;
  }

  // Foreground variant for the CLI.
  bool listen_blocking() { return server_.listen(config_.host, config_.port); }

  void stop() {
    server_.stop();
    if (serving_.joinable()) serving_.join();
    registry_.shutdown();
  }

 private:
  static Registry::Options registry_options(const ServerConfig& c) {
    Registry::Options opt;
    opt.data_dir = c.data_dir;
    if (c.stub_generation || c.generation_delay_ms > 0) {
      bool stub = c.stub_generation;
      int64_t delay = c.generation_delay_ms;
      GeneratorFn real = pipeline_generator();
      opt.generator = [stub, delay, real](const ProgramImage& base,
                                          const PipelineSpec& pipeline, uint64_t seed) {
        auto t0 = std::chrono::steady_clock::now();
        GeneratedVariant out;
        if (stub)
          out.bytes = encode_image(base);
        else
          out = real(base, pipeline, seed);
        if (delay > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay));
        auto t1 = std::chrono::steady_clock::now();
        out.duration_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        return out;
      };
    }
    return opt;
  }

  static void send_json(httplib::Response& res, int status, const nlohmann::json& j) {
    res.status = status;
    res.set_content(j.dump(2), "application/json");
  }

  static void send_error(httplib::Response& res, const RegistryError& e) {
    const char* code = "bad_request";
    int status = 400;
    switch (e.code) {
      case RegistryError::Code::UnknownImage:
        code = "unknown_image";
        status = 404;
        break;
      case RegistryError::Code::PoolExhausted:
        code = "pool_exhausted";
        status = 503;
        break;
      case RegistryError::Code::BadRequest:
        break;
    }
    send_json(res, status, {{"error", e.what()}, {"code", code}});
  }

  template <typename Fn>
  static void guarded(httplib::Response& res, Fn&& fn) {
    try {
      fn();
    } catch (const RegistryError& e) {
      send_error(res, e);
    } catch (const std::exception& e) {
      send_json(res, 400, {{"error", e.what()}, {"code", "bad_request"}});
    }
  }

  void wire_routes() {
    server_.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, {{"status", "ok"}});
    });

    server_.Put(R"(/images/([A-Za-z0-9._\-]+))",
                [this](const httplib::Request& req, httplib::Response& res) {
                  guarded(res, [&] {
                    auto body = nlohmann::json::parse(req.body);
                    auto image = decode_image(base64_decode(body.at("image").get<std::string>()));
                    PipelineSpec pipeline;
                    if (body.contains("pipeline"))
                      pipeline = body.at("pipeline").get<PipelineSpec>();
                    else if (config_.default_pipeline)
                      pipeline = *config_.default_pipeline;
                    PoolPolicy policy;
                    if (body.contains("policy"))
                      policy = body.at("policy").get<PoolPolicy>();
                    else if (config_.default_policy)
                      policy = *config_.default_policy;
                    registry_.put_image(req.matches[1], image, pipeline, policy);
                    send_json(res, 200,
                              {{"ok", true},
                               {"name", std::string(req.matches[1])},
                               {"target_pool_size", policy.target_pool_size}});
                  });
                });

    server_.Get(R"(/images/([A-Za-z0-9._\-]+)/acquire)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  guarded(res, [&] {
                    auto out = registry_.acquire(req.matches[1]);
                    send_json(res, 200,
                              {{"variant_id", out.descriptor.variant_id},
                               {"master_seed", out.descriptor.master_seed},
                               {"digest", out.descriptor.digest_hex},
                               {"image", base64_encode(*out.bytes)}});
                  });
                });

    server_.Post(R"(/images/([A-Za-z0-9._\-]+)/expire-sweep)",
                 [this](const httplib::Request& req, httplib::Response& res) {
                   guarded(res, [&] {
                     (void)registry_.metrics(std::string(req.matches[1]));  // 404 on unknown
                     int64_t now = wall_clock_ms();
                     if (!req.body.empty()) {
                       auto body = nlohmann::json::parse(req.body);
                       if (body.contains("now_ms")) now = body.at("now_ms").get<int64_t>();
                     }
                     send_json(res, 200, {{"expired", registry_.expire_sweep(now)}});
                   });
                 });

    server_.Get(R"(/images/([A-Za-z0-9._\-]+)/metrics)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  guarded(res, [&] {
                    send_json(res, 200, registry_.metrics(std::string(req.matches[1])));
                  });
                });

    server_.Get("/metrics", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] { send_json(res, 200, registry_.metrics()); });
    });
  }

  ServerConfig config_;
  httplib::Server server_;
  Registry registry_;
  std::thread serving_;
};

}  // namespace disa
