// disa: assembler, disassembler, interpreter, rewriter, hardened registry and
// pool simulator in one binary.
//
// Exit codes: 0 success, 1 operational error, 2 usage error, 3 verification
// divergence. Diagnostics go to stderr; every subcommand takes --json to emit
// a single JSON object on stdout.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "disa/assembler.hpp"
#include "disa/disassembler.hpp"
#include "disa/emitter.hpp"
#include "disa/interp.hpp"
#include "disa/lifter.hpp"
#include "disa/replay.hpp"
#include "disa/rng.hpp"
#include "disa/service.hpp"
#include "disa/sim.hpp"
#include "disa/transforms.hpp"

namespace {

using nlohmann::json;

std::string read_text_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<uint8_t> read_binary_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_binary_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
}

std::vector<int64_t> parse_words(const std::string& csv) {
  std::vector<int64_t> words;
  std::string tok;
  std::istringstream is(csv);
  while (std::getline(is, tok, ',')) {
    if (tok.empty()) continue;
    words.push_back(std::stoll(tok));
  }
  return words;
}

json result_to_json(const disa::ExecutionResult& r) {
  return json{{"output", r.output}, {"steps", r.steps}, {"termination", to_string(r.termination)}};
}

// inputs argument: a file with one comma-separated vector per line, or
// random:N:seed for N seeded vectors (lengths 0..6, values 0..16)
std::vector<std::vector<int64_t>> load_input_vectors(const std::string& spec) {
  std::vector<std::vector<int64_t>> inputs;
  if (spec.rfind("random:", 0) == 0) {
    auto rest = spec.substr(7);
    auto colon = rest.find(':');
    if (colon == std::string::npos)
      throw std::runtime_error("--inputs random needs the form random:N:seed");
    size_t n = std::stoull(rest.substr(0, colon));
    uint64_t seed = std::stoull(rest.substr(colon + 1));
    disa::Rng rng(seed);
    for (size_t i = 0; i < n; ++i) {
      std::vector<int64_t> v(rng.bounded(7));
      for (auto& w : v) w = static_cast<int64_t>(rng.bounded(17));
      inputs.push_back(std::move(v));
    }
    return inputs;
  }
  std::ifstream f(spec);
  if (!f) throw std::runtime_error("cannot open inputs file " + spec);
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line[0] == '#') continue;
    inputs.push_back(parse_words(line));
  }
  return inputs;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DISA toolchain: assemble, rewrite, diversify, serve and simulate"};
  app.require_subcommand(1);

  // --- asm
  std::string asm_in, asm_out;
  bool asm_json = false;
  auto* cmd_asm = app.add_subcommand("asm", "assemble a .dasm source into a .disa image");
  cmd_asm->add_option("input", asm_in, "assembly source")->required();
  cmd_asm->add_option("-o,--output", asm_out, "output image path")->required();
  cmd_asm->add_flag("--json", asm_json, "emit a JSON summary");

  // --- dasm
  std::string dasm_in, dasm_out;
  bool dasm_json = false;
  auto* cmd_dasm = app.add_subcommand("dasm", "disassemble a .disa image");
  cmd_dasm->add_option("input", dasm_in, "image path")->required();
  cmd_dasm->add_option("-o,--output", dasm_out, "write text here instead of stdout");
  cmd_dasm->add_flag("--json", dasm_json, "emit a JSON object with the text");

  // --- run
  std::string run_in, run_input;
  uint64_t run_limit = disa::kDefaultStepLimit;
  bool run_json = false;
  auto* cmd_run = app.add_subcommand("run", "execute a .disa image");
  cmd_run->add_option("image", run_in, "image path")->required();
  cmd_run->add_option("--input", run_input, "comma-separated input words");
  cmd_run->add_option("--step-limit", run_limit, "interpreter step budget");
  cmd_run->add_flag("--json", run_json, "emit a JSON result");

  // --- transform
  std::string tf_in, tf_out, tf_pipeline;
  bool tf_json = false;
  auto* cmd_tf = app.add_subcommand("transform", "apply a diversification pipeline");
  cmd_tf->add_option("input", tf_in, "base image path")->required();
  cmd_tf->add_option("--pipeline", tf_pipeline, "pipeline spec JSON file")->required();
  cmd_tf->add_option("-o,--output", tf_out, "output image path")->required();
  cmd_tf->add_flag("--json", tf_json, "emit a JSON summary");

  // --- verify
  std::string vf_a, vf_b, vf_inputs;
  uint64_t vf_limit = disa::kDefaultStepLimit;
  bool vf_json = false;
  auto* cmd_vf = app.add_subcommand("verify", "differential equivalence check of two images");
  cmd_vf->add_option("a", vf_a, "first image")->required();
  cmd_vf->add_option("b", vf_b, "second image")->required();
  cmd_vf->add_option("--inputs", vf_inputs, "inputs file or random:N:seed")->required();
  cmd_vf->add_option("--step-limit", vf_limit, "interpreter step budget");
  cmd_vf->add_flag("--json", vf_json, "emit a JSON report");

  // --- serve
  std::string sv_config, sv_listen, sv_data_dir;
  bool sv_json = false;
  auto* cmd_sv = app.add_subcommand("serve", "run the hardened registry service");
  cmd_sv->add_option("--config", sv_config, "server config JSON file");
  cmd_sv->add_option("--listen", sv_listen, "host:port override");
  cmd_sv->add_option("--data-dir", sv_data_dir, "data directory override");
  cmd_sv->add_flag("--json", sv_json, "emit a JSON startup line");

  // --- sim
  std::string sim_config;
  bool sim_json = false;
  auto* cmd_sim = app.add_subcommand("sim", "pool policy simulation (JSON result on stdout)");
  cmd_sim->add_option("--config", sim_config, "sim config JSON file")->required();
  cmd_sim->add_flag("--json", sim_json, "accepted for symmetry; output is always JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (cmd_asm->parsed()) {
      auto img = disa::assemble(read_text_file(asm_in));
      auto bytes = disa::encode_image(img);
      write_binary_file(asm_out, bytes);
      if (asm_json)
        std::cout << json{{"ok", true},
                          {"output", asm_out},
                          {"code_records", img.code.size()},
                          {"data_objects", img.data_objects.size()},
                          {"digest", disa::to_hex(disa::sha256(bytes))}}
                         .dump(2)
                  << "\n";
      return 0;
    }

    if (cmd_dasm->parsed()) {
      auto img = disa::decode_image(read_binary_file(dasm_in));
      auto text = disa::disassemble(img);
      if (dasm_json) {
        std::cout << json{{"text", text}}.dump(2) << "\n";
      } else if (!dasm_out.empty()) {
        std::ofstream f(dasm_out);
        if (!f) throw std::runtime_error("cannot write " + dasm_out);
        f << text;
      } else {
        std::cout << text;
      }
      return 0;
    }

    if (cmd_run->parsed()) {
      auto img = disa::decode_image(read_binary_file(run_in));
      auto res = disa::execute(img, parse_words(run_input), run_limit);
      if (run_json) {
        std::cout << result_to_json(res).dump(2) << "\n";
      } else {
        for (int64_t w : res.output) std::cout << w << "\n";
        std::cerr << to_string(res.termination) << " after " << res.steps << " steps\n";
      }
      return 0;
    }

    if (cmd_tf->parsed()) {
      auto img = disa::decode_image(read_binary_file(tf_in));
      auto spec = json::parse(read_text_file(tf_pipeline)).get<disa::PipelineSpec>();
      auto composed = disa::compose(spec, disa::lift(img));
      auto out = disa::emit(composed.ir);
      auto bytes = disa::encode_image(out);
      write_binary_file(tf_out, bytes);
      json stages = json::array();
      for (const auto& t : composed.timings)
        stages.push_back({{"plugin", t.plugin}, {"millis", t.millis}});
      json warnings = json::array();
      for (const auto& w : composed.warnings)
        warnings.push_back(
            {{"stage", w.stage_index}, {"plugin", w.plugin}, {"message", w.message}});
      if (tf_json) {
        std::cout << json{{"ok", true},
                          {"output", tf_out},
                          {"digest", disa::to_hex(disa::sha256(bytes))},
                          {"stages", stages},
                          {"warnings", warnings}}
                         .dump(2)
                  << "\n";
      } else {
        for (const auto& t : composed.timings)
          std::cerr << "stage " << t.plugin << ": " << t.millis << " ms\n";
        for (const auto& w : composed.warnings)
          std::cerr << "warning: stage " << w.stage_index << " (" << w.plugin
                    << "): " << w.message << "\n";
      }
      return 0;
    }

    if (cmd_vf->parsed()) {
      auto a = disa::decode_image(read_binary_file(vf_a));
      auto b = disa::decode_image(read_binary_file(vf_b));
      auto inputs = load_input_vectors(vf_inputs);
      json divergences = json::array();
      for (size_t i = 0; i < inputs.size(); ++i) {
        auto ra = disa::execute(a, inputs[i], vf_limit);
        auto rb = disa::execute(b, inputs[i], vf_limit);
        if (!disa::same_behavior(ra, rb))
          divergences.push_back(
              {{"index", i}, {"input", inputs[i]}, {"a", result_to_json(ra)}, {"b", result_to_json(rb)}});
      }
      bool equivalent = divergences.empty();
      if (vf_json) {
        std::cout << json{{"equivalent", equivalent},
                          {"inputs", inputs.size()},
                          {"divergences", divergences}}
                         .dump(2)
                  << "\n";
      } else if (!equivalent) {
        std::cerr << divergences.size() << " of " << inputs.size() << " inputs diverged\n";
        for (const auto& d : divergences)
          std::cerr << "  input #" << d.at("index") << ": " << d.at("a").at("termination")
                    << " vs " << d.at("b").at("termination") << "\n";
      }
      return equivalent ? 0 : 3;
    }

    if (cmd_sv->parsed()) {
      disa::ServerConfig cfg;
      if (!sv_config.empty()) cfg = json::parse(read_text_file(sv_config)).get<disa::ServerConfig>();
      if (!sv_listen.empty()) {
        auto colon = sv_listen.rfind(':');
        if (colon == std::string::npos) throw std::runtime_error("--listen needs host:port");
        cfg.host = sv_listen.substr(0, colon);
        cfg.port = std::stoi(sv_listen.substr(colon + 1));
      }
      if (!sv_data_dir.empty()) cfg.data_dir = sv_data_dir;
      disa::RegistryService service(cfg);
      if (sv_json)
        std::cout << json{{"listening", cfg.host + ":" + std::to_string(cfg.port)},
                          {"data_dir", cfg.data_dir}}
                         .dump(2)
                  << std::endl;
      else
        std::cerr << "registry listening on " << cfg.host << ":" << cfg.port << "\n";
      if (!service.listen_blocking()) throw std::runtime_error("listen failed");
      return 0;
    }

    if (cmd_sim->parsed()) {
      auto cfg = json::parse(read_text_file(sim_config)).get<disa::sim::SimConfig>();
      auto res = disa::sim::simulate(cfg);
      std::cout << json(res).dump(2) << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
