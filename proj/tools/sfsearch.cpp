#include "sfsearch/experiments.hpp"
#include "sfsearch/http_service.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace sfsearch;
using nlohmann::json;

namespace {

constexpr int kUsageError = 2;
constexpr int kRuntimeError = 3;

struct Options {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
};

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  return io::parse_json(io::read_file(path), path);
}

/// Seed precedence: --seed, then the config's "seed", then 0.
std::uint64_t pick_seed(const Options& o, const json& cfg) {
  if (o.seed) return *o.seed;
  if (cfg.is_object() && cfg.contains("seed")) {
    if (!cfg.at("seed").is_number_unsigned()) throw InvalidInput("seed must be a non-negative integer");
    return cfg.at("seed").get<std::uint64_t>();
  }
  return 0;
}

std::string config_dir(const Options& o) {
  return o.config.empty() ? std::string() : fs::path(o.config).parent_path().string();
}

void write_artifacts(const std::string& out, const experiments::Artifacts& files) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw std::runtime_error("cannot create output directory '" + out + "': " + ec.message());
  for (const auto& [name, body] : files) io::write_file((fs::path(out) / name).string(), body);
  for (const auto& [name, body] : files) std::cout << (fs::path(out) / name).string() << "\n";
}

CLI::App* add_batch(CLI::App& app, const std::string& name, const std::string& help, Options& o,
                    bool config_required = true) {
  CLI::App* sub = app.add_subcommand(name, help);
  auto* c = sub->add_option("--config", o.config, "JSON configuration file")->check(CLI::ExistingFile);
  if (config_required) c->required();
  sub->add_option("--seed", o.seed, "Master seed (overrides the config)");
  sub->add_option("--out", o.out, "Output directory")->capture_default_str();
  return sub;
}

int serve(const std::string& host, int port, std::uint64_t seed, const std::string& snapshot_dir) {
  service::SessionStore store(seed, snapshot_dir);
  if (!snapshot_dir.empty()) {
    fs::create_directories(snapshot_dir);
    store.load_snapshots();
  }
  httplib::Server server;
  service::install_routes(server, store);
  std::cerr << "listening on " << host << ":" << port << "\n";
  if (!server.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Comparison-based search: simulations, calibration and the search service"};
  app.require_subcommand(1);
  Options o;

  auto* sim_c = add_batch(app, "simulate-continuous", "Run the continuous search against a simulated oracle", o);
  auto* sim_d = add_batch(app, "simulate-discrete", "Run the discrete search against a simulated oracle", o);
  auto* cal = add_batch(app, "calibrate-gamma", "Match oracle accuracy across dimensions", o);
  auto* walk = add_batch(app, "verify-walk", "Check the random-walk bounds by simulation", o, false);
  auto* emb = add_batch(app, "fit-embedding", "Fit an embedding to triplet comparisons", o);
  auto* ident = add_batch(app, "identifiability", "Rank test of a query set for a target", o);

  std::string host = "127.0.0.1", snapshot_dir;
  int port = 8080;
  std::uint64_t serve_seed = 0;
  auto* srv = app.add_subcommand("serve", "Start the HTTP search service");
  srv->add_option("--host", host)->capture_default_str();
  srv->add_option("--port", port)->capture_default_str()->check(CLI::Range(0, 65535));
  srv->add_option("--seed", serve_seed, "Seed for session ids, nonces and engines")->capture_default_str();
  srv->add_option("--snapshot-dir", snapshot_dir, "Persist sessions here and reload them at startup");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsageError;
  }

  try {
    if (srv->parsed()) return serve(host, port, serve_seed, snapshot_dir);
    const json cfg = load_config(o.config);
    const std::uint64_t seed = pick_seed(o, cfg);
    experiments::Artifacts files;
    if (sim_c->parsed()) files = experiments::simulate_continuous(cfg, seed);
    else if (sim_d->parsed()) files = experiments::simulate_discrete(cfg, seed, config_dir(o));
    else if (cal->parsed()) files = experiments::calibrate(cfg, seed);
    else if (walk->parsed()) files = experiments::verify_walk(cfg, seed);
    else if (emb->parsed()) files = experiments::fit_embedding(cfg, seed, config_dir(o));
    else if (ident->parsed()) files = experiments::identifiability(cfg);
    write_artifacts(o.out, files);
    return 0;
  } catch (const InvalidInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
}
