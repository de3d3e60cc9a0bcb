// stormloop command line: run, validate and report on scenarios.
//
//   stormloop run <scenario> [--seed N] [--serve --listen host:port --compress K] [--out dir] [--check]
//   stormloop validate <scenario>
//   stormloop report <bundle-dir>
//
// Exit codes: 0 success, 2 load error, 3 acceptance-metric failure (--check).

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "stormloop/scenario/checks.hpp"
#include "stormloop/scenario/config.hpp"
#include "stormloop/scenario/report.hpp"
#include "stormloop/scenario/runner.hpp"

namespace {

constexpr int kExitLoadError = 2;
constexpr int kExitCheckFailed = 3;

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

stormloop::api::HttpOptions parse_listen(const std::string& addr) {
  stormloop::api::HttpOptions opts;
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos) throw stormloop::ConfigError("--listen expects host:port");
  opts.host = addr.substr(0, colon);
  try {
    opts.port = std::stoi(addr.substr(colon + 1));
  } catch (const std::exception&) {
    throw stormloop::ConfigError("--listen: bad port in '" + addr + "'");
  }
  return opts;
}

}  // namespace

int main(int argc, char** argv) {
  namespace sc = stormloop::scenario;
  CLI::App app{"stormloop: closed-loop stormwater network simulator"};
  app.require_subcommand(1);

  std::string scenario_path;
  std::optional<std::uint64_t> seed;
  bool serve = false;
  bool linger = false;
  std::string listen = "127.0.0.1:8086";
  double compress = 60.0;
  std::string out_dir;
  bool check = false;
  std::string cors = "*";

  auto* run = app.add_subcommand("run", "Run a scenario and write a report bundle");
  run->add_option("scenario", scenario_path, "Scenario file")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "Override the scenario seed");
  run->add_flag("--serve", serve, "Expose the HTTP API while running, paced by --compress");
  run->add_option("--listen", listen, "host:port for --serve")->capture_default_str();
  run->add_option("--compress", compress, "Simulated seconds per wall-clock second")->capture_default_str();
  run->add_option("--cors-origin", cors, "Allowed dashboard origin")->capture_default_str();
  run->add_flag("--linger", linger, "Keep serving after the run until interrupted");
  run->add_option("--out", out_dir, "Bundle directory (default: bundles/<scenario>-<seed>)");
  run->add_flag("--check", check, "Exit 3 unless the acceptance metrics hold");

  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "Load and cross-check a scenario without running it");
  validate->add_option("scenario", validate_path, "Scenario file")->required()->check(CLI::ExistingFile);

  std::string bundle_dir;
  auto* report = app.add_subcommand("report", "Print the metrics table of a report bundle");
  report->add_option("bundle", bundle_dir, "Bundle directory")->required();

  CLI11_PARSE(app, argc, argv);

  if (*validate) {
    try {
      const auto cfg = sc::load_scenario_file(validate_path);
      std::cout << "ok: " << cfg.name << " (" << cfg.graph.element_count() << " elements, " << cfg.nodes.size()
                << " nodes, " << cfg.subscriptions.size() << " subscriptions, config " << sc::config_hash(cfg) << ")\n";
      return 0;
    } catch (const stormloop::Error& e) {
      std::cerr << "load error: " << e.what() << "\n";
      return kExitLoadError;
    }
  }

  if (*report) {
    try {
      const auto manifest = sc::read_json_file(std::filesystem::path(bundle_dir) / "manifest.json");
      const auto metrics = sc::read_json_file(std::filesystem::path(bundle_dir) / "metrics.json");
      std::cout << sc::format_report(manifest, metrics);
      return 0;
    } catch (const std::exception& e) {
      std::cerr << "load error: " << e.what() << "\n";
      return kExitLoadError;
    }
  }

  std::optional<sc::ScenarioConfig> cfg;
  sc::RunOptions opts;
  try {
    cfg = sc::load_scenario_file(scenario_path, seed);
    opts.serve = serve;
    opts.compress = compress;
    if (serve) {
      opts.http = parse_listen(listen);
      opts.http.cors_origin = cors;
    }
  } catch (const stormloop::Error& e) {
    std::cerr << "load error: " << e.what() << "\n";
    return kExitLoadError;
  }

  const std::string name = cfg->name;
  const std::uint64_t effective_seed = cfg->seed;
  if (out_dir.empty()) out_dir = "bundles/" + name + "-" + std::to_string(effective_seed);

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  sc::Simulation sim(std::move(*cfg), opts);
  const auto t0 = std::chrono::steady_clock::now();
  if (serve) {
    std::thread announce([&] {
      for (int i = 0; i < 100 && sim.port() < 0; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(10));
      if (sim.port() > 0) std::cerr << "serving on " << opts.http.host << ":" << sim.port() << "\n";
    });
    sim.run();
    announce.join();
  } else {
    sim.run();
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  sc::write_bundle(sim, out_dir);
  const auto metrics = sim.metrics();
  std::cout << sc::format_report(sc::manifest_json(sim), sc::run_metrics_to_json(metrics));
  std::cout << "  wall time " << seconds << " s, bundle " << out_dir << "\n";

  if (serve && linger) {
    std::cerr << "run complete; still serving (Ctrl-C to stop)\n";
    while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(200));
  }
  sim.stop_serving();

  if (check) {
    auto results = sim.config().counterfactual ? sc::hold_release_checks(metrics) : sc::mass_balance_checks(metrics);
    bool ok = true;
    for (const auto& r : results) {
      std::cout << (r.pass ? "  [PASS] " : "  [FAIL] ") << r.name << ": " << r.detail << "\n";
      ok = ok && r.pass;
    }
    if (!ok) return kExitCheckFailed;
  }
  return 0;
}
