#pragma once

// Report bundle: a directory of plain files regenerable bit for bit from
// (scenario, seed).
//
//   manifest.json             scenario name, seed, config hash, run shape
//   metrics.json              controlled and counterfactual metrics
//   plant.csv                 true plant state after every hydro step
//   counterfactual_plant.csv  same, for the uncontrolled comparison run
//   series/<node>.<sensor>.csv  everything the datastore holds
//   node_samples.csv          every value nodes sampled (ground truth)
//   alerts.jsonl              alert log
//   commands.csv              command queue with final states

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "stormloop/core/errors.hpp"
#include "stormloop/scenario/runner.hpp"
#include "stormloop/telemetry/line_protocol.hpp"

namespace stormloop::scenario {

namespace fs = std::filesystem;

namespace detail {

inline void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << text;
}

inline std::string trace_csv(const PlantTrace& trace) {
  std::string out = "time_ms";
  for (const auto& n : trace.names()) out += "," + n;
  out += '\n';
  std::vector<const std::vector<double>*> cols;
  for (const auto& n : trace.names()) cols.push_back(&trace.column(n));
  for (std::size_t i = 0; i < trace.rows(); ++i) {
    out += std::to_string(trace.times()[i]);
    for (const auto* c : cols) {
      out += ',';
      out += telemetry::format_decimal((*c)[i]);
    }
    out += '\n';
  }
  return out;
}

}  // namespace detail

inline nlohmann::json manifest_json(const Simulation& sim) {
  const auto& cfg = sim.config();
  return {{"scenario", cfg.name},
          {"seed", cfg.seed},
          {"config_hash", config_hash(cfg)},
          {"start", format_iso8601(cfg.start)},
          {"duration_hours", cfg.duration_hours},
          {"hydro_dt_min", cfg.hydro_dt_min},
          {"events", sim.events_processed()},
          {"bundle_format", 1}};
}

/// Writes the bundle into `dir` (created if needed; existing bundle files are replaced).
inline void write_bundle(const Simulation& sim, const fs::path& dir) {
  fs::create_directories(dir);
  if (fs::exists(dir / "series")) fs::remove_all(dir / "series");
  fs::create_directories(dir / "series");

  detail::write_file(dir / "manifest.json", manifest_json(sim).dump(2) + "\n");
  detail::write_file(dir / "metrics.json", run_metrics_to_json(sim.metrics()).dump(2) + "\n");
  detail::write_file(dir / "plant.csv", detail::trace_csv(sim.trace()));
  if (sim.counterfactual_trace()) {
    detail::write_file(dir / "counterfactual_plant.csv", detail::trace_csv(*sim.counterfactual_trace()));
  } else if (fs::exists(dir / "counterfactual_plant.csv")) {
    fs::remove(dir / "counterfactual_plant.csv");
  }

  const auto& ds = sim.datastore();
  for (const auto& key : ds.list_series()) {
    std::string text = "timestamp_ms,value\n";
    for (const auto& p : ds.query_range(key, std::numeric_limits<TimeMs>::min(), std::numeric_limits<TimeMs>::max())) {
      text += std::to_string(p.timestamp) + "," + telemetry::format_decimal(p.value) + "\n";
    }
    detail::write_file(dir / "series" / (key.str() + ".csv"), text);
  }

  std::string samples = "node,sensor,timestamp_ms,value\n";
  for (const auto& p : sim.samples()) {
    samples += p.series.node + "," + p.series.sensor + "," + std::to_string(p.timestamp) + "," +
               telemetry::format_decimal(p.value) + "\n";
  }
  detail::write_file(dir / "node_samples.csv", samples);

  std::string alerts;
  for (const auto& a : sim.alerts().all()) alerts += subs::alert_to_json(a).dump() + "\n";
  detail::write_file(dir / "alerts.jsonl", alerts);

  std::string commands = "node,id,kind,value,sensor,issued_at_ms,state\n";
  for (const auto& c : ds.all_commands()) {
    commands += c.node + "," + std::to_string(c.id) + "," + to_string(c.kind) + "," +
                telemetry::format_decimal(c.value) + "," + c.sensor + "," + std::to_string(c.issued_at) + "," +
                to_string(c.state) + "\n";
  }
  detail::write_file(dir / "commands.csv", commands);
}

/// Every file of a bundle keyed by relative path, for byte comparisons.
inline std::map<std::string, std::string> read_bundle_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("'" + dir.string() + "' is not a bundle directory");
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::ifstream in(entry.path(), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    files[fs::relative(entry.path(), dir).generic_string()] = ss.str();
  }
  return files;
}

inline nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

namespace detail {

inline std::string cell(const nlohmann::json& v, int precision = 4) {
  if (v.is_null()) return "-";
  if (v.is_number_float()) {
    std::ostringstream ss;
    ss.setf(std::ios::fixed);
    ss.precision(precision);
    ss << v.get<double>();
    return ss.str();
  }
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

}  // namespace detail

/// Human-readable metrics table for `report <bundle-dir>`.
inline std::string format_report(const nlohmann::json& manifest, const nlohmann::json& metrics) {
  std::ostringstream out;
  out << "scenario  " << manifest.value("scenario", "?") << "  seed " << manifest.value("seed", 0)
      << "  config " << manifest.value("config_hash", "?") << "\n\n";
  const auto& c = metrics.at("controlled");
  const nlohmann::json u = metrics.value("counterfactual", nlohmann::json(nullptr));
  auto row = [&](const std::string& label, const char* key, int precision) {
    out << "  " << label;
    for (std::size_t i = label.size(); i < 34; ++i) out << ' ';
    out << detail::cell(c.value(key, nlohmann::json(nullptr)), precision);
    if (!u.is_null()) out << "    " << detail::cell(u.value(key, nlohmann::json(nullptr)), precision);
    out << "\n";
  };
  out << "  metric                            controlled" << (u.is_null() ? "" : "    uncontrolled") << "\n";
  row("peak outlet flow (m3/s)", "peak_outlet_flow_cms", 4);
  row("cumulative outlet volume (L)", "cumulative_outlet_volume_l", 0);
  row("pond retention (h)", "pond_retention_h", 2);
  row("wetland overflow volume (L)", "wetland_overflow_volume_l", 0);
  row("peak sediment (mg/L)", "peak_sediment_mg_l", 1);
  row("release volume (L)", "release_volume_l", 0);
  out << "\n  retention increase (h)            " << detail::cell(metrics.value("retention_increase_h", nlohmann::json(nullptr)), 2)
      << "\n";
  const auto& seq = c.at("sequencing");
  out << "  pond drop -> wetland rise (h)     " << detail::cell(seq.at("pond_to_wetland_h"), 2) << "\n";
  out << "  wetland rise -> outlet rise (h)   " << detail::cell(seq.at("wetland_to_outlet_h"), 2) << "\n";
  out << "  mass balance (relative)           " << detail::cell(c.at("mass_balance").at("relative"), 12) << "\n";
  if (!metrics.value("validation", nlohmann::json(nullptr)).is_null()) {
    const auto& v = metrics.at("validation");
    out << "  reference gauge rmse (m3/s)       " << detail::cell(v.at("rmse_cms"), 4) << "\n";
  }
  out << "  alerts " << metrics.value("alerts", 0) << ", commands " << metrics.value("commands", 0) << ", events "
      << metrics.value("events", 0) << "\n";
  return out.str();
}

}  // namespace stormloop::scenario
