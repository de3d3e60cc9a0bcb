#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "stormloop/scenario/config.hpp"
#include "stormloop/scenario/report.hpp"

#ifndef STORMLOOP_SCENARIO_DIR
#error "STORMLOOP_SCENARIO_DIR must point at the bundled scenarios"
#endif

namespace stormloop::testing {

inline std::filesystem::path scenario_dir() { return STORMLOOP_SCENARIO_DIR; }

inline std::filesystem::path scenario_path(const std::string& name) { return scenario_dir() / (name + ".json"); }

inline nlohmann::json scenario_document(const std::string& name) {
  return scenario::read_json_file(scenario_path(name));
}

inline scenario::ScenarioConfig load(const std::string& name, std::optional<std::uint64_t> seed = std::nullopt) {
  return scenario::load_scenario_file(scenario_path(name), seed);
}

/// Loads an edited copy of a bundled scenario (fixtures still resolve).
inline scenario::ScenarioConfig load_edited(const std::string& name, const std::function<void(nlohmann::json&)>& edit) {
  auto doc = scenario_document(name);
  edit(doc);
  return scenario::load_scenario(std::move(doc), scenario_dir());
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
  static int counter = 0;
  auto dir = std::filesystem::temp_directory_path() /
             ("stormloop-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(++counter));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace stormloop::testing
