#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#ifndef DESIGN_GIT_DESCRIBE
#define DESIGN_GIT_DESCRIBE "unknown"
#endif

namespace design {

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// One per command invocation, written as manifest.json next to the outputs.
struct RunManifest {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string started = utc_timestamp();
  std::string finished;
  std::map<std::string, std::string> artifacts;  // name -> path
  std::string git_describe = DESIGN_GIT_DESCRIBE;
  nlohmann::json config;  // the effective configuration / flags
  nlohmann::json extra = nlohmann::json::object();

  nlohmann::json to_json() const {
    return {{"command", command},   {"config_hash", config_hash}, {"seed", seed},
            {"started", started},   {"finished", finished},       {"artifacts", artifacts},
            {"git_describe", git_describe}, {"config", config},  {"extra", extra}};
  }

  void write(const std::filesystem::path& file) {
    finished = utc_timestamp();
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    out << to_json().dump(2) << '\n';
    if (!out) throw std::runtime_error("write failed: " + file.string());
  }
};

}  // namespace design
