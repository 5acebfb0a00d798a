#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "design/threshold_scale.hpp"

namespace design {

// Handoff document between kernel design and training:
// {k, d, levels, entries, scaled_entries, mode, channels[, boundaries]}.
// `entries` and `scaled_entries` hold one row-major d*d list per channel;
// scaled_entries is null until the kernel has been scaled.
struct ThresholdFile {
  std::size_t k = 3;
  std::size_t d = 2;
  std::vector<std::int32_t> levels;
  std::string mode = "2d";
  std::vector<ThresholdKernel> entries;
  std::optional<std::vector<std::vector<double>>> scaled_entries;
  std::vector<double> boundaries;

  std::size_t channels() const { return entries.size(); }
  LevelSet level_set() const { return LevelSet(k, levels); }
};

inline Mode3D parse_mode_3d(const std::string& mode) {
  if (mode == "3d-s") return Mode3D::kShift;
  if (mode == "3d-c") return Mode3D::kComplement;
  throw std::invalid_argument("unknown 3D mode '" + mode + "' (expected 3d-s or 3d-c)");
}

inline nlohmann::json to_json(const ThresholdFile& f) {
  nlohmann::json j;
  j["k"] = f.k;
  j["d"] = f.d;
  j["levels"] = f.levels;
  j["mode"] = f.mode;
  j["channels"] = f.channels();
  auto& e = j["entries"] = nlohmann::json::array();
  for (const auto& t : f.entries) e.push_back(t.entries());
  j["scaled_entries"] = f.scaled_entries ? nlohmann::json(*f.scaled_entries) : nlohmann::json(nullptr);
  if (!f.boundaries.empty()) j["boundaries"] = f.boundaries;
  return j;
}

inline ThresholdFile threshold_file_from_json(const nlohmann::json& j) {
  ThresholdFile f;
  f.k = j.at("k").get<std::size_t>();
  f.d = j.at("d").get<std::size_t>();
  f.levels = j.at("levels").get<std::vector<std::int32_t>>();
  f.mode = j.value("mode", std::string("2d"));
  if (f.mode != "2d" && f.mode != "3d-s" && f.mode != "3d-c")
    throw std::invalid_argument("threshold file: bad mode '" + f.mode + "'");
  const LevelSet levels = f.level_set();
  for (const auto& row : j.at("entries")) {
    ThresholdKernel t(f.d, row.get<std::vector<std::int32_t>>());
    t.validate(levels);
    f.entries.push_back(std::move(t));
  }
  if (f.entries.empty()) throw std::invalid_argument("threshold file: no entries");
  if (j.contains("channels") && j["channels"].get<std::size_t>() != f.entries.size())
    throw std::invalid_argument("threshold file: channels does not match the number of entry lists");
  if (j.contains("scaled_entries") && !j["scaled_entries"].is_null()) {
    auto s = j["scaled_entries"].get<std::vector<std::vector<double>>>();
    if (s.size() != f.entries.size()) throw std::invalid_argument("threshold file: scaled_entries channel mismatch");
    for (const auto& row : s)
      if (row.size() != f.d * f.d) throw std::invalid_argument("threshold file: scaled entry list is not d*d");
    f.scaled_entries = std::move(s);
  }
  if (j.contains("boundaries")) f.boundaries = j["boundaries"].get<std::vector<double>>();
  return f;
}

inline ThresholdFile read_threshold_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open threshold file " + path.string());
  return threshold_file_from_json(nlohmann::json::parse(in));
}

inline void write_threshold_file(const std::filesystem::path& path, const ThresholdFile& f) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json(f).dump(2) << '\n';
}

// Unscaled single-kernel document, as written by the kernel search.
inline ThresholdFile unscaled_file(const ThresholdKernel& t, const LevelSet& levels) {
  t.validate(levels);
  ThresholdFile f;
  f.k = levels.k();
  f.d = t.d();
  f.levels = levels.levels();
  f.entries = {t};
  return f;
}

// Generates per-channel kernels for `mode` and scales them with q.
inline ThresholdFile scaled_file(const ThresholdKernel& t, const LevelSet& levels, const std::string& mode,
                                 std::size_t channels, const QuantizerLevels& q) {
  ThresholdFile f = unscaled_file(t, levels);
  f.mode = mode;
  if (mode != "2d") {
    f.entries = make_3d(t, channels, parse_mode_3d(mode), levels);
  }
  std::vector<std::vector<double>> scaled;
  for (const auto& e : f.entries) scaled.push_back(scale_kernel(e, q, levels).entries());
  f.scaled_entries = std::move(scaled);
  f.boundaries = q.boundaries;
  return f;
}

// Scaled kernel for channel c, assigned round-robin.
inline ScaledThresholdKernel channel_kernel(const ThresholdFile& f, std::size_t c) {
  if (!f.scaled_entries) throw std::logic_error("threshold file has no scaled entries");
  const std::size_t i = c % f.entries.size();
  return ScaledThresholdKernel(f.entries[i], (*f.scaled_entries)[i]);
}

}  // namespace design
