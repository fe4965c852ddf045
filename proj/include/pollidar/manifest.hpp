#pragma once

#include <chrono>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pollidar/errors.hpp"

namespace pollidar {

inline constexpr const char* kToolVersion = "0.1.0";

/// FNV-1a over a byte range; stable content fingerprint for reproducibility
/// checks (not cryptographic).
inline uint64_t fnv1a(const void* data, std::size_t size) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeError("cannot hash missing file: " + path);
  uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    const auto* p = reinterpret_cast<const unsigned char*>(buf);
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= p[i];
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

/// Provenance record written once per output directory. wall_time and
/// written_at are informational and excluded from reproducibility
/// comparisons.
struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  uint64_t seed = 0;
  std::vector<std::pair<std::string, uint64_t>> input_hashes;
  std::vector<std::pair<std::string, uint64_t>> output_hashes;
  double wall_time_s = 0.0;

  void add_input(const std::string& path) {
    input_hashes.emplace_back(path, hash_file(path));
  }
  void add_output(const std::string& path) {
    output_hashes.emplace_back(path, hash_file(path));
  }

  void save(const std::string& path) const {
    nlohmann::json j;
    j["tool"] = "pollidar";
    j["version"] = kToolVersion;
    j["command"] = command;
    j["config"] = config;
    j["seed"] = seed;
    auto hash_list = [](const auto& v) {
      nlohmann::json out = nlohmann::json::object();
      char hex[32];
      for (const auto& [p, h] : v) {
        std::snprintf(hex, sizeof(hex), "%016llx",
                      static_cast<unsigned long long>(h));
        out[p] = hex;
      }
      return out;
    };
    j["inputs"] = hash_list(input_hashes);
    j["outputs"] = hash_list(output_hashes);
    j["wall_time_s"] = wall_time_s;
    j["written_at"] =
        std::chrono::duration_cast<std::chrono::seconds>(
            std::chrono::system_clock::now().time_since_epoch())
            .count();
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot write manifest: " + path);
    out << j.dump(2) << "\n";
  }
};

}  // namespace pollidar
