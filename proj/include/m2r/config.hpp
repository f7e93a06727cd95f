#ifndef M2R_CONFIG_HPP
#define M2R_CONFIG_HPP

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "m2r/errors.hpp"

namespace m2r {

inline constexpr const char* kToolVersion = "0.1.0";

using ConfigMap = std::map<std::string, std::string>;

namespace detail {
inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}
}  // namespace detail

// `key = value` lines, `#` comments.
inline ConfigMap parse_config(std::istream& in) {
  ConfigMap out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (detail::trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw parse_error("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty())
      throw parse_error("config line " + std::to_string(lineno) + ": empty key");
    out[key] = value;
  }
  return out;
}

inline ConfigMap load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open config file: " + path);
  return parse_config(in);
}

// FNV-1a over the canonical key=value listing.
inline std::uint64_t config_hash(const ConfigMap& cfg) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [k, v] : cfg) {
    mix(k);
    mix("=");
    mix(v);
    mix("\n");
  }
  return h;
}

// Reproducibility record written beside every output.
inline void write_manifest(const std::string& path, const ConfigMap& effective,
                           std::uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot open manifest for writing: " + path);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(config_hash(effective)));
  out << "version = " << kToolVersion << "\n";
  out << "config_hash = " << buf << "\n";
  out << "seed = " << seed << "\n";
  for (const auto& [k, v] : effective) out << k << " = " << v << "\n";
}

}  // namespace m2r

#endif  // M2R_CONFIG_HPP
