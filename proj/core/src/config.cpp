#include "iwprm/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

#include "iwprm/errors.hpp"
#include "iwprm/rng.hpp"

namespace iwprm {
namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

const std::set<std::string>& non_reproducibility_keys() {
  static const std::set<std::string> keys = {
      "out_dir",    "train",   "meta",   "pools",         "init",
      "resume",     "stop_after", "checkpoint", "workers", "method",
      "config",     "allow_overlap", "no_balance"};
  return keys;
}

}  // namespace

KvConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("config: cannot open " + path.string());
  KvConfig kv;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string text = trim(line);
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("config: " + path.string() + ":" + std::to_string(lineno) +
                            ": expected key = value");
    }
    const std::string key = trim(text.substr(0, eq));
    const std::string value = trim(text.substr(eq + 1));
    if (key.empty()) {
      throw ValidationError("config: " + path.string() + ":" + std::to_string(lineno) +
                            ": empty key");
    }
    kv[key] = value;
  }
  return kv;
}

std::string render_config(const KvConfig& kv) {
  std::string out;
  for (const auto& [key, value] : kv) {
    out += key;
    out += " = ";
    out += value;
    out += '\n';
  }
  return out;
}

void write_config_snapshot(const std::filesystem::path& path, const KvConfig& kv) {
  std::ofstream out(path);
  if (!out) throw ValidationError("config: cannot write " + path.string());
  out << render_config(kv);
}

uint64_t config_hash(const KvConfig& kv) {
  KvConfig filtered;
  for (const auto& [key, value] : kv) {
    if (!non_reproducibility_keys().count(key)) filtered.emplace(key, value);
  }
  return fnv1a64(render_config(filtered));
}

bool kv_has(const KvConfig& kv, const std::string& key) { return kv.count(key) > 0; }

std::string kv_get(const KvConfig& kv, const std::string& key, const std::string& fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

int64_t kv_get_int(const KvConfig& kv, const std::string& key, int64_t fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    return std::stoll(it->second);
  } catch (const std::exception&) {
    throw ValidationError("config: key '" + key + "' is not an integer: " + it->second);
  }
}

uint64_t kv_get_uint(const KvConfig& kv, const std::string& key, uint64_t fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    return std::stoull(it->second);
  } catch (const std::exception&) {
    throw ValidationError("config: key '" + key + "' is not an unsigned integer: " + it->second);
  }
}

double kv_get_double(const KvConfig& kv, const std::string& key, double fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw ValidationError("config: key '" + key + "' is not a number: " + it->second);
  }
}

bool kv_get_bool(const KvConfig& kv, const std::string& key, bool fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw ValidationError("config: key '" + key + "' is not a boolean: " + it->second);
}

}  // namespace iwprm
