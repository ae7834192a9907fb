#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace iwprm {

// Plain `key = value` configuration, '#' comments. Flags override file
// values; the merged result is what gets snapshotted next to every run's
// outputs, so snapshot + seed reproduces any artifact.
using KvConfig = std::map<std::string, std::string>;

KvConfig parse_config_file(const std::filesystem::path& path);
std::string render_config(const KvConfig& kv);  // sorted "key = value" lines
void write_config_snapshot(const std::filesystem::path& path, const KvConfig& kv);

// Hash over reproducibility-relevant keys only; path-like and run-control
// keys (out_dir, resume, stop_after, ...) are excluded so a resumed run
// hashes identically to the run it continues.
uint64_t config_hash(const KvConfig& kv);

bool kv_has(const KvConfig& kv, const std::string& key);
std::string kv_get(const KvConfig& kv, const std::string& key, const std::string& fallback);
int64_t kv_get_int(const KvConfig& kv, const std::string& key, int64_t fallback);
uint64_t kv_get_uint(const KvConfig& kv, const std::string& key, uint64_t fallback);
double kv_get_double(const KvConfig& kv, const std::string& key, double fallback);
bool kv_get_bool(const KvConfig& kv, const std::string& key, bool fallback);

}  // namespace iwprm
