#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include <json.hpp>

namespace mvdet {

// SHA-256 hex digest.
std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& bytes);

// Canonical form of a JSON document: compact dump with lexicographically
// ordered keys (nlohmann's default object ordering).
std::string canonical_json(const nlohmann::json& j);

// Stable digest of a resolved configuration; identical configs hash
// identically regardless of key order or formatting.
std::string config_hash(const nlohmann::json& resolved_config);

// Reads a JSON document from disk.
nlohmann::json load_json_file(const std::filesystem::path& path);
void save_json_file(const nlohmann::json& j, const std::filesystem::path& path);

// Builds a directory atomically: `fill` populates a temporary sibling which
// is renamed onto `target` at the end. Fails if target exists unless
// overwrite is set.
void atomic_write_dir(const std::filesystem::path& target, bool overwrite,
                      const std::function<void(const std::filesystem::path&)>& fill);

}  // namespace mvdet
