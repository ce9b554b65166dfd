#include "mvdet/config.hpp"

#include <openssl/evp.h>
#include <unistd.h>

#include <fstream>
#include <functional>

#include "mvdet/error.hpp"

namespace mvdet {

std::string sha256_hex(const void* data, size_t len) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int digest_len = 0;
  if (EVP_Digest(data, len, digest, &digest_len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 digest failed");
  static const char hex[] = "0123456789abcdef";
  std::string out(size_t(digest_len) * 2, '0');
  for (unsigned int i = 0; i < digest_len; ++i) {
    out[2 * i] = hex[digest[i] >> 4];
    out[2 * i + 1] = hex[digest[i] & 0xf];
  }
  return out;
}

std::string sha256_hex(const std::string& bytes) { return sha256_hex(bytes.data(), bytes.size()); }

std::string canonical_json(const nlohmann::json& j) { return j.dump(); }

std::string config_hash(const nlohmann::json& resolved_config) {
  return sha256_hex(canonical_json(resolved_config));
}

nlohmann::json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open JSON file: " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void save_json_file(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write JSON file: " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw IoError("short JSON write: " + path.string());
}

void atomic_write_dir(const std::filesystem::path& target, bool overwrite,
                      const std::function<void(const std::filesystem::path&)>& fill) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (fs::exists(target) && !overwrite)
    throw IoError("output directory already exists: " + target.string() +
                  " (use --force to replace)");

  const fs::path tmp = target.string() + ".tmp-" + std::to_string(::getpid());
  fs::remove_all(tmp, ec);
  fs::create_directories(tmp, ec);
  if (ec) throw IoError("cannot create " + tmp.string() + ": " + ec.message());
  try {
    fill(tmp);
  } catch (...) {
    fs::remove_all(tmp, ec);
    throw;
  }
  if (fs::exists(target)) fs::remove_all(target);
  fs::rename(tmp, target, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " into place: " + ec.message());
}

}  // namespace mvdet
