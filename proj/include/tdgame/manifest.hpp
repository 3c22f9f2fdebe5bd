#pragma once

// Output directories that remember what was written into them. Each file is
// hashed the way git hashes a blob, so `git hash-object <file>` reproduces
// the manifest entry.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "tdgame/errors.hpp"

namespace tdgame {

inline std::string git_blob_sha1(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw Error("sha1: context allocation failed");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, md, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error("sha1: digest failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

class OutputDir {
 public:
  explicit OutputDir(std::filesystem::path root) : root_(std::move(root)) {
    std::error_code ec;
    std::filesystem::create_directories(root_, ec);
    if (ec) throw ConfigError("cannot create output directory '" + root_.string() + "': " + ec.message());
  }

  const std::filesystem::path& root() const { return root_; }

  void write(const std::string& name, const std::string& content) {
    const auto path = root_ / name;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw ConfigError("short write on '" + path.string() + "'");
    hashes_[name] = git_blob_sha1(content);
  }

  template <class Fn>
  void write_with(const std::string& name, Fn&& fill) {
    std::ostringstream os;
    fill(os);
    write(name, os.str());
  }

  const std::map<std::string, std::string>& hashes() const { return hashes_; }

  // manifest.json: command, scenario echo, free-form summary, file hashes.
  void finish(const std::string& command, const nlohmann::ordered_json& scenario,
              const nlohmann::ordered_json& summary = nlohmann::ordered_json::object()) {
    nlohmann::ordered_json m;
    m["command"] = command;
    m["scenario"] = scenario;
    m["summary"] = summary;
    nlohmann::ordered_json files = nlohmann::ordered_json::object();
    for (const auto& [name, sha] : hashes_) files[name] = {{"git_blob_sha1", sha}};
    m["files"] = files;
    const auto path = root_ / "manifest.json";
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    out << m.dump(2) << '\n';
  }

 private:
  std::filesystem::path root_;
  std::map<std::string, std::string> hashes_;
};

}  // namespace tdgame
