#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "sbpm/compile/bundle.hpp"

namespace sbpm::engine {

struct BundleInfo {
    std::string hash;
    std::string process_id;
    std::string name;
    std::string version;
    std::string created_at;
};

// Content-addressed bundle store: <dir>/<hash>.sbpmb.
class BundleRepository {
public:
    explicit BundleRepository(std::filesystem::path dir);

    // Idempotent. Throws CorruptBundle; nothing is written in that case.
    std::string deploy(std::string_view bytes);
    std::shared_ptr<const compile::Bundle> get(const std::string& hash);  // throws UnknownBundle
    std::string bytes(const std::string& hash);                          // throws UnknownBundle
    bool contains(const std::string& hash);
    std::vector<BundleInfo> list();  // sorted by name, then hash

private:
    std::filesystem::path path_of(const std::string& hash) const;

    std::filesystem::path dir_;
    std::mutex mu_;
    std::map<std::string, std::shared_ptr<const compile::Bundle>> cache_;
};

// Writes `content` next to `path` and renames it into place.
void write_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace sbpm::engine
