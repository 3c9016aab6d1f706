#include "sbpm/engine/repository.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "sbpm/runtime/envelope.hpp"

namespace sbpm::engine {

namespace fs = std::filesystem;

void write_atomic(const fs::path& path, std::string_view content) {
    fs::path tmp = path;
    tmp += ".tmp-" + runtime::random_uuid();
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("IoError", "cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) throw Error("IoError", "short write to " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw Error("IoError", "cannot rename into " + path.string() + ": " + ec.message());
    }
}

BundleRepository::BundleRepository(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

fs::path BundleRepository::path_of(const std::string& hash) const { return dir_ / (hash + ".sbpmb"); }

std::string BundleRepository::deploy(std::string_view bytes) {
    compile::Bundle b;
    try {
        b = compile::decode_bundle(bytes);
    } catch (const Error& e) {
        throw Error("CorruptBundle", e.code() + ": " + e.what());
    }
    std::string hash = b.manifest.content_hash;
    std::lock_guard lock(mu_);
    if (!fs::exists(path_of(hash))) write_atomic(path_of(hash), bytes);
    cache_.try_emplace(hash, std::make_shared<const compile::Bundle>(std::move(b)));
    return hash;
}

bool BundleRepository::contains(const std::string& hash) {
    std::lock_guard lock(mu_);
    return cache_.count(hash) || fs::exists(path_of(hash));
}

std::string BundleRepository::bytes(const std::string& hash) {
    bool valid = hash.size() == 64 && std::all_of(hash.begin(), hash.end(), [](char c) {
                     return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
                 });
    std::ifstream in(path_of(hash), std::ios::binary);
    if (!valid || !in) throw Error("UnknownBundle", "no bundle " + hash);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::shared_ptr<const compile::Bundle> BundleRepository::get(const std::string& hash) {
    {
        std::lock_guard lock(mu_);
        if (auto it = cache_.find(hash); it != cache_.end()) return it->second;
    }
    std::string raw = bytes(hash);
    compile::Bundle b;
    try {
        b = compile::decode_bundle(raw);
    } catch (const Error& e) {
        throw Error("CorruptBundle", hash + ": " + e.what());
    }
    std::lock_guard lock(mu_);
    return cache_.try_emplace(hash, std::make_shared<const compile::Bundle>(std::move(b))).first->second;
}

std::vector<BundleInfo> BundleRepository::list() {
    std::vector<std::string> hashes;
    for (const auto& entry : fs::directory_iterator(dir_))
        if (entry.path().extension() == ".sbpmb") hashes.push_back(entry.path().stem().string());
    std::vector<BundleInfo> out;
    for (const auto& h : hashes) {
        try {
            auto b = get(h);
            out.push_back({h, b->manifest.process_id, b->manifest.name, b->manifest.version, b->manifest.created_at});
        } catch (const Error&) {
            // unreadable files are not listed
        }
    }
    std::sort(out.begin(), out.end(),
              [](const BundleInfo& a, const BundleInfo& b) { return std::tie(a.name, a.hash) < std::tie(b.name, b.hash); });
    return out;
}

}  // namespace sbpm::engine
