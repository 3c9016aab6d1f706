#include "support/fixtures.hpp"

#include <atomic>
#include <chrono>
#include <fstream>
#include <sstream>

#include <unistd.h>

namespace sbpm::testing {

std::filesystem::path fixture_dir(const std::string& name) { return std::filesystem::path(SBPM_FIXTURES_DIR) / name; }

model::FileMap fixture_files(const std::string& name) {
    model::FileMap files;
    for (const auto& entry : std::filesystem::directory_iterator(fixture_dir(name))) {
        std::ifstream in(entry.path(), std::ios::binary);
        std::ostringstream buf;
        buf << in.rdbuf();
        files.emplace(entry.path().filename().string(), buf.str());
    }
    return files;
}

model::ProcessModel load_fixture(const std::string& name) { return model::parse_model_dir(fixture_dir(name)); }

compile::Bundle fixture_bundle(const std::string& name, const compile::SupervisorConfig& templ) {
    return compile::link_bundle(load_fixture(name), templ);
}

std::filesystem::path make_temp_dir(const std::string& prefix) {
    static std::atomic<int> counter{0};
    auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    auto dir = std::filesystem::temp_directory_path() /
               (prefix + "-" + std::to_string(::getpid()) + "-" + std::to_string(stamp) + "-" +
                std::to_string(counter++));
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace sbpm::testing
