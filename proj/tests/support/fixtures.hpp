#pragma once

#include <filesystem>
#include <string>

#include "sbpm/compile/bundle.hpp"
#include "sbpm/model/model_io.hpp"

namespace sbpm::testing {

std::filesystem::path fixture_dir(const std::string& name);
model::FileMap fixture_files(const std::string& name);
model::ProcessModel load_fixture(const std::string& name);
compile::Bundle fixture_bundle(const std::string& name, const compile::SupervisorConfig& templ = {});

// Fresh, empty directory under the system temp dir; removed by the caller.
std::filesystem::path make_temp_dir(const std::string& prefix);

struct TempDir {
    explicit TempDir(const std::string& prefix) : path(make_temp_dir(prefix)) {}
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    std::filesystem::path path;
};

}  // namespace sbpm::testing
