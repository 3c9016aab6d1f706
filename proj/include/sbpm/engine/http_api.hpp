#pragma once

#include <memory>
#include <string>
#include <thread>

#include "sbpm/engine/engine.hpp"

namespace sbpm::engine {

// HTTP status for an operation error name.
int http_status_for(const std::string& code);

// REST front end of an Engine.
class HttpApi {
public:
    explicit HttpApi(Engine& engine);
    ~HttpApi();
    HttpApi(const HttpApi&) = delete;
    HttpApi& operator=(const HttpApi&) = delete;

    // Binds (port 0 picks a free one) and serves on a background thread.
    // Returns the bound port; throws BindFailed.
    int start(const std::string& host, int port);
    void stop();

private:
    struct Impl;
    Engine& engine_;
    std::unique_ptr<Impl> impl_;
    std::thread thread_;
};

}  // namespace sbpm::engine
