#pragma once

#include <chrono>
#include <memory>
#include <string>
#include <string_view>
#include <utility>

#include <json.hpp>

namespace sbpm::engine {

// "host:port" -> (host, port); throws BadAddress.
std::pair<std::string, int> split_host_port(std::string_view text);

// JSON client for the engine REST API. Error bodies {code, message} are
// rethrown as sbpm::Error(code); transport failures as NodeUnreachable.
class RestClient {
public:
    RestClient(std::string host, int port, std::chrono::milliseconds timeout = std::chrono::seconds(10));
    ~RestClient();
    RestClient(const RestClient&) = delete;
    RestClient& operator=(const RestClient&) = delete;

    nlohmann::json get(const std::string& path);
    nlohmann::json post_json(const std::string& path, const nlohmann::json& body);
    nlohmann::json post_bytes(const std::string& path, const std::string& bytes);

    const std::string& host() const { return host_; }
    int port() const { return port_; }

private:
    struct Impl;
    std::string host_;
    int port_;
    std::unique_ptr<Impl> impl_;
};

}  // namespace sbpm::engine
