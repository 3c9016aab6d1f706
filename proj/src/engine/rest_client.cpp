#include "sbpm/engine/rest_client.hpp"

#include <mutex>

#include <httplib.h>

#include "sbpm/error.hpp"

namespace sbpm::engine {

using nlohmann::json;

std::pair<std::string, int> split_host_port(std::string_view text) {
    auto colon = text.rfind(':');
    if (colon == std::string_view::npos || colon == 0 || colon + 1 == text.size())
        throw Error("BadAddress", "expected host:port, got '" + std::string(text) + "'");
    std::string host(text.substr(0, colon));
    int port = 0;
    for (char c : text.substr(colon + 1)) {
        if (c < '0' || c > '9') throw Error("BadAddress", "bad port in '" + std::string(text) + "'");
        port = port * 10 + (c - '0');
        if (port > 65535) throw Error("BadAddress", "bad port in '" + std::string(text) + "'");
    }
    return {host, port};
}

struct RestClient::Impl {
    std::mutex mu;
    httplib::Client client;
    Impl(const std::string& host, int port) : client(host, port) {}
};

RestClient::RestClient(std::string host, int port, std::chrono::milliseconds timeout)
    : host_(std::move(host)), port_(port), impl_(std::make_unique<Impl>(host_, port_)) {
    impl_->client.set_connection_timeout(timeout);
    impl_->client.set_read_timeout(timeout);
    impl_->client.set_write_timeout(timeout);
    impl_->client.set_keep_alive(true);
}

RestClient::~RestClient() = default;

namespace {

json unwrap(const httplib::Result& res, const std::string& what) {
    if (!res) throw Error("NodeUnreachable", what + ": " + httplib::to_string(res.error()));
    json body;
    if (!res->body.empty()) {
        body = json::parse(res->body, nullptr, false);
        if (body.is_discarded()) throw Error("BadResponse", what + ": response is not JSON");
    }
    if (res->status >= 400) {
        std::string code = body.is_object() ? body.value("code", "HttpError") : "HttpError";
        std::string message = body.is_object() ? body.value("message", "") : res->body;
        throw Error(code, message.empty() ? what + " returned " + std::to_string(res->status) : message);
    }
    return body;
}

}  // namespace

json RestClient::get(const std::string& path) {
    std::lock_guard lock(impl_->mu);
    return unwrap(impl_->client.Get(path), "GET " + path);
}

json RestClient::post_json(const std::string& path, const json& body) {
    std::lock_guard lock(impl_->mu);
    return unwrap(impl_->client.Post(path, body.dump(), "application/json"), "POST " + path);
}

json RestClient::post_bytes(const std::string& path, const std::string& bytes) {
    std::lock_guard lock(impl_->mu);
    return unwrap(impl_->client.Post(path, bytes, "application/octet-stream"), "POST " + path);
}

}  // namespace sbpm::engine
