#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <boost/asio.hpp>

#include "sbpm/engine/engine.hpp"
#include "sbpm/runtime/wire.hpp"

namespace sbpm::engine {

namespace asio = boost::asio;
using asio::ip::tcp;

void write_frame(tcp::socket& sock, const runtime::WireFrame& f);
runtime::WireFrame read_frame(tcp::socket& sock);  // throws on I/O failure or a bad frame

// Accepts peer connections and answers each frame through Engine::handle_frame.
class WireServer {
public:
    WireServer(Engine& engine, const std::string& host, int port);
    ~WireServer();
    int port() const { return port_; }
    void stop();

private:
    void accept_loop();
    void serve(std::shared_ptr<tcp::socket> sock);

    Engine& engine_;
    asio::io_context io_;
    tcp::acceptor acceptor_;
    int port_ = 0;
    std::atomic<bool> stopping_{false};
    std::thread accept_thread_;
    std::mutex mu_;
    std::vector<std::shared_ptr<tcp::socket>> conns_;
    std::vector<std::thread> threads_;
};

// One outbound connection to a peer. Frames go out one at a time and each
// waits for its ACK or NACK; callbacks run on the link thread.
class PeerLink {
public:
    using Callback = std::function<void(bool accepted, const std::string& reason)>;
    using Resolver = std::function<std::optional<NodeInfo>()>;
    using StatusFn = std::function<void(bool up)>;

    PeerLink(std::string self_node, Resolver resolve, StatusFn on_status);
    ~PeerLink();
    void post(runtime::WireFrame f, Callback cb);
    void stop();

private:
    void run();
    bool connect();
    void disconnect();
    runtime::WireFrame exchange(const runtime::WireFrame& f);

    std::string self_;
    Resolver resolve_;
    StatusFn on_status_;
    asio::io_context io_;
    std::optional<tcp::socket> sock_;
    std::chrono::milliseconds backoff_{100};
    std::chrono::steady_clock::time_point next_attempt_{};

    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<std::pair<runtime::WireFrame, Callback>> queue_;
    bool stop_ = false;
    std::thread thread_;
};

}  // namespace sbpm::engine
