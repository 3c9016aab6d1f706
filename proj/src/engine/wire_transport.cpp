#include "wire_transport.hpp"

#include <sys/socket.h>
#include <sys/time.h>

namespace sbpm::engine {

using runtime::FrameKind;
using runtime::WireFrame;

namespace {

constexpr std::chrono::milliseconds kMaxBackoff{5000};
constexpr std::chrono::seconds kHeartbeat{2};

void set_io_timeout(tcp::socket& sock, int seconds) {
    timeval tv{seconds, 0};
    ::setsockopt(sock.native_handle(), SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
    ::setsockopt(sock.native_handle(), SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
}

}  // namespace

void write_frame(tcp::socket& sock, const WireFrame& f) {
    std::string bytes = runtime::encode_frame(f);
    asio::write(sock, asio::buffer(bytes));
}

WireFrame read_frame(tcp::socket& sock) {
    char header[4];
    asio::read(sock, asio::buffer(header, 4));
    std::uint32_t len = runtime::decode_frame_length(std::string_view(header, 4));
    std::string payload(len, '\0');
    asio::read(sock, asio::buffer(payload));
    return runtime::decode_frame_payload(payload);
}

WireServer::WireServer(Engine& engine, const std::string& host, int port)
    : engine_(engine), acceptor_(io_) {
    tcp::endpoint ep(asio::ip::make_address(host), static_cast<unsigned short>(port));
    acceptor_.open(ep.protocol());
    acceptor_.set_option(tcp::acceptor::reuse_address(true));
    acceptor_.bind(ep);
    acceptor_.listen();
    port_ = acceptor_.local_endpoint().port();
    accept_thread_ = std::thread([this] { accept_loop(); });
}

WireServer::~WireServer() { stop(); }

void WireServer::stop() {
    if (stopping_.exchange(true)) return;
    ::shutdown(acceptor_.native_handle(), SHUT_RDWR);
    if (accept_thread_.joinable()) accept_thread_.join();
    boost::system::error_code ec;
    acceptor_.close(ec);
    std::vector<std::thread> threads;
    {
        std::lock_guard lock(mu_);
        for (auto& c : conns_) ::shutdown(c->native_handle(), SHUT_RDWR);
        threads.swap(threads_);
    }
    for (auto& t : threads) t.join();
}

void WireServer::accept_loop() {
    while (!stopping_) {
        auto sock = std::make_shared<tcp::socket>(io_);
        boost::system::error_code ec;
        acceptor_.accept(*sock, ec);
        if (ec) {
            if (stopping_) return;
            std::this_thread::sleep_for(std::chrono::milliseconds(10));
            continue;
        }
        std::lock_guard lock(mu_);
        if (stopping_) return;
        conns_.push_back(sock);
        threads_.emplace_back([this, sock] { serve(sock); });
    }
}

void WireServer::serve(std::shared_ptr<tcp::socket> sock) {
    try {
        sock->set_option(tcp::no_delay(true));
        while (!stopping_) {
            WireFrame f = read_frame(*sock);
            write_frame(*sock, engine_.handle_frame(f));
        }
    } catch (const std::exception&) {
        // peer went away or sent a bad frame; drop the connection
    }
    boost::system::error_code ec;
    sock->close(ec);
    std::lock_guard lock(mu_);
    std::erase(conns_, sock);
}

PeerLink::PeerLink(std::string self_node, Resolver resolve, StatusFn on_status)
    : self_(std::move(self_node)), resolve_(std::move(resolve)), on_status_(std::move(on_status)) {
    thread_ = std::thread([this] { run(); });
}

PeerLink::~PeerLink() { stop(); }

void PeerLink::stop() {
    {
        std::lock_guard lock(mu_);
        if (stop_ && !thread_.joinable()) return;
        stop_ = true;
        if (sock_) ::shutdown(sock_->native_handle(), SHUT_RDWR);
    }
    cv_.notify_all();
    if (thread_.joinable()) thread_.join();
}

void PeerLink::post(WireFrame f, Callback cb) {
    {
        std::lock_guard lock(mu_);
        if (stop_) return;
        queue_.emplace_back(std::move(f), std::move(cb));
    }
    cv_.notify_one();
}

void PeerLink::run() {
    for (;;) {
        std::unique_lock lock(mu_);
        cv_.wait_for(lock, kHeartbeat, [&] { return stop_ || !queue_.empty(); });
        if (stop_) return;
        if (queue_.empty()) {
            lock.unlock();
            if (!sock_) continue;
            try {
                if (exchange(WireFrame{.kind = FrameKind::PING, .node = self_}).kind != FrameKind::PONG)
                    throw Error("BadFrame", "expected PONG");
                on_status_(true);
            } catch (const std::exception&) {
                disconnect();
                on_status_(false);
            }
            continue;
        }
        auto [frame, cb] = std::move(queue_.front());
        queue_.pop_front();
        lock.unlock();

        if (!sock_ && !connect()) {
            cb(false, "unreachable");
            continue;
        }
        WireFrame reply;
        try {
            reply = exchange(frame);
        } catch (const std::exception&) {
            disconnect();
            cb(false, "unreachable");
            continue;
        }
        if (reply.kind == FrameKind::ACK)
            cb(true, "");
        else if (reply.kind == FrameKind::NACK)
            cb(false, reply.reason.value_or("nack"));
        else {
            disconnect();
            cb(false, "unreachable");
        }
    }
}

bool PeerLink::connect() {
    auto now = std::chrono::steady_clock::now();
    if (now < next_attempt_) return false;
    std::optional<NodeInfo> peer = resolve_();
    try {
        if (!peer || peer->wire_port <= 0) throw Error("UnknownNode", "no wire endpoint");
        tcp::resolver resolver(io_);
        tcp::socket sock(io_);
        asio::connect(sock, resolver.resolve(peer->host, std::to_string(peer->wire_port)));
        sock.set_option(tcp::no_delay(true));
        set_io_timeout(sock, 5);
        write_frame(sock, WireFrame{.kind = FrameKind::HELLO, .node = self_});
        WireFrame ack = read_frame(sock);
        if (ack.kind != FrameKind::HELLO_ACK || ack.node != peer->node_id)
            throw Error("BadFrame", "handshake failed");
        {
            std::lock_guard lock(mu_);
            if (stop_) return false;
            sock_.emplace(std::move(sock));
        }
        backoff_ = std::chrono::milliseconds(100);
        on_status_(true);
        return true;
    } catch (const std::exception&) {
        next_attempt_ = now + backoff_;
        backoff_ = std::min(backoff_ * 2, kMaxBackoff);
        on_status_(false);
        return false;
    }
}

void PeerLink::disconnect() {
    std::lock_guard lock(mu_);
    if (!sock_) return;
    boost::system::error_code ec;
    sock_->close(ec);
    sock_.reset();
}

WireFrame PeerLink::exchange(const WireFrame& f) {
    write_frame(*sock_, f);
    return read_frame(*sock_);
}

}  // namespace sbpm::engine
