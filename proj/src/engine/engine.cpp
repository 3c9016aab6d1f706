#include "sbpm/engine/engine.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <httplib.h>

#include "sbpm/engine/rest_client.hpp"
#include "sbpm/runtime/events.hpp"
#include "wire_transport.hpp"

namespace sbpm::engine {

namespace fs = std::filesystem;
using runtime::Envelope;
using runtime::FrameKind;
using runtime::Instance;
using runtime::InstanceStatus;
using runtime::WireFrame;

namespace {

std::map<std::string, runtime::AgentBinding> parse_bindings(const json& j) {
    if (!j.is_object()) throw Error("BadRequest", "bindings must be an object");
    std::map<std::string, runtime::AgentBinding> out;
    for (const auto& [role, v] : j.items()) {
        runtime::AgentBinding b;
        if (v.is_string()) {
            b.agent_id = v.get<std::string>();
        } else if (v.is_object() && v.contains("agent") && v["agent"].is_string()) {
            b.agent_id = v["agent"].get<std::string>();
            std::string kind = v.value("kind", "human");
            if (kind == "service") {
                b.kind = runtime::AgentBinding::Kind::service;
                if (!v.contains("url") || !v["url"].is_string())
                    throw Error("BadRequest", "service binding for " + role + " needs a url");
                b.url = v["url"].get<std::string>();
            } else if (kind != "human") {
                throw Error("BadRequest", "binding kind must be human or service");
            }
        } else {
            throw Error("BadRequest", "binding for " + role + " must be an agent id or {agent, kind, url}");
        }
        if (b.agent_id.empty()) throw Error("BadRequest", "empty agent id for " + role);
        out.emplace(role, std::move(b));
    }
    return out;
}

std::map<std::string, std::string> string_map(const json& j, const char* what) {
    if (j.is_null()) return {};
    if (!j.is_object()) throw Error("BadRequest", std::string(what) + " must be an object");
    std::map<std::string, std::string> out;
    for (const auto& [k, v] : j.items()) {
        if (!v.is_string()) throw Error("BadRequest", std::string(what) + "." + k + " must be a string");
        out.emplace(k, v.get<std::string>());
    }
    return out;
}

struct Url {
    std::string origin;  // scheme://host:port
    std::string path;
};

Url split_url(const std::string& url) {
    auto scheme = url.find("://");
    auto slash = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    if (slash == std::string::npos) return {url, "/"};
    return {url.substr(0, slash), url.substr(slash)};
}

runtime::ServiceReply invoke_service(const runtime::ServiceCall& call) {
    using Kind = runtime::ServiceReply::Kind;
    runtime::ServiceReply reply;
    Url url = split_url(call.url);
    httplib::Client client(url.origin);
    if (!client.is_valid()) return {Kind::unreachable, "", nullptr, "invalid service url " + call.url};
    auto timeout = std::chrono::milliseconds(std::max<std::int64_t>(call.timeout_ms, 1));
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    auto res = client.Post(url.path, call.body.dump(), "application/json");
    if (!res) {
        auto err = res.error();
        bool timed_out = err == httplib::Error::Read || err == httplib::Error::Write ||
                         err == httplib::Error::ConnectionTimeout;
        return {timed_out ? Kind::timeout : Kind::unreachable, "", nullptr,
                call.url + ": " + httplib::to_string(err)};
    }
    if (res->status < 200 || res->status >= 300)
        return {Kind::bad_response, "", nullptr, call.url + " returned HTTP " + std::to_string(res->status)};
    json body = json::parse(res->body, nullptr, false);
    if (body.is_discarded() || !body.is_object() || !body.contains("outcome") || !body["outcome"].is_string())
        return {Kind::bad_response, "", nullptr, call.url + " did not answer {outcome, payload?}"};
    reply.kind = Kind::ok;
    reply.outcome = body["outcome"].get<std::string>();
    reply.payload = body.value("payload", json(nullptr));
    return reply;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error("IoError", "cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

json to_json(const NodeInfo& n, bool local) {
    return json{{"node_id", n.node_id},
                {"host", n.host},
                {"port", n.port},
                {"wire_port", n.wire_port},
                {"last_seen_ts", n.last_seen_ts},
                {"status", n.status == NodeInfo::Status::up ? "up" : "down"},
                {"local", local}};
}

CreateRequest create_request_from_json(const json& j) {
    if (!j.is_object()) throw Error("BadRequest", "body must be a JSON object");
    if (!j.contains("hash") || !j["hash"].is_string()) throw Error("BadRequest", "hash is required");
    CreateRequest r;
    r.hash = j["hash"].get<std::string>();
    r.bindings = j.value("bindings", json::object());
    parse_bindings(r.bindings);
    r.placement = string_map(j.value("placement", json(nullptr)), "placement");
    r.routes = string_map(j.value("routes", json(nullptr)), "routes");
    r.instance_id = j.value("instance_id", "");
    r.origin = j.value("origin", "");
    return r;
}

json to_json(const CreateRequest& r) {
    json j{{"hash", r.hash}, {"bindings", r.bindings}, {"placement", r.placement}, {"routes", r.routes}};
    if (!r.instance_id.empty()) j["instance_id"] = r.instance_id;
    if (!r.origin.empty()) j["origin"] = r.origin;
    return j;
}

struct Engine::Impl {
    asio::io_context io;
    asio::executor_work_guard<asio::io_context::executor_type> work{io.get_executor()};
    std::vector<std::thread> io_threads;
    asio::thread_pool services;
    std::unique_ptr<WireServer> wire;
    std::map<std::string, std::unique_ptr<RestClient>> monitor_clients;
    std::mutex monitor_mu;
    std::condition_variable monitor_cv;

    explicit Impl(int service_threads) : services(static_cast<std::size_t>(std::max(1, service_threads))) {}
};

Engine::Engine(EngineConfig cfg)
    : cfg_(std::move(cfg)), repo_(cfg_.data_dir / "bundles"), impl_(std::make_unique<Impl>(cfg_.service_threads)) {
    fs::create_directories(cfg_.data_dir / "instances");
}

Engine::~Engine() { stop(); }

void Engine::start() {
    if (running_.exchange(true)) return;
    for (int i = 0; i < std::max(1, cfg_.io_threads); ++i) impl_->io_threads.emplace_back([this] { impl_->io.run(); });
    if (cfg_.wire_port >= 0) impl_->wire = std::make_unique<WireServer>(*this, "0.0.0.0", cfg_.wire_port);
    recover_all();
    monitor_ = std::thread([this] { monitor_loop(); });
}

void Engine::stop() {
    if (!running_.exchange(false)) return;
    impl_->monitor_cv.notify_all();
    if (monitor_.joinable()) monitor_.join();
    if (impl_->wire) impl_->wire->stop();
    std::map<std::string, std::unique_ptr<PeerLink>> links;
    {
        std::lock_guard lock(mu_);
        links.swap(links_);
    }
    for (auto& [_, link] : links) link->stop();
    impl_->services.stop();
    impl_->services.join();
    impl_->work.reset();
    impl_->io.stop();
    for (auto& t : impl_->io_threads) t.join();
    impl_->io_threads.clear();
}

int Engine::wire_port() const { return impl_->wire ? impl_->wire->port() : 0; }

void Engine::set_http_endpoint(const std::string& host, int port) {
    std::lock_guard lock(mu_);
    cfg_.host = host;
    cfg_.http_port = port;
}

NodeInfo Engine::self() const {
    std::lock_guard lock(mu_);
    NodeInfo n;
    n.node_id = cfg_.node_id;
    n.host = cfg_.host;
    n.port = cfg_.http_port;
    n.wire_port = impl_->wire ? impl_->wire->port() : 0;
    n.status = NodeInfo::Status::up;
    return n;
}

fs::path Engine::instance_dir(const std::string& id) const { return cfg_.data_dir / "instances" / id; }

void Engine::notify() {
    {
        std::lock_guard lock(wait_mu_);
        ++activity_;
    }
    wait_cv_.notify_all();
}

bool Engine::wait_for(const std::function<bool()>& pred, std::chrono::milliseconds timeout) {
    auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
        std::uint64_t seen;
        {
            std::lock_guard lock(wait_mu_);
            seen = activity_;
        }
        if (pred()) return true;
        std::unique_lock lock(wait_mu_);
        if (std::chrono::steady_clock::now() >= deadline) return false;
        wait_cv_.wait_until(lock, std::min(deadline, std::chrono::steady_clock::now() + std::chrono::milliseconds(50)),
                            [&] { return activity_ != seen; });
    }
}

// ---- bundles -------------------------------------------------------------

std::string Engine::deploy(std::string_view bytes) { return repo_.deploy(bytes); }

std::vector<BundleInfo> Engine::bundles() { return repo_.list(); }

// ---- instances -----------------------------------------------------------

std::shared_ptr<Instance> Engine::find(const std::string& id) {
    {
        std::lock_guard lock(mu_);
        if (auto it = instances_.find(id); it != instances_.end()) return it->second;
    }
    // The instance may be mid-creation; wait for it to be registered.
    std::lock_guard creating(creating_mu_);
    std::lock_guard lock(mu_);
    auto it = instances_.find(id);
    return it == instances_.end() ? nullptr : it->second;
}

std::shared_ptr<Instance> Engine::instance(const std::string& id) {
    auto inst = find(id);
    if (!inst) throw Error("UnknownInstance", "no instance " + id);
    return inst;
}

std::vector<std::string> Engine::instance_ids() {
    std::lock_guard lock(mu_);
    std::vector<std::string> out;
    for (const auto& [id, _] : instances_) out.push_back(id);
    return out;
}

runtime::InstanceConfig Engine::instance_config(const Record& rec) {
    runtime::InstanceConfig c;
    c.instance_id = rec.request.instance_id;
    c.bundle = repo_.get(rec.request.hash);
    c.bindings = parse_bindings(rec.request.bindings);
    c.placement = rec.request.placement;
    c.node_id = rec.node;
    c.origin = rec.request.origin;
    c.routes = rec.request.routes;
    c.log_path = instance_dir(c.instance_id) / "events.log";
    return c;
}

std::optional<NodeInfo> Engine::node(const std::string& id) {
    std::lock_guard lock(mu_);
    if (auto it = nodes_.find(id); it != nodes_.end()) return it->second;
    return std::nullopt;
}

std::string Engine::create_instance(const CreateRequest& req) {
    auto bundle = repo_.get(req.hash);
    const std::string self_id = cfg_.node_id;

    for (const auto& [subject, node_id] : req.placement) {
        const model::SubjectDecl* s = bundle->subject(subject);
        if (!s || s->external) throw Error("UnknownSubject", "placement names unknown subject " + subject);
        if (node_id != self_id && !node(node_id)) throw Error("UnknownNode", "no registered node " + node_id);
    }
    auto bindings = parse_bindings(req.bindings);
    for (const auto& s : bundle->subjects)
        if (!s.external && !bindings.count(s.role)) throw Error("UnboundRole", "role " + s.role + " has no agent");

    Record rec;
    rec.request = req;
    rec.node = self_id;
    rec.created_ts = now_ms();
    if (rec.request.origin.empty()) rec.request.origin = self_id;
    if (rec.request.origin != self_id && !node(rec.request.origin))
        throw Error("UnknownNode", "no registered node " + rec.request.origin);
    if (rec.request.instance_id.empty()) rec.request.instance_id = runtime::random_uuid();
    const std::string id = rec.request.instance_id;
    {
        std::lock_guard lock(mu_);
        if (records_.count(id) || fs::exists(instance_dir(id))) throw Error("DuplicateInstance", id);
    }

    if (rec.request.origin == self_id) create_shards(rec, bundle);

    fs::create_directories(instance_dir(id));
    json record = to_json(rec.request);
    record["node"] = rec.node;
    record["created_ts"] = rec.created_ts;
    write_atomic(instance_dir(id) / "record.json", record.dump(2));

    try {
        std::lock_guard creating(creating_mu_);
        auto inst = Instance::start(instance_config(rec), *this);
        std::lock_guard lock(mu_);
        instances_[id] = inst;
        records_[id] = rec;
    } catch (...) {
        fs::remove_all(instance_dir(id));
        throw;
    }
    notify();
    return id;
}

void Engine::create_shards(const Record& rec, const std::shared_ptr<const compile::Bundle>& b) {
    std::set<std::string> remote;
    for (const auto& [_, n] : rec.request.placement)
        if (n != cfg_.node_id) remote.insert(n);
    if (remote.empty()) return;
    std::string bytes = repo_.bytes(b->manifest.content_hash);
    for (const auto& n : remote) {
        NodeInfo info = *node(n);
        RestClient client(info.host, info.port);
        client.post_bytes("/bundles", bytes);
        CreateRequest shard = rec.request;
        shard.origin = cfg_.node_id;
        client.post_json("/instances", to_json(shard));
    }
}

void Engine::recover_all() {
    fs::path root = cfg_.data_dir / "instances";
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& dir : dirs) {
        try {
            json j = json::parse(read_file(dir / "record.json"));
            Record rec;
            rec.request = create_request_from_json(j);
            rec.node = j.value("node", cfg_.node_id);
            rec.created_ts = j.value("created_ts", std::int64_t{0});
            auto log = runtime::read_event_log(dir / "events.log");
            std::lock_guard creating(creating_mu_);
            auto inst = Instance::recover(instance_config(rec), *this, log);
            auto tasks = inst->tasks();
            std::lock_guard lock(mu_);
            instances_[rec.request.instance_id] = inst;
            records_[rec.request.instance_id] = rec;
            for (const auto& t : tasks) task_index_[t.task_id] = t.instance_id;
        } catch (const std::exception& e) {
            std::cerr << "sbpm: cannot recover " << dir.filename().string() << ": " << e.what() << "\n";
        }
    }
}

json Engine::instance_report(const std::string& id) {
    auto inst = instance(id);
    runtime::InstanceState snap = inst->snapshot();
    const compile::Bundle& b = inst->bundle();

    json subjects = json::object();
    for (const auto& [s, a] : snap.actors) {
        const auto& st = b.program(s)->states.at(a.current);
        subjects[s] = json{{"node", cfg_.node_id},
                           {"state", st.id},
                           {"state_name", st.name},
                           {"index", a.current},
                           {"status", std::string(to_string(a.status))},
                           {"pool", a.pool.size()}};
    }
    for (const auto& s : inst->remote_subjects()) {
        json view{{"node", inst->node_of(s)}, {"status", "unknown"}};
        std::lock_guard lock(mu_);
        if (auto it = remote_status_.find(id + "/" + s); it != remote_status_.end()) view = it->second;
        view["remote"] = true;
        subjects[s] = view;
    }
    json tasks = json::array();
    for (const auto& t : inst->tasks()) tasks.push_back(runtime::to_json(t, b));

    std::optional<std::int64_t> now;
    if (snap.status == InstanceStatus::running) now = now_ms();
    json out{{"instance_id", id},
             {"bundle", b.manifest.content_hash},
             {"process_id", b.manifest.process_id},
             {"status", std::string(to_string(snap.status))},
             {"node", cfg_.node_id},
             {"origin", inst->is_origin() ? cfg_.node_id : inst->config().origin},
             {"bindings", snap.bindings},
             {"placement", inst->config().placement},
             {"subjects", subjects},
             {"tasks", tasks},
             {"warnings", inst->warnings()},
             {"metrics", runtime::to_json(runtime::compute_metrics(snap.log, b, now))}};
    std::string reason = inst->failure_reason();
    out["failure_reason"] = reason.empty() ? json(nullptr) : json(reason);
    return out;
}

json Engine::trace(const std::string& id, bool local_only) {
    auto inst = instance(id);
    std::vector<std::pair<std::int64_t, json>> rows;
    for (const auto& r : inst->log()) {
        json j = runtime::to_json(r);
        j["node"] = cfg_.node_id;
        rows.emplace_back(r.ts, std::move(j));
    }
    if (!local_only && inst->is_origin()) {
        std::set<std::string> remote_nodes;
        for (const auto& s : inst->remote_subjects()) remote_nodes.insert(inst->node_of(s));
        for (const auto& n : remote_nodes) {
            auto info = node(n);
            if (!info) continue;
            try {
                RestClient client(info->host, info->port, std::chrono::seconds(5));
                for (auto& j : client.get("/instances/" + id + "/trace?local=1"))
                    rows.emplace_back(j.value("ts", std::int64_t{0}), j);
            } catch (const Error& e) {
                std::cerr << "sbpm: trace from " << n << " unavailable: " << e.what() << "\n";
            }
        }
        std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    }
    json out = json::array();
    for (auto& [_, j] : rows) out.push_back(std::move(j));
    return out;
}

// ---- worklist ------------------------------------------------------------

std::vector<runtime::Task> Engine::list_tasks(const std::string& agent_id) {
    std::vector<std::shared_ptr<Instance>> all;
    {
        std::lock_guard lock(mu_);
        for (const auto& [_, inst] : instances_) all.push_back(inst);
    }
    std::vector<runtime::Task> out;
    for (const auto& inst : all)
        for (auto& t : inst->tasks())
            if (t.agent_id == agent_id) out.push_back(std::move(t));
    std::sort(out.begin(), out.end(), [](const runtime::Task& a, const runtime::Task& b) {
        return std::tie(a.created_ts, a.task_id) < std::tie(b.created_ts, b.task_id);
    });
    return out;
}

json Engine::tasks_json(const std::string& agent_id, bool local_only) {
    std::vector<std::pair<std::int64_t, json>> rows;
    for (const auto& t : list_tasks(agent_id)) {
        auto inst = find(t.instance_id);
        if (inst) rows.emplace_back(t.created_ts, runtime::to_json(t, inst->bundle()));
    }
    if (!local_only) {
        std::set<std::string> ours, remote_nodes;
        std::vector<std::shared_ptr<Instance>> all;
        {
            std::lock_guard lock(mu_);
            for (const auto& [_, inst] : instances_) all.push_back(inst);
        }
        for (const auto& inst : all) {
            if (!inst->is_origin() || inst->status() != InstanceStatus::running) continue;
            for (const auto& s : inst->remote_subjects()) {
                ours.insert(inst->id());
                remote_nodes.insert(inst->node_of(s));
            }
        }
        for (const auto& n : remote_nodes) {
            auto info = node(n);
            if (!info) continue;
            json remote;
            try {
                remote = RestClient(info->host, info->port, std::chrono::seconds(5))
                             .get("/agents/" + agent_id + "/tasks?local=1");
            } catch (const Error&) {
                continue;
            }
            std::lock_guard lock(mu_);
            for (auto& t : remote) {
                if (!ours.count(t.value("instance_id", ""))) continue;
                remote_tasks_[t.at("task_id").get<std::string>()] = n;
                rows.emplace_back(t.value("created_ts", std::int64_t{0}), std::move(t));
            }
        }
    }
    std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    json out = json::array();
    for (auto& [_, j] : rows) out.push_back(std::move(j));
    return out;
}

void Engine::complete_task(const std::string& task_id, const std::string& outcome, const json& payload,
                           const std::optional<std::string>& agent) {
    std::string instance_id, remote_node;
    {
        std::lock_guard lock(mu_);
        if (auto it = task_index_.find(task_id); it != task_index_.end())
            instance_id = it->second;
        else if (auto r = remote_tasks_.find(task_id); r != remote_tasks_.end())
            remote_node = r->second;
        else
            throw Error("UnknownTask", "no task " + task_id);
    }
    if (!remote_node.empty()) {
        auto info = node(remote_node);
        if (!info) throw Error("UnknownNode", "no registered node " + remote_node);
        json body{{"outcome", outcome}, {"payload", payload}};
        if (agent) body["agent"] = *agent;
        RestClient(info->host, info->port).post_json("/tasks/" + task_id + "/complete", body);
        return;
    }
    instance(instance_id)->complete_task(task_id, outcome, payload, agent);
}

// ---- nodes ---------------------------------------------------------------

void Engine::register_node(NodeInfo n) {
    if (n.node_id.empty()) throw Error("BadRequest", "node_id is required");
    if (n.node_id == cfg_.node_id) return;
    if (n.wire_port <= 0) n.wire_port = n.port + 1;
    n.last_seen_ts = now_ms();
    n.status = NodeInfo::Status::up;
    std::lock_guard lock(mu_);
    nodes_[n.node_id] = n;
}

std::vector<NodeInfo> Engine::nodes() {
    std::vector<NodeInfo> out{self()};
    out.back().last_seen_ts = now_ms();
    std::lock_guard lock(mu_);
    for (const auto& [_, n] : nodes_) out.push_back(n);
    return out;
}

void Engine::join(const std::string& host, int port) {
    json me = to_json(self(), false);
    RestClient seed(host, port);
    seed.post_json("/nodes/register", me);
    for (const auto& j : seed.get("/nodes")) {
        NodeInfo n;
        n.node_id = j.at("node_id").get<std::string>();
        n.host = j.at("host").get<std::string>();
        n.port = j.at("port").get<int>();
        n.wire_port = j.value("wire_port", 0);
        if (n.node_id == cfg_.node_id) continue;
        if (j.value("local", false)) n.host = n.host == "0.0.0.0" ? host : n.host;
        register_node(n);
        if (!j.value("local", false)) RestClient(n.host, n.port).post_json("/nodes/register", me);
    }
}

// ---- message transport ---------------------------------------------------

WireFrame Engine::handle_frame(const WireFrame& f) {
    WireFrame reply;
    reply.node = cfg_.node_id;
    switch (f.kind) {
        case FrameKind::HELLO:
            reply.kind = FrameKind::HELLO_ACK;
            if (auto n = node(f.node)) {
                std::lock_guard lock(mu_);
                nodes_[f.node].last_seen_ts = now_ms();
                nodes_[f.node].status = NodeInfo::Status::up;
            }
            return reply;
        case FrameKind::PING:
            reply.kind = FrameKind::PONG;
            return reply;
        case FrameKind::MSG:
            break;
        default:
            reply.kind = FrameKind::NACK;
            reply.reason = "unexpected frame " + std::string(to_string(f.kind));
            return reply;
    }
    reply.instance = f.instance;
    if (!f.envelope) {
        reply.kind = FrameKind::NACK;
        reply.reason = "rejected:BadFrame: MSG without envelope";
        return reply;
    }
    Envelope echo = *f.envelope;
    echo.payload = nullptr;
    reply.envelope = echo;
    reply.ack_seq = f.envelope->seq;

    auto inst = find(f.instance);
    if (!inst) {
        reply.kind = FrameKind::NACK;
        reply.reason = "unknown_instance";
        return reply;
    }
    if (inst->status() != InstanceStatus::running) {
        reply.kind = FrameKind::NACK;
        reply.reason = "rejected:InstanceTerminated: " + f.instance + " is " + std::string(to_string(inst->status()));
        return reply;
    }
    try {
        runtime::DeliveryResult r = inst->deliver(*f.envelope);
        if (r == runtime::DeliveryResult::nack_full) {
            reply.kind = FrameKind::NACK;
            reply.reason = "full";
        } else {
            reply.kind = FrameKind::ACK;
        }
    } catch (const Error& e) {
        reply.kind = FrameKind::NACK;
        reply.reason = "rejected:" + e.code() + ": " + e.what();
    }
    return reply;
}

void Engine::deliver_result(const std::string& instance, const std::string& subject, std::int64_t seq, bool accepted,
                            const std::string& reason) {
    auto inst = find(instance);
    if (!inst) return;
    constexpr std::string_view kRejected = "rejected:";
    if (!accepted && reason.rfind(kRejected, 0) == 0) {
        inst->fail(reason.substr(kRejected.size()));
        return;
    }
    inst->on_send_result(subject, seq, accepted, reason);
}

void Engine::post_frame(const std::string& node_id, const std::string& target_instance, const Envelope& env) {
    WireFrame f;
    f.kind = FrameKind::MSG;
    f.node = cfg_.node_id;
    f.instance = target_instance;
    f.envelope = env;
    auto on_result = [this, sender = env.instance_id, subject = env.from_subject, seq = env.seq](
                         bool accepted, const std::string& reason) {
        deliver_result(sender, subject, seq, accepted, reason);
    };

    if (node_id == cfg_.node_id) {
        asio::post(impl_->io, [this, f, on_result] {
            WireFrame reply = handle_frame(f);
            on_result(reply.kind == FrameKind::ACK, reply.reason.value_or(""));
        });
        return;
    }
    PeerLink* link = nullptr;
    {
        std::lock_guard lock(mu_);
        if (!running_ || !nodes_.count(node_id)) {
            asio::post(impl_->io, [on_result, node_id] { on_result(false, "rejected:UnknownNode: " + node_id); });
            return;
        }
        auto& slot = links_[node_id];
        if (!slot) {
            slot = std::make_unique<PeerLink>(
                cfg_.node_id, [this, node_id] { return node(node_id); },
                [this, node_id](bool up) {
                    std::lock_guard l(mu_);
                    auto it = nodes_.find(node_id);
                    if (it == nodes_.end()) return;
                    it->second.status = up ? NodeInfo::Status::up : NodeInfo::Status::down;
                    if (up) it->second.last_seen_ts = now_ms();
                });
        }
        link = slot.get();
    }
    link->post(std::move(f), on_result);
}

// ---- InstanceHost --------------------------------------------------------

std::int64_t Engine::now_ms() {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

void Engine::arm_timer(const std::string& instance, const std::string& subject, std::uint64_t epoch, std::int64_t ms) {
    auto timer = std::make_shared<asio::steady_timer>(impl_->io, std::chrono::milliseconds(ms));
    timer->async_wait([this, timer, instance, subject, epoch](const boost::system::error_code& ec) {
        if (ec) return;
        if (auto inst = find(instance)) inst->on_timer(subject, epoch);
    });
}

void Engine::send_remote(const std::string& node_id, const Envelope& env) { post_frame(node_id, env.instance_id, env); }

void Engine::send_external(const std::string& hint, const Envelope& env) {
    auto first = hint.find('/');
    auto second = first == std::string::npos ? std::string::npos : hint.find('/', first + 1);
    if (second == std::string::npos || hint.find('/', second + 1) != std::string::npos || first == 0 ||
        second == first + 1 || second + 1 == hint.size()) {
        asio::post(impl_->io, [this, env, hint] {
            deliver_result(env.instance_id, env.from_subject, env.seq, false,
                           "rejected:UnknownTarget: malformed route " + hint);
        });
        return;
    }
    Envelope routed = env;
    routed.to_subject = hint.substr(second + 1);
    post_frame(hint.substr(0, first), hint.substr(first + 1, second - first - 1), routed);
}

void Engine::retry_send_later(const std::string& instance, const std::string& subject, std::int64_t seq,
                              int attempt) {
    std::int64_t delay = 100;
    for (int i = 1; i < attempt && delay < 5000; ++i) delay *= 2;
    delay = std::min<std::int64_t>(delay, 5000);
    auto timer = std::make_shared<asio::steady_timer>(impl_->io, std::chrono::milliseconds(delay));
    timer->async_wait([this, timer, instance, subject, seq](const boost::system::error_code& ec) {
        if (ec) return;
        if (auto inst = find(instance)) inst->retry_send(subject, seq);
    });
}

void Engine::call_service(const runtime::ServiceCall& call) {
    asio::post(impl_->services, [this, call] {
        runtime::ServiceReply reply = invoke_service(call);
        if (auto inst = find(call.instance_id)) inst->on_service_reply(call.subject, call.epoch, reply);
    });
}

void Engine::on_task_opened(const runtime::Task& t) {
    {
        std::lock_guard lock(mu_);
        task_index_[t.task_id] = t.instance_id;
    }
    notify();
}

void Engine::on_status_changed(const std::string&) { notify(); }

// ---- remote shard monitoring ---------------------------------------------

void Engine::monitor_loop() {
    while (running_) {
        {
            std::unique_lock lock(impl_->monitor_mu);
            impl_->monitor_cv.wait_for(lock, cfg_.monitor_interval, [&] { return !running_; });
        }
        if (!running_) return;
        std::vector<std::shared_ptr<Instance>> all;
        {
            std::lock_guard lock(mu_);
            for (const auto& [_, inst] : instances_) all.push_back(inst);
        }
        // Instance locks are taken only after mu_ is released.
        for (const auto& inst : all)
            if (inst->is_origin() && !inst->remote_subjects().empty() && inst->status() == InstanceStatus::running)
                poll_remote(inst);
    }
}

void Engine::poll_remote(const std::shared_ptr<Instance>& inst) {
    std::map<std::string, std::vector<std::string>> by_node;
    for (const auto& s : inst->remote_subjects()) by_node[inst->node_of(s)].push_back(s);
    for (const auto& [n, subjects] : by_node) {
        auto info = node(n);
        if (!info) continue;
        auto& client = impl_->monitor_clients[n];
        if (!client || client->host() != info->host || client->port() != info->port)
            client = std::make_unique<RestClient>(info->host, info->port, std::chrono::seconds(2));
        json report;
        try {
            report = client->get("/instances/" + inst->id() + "?local=1");
        } catch (const Error&) {
            continue;
        }
        bool shard_failed = report.value("status", "") == "failed";
        for (const auto& s : subjects) {
            json view = report["subjects"].value(s, json::object());
            {
                std::lock_guard lock(mu_);
                remote_status_[inst->id() + "/" + s] = view;
            }
            bool halted = view.value("status", "") == "halted";
            if (shard_failed || halted) inst->set_remote_status(s, halted, shard_failed);
        }
    }
}

}  // namespace sbpm::engine
