#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "sbpm/engine/repository.hpp"
#include "sbpm/runtime/instance.hpp"
#include "sbpm/runtime/wire.hpp"

namespace sbpm::engine {

using nlohmann::json;

struct NodeInfo {
    std::string node_id;
    std::string host;
    int port = 0;       // REST
    int wire_port = 0;  // message transport
    std::int64_t last_seen_ts = 0;
    enum class Status { up, down } status = Status::up;
};

json to_json(const NodeInfo& n, bool local);

struct EngineConfig {
    std::filesystem::path data_dir = "sbpm-data";
    std::string node_id = "local";
    std::string host = "127.0.0.1";
    int http_port = 0;  // advertised REST port
    int wire_port = 0;  // 0 picks a free port, -1 runs without a wire listener
    int io_threads = 2;
    int service_threads = 4;
    std::chrono::milliseconds monitor_interval{100};
};

struct CreateRequest {
    std::string hash;
    json bindings = json::object();                // role -> agent id | {agent, kind, url}
    std::map<std::string, std::string> placement;  // subject -> node id
    std::map<std::string, std::string> routes;     // external subject -> node/instance/subject
    std::string instance_id;                       // set by the origin when it creates a shard
    std::string origin;                            // empty: this node
};

CreateRequest create_request_from_json(const json& j);  // throws BadRequest
json to_json(const CreateRequest& r);

class WireServer;
class PeerLink;

// Hosts bundles, instances, worklists and the node registry of one node.
class Engine : public runtime::InstanceHost {
public:
    explicit Engine(EngineConfig cfg);
    ~Engine() override;
    Engine(const Engine&) = delete;
    Engine& operator=(const Engine&) = delete;

    // Opens the wire listener and resumes every instance found under data_dir.
    void start();
    void stop();

    const EngineConfig& config() const { return cfg_; }
    int wire_port() const;
    void set_http_endpoint(const std::string& host, int port);

    // Bundles.
    std::string deploy(std::string_view bytes);
    std::vector<BundleInfo> bundles();
    BundleRepository& repository() { return repo_; }

    // Instances. Throws UnknownBundle, UnboundRole, UnknownSubject, UnknownNode.
    std::string create_instance(const CreateRequest& req);
    std::shared_ptr<runtime::Instance> instance(const std::string& id);  // throws UnknownInstance
    std::vector<std::string> instance_ids();
    json instance_report(const std::string& id);
    // Origin instances merge the traces of their shards unless local_only.
    json trace(const std::string& id, bool local_only = false);

    // Worklist.
    std::vector<runtime::Task> list_tasks(const std::string& agent_id);
    // Unless local_only, includes the open tasks that shards of this node's
    // instances hold on other nodes.
    json tasks_json(const std::string& agent_id, bool local_only = false);
    // Tasks held by a shard elsewhere are forwarded to their node.
    // Throws UnknownTask, TaskGone, NotYourTask, NoSuchOutcome, PayloadInvalid.
    void complete_task(const std::string& task_id, const std::string& outcome, const json& payload,
                       const std::optional<std::string>& agent = std::nullopt);

    // Nodes.
    void register_node(NodeInfo n);
    std::vector<NodeInfo> nodes();
    NodeInfo self() const;
    // Registers with the node at host:port and imports its registry.
    void join(const std::string& host, int port);

    // Blocks until pred() holds or the timeout passes; pred is re-evaluated
    // whenever an instance changes status or opens a task.
    bool wait_for(const std::function<bool()>& pred, std::chrono::milliseconds timeout);

    // Message transport entry point for frames from other nodes.
    runtime::WireFrame handle_frame(const runtime::WireFrame& f);

    // InstanceHost
    std::int64_t now_ms() override;
    void arm_timer(const std::string& instance, const std::string& subject, std::uint64_t epoch,
                   std::int64_t ms) override;
    void send_remote(const std::string& node, const runtime::Envelope& env) override;
    void send_external(const std::string& hint, const runtime::Envelope& env) override;
    void retry_send_later(const std::string& instance, const std::string& subject, std::int64_t seq,
                          int attempt) override;
    void call_service(const runtime::ServiceCall& call) override;
    void on_task_opened(const runtime::Task& t) override;
    void on_status_changed(const std::string& instance) override;

private:
    struct Record {
        CreateRequest request;
        std::string node;
        std::int64_t created_ts = 0;
    };
    struct Impl;

    std::shared_ptr<runtime::Instance> find(const std::string& id);
    runtime::InstanceConfig instance_config(const Record& rec);
    std::optional<NodeInfo> node(const std::string& id);
    void post_frame(const std::string& node, const std::string& target_instance, const runtime::Envelope& env);
    void deliver_result(const std::string& instance, const std::string& subject, std::int64_t seq, bool accepted,
                        const std::string& reason);
    void create_shards(const Record& rec, const std::shared_ptr<const compile::Bundle>& b);
    void recover_all();
    void monitor_loop();
    void poll_remote(const std::shared_ptr<runtime::Instance>& inst);
    void notify();
    std::filesystem::path instance_dir(const std::string& id) const;

    EngineConfig cfg_;
    BundleRepository repo_;
    std::unique_ptr<Impl> impl_;

    // An instance lock may be held while taking mu_, never the reverse.
    mutable std::mutex mu_;
    std::mutex creating_mu_;  // held while an instance is built and registered
    std::map<std::string, std::shared_ptr<runtime::Instance>> instances_;
    std::map<std::string, Record> records_;
    std::map<std::string, std::string> task_index_;    // task id -> instance id
    std::map<std::string, std::string> remote_tasks_;  // task id -> node holding it
    std::map<std::string, NodeInfo> nodes_;
    std::map<std::string, std::unique_ptr<PeerLink>> links_;
    std::map<std::string, json> remote_status_;  // "<instance>/<subject>" -> last polled actor view

    std::mutex wait_mu_;
    std::condition_variable wait_cv_;
    std::uint64_t activity_ = 0;

    std::atomic<bool> running_{false};
    std::thread monitor_;
};

}  // namespace sbpm::engine
