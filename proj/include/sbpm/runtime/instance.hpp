#pragma once

#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "sbpm/compile/bundle.hpp"
#include "sbpm/runtime/actor.hpp"
#include "sbpm/runtime/replay.hpp"

namespace sbpm::runtime {

enum class DeliveryResult { delivered, nack_full, routed_remote, routed_external };
std::string_view to_string(DeliveryResult r);

struct AgentBinding {
    enum class Kind { human, service };
    std::string agent_id;
    Kind kind = Kind::human;
    std::string url;  // service callback, service bindings only
    bool operator==(const AgentBinding&) const = default;
};

struct Task {
    std::string task_id;
    std::string instance_id;
    std::string subject;
    std::string state_id;
    std::string state_name;
    int state_index = 0;
    TaskKind kind = TaskKind::choose_outcome;
    std::vector<TaskOption> options;
    std::string assigned_role;
    std::string agent_id;
    std::int64_t created_ts = 0;
    std::uint64_t epoch = 0;
};

nlohmann::json to_json(const Task& t, const compile::Bundle& b);

struct ServiceCall {
    std::string instance_id;
    std::string subject;
    std::uint64_t epoch = 0;
    std::string url;
    nlohmann::json body;
    std::int64_t timeout_ms = 0;
};

struct ServiceReply {
    enum class Kind { ok, unreachable, timeout, bad_response };
    Kind kind = Kind::ok;
    std::string outcome;
    nlohmann::json payload;
    std::string detail;
};

// Everything an instance needs from its surroundings. Calls arrive with the
// instance lock held: implementations must not call back into the instance
// synchronously.
class InstanceHost {
public:
    virtual ~InstanceHost() = default;
    virtual std::int64_t now_ms() = 0;
    virtual void arm_timer(const std::string& instance, const std::string& subject, std::uint64_t epoch,
                           std::int64_t ms) = 0;
    // Answer arrives through Instance::on_send_result.
    virtual void send_remote(const std::string& node, const Envelope& env) = 0;
    virtual void send_external(const std::string& hint, const Envelope& env) = 0;
    virtual void retry_send_later(const std::string& instance, const std::string& subject, std::int64_t seq,
                                  int attempt) = 0;
    virtual void call_service(const ServiceCall& call) = 0;
    virtual void on_task_opened(const Task&) {}
    virtual void on_status_changed(const std::string& /*instance*/) {}
};

struct InstanceConfig {
    std::string instance_id;
    std::shared_ptr<const compile::Bundle> bundle;
    std::map<std::string, AgentBinding> bindings;  // role -> agent
    std::map<std::string, std::string> placement;  // subject -> node; unplaced subjects run on the origin
    std::string node_id = "local";
    std::string origin;                         // supervisor node; empty means node_id
    std::map<std::string, std::string> routes;  // external subject -> route hint, overrides the bundle
    std::filesystem::path log_path;             // empty keeps the log in memory only
    // Called after every append; returning false stops the instance dead, as
    // if its process had been killed at that point.
    std::function<bool(const EventRecord&, const InstanceState&)> append_hook;
};

class Instance {
public:
    // Throws UnboundRole.
    static std::shared_ptr<Instance> start(InstanceConfig cfg, InstanceHost& host);
    // Rebuilds from the log and resumes. Throws LogCorrupt, BundleMismatch.
    static std::shared_ptr<Instance> recover(InstanceConfig cfg, InstanceHost& host, const std::vector<EventRecord>& log);

    const std::string& id() const { return cfg_.instance_id; }
    const InstanceConfig& config() const { return cfg_; }
    const compile::Bundle& bundle() const { return *cfg_.bundle; }
    bool is_origin() const { return origin_ == cfg_.node_id; }
    std::string node_of(const std::string& subject) const;
    std::set<std::string> remote_subjects() const;

    InstanceStatus status() const;
    bool killed() const;
    InstanceState snapshot() const;
    std::vector<EventRecord> log() const;
    std::vector<Task> tasks() const;
    std::vector<std::string> warnings() const;
    std::string failure_reason() const;

    // Throws TaskGone, NotYourTask, NoSuchOutcome, PayloadInvalid.
    void complete_task(const std::string& task_id, const std::string& outcome, const nlohmann::json& payload,
                       const std::optional<std::string>& agent = std::nullopt);

    // Inbound delivery from another node or instance. Throws UnknownTarget, PayloadInvalid.
    DeliveryResult deliver(const Envelope& env);

    // `reason` is the NACK reason; only "full" counts against drop-error.
    void on_send_result(const std::string& subject, std::int64_t seq, bool accepted,
                        std::string_view reason = "full");
    void on_timer(const std::string& subject, std::uint64_t epoch);
    void on_service_reply(const std::string& subject, std::uint64_t epoch, const ServiceReply& reply);
    void retry_send(const std::string& subject, std::int64_t seq);
    void set_remote_status(const std::string& subject, bool halted, bool failed);
    void crash_subject(const std::string& subject, const std::string& reason);
    void fail(const std::string& reason);

private:
    struct Killed {};

    Instance(InstanceConfig cfg, InstanceHost& host);

    template <class Fn>
    void guarded(Fn&& fn);

    StepContext ctx(const std::string& subject) const;
    void start_missing_actors();
    InstanceState snapshot_locked() const;
    void append(const std::string& subject, EventKind kind, nlohmann::json data);
    void step(const std::string& subject, const ActorEvent& ev);
    void apply(const std::string& subject, std::vector<Effect>& effects);
    void send(const std::string& subject, const Envelope& env);
    DeliveryResult dispatch(const Envelope& env);
    DeliveryResult deliver_local(const Envelope& env);
    void notify_receiver(const std::string& subject);
    void open_task(const std::string& subject, const OpenTaskEffect& fx);
    void resume_actor(const std::string& subject);
    void restart(const std::string& subject);
    void crash_locked(const std::string& subject, const std::string& reason);
    void fail_locked(const std::string& reason);
    void run_queue();
    void check_completion();

    InstanceConfig cfg_;
    InstanceHost& host_;
    std::string origin_;
    mutable std::mutex mu_;

    std::map<std::string, ActorState> actors_;
    std::map<std::string, Task> tasks_;  // subject -> open task
    std::vector<EventRecord> log_;
    InstanceStatus status_ = InstanceStatus::running;
    std::string failure_reason_;
    bool killed_ = false;

    std::deque<std::pair<std::string, ActorEvent>> queue_;
    std::map<std::string, std::int64_t> last_delivered_;
    std::map<std::string, std::vector<std::string>> blocked_on_;  // receiver -> blocked senders, FIFO
    std::map<std::string, int> remote_attempts_;
    std::map<std::string, ActorStatus> pre_crash_;
    std::map<std::string, std::vector<std::int64_t>> restarts_;
    std::set<std::string> remote_halted_;
    std::vector<std::string> warnings_;
};

}  // namespace sbpm::runtime
