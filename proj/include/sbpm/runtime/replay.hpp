#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sbpm/compile/bundle.hpp"
#include "sbpm/runtime/actor.hpp"
#include "sbpm/runtime/events.hpp"

namespace sbpm::runtime {

enum class InstanceStatus { running, completed, failed };
std::string_view to_string(InstanceStatus s);

struct InstanceState {
    std::string instance_id;
    std::string bundle_hash;
    std::map<std::string, ActorState> actors;  // subjects hosted by this node
    std::map<std::string, std::string> bindings;  // role -> agent id
    InstanceStatus status = InstanceStatus::running;
    std::vector<EventRecord> log;
};

nlohmann::json to_json(const ActorState& a, const compile::SubjectProgram& program);

// Instance-level context stamped on every initial STATE_ENTERED record.
struct InstanceHeader {
    std::string instance_id;
    std::string bundle_hash;
    std::string node;    // node hosting the logged subjects
    std::string origin;  // node owning the supervisor
    std::map<std::string, std::string> bindings;
};

nlohmann::json header_fields(const InstanceHeader& h);

struct ReplayResult {
    InstanceState state;
    InstanceHeader header;
    // Log effects the step function derived but the log does not hold yet
    // (the crash hit in the middle of a step).
    std::map<std::string, std::vector<LogEffect>> pending;
    std::map<std::string, std::int64_t> last_delivered;  // "<instance>/<from>" -> seq
    std::map<std::string, ActorStatus> pre_crash;        // crashed subject -> status before
    std::map<std::string, std::vector<std::int64_t>> restarts;  // subject -> RESTARTED timestamps
};

std::string delivery_key(const Envelope& e);

// Throws Error("LogCorrupt") or Error("BundleMismatch").
ReplayResult replay_log(const std::vector<EventRecord>& log, const compile::Bundle& b);
InstanceState checkpoint_replay(const std::vector<EventRecord>& log, const compile::Bundle& b);

struct Metrics {
    std::int64_t started_ts = 0;
    std::int64_t instance_duration_ms = 0;  // up to INSTANCE_COMPLETED, else up to `now`
    bool complete = false;
    std::map<std::string, std::int64_t> wait_ms;  // per subject: time in awaiting_task/awaiting_message
};

// Pure function of the log; `now` closes intervals still open.
Metrics compute_metrics(const std::vector<EventRecord>& log, const compile::Bundle& b,
                        std::optional<std::int64_t> now = std::nullopt);
nlohmann::json to_json(const Metrics& m);

}  // namespace sbpm::runtime
