#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "sbpm/compile/bundle.hpp"
#include "sbpm/runtime/envelope.hpp"
#include "sbpm/runtime/events.hpp"

namespace sbpm::runtime {

enum class ActorStatus { running, awaiting_task, awaiting_message, blocked_send, halted, crashed };

std::string_view to_string(ActorStatus s);
std::optional<ActorStatus> actor_status_from(std::string_view text);

struct ActorState {
    std::string subject;
    int current = 0;
    std::deque<Envelope> pool;
    ActorStatus status = ActorStatus::running;

    std::int64_t next_seq = 1;
    std::optional<Envelope> outgoing;  // sent, not yet acknowledged
    int outgoing_arm = -1;
    json held = nullptr;      // payload of the last completion or consumed message
    std::uint64_t epoch = 0;  // bumped on every state entry; stale timers and tasks carry an older one

    bool operator==(const ActorState&) const = default;
};

// Inputs to the step function.
struct TaskCompleted {
    std::string outcome;
    json payload = nullptr;
};
struct MessageAvailable {};
struct TimeoutElapsed {
    std::uint64_t epoch = 0;
};
struct SendAck {
    std::int64_t seq = 0;
};
struct SendNack {
    std::int64_t seq = 0;
};
struct PoolDrained {};  // the target of a blocked send freed a slot

using ActorEvent = std::variant<TaskCompleted, MessageAvailable, TimeoutElapsed, SendAck, SendNack, PoolDrained>;

enum class TaskKind { choose_outcome, provide_send_payload };
std::string_view to_string(TaskKind k);

struct TaskOption {
    std::string outcome;  // outcome name, or message id for payload tasks
    std::optional<std::string> to;
    std::optional<std::string> bo;
    bool operator==(const TaskOption&) const = default;
};

// Outputs of the step function.
struct LogEffect {
    EventKind kind;
    json data;
    bool operator==(const LogEffect&) const = default;
};
struct SendEffect {
    Envelope envelope;
};
struct OpenTaskEffect {
    TaskKind kind;
    std::vector<TaskOption> options;
    std::optional<std::string> refinement;
};
struct ArmTimerEffect {
    std::int64_t ms = 0;
    std::uint64_t epoch = 0;
};
struct SlotFreedEffect {};  // this actor consumed from its pool
struct WarnEffect {
    std::string code;
    std::string message;
};

using Effect = std::variant<LogEffect, SendEffect, OpenTaskEffect, ArmTimerEffect, SlotFreedEffect, WarnEffect>;

struct StepContext {
    const compile::Bundle& bundle;
    const compile::SubjectProgram& program;
    std::string instance_id;
};

struct StepResult {
    ActorState state;
    std::vector<Effect> effects;
};

// Actor entered at its start state.
StepResult start_actor(const StepContext& ctx);

// Deterministic transition. Throws Error("NoSuchOutcome") or
// Error("PayloadInvalid") without touching the state.
StepResult actor_step(const StepContext& ctx, ActorState state, const ActorEvent& event);

// The task or timer an actor at rest is waiting on, rederived from state.
std::optional<OpenTaskEffect> pending_task(const StepContext& ctx, const ActorState& state);

}  // namespace sbpm::runtime
