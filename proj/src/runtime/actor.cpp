#include "sbpm/runtime/actor.hpp"

#include <array>

namespace sbpm::runtime {

using compile::EmitSelector;
using compile::IrState;
using compile::MatchSelector;
using compile::OutcomeSelector;
using model::StateKind;

namespace {

constexpr std::array<std::pair<ActorStatus, std::string_view>, 6> kStatusNames{{
    {ActorStatus::running, "running"},
    {ActorStatus::awaiting_task, "awaiting_task"},
    {ActorStatus::awaiting_message, "awaiting_message"},
    {ActorStatus::blocked_send, "blocked_send"},
    {ActorStatus::halted, "halted"},
    {ActorStatus::crashed, "crashed"},
}};

}  // namespace

std::string_view to_string(ActorStatus s) {
    for (const auto& [k, n] : kStatusNames)
        if (k == s) return n;
    return "?";
}

std::optional<ActorStatus> actor_status_from(std::string_view text) {
    for (const auto& [k, n] : kStatusNames)
        if (n == text) return k;
    return std::nullopt;
}

std::string_view to_string(TaskKind k) {
    return k == TaskKind::choose_outcome ? "choose_outcome" : "provide_send_payload";
}

std::optional<OpenTaskEffect> pending_task(const StepContext& ctx, const ActorState& s) {
    if (s.status != ActorStatus::awaiting_task) return std::nullopt;
    const IrState& st = ctx.program.states.at(s.current);
    OpenTaskEffect task;
    if (st.kind == StateKind::function) {
        task.kind = TaskKind::choose_outcome;
        task.refinement = st.refinement;
        for (const auto& arm : st.arms)
            if (const auto* o = std::get_if<OutcomeSelector>(&arm.selector)) task.options.push_back({o->outcome, {}, {}});
    } else {
        task.kind = TaskKind::provide_send_payload;
        for (const auto& arm : st.arms)
            if (const auto* e = std::get_if<EmitSelector>(&arm.selector))
                task.options.push_back({e->message, e->to, e->bo});
    }
    return task;
}

namespace {

class Stepper {
public:
    Stepper(const StepContext& ctx, ActorState s) : ctx_(ctx), s_(std::move(s)) {}

    StepResult finish() { return StepResult{std::move(s_), std::move(fx_)}; }

    void enter(int index) {
        s_.current = index;
        ++s_.epoch;
        s_.outgoing.reset();
        s_.outgoing_arm = -1;
        const IrState& st = current();
        log(EventKind::STATE_ENTERED, {{"state", st.id}, {"index", index}, {"name", st.name}});

        if (ctx_.program.is_end(index)) {
            s_.status = ActorStatus::halted;
            log(EventKind::SUBJECT_HALTED, {{"state", st.id}, {"unconsumed", s_.pool.size()}});
            if (!s_.pool.empty())
                fx_.push_back(WarnEffect{"unconsumed", s_.subject + " halted with " + std::to_string(s_.pool.size()) +
                                                           " unconsumed message(s)"});
            return;
        }
        switch (st.kind) {
            case StateKind::function:
                await_task();
                break;
            case StateKind::send:
                if (st.arms.size() == 1) {
                    const auto& sel = std::get<EmitSelector>(st.arms[0].selector);
                    const model::BoSchema* schema = schema_of(sel);
                    if (!schema) {
                        emit(0, nullptr);
                        return;
                    }
                    if (payload_valid(s_.held, schema)) {
                        emit(0, s_.held);
                        return;
                    }
                }
                await_task();
                break;
            case StateKind::receive:
                s_.status = ActorStatus::awaiting_message;
                if (st.has_timeout_arm() && st.timeout_ms) fx_.push_back(ArmTimerEffect{*st.timeout_ms, s_.epoch});
                break;
        }
    }

    void on(const TaskCompleted& ev) {
        if (s_.status != ActorStatus::awaiting_task)
            throw Error("TaskGone", s_.subject + " is not waiting for a task");
        const IrState& st = current();
        if (st.kind == StateKind::function) {
            const compile::IrArm* arm = nullptr;
            for (const auto& a : st.arms)
                if (const auto* o = std::get_if<OutcomeSelector>(&a.selector); o && o->outcome == ev.outcome) arm = &a;
            if (!arm) throw Error("NoSuchOutcome", "state " + st.id + " has no outcome '" + ev.outcome + "'");
            check_forwarded_payload(ev.payload, arm->target);
            log(EventKind::CHOICE_MADE, {{"state", st.id}, {"outcome", ev.outcome}, {"payload", ev.payload}});
            if (!ev.payload.is_null()) s_.held = ev.payload;
            enter(arm->target);
            return;
        }
        for (std::size_t i = 0; i < st.arms.size(); ++i) {
            const auto& sel = std::get<EmitSelector>(st.arms[i].selector);
            if (sel.message != ev.outcome) continue;
            const model::BoSchema* schema = schema_of(sel);
            validate_payload(ev.payload, schema);
            log(EventKind::CHOICE_MADE, {{"state", st.id}, {"outcome", ev.outcome}, {"payload", ev.payload}});
            if (!ev.payload.is_null()) s_.held = ev.payload;
            emit(static_cast<int>(i), schema ? ev.payload : json(nullptr));
            return;
        }
        throw Error("NoSuchOutcome", "send state " + st.id + " has no message '" + ev.outcome + "'");
    }

    void on(const MessageAvailable&) {
        if (s_.status != ActorStatus::awaiting_message) return;
        const IrState& st = current();
        for (auto it = s_.pool.begin(); it != s_.pool.end(); ++it) {
            for (const auto& arm : st.arms) {
                const auto* m = std::get_if<MatchSelector>(&arm.selector);
                if (!m || m->message != it->message_id || m->from != it->from_subject) continue;
                Envelope env = *it;
                s_.pool.erase(it);
                log(EventKind::MSG_CONSUMED, {{"message", env.message_id},
                                              {"from", env.from_subject},
                                              {"seq", env.seq},
                                              {"correlation_id", env.correlation_id}});
                if (!env.payload.is_null()) s_.held = env.payload;
                fx_.push_back(SlotFreedEffect{});
                enter(arm.target);
                return;
            }
        }
    }

    void on(const TimeoutElapsed& ev) {
        if (s_.status != ActorStatus::awaiting_message || ev.epoch != s_.epoch) return;
        const IrState& st = current();
        if (!st.has_timeout_arm()) return;
        log(EventKind::TIMEOUT_FIRED, {{"state", st.id}});
        enter(st.arms.back().target);
    }

    void on(const SendAck& ev) {
        if (!s_.outgoing || s_.outgoing->seq != ev.seq) return;
        if (s_.status != ActorStatus::running && s_.status != ActorStatus::blocked_send) return;
        s_.next_seq = ev.seq + 1;
        enter(current().arms.at(s_.outgoing_arm).target);
    }

    void on(const SendNack& ev) {
        if (s_.outgoing && s_.outgoing->seq == ev.seq && s_.status == ActorStatus::running)
            s_.status = ActorStatus::blocked_send;
    }

    void on(const PoolDrained&) {
        if (s_.status != ActorStatus::blocked_send || !s_.outgoing) return;
        s_.status = ActorStatus::running;
        fx_.push_back(SendEffect{*s_.outgoing});
    }

private:
    const IrState& current() const { return ctx_.program.states.at(s_.current); }

    void log(EventKind kind, json data) { fx_.push_back(LogEffect{kind, std::move(data)}); }

    const model::BoSchema* schema_of(const EmitSelector& sel) const {
        return sel.bo ? ctx_.bundle.schema(*sel.bo) : nullptr;
    }

    void await_task() {
        s_.status = ActorStatus::awaiting_task;
        fx_.push_back(*pending_task(ctx_, s_));
    }

    // A payload handed over with an outcome that leads into a single-arm send
    // has to fit the message it will travel in.
    void check_forwarded_payload(const json& payload, int target) const {
        if (payload.is_null()) return;
        const IrState& next = ctx_.program.states.at(target);
        if (next.kind != StateKind::send || next.arms.size() != 1) return;
        const auto& sel = std::get<EmitSelector>(next.arms[0].selector);
        if (const auto* schema = schema_of(sel)) validate_payload(payload, schema);
    }

    void emit(int arm, json payload) {
        const auto& sel = std::get<EmitSelector>(current().arms.at(arm).selector);
        Envelope env;
        env.instance_id = ctx_.instance_id;
        env.from_subject = s_.subject;
        env.to_subject = sel.to;
        env.message_id = sel.message;
        env.seq = s_.next_seq;
        env.correlation_id = derived_uuid(ctx_.instance_id + "/" + s_.subject + "/" + std::to_string(env.seq));
        env.payload = std::move(payload);
        s_.outgoing = env;
        s_.outgoing_arm = arm;
        s_.status = ActorStatus::running;
        log(EventKind::MSG_SENT, {{"to", env.to_subject},
                                  {"message", env.message_id},
                                  {"seq", env.seq},
                                  {"correlation_id", env.correlation_id},
                                  {"payload", env.payload}});
        fx_.push_back(SendEffect{std::move(env)});
    }

    const StepContext& ctx_;
    ActorState s_;
    std::vector<Effect> fx_;
};

}  // namespace

StepResult start_actor(const StepContext& ctx) {
    ActorState s;
    s.subject = ctx.program.subject;
    Stepper st(ctx, std::move(s));
    st.enter(ctx.program.start_index);
    return st.finish();
}

StepResult actor_step(const StepContext& ctx, ActorState state, const ActorEvent& event) {
    if (state.status == ActorStatus::halted || state.status == ActorStatus::crashed) {
        if (std::holds_alternative<TaskCompleted>(event))
            throw Error("TaskGone", state.subject + " is " + std::string(to_string(state.status)));
        return StepResult{std::move(state), {}};
    }
    Stepper st(ctx, std::move(state));
    std::visit([&](const auto& ev) { st.on(ev); }, event);
    return st.finish();
}

}  // namespace sbpm::runtime
