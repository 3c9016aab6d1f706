#include "support/harness.hpp"

#include <stdexcept>

#include "sbpm/runtime/actor.hpp"

namespace sbpm::testing {

using namespace sbpm::model;
using nlohmann::json;

namespace {

json sample_fields(const std::vector<BoField>& fields) {
    json out = json::object();
    for (const auto& f : fields) {
        switch (f.type) {
            case FieldType::string: out[f.name] = "x-" + f.name; break;
            case FieldType::number: out[f.name] = 3; break;
            case FieldType::boolean: out[f.name] = true; break;
            case FieldType::record: out[f.name] = sample_fields(f.children); break;
            case FieldType::list: out[f.name] = json::array({sample_fields(f.children), sample_fields(f.children)}); break;
        }
    }
    return out;
}

}  // namespace

json sample_payload(const BoSchema& schema) { return sample_fields(schema.fields); }

GraphInterpreter::GraphInterpreter(const ProcessModel& m, const std::string& subject) : g_(m.behaviors.at(subject)) {
    for (const auto& s : g_.states)
        if (s.start) enter(s.id);
}

const State& GraphInterpreter::current() const { return *g_.find_state(state_); }

bool GraphInterpreter::at_end() const { return current().end; }

void GraphInterpreter::enter(const std::string& state) {
    state_ = state;
    in_flight_.reset();
    if (current().kind != StateKind::send) return;
    std::vector<std::size_t> sends;
    for (std::size_t i = 0; i < g_.transitions.size(); ++i)
        if (g_.transitions[i].from == state_) sends.push_back(i);
    if (sends.size() == 1) in_flight_ = sends[0];
}

void GraphInterpreter::choose(const std::string& label) {
    if (at_end()) return;
    for (std::size_t i = 0; i < g_.transitions.size(); ++i) {
        const Transition& t = g_.transitions[i];
        if (t.from != state_) continue;
        if (current().kind == StateKind::function) {
            if (const auto* o = std::get_if<OutcomeLabel>(&t.label); o && o->name == label) return enter(t.to);
        } else if (current().kind == StateKind::send && !in_flight_) {
            if (const auto* s = std::get_if<SendLabel>(&t.label); s && s->message == label) {
                in_flight_ = i;
                return;
            }
        }
    }
}

void GraphInterpreter::deliver(const std::string& message, const std::string& from) { pool_.emplace_back(message, from); }

void GraphInterpreter::message_available() {
    if (current().kind != StateKind::receive) return;
    for (auto it = pool_.begin(); it != pool_.end(); ++it)
        for (const auto& t : g_.transitions) {
            if (t.from != state_) continue;
            const auto* r = std::get_if<ReceiveLabel>(&t.label);
            if (r && r->message == it->first && r->from_subject == it->second) {
                pool_.erase(it);
                return enter(t.to);
            }
        }
}

void GraphInterpreter::timeout() {
    if (current().kind != StateKind::receive) return;
    for (const auto& t : g_.transitions)
        if (t.from == state_ && std::holds_alternative<TimeoutLabel>(t.label)) return enter(t.to);
}

void GraphInterpreter::ack() {
    if (current().kind == StateKind::send && in_flight_) enter(g_.transitions[*in_flight_].to);
}

validate::ProductState replay_counterexample(const compile::Bundle& b, const std::vector<validate::GlobalStep>& path,
                                             int pool_bound) {
    using namespace sbpm::runtime;
    std::map<std::string, ActorState> actors;
    auto ctx = [&](const std::string& s) { return StepContext{b, *b.program(s), "replay"}; };
    auto settle = [&](const std::string& s) {
        // A single-arm send whose payload is not at hand yet commits with a sample.
        ActorState& a = actors.at(s);
        const auto& st = b.program(s)->states.at(a.current);
        if (a.status != ActorStatus::awaiting_task || st.kind != StateKind::send || st.arms.size() != 1) return;
        const auto& sel = std::get<compile::EmitSelector>(st.arms[0].selector);
        a = actor_step(ctx(s), a, TaskCompleted{sel.message, sample_payload(*b.schema(*sel.bo))}).state;
    };
    for (const auto& p : b.programs) {
        actors[p.subject] = start_actor(ctx(p.subject)).state;
        settle(p.subject);
    }
    for (const auto& step : path) {
        auto it = actors.find(step.subject);
        if (it == actors.end()) throw std::runtime_error("unknown subject " + step.subject);
        ActorState& a = it->second;
        const auto& st = b.program(step.subject)->states.at(a.current);
        switch (step.kind) {
            case validate::GlobalStep::Kind::choose: {
                json payload = nullptr;
                if (st.kind == StateKind::send)
                    for (const auto& arm : st.arms)
                        if (const auto* e = std::get_if<compile::EmitSelector>(&arm.selector);
                            e && e->message == step.label && e->bo)
                            payload = sample_payload(*b.schema(*e->bo));
                a = actor_step(ctx(step.subject), a, TaskCompleted{step.label, payload}).state;
                break;
            }
            case validate::GlobalStep::Kind::send: {
                if (!a.outgoing || a.outgoing->message_id != step.label || a.outgoing->to_subject != step.peer)
                    throw std::runtime_error("send of " + step.label + " is not pending at " + step.subject);
                ActorState& target = actors.at(step.peer);
                std::size_t cap = static_cast<std::size_t>(
                    std::max(1, std::min(pool_bound, b.subject(step.peer)->pool_capacity)));
                if (target.pool.size() >= cap) throw std::runtime_error("pool of " + step.peer + " is full");
                target.pool.push_back(*a.outgoing);
                a = actor_step(ctx(step.subject), a, SendAck{a.outgoing->seq}).state;
                break;
            }
            case validate::GlobalStep::Kind::consume: {
                auto res = actor_step(ctx(step.subject), a, MessageAvailable{});
                bool matched = false;
                for (const auto& fx : res.effects)
                    if (const auto* l = std::get_if<LogEffect>(&fx); l && l->kind == EventKind::MSG_CONSUMED)
                        matched = l->data["message"] == step.label && l->data["from"] == step.peer;
                if (!matched) throw std::runtime_error("consume of " + step.label + " did not happen");
                a = res.state;
                break;
            }
            case validate::GlobalStep::Kind::timeout: {
                auto res = actor_step(ctx(step.subject), a, TimeoutElapsed{a.epoch});
                if (res.state.current == a.current && res.state.epoch == a.epoch)
                    throw std::runtime_error("timeout not enabled at " + step.subject);
                a = res.state;
                break;
            }
        }
        settle(step.subject);
    }
    validate::ProductState out;
    for (const auto& [s, a] : actors) {
        out.locations[s] = b.program(s)->states.at(a.current).id;
        out.committed[s] = a.outgoing ? a.outgoing->message_id : "";
        auto& pool = out.pools[s];
        for (const auto& e : a.pool) pool.push_back(validate::PoolEntry{e.message_id, e.from_subject});
    }
    return out;
}

}  // namespace sbpm::testing
