#include "sbpm/runtime/replay.hpp"

#include <deque>

namespace sbpm::runtime {

namespace {

const char* const kHeaderKeys[] = {"initial", "instance", "bundle", "node", "origin", "bindings"};

[[noreturn]] void corrupt(const EventRecord& r, const std::string& why) {
    throw Error("LogCorrupt", "record " + std::to_string(r.seq) + " (" + std::string(to_string(r.kind)) + " " +
                                  r.subject + "): " + why);
}

json strip_header(json data) {
    for (const char* k : kHeaderKeys) data.erase(k);
    return data;
}

}  // namespace

std::string_view to_string(InstanceStatus s) {
    switch (s) {
        case InstanceStatus::running: return "running";
        case InstanceStatus::completed: return "completed";
        case InstanceStatus::failed: return "failed";
    }
    return "?";
}

nlohmann::json to_json(const ActorState& a, const compile::SubjectProgram& program) {
    json pool = json::array();
    for (const auto& e : a.pool) pool.push_back(to_json(e));
    const auto& st = program.states.at(a.current);
    return json{{"subject", a.subject},
                {"current", a.current},
                {"state", st.id},
                {"state_name", st.name},
                {"status", std::string(to_string(a.status))},
                {"pool", pool}};
}

nlohmann::json header_fields(const InstanceHeader& h) {
    return json{{"initial", true},  {"instance", h.instance_id}, {"bundle", h.bundle_hash},
                {"node", h.node},   {"origin", h.origin},        {"bindings", h.bindings}};
}

std::string delivery_key(const Envelope& e) { return e.instance_id + "/" + e.from_subject; }

ReplayResult replay_log(const std::vector<EventRecord>& log, const compile::Bundle& b) {
    ReplayResult out;
    InstanceState& st = out.state;
    st.bundle_hash = b.manifest.content_hash;
    std::map<std::string, std::deque<LogEffect>> expected;

    auto absorb = [&](const EventRecord& r, const std::string& subject, StepResult res, bool strip) {
        std::deque<LogEffect> logs;
        for (auto& fx : res.effects)
            if (auto* l = std::get_if<LogEffect>(&fx)) logs.push_back(std::move(*l));
        json seen = strip ? strip_header(r.data) : r.data;
        if (logs.empty() || logs.front().kind != r.kind || logs.front().data != seen)
            corrupt(r, "does not follow from the step function");
        logs.pop_front();
        expected[subject] = std::move(logs);
        st.actors[subject] = std::move(res.state);
    };

    auto replay_record = [&](const EventRecord& r, std::size_t i) {
        if (r.seq != static_cast<std::int64_t>(i)) corrupt(r, "expected seq " + std::to_string(i));
        if (st.status != InstanceStatus::running) corrupt(r, "record after instance termination");

        if (r.subject == kSupervisor) {
            if (r.kind == EventKind::INSTANCE_COMPLETED) {
                for (const auto& [s, a] : st.actors)
                    if (a.status != ActorStatus::halted) corrupt(r, s + " has not halted");
                st.status = InstanceStatus::completed;
            } else if (r.kind == EventKind::CRASHED) {
                st.status = InstanceStatus::failed;
            } else {
                corrupt(r, "unexpected supervisor record");
            }
            return;
        }

        if (r.kind == EventKind::STATE_ENTERED && r.data.value("initial", false)) {
            try {
                if (r.data.at("bundle").get<std::string>() != b.manifest.content_hash)
                    throw Error("BundleMismatch", "log was written for bundle " + r.data.at("bundle").get<std::string>());
                out.header.instance_id = r.data.at("instance").get<std::string>();
                out.header.bundle_hash = r.data.at("bundle").get<std::string>();
                out.header.node = r.data.at("node").get<std::string>();
                out.header.origin = r.data.at("origin").get<std::string>();
                out.header.bindings = r.data.at("bindings").get<std::map<std::string, std::string>>();
            } catch (const json::exception& ex) {
                corrupt(r, ex.what());
            }
            st.instance_id = out.header.instance_id;
            st.bindings = out.header.bindings;
            const auto* program = b.program(r.subject);
            if (!program) corrupt(r, "subject has no program");
            if (st.actors.count(r.subject)) corrupt(r, "subject started twice");
            absorb(r, r.subject, start_actor(StepContext{b, *program, st.instance_id}), true);
            return;
        }

        auto it = st.actors.find(r.subject);
        if (it == st.actors.end()) corrupt(r, "subject was never started");
        ActorState& actor = it->second;
        const auto& program = *b.program(r.subject);
        StepContext ctx{b, program, st.instance_id};

        if (r.kind == EventKind::MSG_DELIVERED) {
            Envelope env;
            try {
                env = envelope_from_json(r.data.at("envelope"));
            } catch (const std::exception& ex) {
                corrupt(r, ex.what());
            }
            actor.pool.push_back(env);
            out.last_delivered[delivery_key(env)] = env.seq;
            return;
        }

        auto& exp = expected[r.subject];
        if (!exp.empty()) {
            if (exp.front().kind != r.kind || exp.front().data != r.data)
                corrupt(r, "expected " + std::string(to_string(exp.front().kind)));
            exp.pop_front();
            return;
        }

        ActorEvent ev;
        switch (r.kind) {
            case EventKind::STATE_ENTERED:
                if (!actor.outgoing) corrupt(r, "state entry without a cause");
                ev = SendAck{actor.outgoing->seq};
                break;
            case EventKind::CHOICE_MADE:
                ev = TaskCompleted{r.data.value("outcome", std::string()), r.data.value("payload", json(nullptr))};
                break;
            case EventKind::MSG_CONSUMED:
                ev = MessageAvailable{};
                break;
            case EventKind::TIMEOUT_FIRED:
                ev = TimeoutElapsed{actor.epoch};
                break;
            case EventKind::CRASHED:
                out.pre_crash[r.subject] = actor.status;
                actor.status = ActorStatus::crashed;
                return;
            case EventKind::RESTARTED: {
                auto pc = out.pre_crash.find(r.subject);
                if (actor.status != ActorStatus::crashed || pc == out.pre_crash.end())
                    corrupt(r, "restart without a crash");
                actor.status = pc->second;
                out.pre_crash.erase(pc);
                out.restarts[r.subject].push_back(r.ts);
                return;
            }
            default:
                corrupt(r, "record does not follow from the step function");
        }
        StepResult res;
        try {
            res = actor_step(ctx, actor, ev);
        } catch (const Error& e) {
            corrupt(r, e.code() + ": " + e.what());
        }
        absorb(r, r.subject, std::move(res), false);
    };

    for (std::size_t i = 0; i < log.size(); ++i) {
        const EventRecord& r = log[i];
        try {
            replay_record(r, i);
        } catch (const json::exception& ex) {
            corrupt(r, ex.what());
        }
    }

    for (auto& [subject, logs] : expected)
        if (!logs.empty()) out.pending[subject].assign(logs.begin(), logs.end());
    st.log = log;

    // A shard hosts no supervisor and never writes INSTANCE_COMPLETED.
    if (st.status == InstanceStatus::running && !st.actors.empty() && out.header.node != out.header.origin) {
        bool all_halted = true;
        for (const auto& [s, a] : st.actors) all_halted = all_halted && a.status == ActorStatus::halted;
        if (all_halted && out.pending.empty()) st.status = InstanceStatus::completed;
    }
    return out;
}

InstanceState checkpoint_replay(const std::vector<EventRecord>& log, const compile::Bundle& b) {
    return replay_log(log, b).state;
}

Metrics compute_metrics(const std::vector<EventRecord>& log, const compile::Bundle& b,
                        std::optional<std::int64_t> now) {
    Metrics m;
    if (log.empty()) return m;
    m.started_ts = log.front().ts;
    std::int64_t end_ts = now.value_or(log.back().ts);
    for (const auto& r : log)
        if (r.kind == EventKind::INSTANCE_COMPLETED) {
            m.complete = true;
            end_ts = r.ts;
        }
    m.instance_duration_ms = end_ts - m.started_ts;

    std::map<std::string, std::int64_t> open;  // subject -> wait start
    for (const auto& r : log) {
        if (r.subject == kSupervisor) continue;
        m.wait_ms.emplace(r.subject, 0);
        switch (r.kind) {
            case EventKind::STATE_ENTERED: {
                const auto* program = b.program(r.subject);
                int index = r.data.value("index", -1);
                if (!program || index < 0 || index >= static_cast<int>(program->states.size())) break;
                if (!program->is_end(index)) open[r.subject] = r.ts;
                break;
            }
            case EventKind::CHOICE_MADE:
            case EventKind::MSG_CONSUMED:
            case EventKind::TIMEOUT_FIRED:
            case EventKind::MSG_SENT:
            case EventKind::CRASHED:
                if (auto it = open.find(r.subject); it != open.end()) {
                    m.wait_ms[r.subject] += r.ts - it->second;
                    open.erase(it);
                }
                break;
            default:
                break;
        }
    }
    for (const auto& [subject, since] : open) m.wait_ms[subject] += std::max<std::int64_t>(0, end_ts - since);
    return m;
}

nlohmann::json to_json(const Metrics& m) {
    return json{{"instance_duration_ms", m.instance_duration_ms},
                {"complete", m.complete},
                {"started_ts", m.started_ts},
                {"per_subject_wait_ms", m.wait_ms}};
}

}  // namespace sbpm::runtime
