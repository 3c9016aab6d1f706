#include <algorithm>
#include <deque>
#include <set>
#include <sstream>

#include "sbpm/model/model_io.hpp"
#include "sbpm/validate/validate.hpp"

namespace sbpm::validate {

using namespace sbpm::model;

std::string_view to_string(Severity s) {
    switch (s) {
        case Severity::error: return "error";
        case Severity::warning: return "warning";
        case Severity::info: return "info";
    }
    return "error";
}

std::string_view to_string(Verdict v) {
    switch (v) {
        case Verdict::sound: return "sound";
        case Verdict::unsound: return "unsound";
        case Verdict::inconclusive: return "inconclusive";
    }
    return "inconclusive";
}

std::string_view to_string(GlobalStep::Kind kind) {
    switch (kind) {
        case GlobalStep::Kind::choose: return "choose";
        case GlobalStep::Kind::send: return "send";
        case GlobalStep::Kind::consume: return "consume";
        case GlobalStep::Kind::timeout: return "timeout";
    }
    return "choose";
}

bool has_errors(const std::vector<Diagnostic>& diagnostics) {
    return std::any_of(diagnostics.begin(), diagnostics.end(),
                       [](const Diagnostic& d) { return d.severity == Severity::error; });
}

namespace {

Diagnostic make(Severity sev, const char* code, std::string file, std::string element, std::string message) {
    return Diagnostic{sev, code, Location{std::move(file), std::move(element)}, std::move(message)};
}

std::vector<bool> forward_reachable(const BehaviorGraph& g) {
    std::vector<bool> seen(g.states.size(), false);
    std::deque<std::size_t> queue;
    for (std::size_t i = 0; i < g.states.size(); ++i) {
        if (g.states[i].start) {
            seen[i] = true;
            queue.push_back(i);
        }
    }
    while (!queue.empty()) {
        std::size_t cur = queue.front();
        queue.pop_front();
        for (const auto& t : g.transitions) {
            if (t.from != g.states[cur].id) continue;
            auto target = g.index_of(t.to);
            if (target && !seen[*target]) {
                seen[*target] = true;
                queue.push_back(*target);
            }
        }
    }
    return seen;
}

std::vector<bool> reaches_end(const BehaviorGraph& g) {
    std::vector<bool> good(g.states.size(), false);
    for (std::size_t i = 0; i < g.states.size(); ++i) good[i] = g.states[i].end;
    bool changed = true;
    while (changed) {
        changed = false;
        for (const auto& t : g.transitions) {
            auto from = g.index_of(t.from);
            auto to = g.index_of(t.to);
            if (from && to && good[*to] && !good[*from]) {
                good[*from] = true;
                changed = true;
            }
        }
    }
    return good;
}

}  // namespace

std::vector<Diagnostic> check_structure(const ProcessModel& m) {
    std::vector<Diagnostic> out;
    for (const auto& [subject, g] : m.behaviors) {
        const std::string file = behavior_file_name(subject);

        auto reachable = forward_reachable(g);
        for (std::size_t i = 0; i < g.states.size(); ++i) {
            if (!reachable[i])
                out.push_back(make(Severity::error, codes::kUnreachableState, file, g.states[i].id,
                                   "state '" + g.states[i].id + "' is unreachable from the start state"));
        }

        auto good = reaches_end(g);
        for (std::size_t i = 0; i < g.states.size(); ++i) {
            if (!good[i])
                out.push_back(make(Severity::warning, codes::kNoEndReachable, file, g.states[i].id,
                                   "no end state is reachable from state '" + g.states[i].id + "'"));
        }

        for (const auto& st : g.states) {
            std::vector<TransitionLabel> seen;
            std::set<std::string> reported;
            for (const Transition* t : g.outgoing(st.id)) {
                if (std::find(seen.begin(), seen.end(), t->label) != seen.end()) {
                    std::string text = describe(t->label);
                    if (reported.insert(text).second)
                        out.push_back(make(Severity::error, codes::kDuplicateLabel, file, st.id,
                                           "state '" + st.id + "' has duplicate transition label '" + text + "'"));
                } else {
                    seen.push_back(t->label);
                }
            }
        }

        for (const auto& st : g.states) {
            if (st.end && !g.outgoing(st.id).empty())
                out.push_back(make(Severity::error, codes::kEndHasOutgoing, file, st.id,
                                   "end state '" + st.id + "' has outgoing transitions"));
        }
    }
    return out;
}

std::vector<Diagnostic> check_interfaces(const ProcessModel& m) {
    std::vector<Diagnostic> out;
    for (const auto& [subject, g] : m.behaviors) {
        const std::string file = behavior_file_name(subject);
        for (const auto& t : g.transitions) {
            if (const auto* send = std::get_if<SendLabel>(&t.label)) {
                const MessageDecl* msg = m.find_message(send->message);
                if (msg && (msg->from != subject || msg->to != send->to_subject))
                    out.push_back(make(Severity::error, codes::kSendDirection, file, t.from,
                                       "state '" + t.from + "' sends '" + send->message + "' to '" + send->to_subject +
                                           "' but the message is declared " + msg->from + " -> " + msg->to));
            } else if (const auto* recv = std::get_if<ReceiveLabel>(&t.label)) {
                const MessageDecl* msg = m.find_message(recv->message);
                if (msg && (msg->to != subject || msg->from != recv->from_subject))
                    out.push_back(make(Severity::error, codes::kReceiveDirection, file, t.from,
                                       "state '" + t.from + "' receives '" + recv->message + "' from '" +
                                           recv->from_subject + "' but the message is declared " + msg->from + " -> " +
                                           msg->to));
            }
        }
    }

    for (const auto& msg : m.messages) {
        const SubjectDecl* sender = m.find_subject(msg.from);
        const SubjectDecl* receiver = m.find_subject(msg.to);
        if (!sender || sender->external) continue;

        bool sent = false;
        if (auto it = m.behaviors.find(msg.from); it != m.behaviors.end()) {
            sent = std::any_of(it->second.transitions.begin(), it->second.transitions.end(), [&](const Transition& t) {
                const auto* l = std::get_if<SendLabel>(&t.label);
                return l && l->message == msg.id && l->to_subject == msg.to;
            });
        }
        if (!sent) {
            out.push_back(make(Severity::warning, codes::kNeverSent, kSidFile, msg.id,
                               "message '" + msg.id + "' is declared but never sent"));
            continue;
        }
        if (!receiver || receiver->external) continue;
        bool received = false;
        if (auto it = m.behaviors.find(msg.to); it != m.behaviors.end()) {
            received = std::any_of(it->second.transitions.begin(), it->second.transitions.end(), [&](const Transition& t) {
                const auto* l = std::get_if<ReceiveLabel>(&t.label);
                return l && l->message == msg.id && l->from_subject == msg.from;
            });
        }
        if (!received)
            out.push_back(make(Severity::warning, codes::kNeverReceived, kSidFile, msg.id,
                               "message '" + msg.id + "' is sent but no receive transition of '" + msg.to +
                                   "' accepts it"));
    }
    return out;
}

ValidationResult validate(const ProcessModel& m, const SoundnessOptions& opts) {
    ValidationResult result;
    result.diagnostics = check_structure(m);
    auto iface = check_interfaces(m);
    result.diagnostics.insert(result.diagnostics.end(), iface.begin(), iface.end());

    if (has_errors(result.diagnostics)) {
        result.soundness.verdict = Verdict::inconclusive;
        result.soundness.pool_bound = opts.pool_bound;
        result.diagnostics.push_back(make(Severity::info, codes::kSoundnessSkipped, kSidFile, m.id,
                                          "soundness check skipped because of static errors"));
        return result;
    }
    result.soundness = check_soundness(m, opts);
    result.diagnostics.insert(result.diagnostics.end(), result.soundness.diagnostics.begin(),
                              result.soundness.diagnostics.end());
    return result;
}

nlohmann::json to_json(const Diagnostic& d) {
    return {{"severity", to_string(d.severity)},
            {"code", d.code},
            {"location", {{"file", d.location.file}, {"element", d.location.element}}},
            {"message", d.message}};
}

nlohmann::json to_json(const GlobalStep& s) {
    nlohmann::json j = {{"kind", to_string(s.kind)}, {"subject", s.subject}};
    if (!s.label.empty()) j["label"] = s.label;
    if (!s.peer.empty()) j["peer"] = s.peer;
    return j;
}

nlohmann::json to_json(const ProductState& p) {
    nlohmann::json subjects = nlohmann::json::object();
    for (const auto& [subject, state] : p.locations) {
        nlohmann::json pool = nlohmann::json::array();
        if (auto it = p.pools.find(subject); it != p.pools.end())
            for (const auto& e : it->second) pool.push_back({{"message", e.message}, {"from", e.from}});
        nlohmann::json entry = {{"state", state}, {"pool", pool}};
        if (auto it = p.committed.find(subject); it != p.committed.end() && !it->second.empty())
            entry["committed"] = it->second;
        subjects[subject] = entry;
    }
    return subjects;
}

nlohmann::json to_json(const ValidationResult& r) {
    nlohmann::json diags = nlohmann::json::array();
    for (const auto& d : r.diagnostics) diags.push_back(to_json(d));
    nlohmann::json soundness = {{"verdict", to_string(r.soundness.verdict)},
                                {"explored", r.soundness.explored},
                                {"cap_hit", r.soundness.cap_hit},
                                {"pool_bound", r.soundness.pool_bound},
                                {"counterexample", nullptr}};
    if (r.soundness.counterexample) {
        nlohmann::json trace = nlohmann::json::array();
        for (const auto& step : *r.soundness.counterexample) trace.push_back(to_json(step));
        soundness["counterexample"] = trace;
    }
    if (r.soundness.deadlock) soundness["deadlock"] = to_json(*r.soundness.deadlock);
    return {{"diagnostics", diags}, {"soundness", soundness}};
}

std::string to_text(const ValidationResult& r) {
    std::ostringstream out;
    for (const auto& d : r.diagnostics) {
        out << to_string(d.severity) << ' ' << d.code << ' ' << d.location.file;
        if (!d.location.element.empty()) out << '#' << d.location.element;
        out << ": " << d.message << '\n';
    }
    out << "soundness: " << to_string(r.soundness.verdict) << " (explored " << r.soundness.explored
        << " states, pool bound " << r.soundness.pool_bound << (r.soundness.cap_hit ? ", state cap hit" : "") << ")\n";
    if (r.soundness.counterexample) {
        out << "counterexample (" << r.soundness.counterexample->size() << " steps):\n";
        for (const auto& step : *r.soundness.counterexample) {
            out << "  " << step.subject << ' ' << to_string(step.kind);
            if (!step.label.empty()) out << ' ' << step.label;
            if (step.kind == GlobalStep::Kind::send && !step.peer.empty()) out << " to " << step.peer;
            if (step.kind == GlobalStep::Kind::consume && !step.peer.empty()) out << " from " << step.peer;
            out << '\n';
        }
        if (r.soundness.deadlock) {
            out << "deadlocked in:\n";
            for (const auto& [subject, state] : r.soundness.deadlock->locations) {
                out << "  " << subject << " @ " << state;
                auto it = r.soundness.deadlock->pools.find(subject);
                if (it != r.soundness.deadlock->pools.end() && !it->second.empty()) {
                    out << " pool=[";
                    for (std::size_t i = 0; i < it->second.size(); ++i)
                        out << (i ? ", " : "") << it->second[i].message << " from " << it->second[i].from;
                    out << ']';
                }
                out << '\n';
            }
        }
    }
    return out.str();
}

}  // namespace sbpm::validate
