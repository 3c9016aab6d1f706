#include <algorithm>
#include <deque>
#include <unordered_map>

#include "sbpm/model/model_io.hpp"
#include "sbpm/validate/validate.hpp"

namespace sbpm::validate {

using namespace sbpm::model;

namespace {

// Compact, index-based view of the model used during exploration. Subjects
// are sorted by id and arms keep document order, which fixes the BFS order.
struct Arm {
    TransitionLabel label;
    int message = -1;  // send/receive
    int peer = -1;     // send: target subject, receive: expected sender
    int target = 0;
};

struct CompiledState {
    std::string id;
    StateKind kind = StateKind::function;
    bool end = false;
    std::vector<Arm> arms;  // non-timeout arms, document order
    int timeout_target = -1;
};

struct CompiledSubject {
    std::string id;
    int capacity = 1;
    int start = 0;
    std::vector<CompiledState> states;
};

struct Compiled {
    std::vector<CompiledSubject> subjects;
    std::vector<std::string> messages;
};

int index_in(const std::vector<std::string>& names, const std::string& name) {
    auto it = std::lower_bound(names.begin(), names.end(), name);
    return (it != names.end() && *it == name) ? static_cast<int>(it - names.begin()) : -1;
}

Compiled compile_for_exploration(const ProcessModel& m, int pool_bound) {
    Compiled c;
    std::vector<std::string> subject_ids;
    for (const auto& s : m.subjects) subject_ids.push_back(s.id);
    std::sort(subject_ids.begin(), subject_ids.end());
    for (const auto& msg : m.messages) c.messages.push_back(msg.id);
    std::sort(c.messages.begin(), c.messages.end());

    for (const auto& sid : subject_ids) {
        const SubjectDecl* decl = m.find_subject(sid);
        const BehaviorGraph& g = m.behaviors.at(sid);
        CompiledSubject cs;
        cs.id = sid;
        cs.capacity = std::max(1, std::min(pool_bound, decl->pool_capacity));
        for (std::size_t i = 0; i < g.states.size(); ++i) {
            const State& st = g.states[i];
            if (st.start) cs.start = static_cast<int>(i);
            CompiledState state;
            state.id = st.id;
            state.kind = st.kind;
            state.end = st.end;
            for (const Transition* t : g.outgoing(st.id)) {
                int target = static_cast<int>(*g.index_of(t->to));
                if (std::holds_alternative<TimeoutLabel>(t->label)) {
                    state.timeout_target = target;
                    continue;
                }
                Arm arm;
                arm.label = t->label;
                arm.target = target;
                if (const auto* s = std::get_if<SendLabel>(&t->label)) {
                    arm.message = index_in(c.messages, s->message);
                    arm.peer = index_in(subject_ids, s->to_subject);
                } else if (const auto* r = std::get_if<ReceiveLabel>(&t->label)) {
                    arm.message = index_in(c.messages, r->message);
                    arm.peer = index_in(subject_ids, r->from_subject);
                }
                state.arms.push_back(std::move(arm));
            }
            cs.states.push_back(std::move(state));
        }
        c.subjects.push_back(std::move(cs));
    }
    return c;
}

struct Config {
    std::vector<int> location;
    std::vector<int> committed;  // send states: arm index or -1
    std::vector<std::vector<std::pair<int, int>>> pools;

    std::string key() const {
        std::string k;
        for (std::size_t i = 0; i < location.size(); ++i) {
            k.push_back(static_cast<char>(location[i]));
            k.push_back(static_cast<char>(committed[i] + 1));
            k.push_back(static_cast<char>(pools[i].size()));
            for (const auto& [msg, from] : pools[i]) {
                k.push_back(static_cast<char>(msg & 0xff));
                k.push_back(static_cast<char>(msg >> 8));
                k.push_back(static_cast<char>(from));
            }
        }
        return k;
    }
};

class Explorer {
public:
    explicit Explorer(const Compiled& c) : c_(c) {}

    Config initial() const {
        Config cfg;
        const std::size_t n = c_.subjects.size();
        cfg.location.resize(n);
        cfg.committed.assign(n, -1);
        cfg.pools.resize(n);
        for (std::size_t i = 0; i < n; ++i) enter(cfg, i, c_.subjects[i].start);
        return cfg;
    }

    template <typename Visit>
    void successors(const Config& cfg, Visit&& visit) const {
        for (std::size_t i = 0; i < c_.subjects.size(); ++i) {
            const CompiledSubject& subj = c_.subjects[i];
            const CompiledState& st = subj.states[static_cast<std::size_t>(cfg.location[i])];
            if (st.end) continue;
            switch (st.kind) {
                case StateKind::function:
                    for (const Arm& arm : st.arms) {
                        Config next = cfg;
                        enter(next, i, arm.target);
                        visit(std::move(next), GlobalStep{GlobalStep::Kind::choose, subj.id,
                                                          std::get<OutcomeLabel>(arm.label).name, ""});
                    }
                    break;
                case StateKind::send:
                    if (cfg.committed[i] < 0) {
                        for (std::size_t a = 0; a < st.arms.size(); ++a) {
                            Config next = cfg;
                            next.committed[i] = static_cast<int>(a);
                            visit(std::move(next), GlobalStep{GlobalStep::Kind::choose, subj.id,
                                                              std::get<SendLabel>(st.arms[a].label).message, ""});
                        }
                    } else {
                        const Arm& arm = st.arms[static_cast<std::size_t>(cfg.committed[i])];
                        const auto target = static_cast<std::size_t>(arm.peer);
                        if (static_cast<int>(cfg.pools[target].size()) < c_.subjects[target].capacity) {
                            Config next = cfg;
                            next.pools[target].emplace_back(arm.message, static_cast<int>(i));
                            enter(next, i, arm.target);
                            const auto& label = std::get<SendLabel>(arm.label);
                            visit(std::move(next), GlobalStep{GlobalStep::Kind::send, subj.id, label.message,
                                                              label.to_subject});
                        }
                    }
                    break;
                case StateKind::receive: {
                    const auto& pool = cfg.pools[i];
                    bool matched = false;
                    for (std::size_t p = 0; p < pool.size() && !matched; ++p) {
                        for (const Arm& arm : st.arms) {
                            if (arm.message != pool[p].first || arm.peer != pool[p].second) continue;
                            Config next = cfg;
                            next.pools[i].erase(next.pools[i].begin() + static_cast<std::ptrdiff_t>(p));
                            enter(next, i, arm.target);
                            const auto& label = std::get<ReceiveLabel>(arm.label);
                            visit(std::move(next), GlobalStep{GlobalStep::Kind::consume, subj.id, label.message,
                                                              label.from_subject});
                            matched = true;
                            break;
                        }
                    }
                    if (st.timeout_target >= 0) {
                        Config next = cfg;
                        enter(next, i, st.timeout_target);
                        visit(std::move(next), GlobalStep{GlobalStep::Kind::timeout, subj.id, "", ""});
                    }
                    break;
                }
            }
        }
    }

    bool all_ended(const Config& cfg) const {
        for (std::size_t i = 0; i < c_.subjects.size(); ++i)
            if (!c_.subjects[i].states[static_cast<std::size_t>(cfg.location[i])].end) return false;
        return true;
    }

    ProductState to_product(const Config& cfg) const {
        ProductState p;
        for (std::size_t i = 0; i < c_.subjects.size(); ++i) {
            const CompiledSubject& subj = c_.subjects[i];
            const CompiledState& st = subj.states[static_cast<std::size_t>(cfg.location[i])];
            p.locations[subj.id] = st.id;
            std::string committed;
            if (st.kind == StateKind::send && cfg.committed[i] >= 0)
                committed = std::get<SendLabel>(st.arms[static_cast<std::size_t>(cfg.committed[i])].label).message;
            p.committed[subj.id] = committed;
            auto& pool = p.pools[subj.id];
            for (const auto& [msg, from] : cfg.pools[i])
                pool.push_back(PoolEntry{c_.messages[static_cast<std::size_t>(msg)],
                                         c_.subjects[static_cast<std::size_t>(from)].id});
        }
        return p;
    }

private:
    void enter(Config& cfg, std::size_t subject, int state) const {
        cfg.location[subject] = state;
        const CompiledState& st = c_.subjects[subject].states[static_cast<std::size_t>(state)];
        cfg.committed[subject] = (st.kind == StateKind::send && st.arms.size() == 1) ? 0 : -1;
    }

    const Compiled& c_;
};

}  // namespace

SoundnessReport check_soundness(const ProcessModel& m, const SoundnessOptions& opts) {
    SoundnessReport report;
    report.pool_bound = opts.pool_bound;

    if (std::any_of(m.subjects.begin(), m.subjects.end(), [](const SubjectDecl& s) { return s.external; })) {
        report.verdict = Verdict::inconclusive;
        report.diagnostics.push_back(Diagnostic{Severity::info, codes::kExternalSubjects, Location{kSidFile, m.id},
                                                "model has external subjects; interaction soundness not checked"});
        return report;
    }

    const Compiled compiled = compile_for_exploration(m, std::max(1, opts.pool_bound));
    const Explorer explorer(compiled);

    struct Node {
        Config config;
        std::ptrdiff_t parent;
        GlobalStep step;
    };
    std::vector<Node> nodes;
    std::unordered_map<std::string, std::size_t> visited;
    std::vector<bool> unconsumed_reported(compiled.subjects.size(), false);

    auto trace_to = [&](std::size_t index) {
        std::vector<GlobalStep> steps;
        for (auto cur = static_cast<std::ptrdiff_t>(index); nodes[static_cast<std::size_t>(cur)].parent >= 0;
             cur = nodes[static_cast<std::size_t>(cur)].parent)
            steps.push_back(nodes[static_cast<std::size_t>(cur)].step);
        std::reverse(steps.begin(), steps.end());
        return steps;
    };

    Config init = explorer.initial();
    visited.emplace(init.key(), 0);
    nodes.push_back(Node{std::move(init), -1, {}});

    for (std::size_t head = 0; head < nodes.size(); ++head) {
        bool any = false;
        const Config current = nodes[head].config;
        explorer.successors(current, [&](Config next, GlobalStep step) {
            any = true;
            if (report.cap_hit) return;
            std::string key = next.key();
            if (visited.count(key)) return;
            if (visited.size() >= opts.state_cap) {
                report.cap_hit = true;
                return;
            }
            visited.emplace(std::move(key), nodes.size());
            nodes.push_back(Node{std::move(next), static_cast<std::ptrdiff_t>(head), std::move(step)});
        });

        for (std::size_t i = 0; i < compiled.subjects.size(); ++i) {
            const auto& st = compiled.subjects[i].states[static_cast<std::size_t>(current.location[i])];
            if (st.end && !current.pools[i].empty() && !unconsumed_reported[i]) {
                unconsumed_reported[i] = true;
                report.diagnostics.push_back(
                    Diagnostic{Severity::warning, codes::kUnconsumed,
                               Location{behavior_file_name(compiled.subjects[i].id), st.id},
                               "subject '" + compiled.subjects[i].id + "' can end in '" + st.id +
                                   "' with unconsumed messages in its input pool"});
            }
        }

        if (!any && !explorer.all_ended(current)) {
            report.verdict = Verdict::unsound;
            report.explored = visited.size();
            report.counterexample = trace_to(head);
            report.deadlock = explorer.to_product(current);
            report.diagnostics.push_back(Diagnostic{Severity::error, codes::kDeadlock, Location{kSidFile, m.id},
                                                    "reachable deadlock after " +
                                                        std::to_string(report.counterexample->size()) + " steps"});
            return report;
        }
        if (report.cap_hit) break;
    }

    report.explored = visited.size();
    if (report.cap_hit) {
        report.verdict = Verdict::inconclusive;
        report.diagnostics.push_back(Diagnostic{Severity::info, codes::kInconclusive, Location{kSidFile, m.id},
                                                "state cap of " + std::to_string(opts.state_cap) +
                                                    " product states reached before exploration finished"});
    } else {
        report.verdict = Verdict::sound;
    }
    return report;
}

}  // namespace sbpm::validate
