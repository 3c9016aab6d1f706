#include "support/random_models.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <tuple>

namespace sbpm::testing {

using namespace sbpm::model;

namespace {

int pick(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

std::vector<BoField> random_fields(std::mt19937_64& rng, int depth) {
    std::vector<BoField> fields;
    int n = pick(rng, 1, 3);
    for (int i = 0; i < n; ++i) {
        BoField f;
        f.name = "f" + std::to_string(i);
        f.required = pick(rng, 0, 1) == 1;
        int t = pick(rng, 0, depth > 0 ? 4 : 2);
        f.type = static_cast<FieldType>(t);
        if (f.type == FieldType::record || f.type == FieldType::list) f.children = random_fields(rng, depth - 1);
        fields.push_back(std::move(f));
    }
    return fields;
}

}  // namespace

ProcessModel random_model(std::mt19937_64& rng, const RandomModelOptions& opts) {
    ProcessModel m;
    m.id = "R" + std::to_string(rng() % 100000);
    m.name = "random <model> & \"friends\"";
    m.version = std::to_string(pick(rng, 1, 9));

    const int k = pick(rng, 2, opts.max_subjects);
    for (int i = 0; i < k; ++i) {
        SubjectDecl s;
        s.id = "S" + std::to_string(i);
        s.name = "Subject " + std::to_string(i);
        s.role = "role" + std::to_string(i % 2);
        s.pool_capacity = pick(rng, 1, 3);
        m.subjects.push_back(s);
    }
    if (opts.with_business_objects) {
        int n = pick(rng, 1, 2);
        for (int i = 0; i < n; ++i) m.bo_schemas.push_back(BoSchema{"bo" + std::to_string(i), random_fields(rng, 2)});
    }
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
            if (i == j || pick(rng, 0, 3) == 0) continue;
            int variants = pick(rng, 1, 2);
            for (int v = 0; v < variants; ++v) {
                MessageDecl msg;
                msg.id = "m" + std::to_string(i) + "_" + std::to_string(j) + (v ? "b" : "a");
                msg.name = msg.id;
                msg.from = m.subjects[static_cast<std::size_t>(i)].id;
                msg.to = m.subjects[static_cast<std::size_t>(j)].id;
                if (!m.bo_schemas.empty() && pick(rng, 0, 1))
                    msg.bo = m.bo_schemas[static_cast<std::size_t>(pick(rng, 0, static_cast<int>(m.bo_schemas.size()) - 1))].id;
                m.messages.push_back(msg);
            }
        }
    }

    for (const auto& subj : m.subjects) {
        std::vector<const MessageDecl*> outgoing, incoming;
        for (const auto& msg : m.messages) {
            if (msg.from == subj.id) outgoing.push_back(&msg);
            if (msg.to == subj.id) incoming.push_back(&msg);
        }
        BehaviorGraph g;
        g.subject = subj.id;
        const int n = pick(rng, 2, opts.max_states);
        for (int i = 0; i < n; ++i) {
            State st;
            st.id = "q" + std::to_string(i);
            st.name = "state " + std::to_string(i);
            st.start = i == 0;
            st.end = i == n - 1;
            if (!st.end) {
                int kind = pick(rng, 0, 2);
                if (kind == 1 && !outgoing.empty()) st.kind = StateKind::send;
                else if (kind == 2 && !incoming.empty()) st.kind = StateKind::receive;
                else st.kind = StateKind::function;
            }
            g.states.push_back(st);
        }
        auto target = [&](int from) {
            // Bias forward so that end states are usually reachable.
            return pick(rng, 0, 3) == 0 ? pick(rng, 0, n - 1) : pick(rng, std::min(from + 1, n - 1), n - 1);
        };
        for (int i = 0; i < n - 1; ++i) {
            State& st = g.states[static_cast<std::size_t>(i)];
            const int arms = pick(rng, 1, 2);
            switch (st.kind) {
                case StateKind::function:
                    for (int a = 0; a < arms; ++a)
                        g.transitions.push_back(Transition{st.id, "q" + std::to_string(target(i)),
                                                           OutcomeLabel{"o" + std::to_string(a)}});
                    break;
                case StateKind::send: {
                    std::vector<const MessageDecl*> pool = outgoing;
                    std::shuffle(pool.begin(), pool.end(), rng);
                    for (int a = 0; a < arms && a < static_cast<int>(pool.size()); ++a)
                        g.transitions.push_back(Transition{st.id, "q" + std::to_string(target(i)),
                                                           SendLabel{pool[static_cast<std::size_t>(a)]->id,
                                                                     pool[static_cast<std::size_t>(a)]->to}});
                    break;
                }
                case StateKind::receive: {
                    std::vector<const MessageDecl*> pool = incoming;
                    std::shuffle(pool.begin(), pool.end(), rng);
                    for (int a = 0; a < arms && a < static_cast<int>(pool.size()); ++a)
                        g.transitions.push_back(Transition{st.id, "q" + std::to_string(target(i)),
                                                           ReceiveLabel{pool[static_cast<std::size_t>(a)]->id,
                                                                        pool[static_cast<std::size_t>(a)]->from}});
                    if (opts.with_timeouts && pick(rng, 0, 4) == 0) {
                        st.timeout_ms = 100;
                        g.transitions.push_back(Transition{st.id, "q" + std::to_string(target(i)), TimeoutLabel{}});
                    }
                    break;
                }
            }
        }
        m.behaviors.emplace(subj.id, std::move(g));
    }
    return m;
}

namespace {

// Everything keyed by strings; pools are lists of (message, sender).
struct OState {
    std::vector<std::string> loc;
    std::vector<std::string> commit;
    std::vector<std::vector<std::pair<std::string, std::string>>> pool;
    bool operator<(const OState& o) const { return std::tie(loc, commit, pool) < std::tie(o.loc, o.commit, o.pool); }
};

}  // namespace

OracleResult brute_force_deadlock(const ProcessModel& m, int pool_bound) {
    std::vector<std::string> names;
    for (const auto& s : m.subjects) names.push_back(s.id);
    const std::size_t k = names.size();
    auto idx = [&](const std::string& id) {
        return static_cast<std::size_t>(std::find(names.begin(), names.end(), id) - names.begin());
    };
    auto state_of = [&](std::size_t s, const std::string& id) -> const State& {
        return *m.behaviors.at(names[s]).find_state(id);
    };
    auto out_of = [&](std::size_t s, const std::string& id) { return m.behaviors.at(names[s]).outgoing(id); };
    auto cap = [&](std::size_t s) { return std::max(1, std::min(pool_bound, m.subjects[s].pool_capacity)); };
    auto arrive = [&](OState& st, std::size_t s, const std::string& id) {
        st.loc[s] = id;
        st.commit[s].clear();
        if (state_of(s, id).kind == StateKind::send) {
            auto out = out_of(s, id);
            if (out.size() == 1) st.commit[s] = std::get<SendLabel>(out[0]->label).message;
        }
    };

    OState init;
    init.loc.resize(k);
    init.commit.resize(k);
    init.pool.resize(k);
    for (std::size_t s = 0; s < k; ++s) {
        const auto& g = m.behaviors.at(names[s]);
        for (const auto& st : g.states)
            if (st.start) arrive(init, s, st.id);
    }

    std::set<OState> seen{init};
    std::vector<OState> stack{init};
    OracleResult result;
    while (!stack.empty()) {
        OState cur = stack.back();
        stack.pop_back();
        std::vector<OState> next;
        bool all_end = true;
        for (std::size_t s = 0; s < k; ++s) {
            const State& st = state_of(s, cur.loc[s]);
            if (st.end) continue;
            all_end = false;
            auto out = out_of(s, st.id);
            if (st.kind == StateKind::function) {
                for (const Transition* t : out) {
                    OState n = cur;
                    arrive(n, s, t->to);
                    next.push_back(n);
                }
            } else if (st.kind == StateKind::send) {
                if (cur.commit[s].empty()) {
                    for (const Transition* t : out) {
                        OState n = cur;
                        n.commit[s] = std::get<SendLabel>(t->label).message;
                        next.push_back(n);
                    }
                } else {
                    for (const Transition* t : out) {
                        const auto& l = std::get<SendLabel>(t->label);
                        if (l.message != cur.commit[s]) continue;
                        std::size_t r = idx(l.to_subject);
                        if (static_cast<int>(cur.pool[r].size()) >= cap(r)) break;
                        OState n = cur;
                        n.pool[r].emplace_back(l.message, names[s]);
                        arrive(n, s, t->to);
                        next.push_back(n);
                        break;
                    }
                }
            } else {
                bool done = false;
                for (std::size_t p = 0; p < cur.pool[s].size() && !done; ++p) {
                    for (const Transition* t : out) {
                        const auto* l = std::get_if<ReceiveLabel>(&t->label);
                        if (!l || l->message != cur.pool[s][p].first || l->from_subject != cur.pool[s][p].second)
                            continue;
                        OState n = cur;
                        n.pool[s].erase(n.pool[s].begin() + static_cast<std::ptrdiff_t>(p));
                        arrive(n, s, t->to);
                        next.push_back(n);
                        done = true;
                        break;
                    }
                }
                for (const Transition* t : out) {
                    if (!std::holds_alternative<TimeoutLabel>(t->label)) continue;
                    OState n = cur;
                    arrive(n, s, t->to);
                    next.push_back(n);
                }
            }
        }
        if (next.empty() && !all_end) result.deadlock = true;
        for (auto& n : next)
            if (seen.insert(n).second) stack.push_back(std::move(n));
    }
    result.states = seen.size();
    return result;
}

}  // namespace sbpm::testing
