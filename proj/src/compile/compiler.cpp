#include <algorithm>

#include "sbpm/compile/bundle.hpp"

namespace sbpm::compile {

using namespace sbpm::model;

bool IrState::has_timeout_arm() const {
    return !arms.empty() && std::holds_alternative<TimeoutSelector>(arms.back().selector);
}

std::optional<int> SubjectProgram::index_of(std::string_view state_id) const {
    for (std::size_t i = 0; i < states.size(); ++i)
        if (states[i].id == state_id) return static_cast<int>(i);
    return std::nullopt;
}

const SubjectProgram* Bundle::program(std::string_view subject_id) const {
    auto it = std::find_if(programs.begin(), programs.end(),
                           [&](const SubjectProgram& p) { return p.subject == subject_id; });
    return it == programs.end() ? nullptr : &*it;
}

const SubjectDecl* Bundle::subject(std::string_view id) const {
    auto it = std::find_if(subjects.begin(), subjects.end(), [&](const SubjectDecl& s) { return s.id == id; });
    return it == subjects.end() ? nullptr : &*it;
}

const MessageDecl* Bundle::message(std::string_view id) const {
    auto it = std::find_if(messages.begin(), messages.end(), [&](const MessageDecl& m) { return m.id == id; });
    return it == messages.end() ? nullptr : &*it;
}

const BoSchema* Bundle::schema(std::string_view id) const {
    auto it = std::find_if(bo_schemas.begin(), bo_schemas.end(), [&](const BoSchema& s) { return s.id == id; });
    return it == bo_schemas.end() ? nullptr : &*it;
}

SubjectProgram compile_subject(const ProcessModel& m, std::string_view subject_id) {
    const SubjectDecl* decl = m.find_subject(subject_id);
    if (!decl) throw CompileError("UnknownSubject", "unknown subject '" + std::string(subject_id) + "'");
    if (decl->external)
        throw CompileError("ExternalSubjectHasNoBehavior",
                           "external subject '" + std::string(subject_id) + "' has no behavior to compile");
    auto it = m.behaviors.find(std::string(subject_id));
    if (it == m.behaviors.end())
        throw CompileError("UnknownSubject", "no behavior for subject '" + std::string(subject_id) + "'");
    const BehaviorGraph& g = it->second;

    SubjectProgram prog;
    prog.subject = g.subject;
    for (std::size_t i = 0; i < g.states.size(); ++i) {
        const State& st = g.states[i];
        IrState ir;
        ir.id = st.id;
        ir.kind = st.kind;
        ir.name = st.name;
        ir.refinement = st.refinement;
        ir.on_error = st.on_error;
        ir.timeout_ms = st.timeout_ms;

        std::optional<IrArm> timeout_arm;
        for (const Transition* t : g.outgoing(st.id)) {
            IrArm arm;
            arm.target = static_cast<int>(*g.index_of(t->to));
            if (const auto* o = std::get_if<OutcomeLabel>(&t->label)) {
                arm.selector = OutcomeSelector{o->name};
            } else if (const auto* s = std::get_if<SendLabel>(&t->label)) {
                const MessageDecl* msg = m.find_message(s->message);
                arm.selector = EmitSelector{s->message, s->to_subject, msg ? msg->bo : std::nullopt};
            } else if (const auto* r = std::get_if<ReceiveLabel>(&t->label)) {
                arm.selector = MatchSelector{r->message, r->from_subject};
            } else {
                arm.selector = TimeoutSelector{};
                timeout_arm = arm;
                continue;
            }
            ir.arms.push_back(std::move(arm));
        }
        if (timeout_arm) ir.arms.push_back(*timeout_arm);

        if (st.start) prog.start_index = static_cast<int>(i);
        if (st.end) prog.end_indices.insert(static_cast<int>(i));
        prog.states.push_back(std::move(ir));
    }
    return prog;
}

Bundle link_bundle(const ProcessModel& m, const SupervisorConfig& templ, const LinkOptions& opts) {
    Bundle b;
    b.manifest.process_id = m.id;
    b.manifest.name = m.name;
    b.manifest.version = m.version;
    b.manifest.created_at = opts.created_at.value_or(kPinnedCreatedAt);
    b.subjects = m.subjects;
    b.messages = m.messages;
    b.bo_schemas = m.bo_schemas;
    b.supervisor = templ;

    std::vector<std::string> ids;
    for (const auto& s : m.subjects) {
        if (s.external) {
            bool routed = std::any_of(b.supervisor.external_routes.begin(), b.supervisor.external_routes.end(),
                                      [&](const ExternalRoute& r) { return r.subject == s.id; });
            if (!routed) b.supervisor.external_routes.push_back(ExternalRoute{s.id, ""});
            continue;
        }
        ids.push_back(s.id);
    }
    std::sort(ids.begin(), ids.end());
    std::sort(b.supervisor.external_routes.begin(), b.supervisor.external_routes.end(),
              [](const ExternalRoute& a, const ExternalRoute& c) { return a.subject < c.subject; });
    for (const auto& id : ids) b.programs.push_back(compile_subject(m, id));

    b.manifest.content_hash = sha256_hex(canonical_payload(b));
    return b;
}

}  // namespace sbpm::compile
