#include "sbpm/model/types.hpp"

#include <algorithm>

namespace sbpm::model {

bool is_valid_identifier(std::string_view id) {
    if (id.empty() || id.size() > 64) return false;
    auto alpha = [](char c) { return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z'); };
    auto digit = [](char c) { return c >= '0' && c <= '9'; };
    if (!alpha(id.front())) return false;
    return std::all_of(id.begin() + 1, id.end(),
                       [&](char c) { return alpha(c) || digit(c) || c == '_' || c == '-'; });
}

std::string_view to_string(StateKind kind) {
    switch (kind) {
        case StateKind::function: return "function";
        case StateKind::send: return "send";
        case StateKind::receive: return "receive";
    }
    return "function";
}

std::string_view to_string(FieldType type) {
    switch (type) {
        case FieldType::string: return "string";
        case FieldType::number: return "number";
        case FieldType::boolean: return "boolean";
        case FieldType::record: return "record";
        case FieldType::list: return "list";
    }
    return "string";
}

std::optional<StateKind> state_kind_from(std::string_view text) {
    if (text == "function") return StateKind::function;
    if (text == "send") return StateKind::send;
    if (text == "receive") return StateKind::receive;
    return std::nullopt;
}

std::optional<FieldType> field_type_from(std::string_view text) {
    if (text == "string") return FieldType::string;
    if (text == "number") return FieldType::number;
    if (text == "boolean") return FieldType::boolean;
    if (text == "record") return FieldType::record;
    if (text == "list") return FieldType::list;
    return std::nullopt;
}

std::string describe(const TransitionLabel& label) {
    struct Visitor {
        std::string operator()(const OutcomeLabel& l) const { return l.name; }
        std::string operator()(const SendLabel& l) const { return l.message + " to " + l.to_subject; }
        std::string operator()(const ReceiveLabel& l) const { return l.message + " from " + l.from_subject; }
        std::string operator()(const TimeoutLabel&) const { return "TIMEOUT"; }
    };
    return std::visit(Visitor{}, label);
}

const State* BehaviorGraph::find_state(std::string_view id) const {
    auto it = std::find_if(states.begin(), states.end(), [&](const State& s) { return s.id == id; });
    return it == states.end() ? nullptr : &*it;
}

std::optional<std::size_t> BehaviorGraph::index_of(std::string_view id) const {
    for (std::size_t i = 0; i < states.size(); ++i)
        if (states[i].id == id) return i;
    return std::nullopt;
}

std::vector<const Transition*> BehaviorGraph::outgoing(std::string_view state_id) const {
    std::vector<const Transition*> out;
    for (const auto& t : transitions)
        if (t.from == state_id) out.push_back(&t);
    return out;
}

const SubjectDecl* ProcessModel::find_subject(std::string_view sid) const {
    auto it = std::find_if(subjects.begin(), subjects.end(), [&](const SubjectDecl& s) { return s.id == sid; });
    return it == subjects.end() ? nullptr : &*it;
}

const MessageDecl* ProcessModel::find_message(std::string_view mid) const {
    auto it = std::find_if(messages.begin(), messages.end(), [&](const MessageDecl& m) { return m.id == mid; });
    return it == messages.end() ? nullptr : &*it;
}

const BoSchema* ProcessModel::find_schema(std::string_view bid) const {
    auto it = std::find_if(bo_schemas.begin(), bo_schemas.end(), [&](const BoSchema& b) { return b.id == bid; });
    return it == bo_schemas.end() ? nullptr : &*it;
}

}  // namespace sbpm::model
