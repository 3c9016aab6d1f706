#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace sbpm::model {

// Identifiers: [A-Za-z][A-Za-z0-9_-]{0,63}, case-sensitive.
bool is_valid_identifier(std::string_view id);

enum class StateKind { function, send, receive };
enum class FieldType { string, number, boolean, record, list };

std::string_view to_string(StateKind kind);
std::string_view to_string(FieldType type);
std::optional<StateKind> state_kind_from(std::string_view text);
std::optional<FieldType> field_type_from(std::string_view text);

struct BoField {
    std::string name;
    FieldType type = FieldType::string;
    bool required = false;
    std::vector<BoField> children;  // record/list only

    bool operator==(const BoField&) const = default;
};

struct BoSchema {
    std::string id;
    std::vector<BoField> fields;

    bool operator==(const BoSchema&) const = default;
};

struct SubjectDecl {
    std::string id;
    std::string name;
    std::string role;
    bool external = false;
    int pool_capacity = 16;

    bool operator==(const SubjectDecl&) const = default;
};

struct MessageDecl {
    std::string id;
    std::string name;
    std::string from;
    std::string to;
    std::optional<std::string> bo;

    bool operator==(const MessageDecl&) const = default;
};

struct State {
    std::string id;
    std::string name;
    StateKind kind = StateKind::function;
    bool start = false;
    bool end = false;
    std::optional<std::string> refinement;  // function states only
    std::optional<std::string> on_error;    // outcome taken when the refinement call fails
    std::optional<std::int64_t> timeout_ms; // receive states only; never 0

    bool operator==(const State&) const = default;
};

struct OutcomeLabel {
    std::string name;
    bool operator==(const OutcomeLabel&) const = default;
};
struct SendLabel {
    std::string message;
    std::string to_subject;
    bool operator==(const SendLabel&) const = default;
};
struct ReceiveLabel {
    std::string message;
    std::string from_subject;
    bool operator==(const ReceiveLabel&) const = default;
};
struct TimeoutLabel {
    bool operator==(const TimeoutLabel&) const = default;
};

using TransitionLabel = std::variant<OutcomeLabel, SendLabel, ReceiveLabel, TimeoutLabel>;

struct Transition {
    std::string from;
    std::string to;
    TransitionLabel label;

    bool operator==(const Transition&) const = default;
};

// Human readable rendering of a label: "ok", "ping to B", "pong from B", "TIMEOUT".
std::string describe(const TransitionLabel& label);

struct BehaviorGraph {
    std::string subject;
    std::vector<State> states;            // document order
    std::vector<Transition> transitions;  // document order

    const State* find_state(std::string_view id) const;
    std::optional<std::size_t> index_of(std::string_view id) const;
    std::vector<const Transition*> outgoing(std::string_view state_id) const;

    bool operator==(const BehaviorGraph&) const = default;
};

struct ProcessModel {
    std::string id;
    std::string name;
    std::string version;
    std::vector<SubjectDecl> subjects;
    std::vector<MessageDecl> messages;
    std::vector<BoSchema> bo_schemas;
    std::map<std::string, BehaviorGraph> behaviors;

    const SubjectDecl* find_subject(std::string_view id) const;
    const MessageDecl* find_message(std::string_view id) const;
    const BoSchema* find_schema(std::string_view id) const;

    bool operator==(const ProcessModel&) const = default;
};

}  // namespace sbpm::model
