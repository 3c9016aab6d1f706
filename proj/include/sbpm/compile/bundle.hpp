#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "sbpm/error.hpp"
#include "sbpm/model/types.hpp"

namespace sbpm::compile {

struct OutcomeSelector {
    std::string outcome;
    bool operator==(const OutcomeSelector&) const = default;
};
struct EmitSelector {
    std::string message;
    std::string to;
    std::optional<std::string> bo;
    bool operator==(const EmitSelector&) const = default;
};
struct MatchSelector {
    std::string message;
    std::string from;
    bool operator==(const MatchSelector&) const = default;
};
struct TimeoutSelector {
    bool operator==(const TimeoutSelector&) const = default;
};
using Selector = std::variant<OutcomeSelector, EmitSelector, MatchSelector, TimeoutSelector>;

struct IrArm {
    Selector selector;
    int target = 0;
    bool operator==(const IrArm&) const = default;
};

struct IrState {
    std::string id;
    model::StateKind kind = model::StateKind::function;
    std::string name;
    std::optional<std::string> refinement;
    std::optional<std::string> on_error;
    std::optional<std::int64_t> timeout_ms;
    std::vector<IrArm> arms;  // document order; a timeout arm is always last

    bool has_timeout_arm() const;
    bool operator==(const IrState&) const = default;
};

// One subject behavior as an FSM table. Index i is the (i+1)-th state element
// of the behavior file.
struct SubjectProgram {
    std::string subject;
    std::vector<IrState> states;
    int start_index = 0;
    std::set<int> end_indices;

    bool is_end(int index) const { return end_indices.count(index) != 0; }
    std::optional<int> index_of(std::string_view state_id) const;
    bool operator==(const SubjectProgram&) const = default;
};

struct RestartPolicy {
    enum class Kind { never, replay };
    Kind kind = Kind::replay;
    int max_restarts = 3;
    int window_s = 60;
    bool operator==(const RestartPolicy&) const = default;
};

enum class SendPolicy { block, drop_error };

struct ExternalRoute {
    std::string subject;
    std::string hint;  // node-id/instance-id/subject-id
    bool operator==(const ExternalRoute&) const = default;
};

struct SupervisorConfig {
    RestartPolicy restart_policy;
    std::vector<std::string> metrics{"instance_duration", "per_subject_wait_time"};
    std::vector<ExternalRoute> external_routes;
    SendPolicy send_policy = SendPolicy::block;
    std::int64_t service_timeout_ms = 30'000;
    bool operator==(const SupervisorConfig&) const = default;
};

struct Manifest {
    std::string process_id;
    std::string name;
    std::string version;
    std::string created_at;
    std::string content_hash;  // SHA-256 hex of the canonical payload
    bool operator==(const Manifest&) const = default;
};

inline constexpr const char* kPinnedCreatedAt = "1970-01-01T00:00:00Z";

struct Bundle {
    Manifest manifest;
    std::vector<model::SubjectDecl> subjects;
    std::vector<SubjectProgram> programs;  // sorted by subject id
    std::vector<model::MessageDecl> messages;
    std::vector<model::BoSchema> bo_schemas;
    SupervisorConfig supervisor;

    const SubjectProgram* program(std::string_view subject) const;
    const model::SubjectDecl* subject(std::string_view id) const;
    const model::MessageDecl* message(std::string_view id) const;
    const model::BoSchema* schema(std::string_view id) const;

    bool operator==(const Bundle&) const = default;
};

class CompileError : public Error {
public:
    using Error::Error;
};

class BundleError : public Error {
public:
    using Error::Error;
};

SubjectProgram compile_subject(const model::ProcessModel& m, std::string_view subject_id);

struct LinkOptions {
    std::optional<std::string> created_at;  // --stamp
};

Bundle link_bundle(const model::ProcessModel& m, const SupervisorConfig& templ, const LinkOptions& opts = {});

// Container: "SBPMBNDL", u16 big-endian version 0x0001, canonical JSON document
// {"content_hash": ..., "payload": {...}}; the hash covers the payload bytes.
std::string encode_bundle(const Bundle& b);
Bundle decode_bundle(std::string_view bytes);
std::string canonical_payload(const Bundle& b);

void store_bundle(const Bundle& b, const std::filesystem::path& path);
Bundle load_bundle(const std::filesystem::path& path);

std::string disassemble(const Bundle& b);

std::string sha256_hex(std::string_view bytes);

}  // namespace sbpm::compile
