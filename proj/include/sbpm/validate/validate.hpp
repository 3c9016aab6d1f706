#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sbpm/model/types.hpp"

namespace sbpm::validate {

enum class Severity { error, warning, info };
std::string_view to_string(Severity s);

// Stable diagnostic codes; tests and tooling match on these, never on messages.
namespace codes {
inline constexpr const char* kUnreachableState = "V-STRUCT-01";
inline constexpr const char* kNoEndReachable = "V-STRUCT-02";
inline constexpr const char* kDuplicateLabel = "V-STRUCT-03";
inline constexpr const char* kEndHasOutgoing = "V-STRUCT-04";
inline constexpr const char* kSendDirection = "V-IFACE-01";
inline constexpr const char* kReceiveDirection = "V-IFACE-02";
inline constexpr const char* kNeverSent = "V-IFACE-03";
inline constexpr const char* kNeverReceived = "V-IFACE-04";
inline constexpr const char* kDeadlock = "V-SOUND-01";
inline constexpr const char* kUnconsumed = "V-SOUND-02";
inline constexpr const char* kInconclusive = "V-SOUND-03";
inline constexpr const char* kExternalSubjects = "V-SOUND-04";
inline constexpr const char* kSoundnessSkipped = "V-SKIP-01";
}  // namespace codes

struct Location {
    std::string file;
    std::string element;
    bool operator==(const Location&) const = default;
};

struct Diagnostic {
    Severity severity = Severity::error;
    std::string code;
    Location location;
    std::string message;
    bool operator==(const Diagnostic&) const = default;
};

bool has_errors(const std::vector<Diagnostic>& diagnostics);

// One event of the global interleaving explored by the soundness checker.
//   choose  - a function state picks `label` (an outcome), or a send state with
//             several arms commits to the arm sending message `label`
//   send    - a committed send state delivers `label` to `peer`
//   consume - a receive state takes `label` sent by `peer` out of its pool
//   timeout - a receive state follows its timeout arm
struct GlobalStep {
    enum class Kind { choose, send, consume, timeout };
    Kind kind = Kind::choose;
    std::string subject;
    std::string label;
    std::string peer;

    bool operator==(const GlobalStep&) const = default;
};
std::string_view to_string(GlobalStep::Kind kind);

struct PoolEntry {
    std::string message;
    std::string from;
    bool operator==(const PoolEntry&) const = default;
    auto operator<=>(const PoolEntry&) const = default;
};

// Global configuration: current state id, committed send message (send states
// only, empty when uncommitted), and input pool of every subject.
struct ProductState {
    std::map<std::string, std::string> locations;
    std::map<std::string, std::string> committed;
    std::map<std::string, std::vector<PoolEntry>> pools;

    bool operator==(const ProductState&) const = default;
};

enum class Verdict { sound, unsound, inconclusive };
std::string_view to_string(Verdict v);

struct SoundnessReport {
    Verdict verdict = Verdict::inconclusive;
    std::size_t explored = 0;
    std::optional<std::vector<GlobalStep>> counterexample;
    std::optional<ProductState> deadlock;  // state reached by the counterexample
    bool cap_hit = false;
    int pool_bound = 1;
    std::vector<Diagnostic> diagnostics;  // V-SOUND-* findings
};

struct SoundnessOptions {
    int pool_bound = 1;
    std::size_t state_cap = 1'000'000;
};

std::vector<Diagnostic> check_structure(const model::ProcessModel& m);
std::vector<Diagnostic> check_interfaces(const model::ProcessModel& m);
SoundnessReport check_soundness(const model::ProcessModel& m, const SoundnessOptions& opts = {});

struct ValidationResult {
    std::vector<Diagnostic> diagnostics;
    SoundnessReport soundness;
};

ValidationResult validate(const model::ProcessModel& m, const SoundnessOptions& opts = {});

nlohmann::json to_json(const Diagnostic& d);
nlohmann::json to_json(const GlobalStep& s);
nlohmann::json to_json(const ProductState& p);
// {diagnostics: [...], soundness: {verdict, explored, cap_hit, counterexample, pool_bound}}
nlohmann::json to_json(const ValidationResult& r);
std::string to_text(const ValidationResult& r);

}  // namespace sbpm::validate
