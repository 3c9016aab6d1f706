#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace sbpm::runtime {

enum class EventKind {
    STATE_ENTERED,
    MSG_SENT,
    MSG_DELIVERED,
    MSG_CONSUMED,
    CHOICE_MADE,
    TIMEOUT_FIRED,
    CRASHED,
    RESTARTED,
    SUBJECT_HALTED,
    INSTANCE_COMPLETED,
};

std::string_view to_string(EventKind kind);
std::optional<EventKind> event_kind_from(std::string_view text);

inline constexpr const char* kSupervisor = "SUPERVISOR";

struct EventRecord {
    std::int64_t seq = 0;  // instance-global, gapless from 0
    std::int64_t ts = 0;   // ms since epoch
    std::string subject;   // subject id or SUPERVISOR
    EventKind kind = EventKind::STATE_ENTERED;
    nlohmann::json data = nlohmann::json::object();

    bool operator==(const EventRecord&) const = default;
};

nlohmann::json to_json(const EventRecord& r);
EventRecord event_from_json(const nlohmann::json& j);  // throws Error("LogCorrupt")

// Canonical JSON, no trailing newline.
std::string to_line(const EventRecord& r);

// Append-only log file, one record per line, flushed per record.
void append_event_line(const std::filesystem::path& path, const EventRecord& r);
std::vector<EventRecord> read_event_log(const std::filesystem::path& path);  // throws Error("LogCorrupt")

}  // namespace sbpm::runtime
