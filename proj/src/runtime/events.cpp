#include "sbpm/runtime/events.hpp"

#include <array>
#include <fstream>

#include "sbpm/error.hpp"

namespace sbpm::runtime {

namespace {

constexpr std::array<std::pair<EventKind, std::string_view>, 10> kNames{{
    {EventKind::STATE_ENTERED, "STATE_ENTERED"},
    {EventKind::MSG_SENT, "MSG_SENT"},
    {EventKind::MSG_DELIVERED, "MSG_DELIVERED"},
    {EventKind::MSG_CONSUMED, "MSG_CONSUMED"},
    {EventKind::CHOICE_MADE, "CHOICE_MADE"},
    {EventKind::TIMEOUT_FIRED, "TIMEOUT_FIRED"},
    {EventKind::CRASHED, "CRASHED"},
    {EventKind::RESTARTED, "RESTARTED"},
    {EventKind::SUBJECT_HALTED, "SUBJECT_HALTED"},
    {EventKind::INSTANCE_COMPLETED, "INSTANCE_COMPLETED"},
}};

}  // namespace

std::string_view to_string(EventKind kind) {
    for (const auto& [k, n] : kNames)
        if (k == kind) return n;
    return "?";
}

std::optional<EventKind> event_kind_from(std::string_view text) {
    for (const auto& [k, n] : kNames)
        if (n == text) return k;
    return std::nullopt;
}

nlohmann::json to_json(const EventRecord& r) {
    return nlohmann::json{{"seq", r.seq},
                          {"ts", r.ts},
                          {"subject", r.subject},
                          {"kind", std::string(to_string(r.kind))},
                          {"data", r.data}};
}

EventRecord event_from_json(const nlohmann::json& j) {
    try {
        EventRecord r;
        r.seq = j.at("seq").get<std::int64_t>();
        r.ts = j.at("ts").get<std::int64_t>();
        r.subject = j.at("subject").get<std::string>();
        auto kind = event_kind_from(j.at("kind").get<std::string>());
        if (!kind) throw Error("LogCorrupt", "unknown event kind " + j.at("kind").dump());
        r.kind = *kind;
        r.data = j.at("data");
        if (!r.data.is_object()) throw Error("LogCorrupt", "event data must be an object");
        return r;
    } catch (const nlohmann::json::exception& ex) {
        throw Error("LogCorrupt", std::string("event record: ") + ex.what());
    }
}

std::string to_line(const EventRecord& r) { return to_json(r).dump(); }

void append_event_line(const std::filesystem::path& path, const EventRecord& r) {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    out << to_line(r) << '\n';
    out.flush();
    if (!out) throw Error("LogWriteFailed", "cannot append to " + path.string());
}

std::vector<EventRecord> read_event_log(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("LogCorrupt", "cannot read " + path.string());
    std::vector<EventRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            // A torn final line is what a crash mid-append leaves behind.
            if (in.peek() == std::char_traits<char>::eof()) break;
            throw Error("LogCorrupt", "unparseable line " + std::to_string(out.size()));
        }
        out.push_back(event_from_json(j));
    }
    return out;
}

}  // namespace sbpm::runtime
