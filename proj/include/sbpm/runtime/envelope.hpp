#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "sbpm/error.hpp"
#include "sbpm/model/types.hpp"

namespace sbpm::runtime {

using nlohmann::json;

struct Envelope {
    std::string instance_id;
    std::string from_subject;
    std::string to_subject;
    std::string message_id;
    std::string correlation_id;
    std::int64_t seq = 0;
    json payload;  // null when the message carries no business object

    bool operator==(const Envelope&) const = default;
};

json to_json(const Envelope& e);
Envelope envelope_from_json(const json& j);  // throws Error("BadJson")

// Throws Error("PayloadInvalid") naming the first offending field. A null
// schema admits only a null payload (or an empty object).
void validate_payload(const json& payload, const model::BoSchema* schema);
bool payload_valid(const json& payload, const model::BoSchema* schema) noexcept;

std::string random_uuid();
// Name-based UUID (SHA-256 of `name`, version nibble 5) so that identifiers
// recomputed during replay match the originals.
std::string derived_uuid(std::string_view name);

}  // namespace sbpm::runtime
