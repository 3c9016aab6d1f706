#include "sbpm/runtime/envelope.hpp"

#include <cstdio>
#include <random>

#include "sbpm/compile/bundle.hpp"

namespace sbpm::runtime {

using model::BoField;
using model::FieldType;

json to_json(const Envelope& e) {
    return json{{"instance_id", e.instance_id},       {"from_subject", e.from_subject},
                {"to_subject", e.to_subject},         {"message_id", e.message_id},
                {"correlation_id", e.correlation_id}, {"seq", e.seq},
                {"payload", e.payload}};
}

Envelope envelope_from_json(const json& j) {
    try {
        Envelope e;
        e.instance_id = j.at("instance_id").get<std::string>();
        e.from_subject = j.at("from_subject").get<std::string>();
        e.to_subject = j.at("to_subject").get<std::string>();
        e.message_id = j.at("message_id").get<std::string>();
        e.correlation_id = j.at("correlation_id").get<std::string>();
        e.seq = j.at("seq").get<std::int64_t>();
        e.payload = j.contains("payload") ? j.at("payload") : json(nullptr);
        return e;
    } catch (const json::exception& ex) {
        throw Error("BadJson", std::string("envelope: ") + ex.what());
    }
}

namespace {

void check_fields(const json& value, const std::vector<BoField>& fields, const std::string& path);

void check_value(const json& v, const BoField& f, const std::string& path) {
    auto fail = [&](const char* want) {
        throw Error("PayloadInvalid", "field '" + path + "' must be " + want);
    };
    switch (f.type) {
        case FieldType::string:
            if (!v.is_string()) fail("a string");
            break;
        case FieldType::number:
            if (!v.is_number()) fail("a number");
            break;
        case FieldType::boolean:
            if (!v.is_boolean()) fail("a boolean");
            break;
        case FieldType::record:
            if (!v.is_object()) fail("a record");
            check_fields(v, f.children, path + ".");
            break;
        case FieldType::list:
            if (!v.is_array()) fail("a list");
            for (std::size_t i = 0; i < v.size(); ++i) {
                std::string item = path + "[" + std::to_string(i) + "]";
                if (!v[i].is_object()) throw Error("PayloadInvalid", "field '" + item + "' must be a record");
                check_fields(v[i], f.children, item + ".");
            }
            break;
    }
}

void check_fields(const json& value, const std::vector<BoField>& fields, const std::string& prefix) {
    for (auto it = value.begin(); it != value.end(); ++it) {
        bool known = false;
        for (const auto& f : fields) known = known || f.name == it.key();
        if (!known) throw Error("PayloadInvalid", "unknown field '" + prefix + it.key() + "'");
    }
    for (const auto& f : fields) {
        auto it = value.find(f.name);
        if (it == value.end() || it->is_null()) {
            if (f.required) throw Error("PayloadInvalid", "missing required field '" + prefix + f.name + "'");
            continue;
        }
        check_value(*it, f, prefix + f.name);
    }
}

}  // namespace

void validate_payload(const json& payload, const model::BoSchema* schema) {
    if (!schema) {
        if (payload.is_null() || (payload.is_object() && payload.empty())) return;
        throw Error("PayloadInvalid", "message carries no business object");
    }
    if (payload.is_null()) {
        check_fields(json::object(), schema->fields, "");
        return;
    }
    if (!payload.is_object()) throw Error("PayloadInvalid", "payload must be a record of " + schema->id);
    check_fields(payload, schema->fields, "");
}

bool payload_valid(const json& payload, const model::BoSchema* schema) noexcept {
    try {
        validate_payload(payload, schema);
        return true;
    } catch (...) {
        return false;
    }
}

namespace {

std::string format_uuid(const unsigned char* b) {
    char out[37];
    std::snprintf(out, sizeof out, "%02x%02x%02x%02x-%02x%02x-%02x%02x-%02x%02x-%02x%02x%02x%02x%02x%02x", b[0],
                  b[1], b[2], b[3], b[4], b[5], b[6], b[7], b[8], b[9], b[10], b[11], b[12], b[13], b[14], b[15]);
    return out;
}

}  // namespace

std::string random_uuid() {
    thread_local std::mt19937_64 rng{std::random_device{}()};
    unsigned char b[16];
    for (int i = 0; i < 16; i += 8) {
        std::uint64_t r = rng();
        for (int k = 0; k < 8; ++k) b[i + k] = static_cast<unsigned char>(r >> (8 * k));
    }
    b[6] = static_cast<unsigned char>((b[6] & 0x0f) | 0x40);
    b[8] = static_cast<unsigned char>((b[8] & 0x3f) | 0x80);
    return format_uuid(b);
}

std::string derived_uuid(std::string_view name) {
    std::string hex = compile::sha256_hex(name);
    unsigned char b[16];
    for (int i = 0; i < 16; ++i) b[i] = static_cast<unsigned char>(std::stoi(hex.substr(2 * i, 2), nullptr, 16));
    b[6] = static_cast<unsigned char>((b[6] & 0x0f) | 0x50);
    b[8] = static_cast<unsigned char>((b[8] & 0x3f) | 0x80);
    return format_uuid(b);
}

}  // namespace sbpm::runtime
