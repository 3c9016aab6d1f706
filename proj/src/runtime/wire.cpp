#include "sbpm/runtime/wire.hpp"

#include <array>

namespace sbpm::runtime {

namespace {

constexpr std::array<std::pair<FrameKind, std::string_view>, 7> kKinds{{
    {FrameKind::HELLO, "HELLO"},
    {FrameKind::HELLO_ACK, "HELLO_ACK"},
    {FrameKind::MSG, "MSG"},
    {FrameKind::ACK, "ACK"},
    {FrameKind::NACK, "NACK"},
    {FrameKind::PING, "PING"},
    {FrameKind::PONG, "PONG"},
}};

}  // namespace

std::string_view to_string(FrameKind k) {
    for (const auto& [kind, name] : kKinds)
        if (kind == k) return name;
    return "?";
}

std::string encode_frame(const WireFrame& f) {
    json j{{"v", f.v}, {"kind", std::string(to_string(f.kind))}, {"node", f.node}, {"instance", f.instance}};
    if (f.envelope) j["envelope"] = to_json(*f.envelope);
    if (f.ack_seq) j["ack_seq"] = *f.ack_seq;
    if (f.reason) j["reason"] = *f.reason;
    std::string payload = j.dump();
    if (payload.size() > kMaxFramePayload)
        throw Error("FrameTooLarge", "frame payload of " + std::to_string(payload.size()) + " bytes");
    auto n = static_cast<std::uint32_t>(payload.size());
    std::string out;
    out.reserve(4 + payload.size());
    for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<char>((n >> shift) & 0xff));
    out += payload;
    return out;
}

std::uint32_t decode_frame_length(std::string_view header) {
    if (header.size() < 4) throw Error("BadJson", "truncated frame header");
    std::uint32_t n = 0;
    for (int i = 0; i < 4; ++i) n = (n << 8) | static_cast<unsigned char>(header[i]);
    if (n > kMaxFramePayload) throw Error("FrameTooLarge", "declared frame length " + std::to_string(n));
    return n;
}

WireFrame decode_frame_payload(std::string_view payload) {
    json j = json::parse(payload.begin(), payload.end(), nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error("BadJson", "frame payload is not a JSON object");
    try {
        WireFrame f;
        f.v = j.at("v").get<int>();
        if (f.v != kWireVersion) throw Error("UnsupportedVersion", "wire version " + std::to_string(f.v));
        std::string kind = j.at("kind").get<std::string>();
        bool known = false;
        for (const auto& [k, name] : kKinds)
            if (name == kind) {
                f.kind = k;
                known = true;
            }
        if (!known) throw Error("BadJson", "unknown frame kind " + kind);
        f.node = j.at("node").get<std::string>();
        f.instance = j.at("instance").get<std::string>();
        if (j.contains("envelope")) f.envelope = envelope_from_json(j.at("envelope"));
        if (j.contains("ack_seq")) f.ack_seq = j.at("ack_seq").get<std::int64_t>();
        if (j.contains("reason")) f.reason = j.at("reason").get<std::string>();
        return f;
    } catch (const json::exception& ex) {
        throw Error("BadJson", std::string("frame: ") + ex.what());
    }
}

WireFrame decode_frame(std::string_view bytes) {
    std::uint32_t n = decode_frame_length(bytes);
    if (bytes.size() != 4 + static_cast<std::size_t>(n))
        throw Error("BadJson", "frame length " + std::to_string(n) + " does not match " +
                                   std::to_string(bytes.size() - 4) + " payload bytes");
    return decode_frame_payload(bytes.substr(4));
}

}  // namespace sbpm::runtime
