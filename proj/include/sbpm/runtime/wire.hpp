#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "sbpm/runtime/envelope.hpp"

namespace sbpm::runtime {

enum class FrameKind { HELLO, HELLO_ACK, MSG, ACK, NACK, PING, PONG };
std::string_view to_string(FrameKind k);

inline constexpr int kWireVersion = 1;
inline constexpr std::uint32_t kMaxFramePayload = 16u * 1024 * 1024;

struct WireFrame {
    int v = kWireVersion;
    FrameKind kind = FrameKind::PING;
    std::string node;      // sending node
    std::string instance;  // empty outside MSG/ACK/NACK
    std::optional<Envelope> envelope;
    std::optional<std::int64_t> ack_seq;
    std::optional<std::string> reason;

    bool operator==(const WireFrame&) const = default;
};

// 4-byte big-endian payload length followed by canonical JSON.
std::string encode_frame(const WireFrame& f);

// Parses a length header; throws Error("FrameTooLarge") past the bound.
std::uint32_t decode_frame_length(std::string_view header4);

// Decodes one payload (without the header). Throws BadJson or UnsupportedVersion.
WireFrame decode_frame_payload(std::string_view payload);

// Decodes a complete frame, header included.
WireFrame decode_frame(std::string_view bytes);

}  // namespace sbpm::runtime
