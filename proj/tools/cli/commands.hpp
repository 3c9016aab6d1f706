#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include <json.hpp>

#include "sbpm/compile/bundle.hpp"

namespace sbpm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitInconclusive = 2;
inline constexpr int kExitStalled = 3;

struct ValidateOptions {
    std::filesystem::path dir;
    int pool_bound = 1;
    std::size_t cap = 1'000'000;
    std::string format = "text";  // text | json
    bool strict = false;
};
int cmd_validate(const ValidateOptions& o, std::ostream& out, std::ostream& err);

struct CompileOptions {
    std::filesystem::path dir;
    std::optional<std::filesystem::path> output;  // default <process-id>.sbpmb
    bool stamp = false;
    std::optional<std::filesystem::path> supervisor_template;
};
int cmd_compile(const CompileOptions& o, std::ostream& out, std::ostream& err);

int cmd_disasm(const std::filesystem::path& bundle, std::ostream& out, std::ostream& err);

struct ServeOptions {
    std::string listen = "127.0.0.1:8080";
    std::string node_id = "local";
    std::filesystem::path data_dir = "sbpm-data";
    std::optional<int> wire_port;  // default: listen port + 1 (0 when listening on port 0)
    std::optional<std::string> join;
};
// Runs until SIGINT or SIGTERM.
int cmd_serve(const ServeOptions& o, std::ostream& out, std::ostream& err);

struct RunOptions {
    std::filesystem::path bundle;
    std::optional<std::filesystem::path> scenario;
    std::optional<std::filesystem::path> placement;  // subject -> node id
    std::optional<std::string> connect;              // drive a running `serve` node instead
    std::optional<std::string> join;                 // join the embedded engine to a cluster
    std::int64_t max_idle_ms = 30'000;
    std::optional<std::filesystem::path> data_dir;  // default: a temporary directory
    std::string node_id = "local";
};
// Prints the event trace as JSON lines. 0 completed, 1 failed or bad input,
// 3 stalled.
int cmd_run(const RunOptions& o, std::ostream& out, std::ostream& err);

// Missing keys keep their defaults. Throws BadTemplate.
compile::SupervisorConfig supervisor_template_from_json(const nlohmann::json& j);

}  // namespace sbpm::cli
