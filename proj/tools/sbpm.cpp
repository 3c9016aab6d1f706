#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "cli/commands.hpp"

namespace {

std::string env_or(const char* name, std::string fallback) {
    const char* v = std::getenv(name);
    return v && *v ? std::string(v) : std::move(fallback);
}

}  // namespace

int main(int argc, char** argv) {
    using namespace sbpm::cli;
    CLI::App app{"sbpm: validate, compile and execute subject-oriented process models"};
    app.require_subcommand(1);

    ValidateOptions vo;
    auto* validate = app.add_subcommand("validate", "check a model directory");
    validate->add_option("dir", vo.dir, "model directory")->required();
    validate->add_option("--pool-bound", vo.pool_bound, "input pool bound for the soundness search")
        ->check(CLI::Range(1, 64));
    validate->add_option("--cap", vo.cap, "state cap for the soundness search");
    validate->add_option("--format", vo.format, "text or json")->check(CLI::IsMember({"text", "json"}));
    validate->add_flag("--strict", vo.strict, "exit 2 when soundness is inconclusive");

    CompileOptions co;
    std::string output, templ;
    auto* compile = app.add_subcommand("compile", "compile a model directory into a bundle");
    compile->add_option("dir", co.dir, "model directory")->required();
    compile->add_option("-o,--output", output, "bundle file (default <process-id>.sbpmb)");
    compile->add_flag("--stamp", co.stamp, "record the build time in the manifest");
    compile->add_option("--template", templ, "supervisor template (JSON or YAML)");

    std::string disasm_bundle;
    auto* disasm = app.add_subcommand("disasm", "print a bundle in readable form");
    disasm->add_option("bundle", disasm_bundle, "bundle file")->required();

    ServeOptions so;
    so.listen = env_or("SBPM_LISTEN", "127.0.0.1:8080");
    so.node_id = env_or("SBPM_NODE_ID", "local");
    so.data_dir = env_or("SBPM_DATA_DIR", "sbpm-data");
    std::string join;
    int wire_port = -1;
    auto* serve = app.add_subcommand("serve", "run an engine node with its REST API");
    serve->add_option("--listen", so.listen, "host:port for the REST API");
    serve->add_option("--node-id", so.node_id, "node id");
    serve->add_option("--data-dir", so.data_dir, "bundle and instance storage");
    serve->add_option("--wire-port", wire_port, "message transport port (default: REST port + 1)");
    serve->add_option("--join", join, "host:port of a node to join");

    RunOptions ro;
    std::string scenario, placement, connect, run_join, data_dir;
    auto* run = app.add_subcommand("run", "execute a bundle against a scenario and print the trace");
    run->add_option("bundle", ro.bundle, "bundle file")->required();
    run->add_option("--scenario", scenario, "per-subject choices (JSON or YAML)");
    run->add_option("--placement", placement, "subject -> node id (JSON or YAML)");
    run->add_option("--max-idle-ms", ro.max_idle_ms, "give up after this long without progress (exit 3)");
    auto* connect_opt = run->add_option("--connect", connect, "host:port of a serve node to run on");
    auto* join_opt = run->add_option("--join", run_join, "host:port of a node the embedded engine joins");
    connect_opt->excludes(join_opt);
    run->add_option("--data-dir", data_dir, "keep engine data here instead of a temporary directory");
    run->add_option("--node-id", ro.node_id, "node id of the embedded engine");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitError;
    }

    if (*validate) return cmd_validate(vo, std::cout, std::cerr);
    if (*compile) {
        if (!output.empty()) co.output = output;
        if (!templ.empty()) co.supervisor_template = templ;
        return cmd_compile(co, std::cout, std::cerr);
    }
    if (*disasm) return cmd_disasm(disasm_bundle, std::cout, std::cerr);
    if (*serve) {
        if (!join.empty()) so.join = join;
        if (wire_port >= 0) so.wire_port = wire_port;
        return cmd_serve(so, std::cout, std::cerr);
    }
    if (!scenario.empty()) ro.scenario = scenario;
    if (!placement.empty()) ro.placement = placement;
    if (!connect.empty()) ro.connect = connect;
    if (!run_join.empty()) ro.join = run_join;
    if (!data_dir.empty()) ro.data_dir = data_dir;
    return cmd_run(ro, std::cout, std::cerr);
}
