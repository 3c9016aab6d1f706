#include <doctest.h>

#include <fstream>
#include <sstream>

#include "cli/commands.hpp"
#include "cli/scenario.hpp"
#include "support/fixtures.hpp"

using namespace sbpm::cli;
using nlohmann::json;
using sbpm::testing::fixture_bundle;
using sbpm::testing::fixture_dir;
using sbpm::testing::TempDir;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::string error_code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const sbpm::Error& e) {
        return e.code();
    }
    return "";
}

struct Ran {
    int code;
    std::string out, err;
    std::vector<json> trace() const {
        std::vector<json> rows;
        std::istringstream in(out);
        for (std::string line; std::getline(in, line);)
            if (!line.empty()) rows.push_back(json::parse(line));
        return rows;
    }
};

fs::path compiled(const TempDir& dir, const std::string& fixture) {
    fs::path out = dir.path / (fixture + ".sbpmb");
    std::ostringstream o, e;
    REQUIRE(cmd_compile({.dir = fixture_dir(fixture), .output = out}, o, e) == kExitOk);
    return out;
}

Ran run(const RunOptions& opts) {
    std::ostringstream o, e;
    int code = cmd_run(opts, o, e);
    return {code, o.str(), e.str()};
}

// Per subject: kind plus the identity-free part of each record.
std::map<std::string, std::vector<std::string>> shape(const std::vector<json>& trace) {
    std::map<std::string, std::vector<std::string>> out;
    for (const auto& r : trace) {
        const json& d = r["data"];
        std::string key = r["kind"].get<std::string>();
        for (const char* f : {"state", "message", "outcome", "from", "to"})
            if (d.contains(f) && d[f].is_string()) key += " " + d[f].get<std::string>();
        out[r["subject"]].push_back(key);
    }
    return out;
}

const char* kOrderScenario = R"(Customer:
  - at: place order
    outcome: submit
    payload: {item: {sku: "A-1", qty: 2}}
  - {at: review, outcome: accept}
OrderHandling:
  - {at: check order, outcome: accept}
Shipment:
  - {at: dispatch, outcome: shipped}
)";

}  // namespace

TEST_CASE("validate exit codes") {
    std::ostringstream out, err;
    CHECK(cmd_validate({.dir = fixture_dir("pingpong")}, out, err) == kExitOk);

    out.str("");
    CHECK(cmd_validate({.dir = fixture_dir("mutual_wait")}, out, err) == kExitError);
    CHECK(out.str().find("counterexample") != std::string::npos);

    out.str("");
    CHECK(cmd_validate({.dir = fixture_dir("order"), .cap = 2, .format = "json", .strict = true}, out, err) ==
          kExitInconclusive);
    json doc = json::parse(out.str());
    CHECK(doc["soundness"]["verdict"] == "inconclusive");
    CHECK(doc["soundness"]["cap_hit"] == true);
    CHECK(cmd_validate({.dir = fixture_dir("order"), .cap = 2}, out, err) == kExitOk);

    CHECK(cmd_validate({.dir = fixture_dir("direction_flip")}, out, err) == kExitError);
    CHECK(cmd_validate({.dir = "/nonexistent"}, out, err) == kExitError);
}

TEST_CASE("compile is reproducible and names the bundle after the process") {
    TempDir dir("sbpm-cli");
    std::ostringstream out, err;
    fs::path a = dir.path / "a.sbpmb", b = dir.path / "b.sbpmb";
    REQUIRE(cmd_compile({.dir = fixture_dir("pingpong"), .output = a}, out, err) == kExitOk);
    REQUIRE(cmd_compile({.dir = fixture_dir("pingpong"), .output = b}, out, err) == kExitOk);
    CHECK(slurp(a) == slurp(b));

    fs::path cwd = fs::current_path();
    fs::current_path(dir.path);
    CHECK(cmd_compile({.dir = fixture_dir("pingpong")}, out, err) == kExitOk);
    fs::current_path(cwd);
    CHECK(fs::exists(dir.path / "PingPong.sbpmb"));

    fs::path bad = dir.path / "bad.sbpmb";
    CHECK(cmd_compile({.dir = fixture_dir("direction_flip"), .output = bad}, out, err) == kExitError);
    CHECK_FALSE(fs::exists(bad));

    fs::path stamped = dir.path / "stamped.sbpmb";
    CHECK(cmd_compile({.dir = fixture_dir("pingpong"), .output = stamped, .stamp = true}, out, err) == kExitOk);
    CHECK(sbpm::compile::load_bundle(stamped).manifest.created_at != sbpm::compile::kPinnedCreatedAt);

    std::ostringstream dis;
    CHECK(cmd_disasm(a, dis, err) == kExitOk);
    CHECK(dis.str().find("PingPong") != std::string::npos);
    CHECK(cmd_disasm(dir.path / "missing.sbpmb", dis, err) == kExitError);
}

TEST_CASE("supervisor template") {
    TempDir dir("sbpm-cli");
    write(dir.path / "sup.yaml", "send_policy: drop-error\nrestart: {policy: never}\nservice_timeout_ms: 250\n");
    fs::path out = dir.path / "bp.sbpmb";
    std::ostringstream o, e;
    REQUIRE(cmd_compile({.dir = fixture_dir("backpressure"), .output = out, .supervisor_template = dir.path / "sup.yaml"},
                        o, e) == kExitOk);
    auto b = sbpm::compile::load_bundle(out);
    CHECK(b.supervisor.send_policy == sbpm::compile::SendPolicy::drop_error);
    CHECK(b.supervisor.restart_policy.kind == sbpm::compile::RestartPolicy::Kind::never);
    CHECK(b.supervisor.service_timeout_ms == 250);

    CHECK(error_code_of([] { supervisor_template_from_json(json{{"send_policy", "yolo"}}); }) == "BadTemplate");
    CHECK(supervisor_template_from_json(nullptr) == sbpm::compile::SupervisorConfig{});
}

TEST_CASE("scenario documents") {
    Scenario yaml = parse_scenario(kOrderScenario);
    Scenario js = parse_scenario(R"({"Customer":[{"at":"place order","outcome":"submit",
        "payload":{"item":{"sku":"A-1","qty":2}}},{"at":"review","outcome":"accept"}],
        "OrderHandling":[{"at":"check order","outcome":"accept"}],
        "Shipment":[{"at":"dispatch","outcome":"shipped"}]})");
    REQUIRE(yaml.steps.size() == 3);
    for (const auto& [subject, steps] : js.steps) {
        REQUIRE(yaml.steps[subject].size() == steps.size());
        for (std::size_t i = 0; i < steps.size(); ++i) {
            CHECK(yaml.steps[subject][i].at == steps[i].at);
            CHECK(yaml.steps[subject][i].outcome == steps[i].outcome);
            CHECK(yaml.steps[subject][i].payload == steps[i].payload);
        }
    }
    CHECK(parse_document("qty: 2\nsku: \"7\"\nok: true") == json{{"qty", 2}, {"sku", "7"}, {"ok", true}});

    auto order = fixture_bundle("order");
    check_scenario(yaml, order);
    auto code = [&](const std::string& text) {
        return error_code_of([&] { check_scenario(parse_scenario(text), order); });
    };
    CHECK(code(R"({"Nobody":[]})") == "ScenarioError");
    CHECK(code(R"({"Customer":[{"at":"nowhere","outcome":"submit"}]})") == "ScenarioError");
    CHECK(code(R"({"Customer":[{"at":"await delivery","outcome":"submit"}]})") == "ScenarioError");
    CHECK(code(R"({"Customer":[{"at":"place order","outcome":"dance"}]})") == "ScenarioError");
    CHECK(code(R"({"Customer":[{"at":"place order"}]})") == "ScenarioError");
    CHECK(code(R"({"Customer":[{"at":"c0","outcome":"submit"}]})") == "");
    CHECK(code(R"({"Customer":[{"at":"send order","outcome":"order"}]})") == "");
    CHECK(code("[1, 2]") == "ScenarioError");
}

TEST_CASE("run exit codes") {
    TempDir dir("sbpm-cli");
    fs::path bundle = compiled(dir, "pingpong");
    write(dir.path / "ok.json", R"({"A":[{"at":"prepare","outcome":"ok"}]})");
    write(dir.path / "bad.json", R"({"A":[{"at":"await pong","outcome":"ok"}]})");

    Ran ok = run({.bundle = bundle, .scenario = dir.path / "ok.json"});
    CHECK(ok.code == kExitOk);
    auto trace = ok.trace();
    REQUIRE_FALSE(trace.empty());
    CHECK(trace.back()["kind"] == "INSTANCE_COMPLETED");

    Ran stalled = run({.bundle = bundle, .max_idle_ms = 300});
    CHECK(stalled.code == kExitStalled);
    CHECK(stalled.err.find("stalled") != std::string::npos);
    CHECK(stalled.err.find("\"prepare\"") != std::string::npos);

    Ran bad = run({.bundle = bundle, .scenario = dir.path / "bad.json"});
    CHECK(bad.code == kExitError);
    CHECK(bad.err.find("ScenarioError") != std::string::npos);
    CHECK(bad.out.empty());

    CHECK(run({.bundle = dir.path / "missing.sbpmb"}).code == kExitError);
}

TEST_CASE("a payload the schema rejects fails the run") {
    TempDir dir("sbpm-cli");
    fs::path bundle = compiled(dir, "order");
    write(dir.path / "s.json", R"({"Customer":[{"at":"place order","outcome":"submit","payload":{"item":{"sku":1}}},
                                               {"at":"send order","outcome":"order","payload":{"item":"x"}}]})");
    Ran r = run({.bundle = bundle, .scenario = dir.path / "s.json", .max_idle_ms = 2000});
    CHECK(r.code == kExitError);
    CHECK(r.err.find("PayloadInvalid") != std::string::npos);
}

TEST_CASE("a fixed scenario yields the same per-subject events on every run") {
    TempDir dir("sbpm-cli");
    fs::path bundle = compiled(dir, "order");
    write(dir.path / "order.yaml", kOrderScenario);
    Ran first = run({.bundle = bundle, .scenario = dir.path / "order.yaml"});
    REQUIRE(first.code == kExitOk);
    for (int i = 0; i < 3; ++i) {
        Ran again = run({.bundle = bundle, .scenario = dir.path / "order.yaml"});
        REQUIRE(again.code == kExitOk);
        CHECK(shape(again.trace()) == shape(first.trace()));
    }
}
