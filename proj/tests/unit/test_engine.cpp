#include <doctest.h>

#include <atomic>
#include <fstream>
#include <functional>
#include <random>
#include <thread>

#include <httplib.h>

#include "sbpm/engine/engine.hpp"
#include "sbpm/engine/http_api.hpp"
#include "sbpm/engine/rest_client.hpp"
#include "sbpm/runtime/events.hpp"
#include "support/fixtures.hpp"

using namespace sbpm::engine;
using namespace std::chrono_literals;
using nlohmann::json;
using sbpm::runtime::ActorStatus;
using sbpm::runtime::EventKind;
using sbpm::runtime::InstanceStatus;
using sbpm::testing::fixture_bundle;
using sbpm::testing::TempDir;

namespace {

std::string error_code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const sbpm::Error& e) {
        return e.code();
    }
    return "";
}

std::string bundle_bytes(const std::string& fixture, sbpm::compile::SupervisorConfig templ = {}) {
    return sbpm::compile::encode_bundle(fixture_bundle(fixture, templ));
}

EngineConfig engine_config(const TempDir& dir, const std::string& node = "n1") {
    EngineConfig cfg;
    cfg.data_dir = dir.path;
    cfg.node_id = node;
    cfg.monitor_interval = 20ms;
    return cfg;
}

bool wait_done(Engine& e, const std::string& id, std::chrono::milliseconds timeout = 10s) {
    return e.wait_for([&] { return e.instance(id)->status() != InstanceStatus::running; }, timeout);
}

const sbpm::runtime::Task* task_of(const std::vector<sbpm::runtime::Task>& tasks, const std::string& subject) {
    for (const auto& t : tasks)
        if (t.subject == subject) return &t;
    return nullptr;
}

// Completes the next task for `agent` at subject `subject` once it shows up.
void complete_next(Engine& e, const std::string& agent, const std::string& subject, const std::string& outcome,
                   const json& payload = nullptr) {
    std::string task_id;
    REQUIRE(e.wait_for(
        [&] {
            auto tasks = e.list_tasks(agent);
            if (auto* t = task_of(tasks, subject)) task_id = t->task_id;
            return !task_id.empty();
        },
        10s));
    e.complete_task(task_id, outcome, payload);
}

std::map<std::string, std::vector<std::string>> states_by_subject(const json& trace) {
    std::map<std::string, std::vector<std::string>> out;
    for (const auto& r : trace)
        if (r["kind"] == "STATE_ENTERED") out[r["subject"].get<std::string>()].push_back(r["data"]["state"]);
    return out;
}

// Minimal service agent for refinement calls.
struct StubService {
    httplib::Server server;
    std::thread thread;
    int port = 0;
    std::atomic<int> calls{0};
    json last_body;
    std::mutex mu;

    explicit StubService(std::function<void(const json&, httplib::Response&)> handler) {
        server.Post("/svc", [this, handler](const httplib::Request& req, httplib::Response& res) {
            ++calls;
            json body = json::parse(req.body);
            {
                std::lock_guard lock(mu);
                last_body = body;
            }
            handler(body, res);
        });
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~StubService() {
        server.stop();
        thread.join();
    }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port) + "/svc"; }
};

json order_bindings(const std::string& service_url) {
    return json{{"customer", "carol"},
                {"clerk", "alice"},
                {"shipper", {{"agent", "carrier"}, {"kind", "service"}, {"url", service_url}}}};
}

const json kOrderPayload = {{"item", {{"sku", "A-1"}, {"qty", 2}}}};

// Drives the order fixture with the customer accepting; OrderHandling's
// cancellation window times out.
void drive_order(Engine& e) {
    complete_next(e, "carol", "Customer", "submit", kOrderPayload);
    complete_next(e, "alice", "OrderHandling", "accept");
    complete_next(e, "carol", "Customer", "accept");
}

}  // namespace

TEST_CASE("deploy is idempotent by content hash and rejects corrupt bundles") {
    TempDir dir("sbpm-engine");
    Engine e(engine_config(dir));
    std::string bytes = bundle_bytes("pingpong");
    std::string h1 = e.deploy(bytes);
    CHECK(h1.size() == 64);
    CHECK(e.deploy(bytes) == h1);
    CHECK(e.bundles().size() == 1);

    auto files_before = std::distance(std::filesystem::directory_iterator(dir.path / "bundles"), {});
    CHECK(error_code_of([&] { e.deploy(bytes.substr(0, bytes.size() / 2)); }) == "CorruptBundle");
    CHECK(std::distance(std::filesystem::directory_iterator(dir.path / "bundles"), {}) == files_before);

    e.deploy(bundle_bytes("order"));
    auto list = e.bundles();
    REQUIRE(list.size() == 2);
    CHECK(list[0].name == "Order Process");
    CHECK(list[1].name == "Ping Pong");
    CHECK(list[1].hash == h1);
}

TEST_CASE("ping-pong through the worklist") {
    TempDir dir("sbpm-engine");
    Engine e(engine_config(dir));
    e.start();
    std::string h = e.deploy(bundle_bytes("pingpong"));

    CHECK(error_code_of([&] { e.create_instance({.hash = std::string(64, 'a')}); }) == "UnknownBundle");
    CHECK(error_code_of([&] { e.create_instance({.hash = h, .bindings = {{"clerk", "alice"}}}); }) == "UnboundRole");
    CHECK(error_code_of([&] { e.instance_report("nope"); }) == "UnknownInstance");

    std::string id = e.create_instance({.hash = h, .bindings = {{"clerk", "alice"}, {"system", "bot"}}});
    json report = e.instance_report(id);
    CHECK(report["status"] == "running");
    CHECK(report["subjects"]["A"]["state_name"] == "prepare");
    CHECK(report["subjects"]["B"]["state_name"] == "await ping");

    auto tasks = e.list_tasks("alice");
    REQUIRE(tasks.size() == 1);
    CHECK(tasks[0].subject == "A");
    CHECK(tasks[0].kind == sbpm::runtime::TaskKind::choose_outcome);
    REQUIRE(tasks[0].options.size() == 1);
    CHECK(tasks[0].options[0].outcome == "ok");
    CHECK(e.list_tasks("bot").empty());

    CHECK(error_code_of([&] { e.complete_task(tasks[0].task_id, "ok", nullptr, std::string("mallory")); }) ==
          "NotYourTask");
    CHECK(error_code_of([&] { e.complete_task(tasks[0].task_id, "nope", nullptr); }) == "NoSuchOutcome");
    CHECK(error_code_of([&] { e.complete_task("no-such-task", "ok", nullptr); }) == "UnknownTask");

    e.complete_task(tasks[0].task_id, "ok", nullptr, std::string("alice"));
    CHECK(error_code_of([&] { e.complete_task(tasks[0].task_id, "ok", nullptr); }) == "TaskGone");
    REQUIRE(wait_done(e, id));
    CHECK(e.instance(id)->status() == InstanceStatus::completed);
    CHECK(e.list_tasks("alice").empty());

    json trace = e.trace(id);
    CHECK(trace.back()["kind"] == "INSTANCE_COMPLETED");
    auto states = states_by_subject(trace);
    CHECK(states["A"] == std::vector<std::string>{"s0", "s1", "s2", "s3"});
    CHECK(states["B"] == std::vector<std::string>{"s0", "s1", "s2"});
}

TEST_CASE("metrics are recomputable from a copy of the log") {
    TempDir dir("sbpm-engine");
    Engine e(engine_config(dir));
    e.start();
    std::string h = e.deploy(bundle_bytes("pingpong"));
    std::string id = e.create_instance({.hash = h, .bindings = {{"clerk", "alice"}, {"system", "bot"}}});
    std::this_thread::sleep_for(20ms);
    complete_next(e, "alice", "A", "ok");
    REQUIRE(wait_done(e, id));

    json live = e.instance_report(id)["metrics"];
    TempDir copy("sbpm-copy");
    std::filesystem::copy_file(dir.path / "instances" / id / "events.log", copy.path / "events.log");
    auto log = sbpm::runtime::read_event_log(copy.path / "events.log");
    auto b = e.repository().get(h);
    CHECK(sbpm::runtime::to_json(sbpm::runtime::compute_metrics(log, *b)) == live);

    CHECK(live["complete"] == true);
    CHECK(live["instance_duration_ms"].get<std::int64_t>() == log.back().ts - log.front().ts);
    CHECK(live["per_subject_wait_ms"]["A"].get<std::int64_t>() >= 20);
}

TEST_CASE("open tasks match actors awaiting a task at every quiescent point") {
    TempDir dir("sbpm-engine");
    Engine e(engine_config(dir));
    e.start();
    std::string h = e.deploy(bundle_bytes("order"));
    // A human shipper: a service call in flight is not a quiescent point.
    std::string id = e.create_instance(
        {.hash = h, .bindings = {{"customer", "carol"}, {"clerk", "alice"}, {"shipper", "sam"}}});

    auto consistent = [&] {
        auto snap = e.instance(id)->snapshot();
        std::set<std::string> awaiting, open;
        for (const auto& [s, a] : snap.actors)
            if (a.status == ActorStatus::awaiting_task) awaiting.insert(s);
        for (const auto& t : e.instance(id)->tasks()) open.insert(t.subject);
        return awaiting == open;
    };
    CHECK(consistent());
    complete_next(e, "carol", "Customer", "submit", kOrderPayload);
    CHECK(consistent());
    complete_next(e, "alice", "OrderHandling", "accept");
    CHECK(consistent());
    complete_next(e, "carol", "Customer", "accept");
    CHECK(consistent());
    complete_next(e, "sam", "Shipment", "shipped");
    CHECK(consistent());
    REQUIRE(wait_done(e, id));
    CHECK(e.instance(id)->status() == InstanceStatus::completed);
    CHECK(consistent());
}

TEST_CASE("instances are isolated under concurrent load") {
    TempDir dir("sbpm-engine");
    Engine e(engine_config(dir));
    e.start();
    std::string h = e.deploy(bundle_bytes("pingpong"));
    std::vector<std::string> ids;
    for (int i = 0; i < 24; ++i)
        ids.push_back(e.create_instance({.hash = h, .bindings = {{"clerk", "alice"}, {"system", "bot"}}}));

    auto tasks = e.list_tasks("alice");
    REQUIRE(tasks.size() == ids.size());
    std::shuffle(tasks.begin(), tasks.end(), std::mt19937(7));
    std::vector<std::thread> workers;
    for (int w = 0; w < 4; ++w)
        workers.emplace_back([&, w] {
            for (std::size_t i = w; i < tasks.size(); i += 4) e.complete_task(tasks[i].task_id, "ok", nullptr);
        });
    for (auto& t : workers) t.join();

    for (const auto& id : ids) {
        REQUIRE(wait_done(e, id));
        CHECK(e.instance(id)->status() == InstanceStatus::completed);
        int consumed = 0;
        for (const auto& r : e.instance(id)->log()) {
            std::string text = sbpm::runtime::to_line(r);
            for (const auto& other : ids)
                if (other != id) CHECK(text.find(other) == std::string::npos);
            if (r.kind == EventKind::MSG_DELIVERED) CHECK(r.data["envelope"]["instance_id"] == id);
            if (r.kind == EventKind::MSG_CONSUMED) ++consumed;
        }
        CHECK(consumed == 2);
    }
}

TEST_CASE("service refinements") {
    TempDir dir("sbpm-engine");
    Engine e(engine_config(dir));
    e.start();
    sbpm::compile::SupervisorConfig templ;
    templ.service_timeout_ms = 200;
    std::string h = e.deploy(bundle_bytes("order", templ));

    SUBCASE("timeout takes the on-error outcome") {
        StubService svc([](const json&, httplib::Response& res) {
            std::this_thread::sleep_for(600ms);
            res.set_content(R"({"outcome":"shipped"})", "application/json");
        });
        std::string id = e.create_instance({.hash = h, .bindings = order_bindings(svc.url())});
        drive_order(e);
        REQUIRE(wait_done(e, id));
        CHECK(e.instance(id)->status() == InstanceStatus::completed);
        bool took_error_arm = false;
        for (const auto& r : e.instance(id)->log())
            if (r.subject == "Shipment" && r.kind == EventKind::CHOICE_MADE) took_error_arm = r.data["outcome"] == "failed";
        CHECK(took_error_arm);
    }
    SUBCASE("a declared outcome passes through") {
        StubService svc([](const json&, httplib::Response& res) {
            res.set_content(R"({"outcome":"shipped"})", "application/json");
        });
        std::string id = e.create_instance({.hash = h, .bindings = order_bindings(svc.url())});
        drive_order(e);
        REQUIRE(wait_done(e, id));
        CHECK(e.instance(id)->status() == InstanceStatus::completed);
        std::lock_guard lock(svc.mu);
        CHECK(svc.last_body["instance"] == id);
        CHECK(svc.last_body["subject"] == "Shipment");
        CHECK(svc.last_body["state"] == "p1");
    }
    SUBCASE("unreachable service takes the on-error outcome") {
        std::string id = e.create_instance({.hash = h, .bindings = order_bindings("http://127.0.0.1:1/svc")});
        drive_order(e);
        REQUIRE(wait_done(e, id));
        CHECK(e.instance(id)->status() == InstanceStatus::completed);
    }
    SUBCASE("an undeclared outcome crashes the subject until the restart limit") {
        StubService svc([](const json&, httplib::Response& res) {
            res.set_content(R"({"outcome":"teleported"})", "application/json");
        });
        std::string id = e.create_instance({.hash = h, .bindings = order_bindings(svc.url())});
        drive_order(e);
        REQUIRE(wait_done(e, id));
        CHECK(e.instance(id)->status() == InstanceStatus::failed);
        CHECK(e.instance(id)->failure_reason().rfind("RestartLimitExceeded", 0) == 0);
        int crashed = 0;
        for (const auto& r : e.instance(id)->log())
            if (r.subject == "Shipment" && r.kind == EventKind::CRASHED) ++crashed;
        CHECK(crashed == 4);
        CHECK(svc.calls == 4);
    }
}

TEST_CASE("instances resume after an engine restart") {
    TempDir dir("sbpm-engine");
    std::string h, id, task_id;
    {
        Engine e(engine_config(dir));
        e.start();
        h = e.deploy(bundle_bytes("pingpong"));
        id = e.create_instance({.hash = h, .bindings = {{"clerk", "alice"}, {"system", "bot"}}});
        task_id = e.list_tasks("alice").at(0).task_id;
    }
    Engine e(engine_config(dir));
    e.start();
    CHECK(e.bundles().size() == 1);
    REQUIRE(e.list_tasks("alice").size() == 1);
    CHECK(e.list_tasks("alice")[0].task_id == task_id);
    e.complete_task(task_id, "ok", nullptr);
    REQUIRE(wait_done(e, id));
    CHECK(e.instance(id)->status() == InstanceStatus::completed);
}

TEST_CASE("REST API") {
    TempDir dir("sbpm-engine");
    Engine e(engine_config(dir));
    HttpApi api(e);
    int port = api.start("127.0.0.1", 0);
    e.set_http_endpoint("127.0.0.1", port);
    e.start();
    RestClient c("127.0.0.1", port);

    std::string h = c.post_bytes("/bundles", bundle_bytes("pingpong"))["hash"];
    CHECK(c.post_bytes("/bundles", bundle_bytes("pingpong"))["hash"] == h);
    CHECK(error_code_of([&] { c.post_bytes("/bundles", "SBPMBNDL garbage"); }) == "CorruptBundle");
    json bundles = c.get("/bundles");
    REQUIRE(bundles.size() == 1);
    CHECK(bundles[0]["process_id"] == "PingPong");

    std::string id =
        c.post_json("/instances", {{"hash", h}, {"bindings", {{"clerk", "alice"}, {"system", "bot"}}}})["instance_id"];
    CHECK(c.get("/instances/" + id)["status"] == "running");
    CHECK(error_code_of([&] { c.get("/instances/missing"); }) == "UnknownInstance");
    CHECK(error_code_of([&] { c.post_json("/instances", {{"hash", h}}); }) == "UnboundRole");
    CHECK(error_code_of([&] { c.post_json("/instances", {{"bindings", {}}}); }) == "BadRequest");

    json tasks = c.get("/agents/alice/tasks");
    REQUIRE(tasks.size() == 1);
    CHECK(tasks[0]["subject"] == "A");
    CHECK(tasks[0]["kind"] == "choose_outcome");
    CHECK(tasks[0]["options"] == json::array({"ok"}));
    CHECK(tasks[0]["assigned_role"] == "clerk");
    std::string task_id = tasks[0]["task_id"];

    CHECK(error_code_of([&] { c.post_json("/tasks/" + task_id + "/complete", {{"outcome", "bad"}}); }) ==
          "NoSuchOutcome");
    c.post_json("/tasks/" + task_id + "/complete", {{"outcome", "ok"}});
    CHECK(error_code_of([&] { c.post_json("/tasks/" + task_id + "/complete", {{"outcome", "ok"}}); }) == "TaskGone");
    REQUIRE(wait_done(e, id));
    json trace = c.get("/instances/" + id + "/trace");
    CHECK(trace.back()["kind"] == "INSTANCE_COMPLETED");
    CHECK(c.get("/instances/" + id)["metrics"]["complete"] == true);

    c.post_json("/nodes/register", {{"node_id", "n9"}, {"host", "10.0.0.9"}, {"port", 7000}});
    json nodes = c.get("/nodes");
    REQUIRE(nodes.size() == 2);
    CHECK(nodes[0]["node_id"] == "n1");
    CHECK(nodes[0]["local"] == true);
    CHECK(nodes[1]["node_id"] == "n9");
    CHECK(nodes[1]["wire_port"] == 7001);

    httplib::Client raw("127.0.0.1", port);
    auto res = raw.Post("/tasks/x/complete", "{not json", "application/json");
    REQUIRE(res);
    CHECK(res->status == 400);
    CHECK(json::parse(res->body)["code"] == "BadJson");
    res = raw.Get("/instances/missing");
    CHECK(res->status == 404);
    res = raw.Post("/tasks/" + task_id + "/complete", R"({"outcome":"ok"})", "application/json");
    CHECK(res->status == 410);

    api.stop();
    e.stop();
}

TEST_CASE("wire frames answered by the engine") {
    TempDir dir("sbpm-engine");
    Engine e(engine_config(dir));
    e.start();
    using sbpm::runtime::FrameKind;
    using sbpm::runtime::WireFrame;
    CHECK(e.handle_frame(WireFrame{.kind = FrameKind::HELLO, .node = "n2"}).kind == FrameKind::HELLO_ACK);
    CHECK(e.handle_frame(WireFrame{.kind = FrameKind::PING, .node = "n2"}).kind == FrameKind::PONG);

    sbpm::runtime::Envelope env{"ghost", "A", "B", "ping", "c", 1, nullptr};
    WireFrame msg{.kind = FrameKind::MSG, .node = "n2", .instance = "ghost", .envelope = env};
    WireFrame reply = e.handle_frame(msg);
    CHECK(reply.kind == FrameKind::NACK);
    CHECK(reply.reason == "unknown_instance");
    CHECK(reply.ack_seq == 1);

    std::string h = e.deploy(bundle_bytes("pingpong"));
    std::string id = e.create_instance({.hash = h, .bindings = {{"clerk", "alice"}, {"system", "bot"}}});
    msg.instance = id;
    msg.envelope->instance_id = "elsewhere";
    msg.envelope->message_id = "nonsense";
    reply = e.handle_frame(msg);
    CHECK(reply.kind == FrameKind::NACK);
    CHECK(reply.reason->rfind("rejected:UnknownTarget", 0) == 0);
}

TEST_CASE("two nodes split one instance") {
    TempDir d1("sbpm-n1"), d2("sbpm-n2");
    Engine e1(engine_config(d1, "n1")), e2(engine_config(d2, "n2"));
    HttpApi a1(e1), a2(e2);
    e1.set_http_endpoint("127.0.0.1", a1.start("127.0.0.1", 0));
    e2.set_http_endpoint("127.0.0.1", a2.start("127.0.0.1", 0));
    e1.start();
    e2.start();
    e2.join("127.0.0.1", e1.self().port);
    REQUIRE(e1.nodes().size() == 2);
    REQUIRE(e2.nodes().size() == 2);
    CHECK(e1.nodes()[1].wire_port == e2.wire_port());

    std::string h = e1.deploy(bundle_bytes("pingpong"));
    CHECK(error_code_of([&] {
              e1.create_instance({.hash = h, .bindings = {{"clerk", "a"}, {"system", "b"}}, .placement = {{"B", "n7"}}});
          }) == "UnknownNode");
    CHECK(error_code_of([&] {
              e1.create_instance({.hash = h, .bindings = {{"clerk", "a"}, {"system", "b"}}, .placement = {{"Q", "n2"}}});
          }) == "UnknownSubject");

    std::string id = e1.create_instance(
        {.hash = h, .bindings = {{"clerk", "alice"}, {"system", "bot"}}, .placement = {{"B", "n2"}}});
    CHECK(e2.instance(id)->config().origin == "n1");
    CHECK(e1.instance(id)->remote_subjects() == std::set<std::string>{"B"});
    complete_next(e1, "alice", "A", "ok");
    REQUIRE(wait_done(e1, id));
    CHECK(e1.instance(id)->status() == InstanceStatus::completed);
    CHECK(e2.instance(id)->status() == InstanceStatus::completed);

    json merged = e1.trace(id);
    auto states = states_by_subject(merged);
    CHECK(states["A"] == std::vector<std::string>{"s0", "s1", "s2", "s3"});
    CHECK(states["B"] == std::vector<std::string>{"s0", "s1", "s2"});
    for (const auto& r : merged) CHECK(r["node"] == (r["subject"] == "B" ? "n2" : "n1"));
    CHECK(e1.instance_report(id)["subjects"]["B"]["status"] == "halted");

    // A task held by a shard shows up in the origin's worklist and completes through it.
    std::string id2 = e1.create_instance(
        {.hash = h, .bindings = {{"clerk", "alice"}, {"system", "bot"}}, .placement = {{"A", "n2"}}});
    CHECK(e1.list_tasks("alice").empty());
    json tasks = e1.tasks_json("alice");
    REQUIRE(tasks.size() == 1);
    CHECK(tasks[0]["instance_id"] == id2);
    CHECK(e1.tasks_json("alice", true).empty());
    e1.complete_task(tasks[0]["task_id"], "ok", nullptr);
    REQUIRE(wait_done(e1, id2));
    CHECK(e1.instance(id2)->status() == InstanceStatus::completed);
    CHECK(error_code_of([&] { e1.complete_task(tasks[0]["task_id"], "ok", nullptr); }) == "TaskGone");

    a1.stop();
    a2.stop();
}
