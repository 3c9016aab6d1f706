#include "cli/commands.hpp"

#include <csignal>
#include <ctime>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "cli/scenario.hpp"
#include "sbpm/engine/engine.hpp"
#include "sbpm/engine/http_api.hpp"
#include "sbpm/engine/rest_client.hpp"
#include "sbpm/model/model_io.hpp"
#include "sbpm/validate/validate.hpp"

namespace sbpm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("IoError", "cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string utc_now() {
    std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void report_error(std::ostream& err, const Error& e) { err << "error: " << e.code() << ": " << e.what() << "\n"; }

// Common surface of an in-process engine and a remote one.
class EngineClient {
public:
    virtual ~EngineClient() = default;
    virtual std::string deploy(const std::string& bytes) = 0;
    virtual std::string create(const json& request) = 0;
    virtual json tasks(const std::string& agent) = 0;
    virtual void complete(const std::string& task_id, const std::string& outcome, const json& payload) = 0;
    virtual json report(const std::string& id) = 0;
    virtual json trace(const std::string& id) = 0;
    virtual void wait(std::chrono::milliseconds ms) = 0;
};

class EmbeddedClient : public EngineClient {
public:
    explicit EmbeddedClient(engine::Engine& e) : e_(e) {}
    std::string deploy(const std::string& bytes) override { return e_.deploy(bytes); }
    std::string create(const json& request) override {
        return e_.create_instance(engine::create_request_from_json(request));
    }
    json tasks(const std::string& agent) override { return e_.tasks_json(agent); }
    void complete(const std::string& task_id, const std::string& outcome, const json& payload) override {
        e_.complete_task(task_id, outcome, payload);
    }
    json report(const std::string& id) override { return e_.instance_report(id); }
    json trace(const std::string& id) override { return e_.trace(id); }
    void wait(std::chrono::milliseconds ms) override {
        bool woken = false;
        e_.wait_for([&] { return std::exchange(woken, true); }, ms);
    }

private:
    engine::Engine& e_;
};

class RemoteClient : public EngineClient {
public:
    RemoteClient(const std::string& host, int port) : c_(host, port, std::chrono::seconds(30)) {}
    std::string deploy(const std::string& bytes) override { return c_.post_bytes("/bundles", bytes).at("hash"); }
    std::string create(const json& request) override { return c_.post_json("/instances", request).at("instance_id"); }
    json tasks(const std::string& agent) override { return c_.get("/agents/" + agent + "/tasks"); }
    void complete(const std::string& task_id, const std::string& outcome, const json& payload) override {
        c_.post_json("/tasks/" + task_id + "/complete", json{{"outcome", outcome}, {"payload", payload}});
    }
    json report(const std::string& id) override { return c_.get("/instances/" + id); }
    json trace(const std::string& id) override { return c_.get("/instances/" + id + "/trace"); }
    void wait(std::chrono::milliseconds ms) override { std::this_thread::sleep_for(ms); }

private:
    engine::RestClient c_;
};

// Answers refinement calls from the scenario, as the service agent of every
// role whose subjects have refined function states.
class StubService {
public:
    StubService(ScenarioCursor& cursor, std::shared_ptr<const compile::Bundle> b) {
        server_.Post(R"(/agents/([^/]+))", [&cursor, b](const httplib::Request& req, httplib::Response& res) {
            json body = json::parse(req.body, nullptr, false);
            const compile::SubjectProgram* p =
                body.is_object() ? b->program(body.value("subject", std::string())) : nullptr;
            auto index = p ? p->index_of(body.value("state", std::string())) : std::nullopt;
            std::optional<ScenarioStep> step;
            if (index) step = cursor.take(p->subject, *index);
            if (!step) {
                res.status = 409;
                res.set_content(json{{"code", "NoScenarioStep"}, {"message", "scenario has no step here"}}.dump(),
                                "application/json");
                return;
            }
            json reply{{"outcome", step->outcome}};
            if (!step->payload.is_null()) reply["payload"] = step->payload;
            res.set_content(reply.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        if (port_ <= 0) throw Error("BindFailed", "cannot start the service stub");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~StubService() {
        server_.stop();
        thread_.join();
    }
    std::string url(const std::string& role) const {
        return "http://127.0.0.1:" + std::to_string(port_) + "/agents/" + role;
    }

private:
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
};

bool has_refinement(const compile::Bundle& b, const std::string& subject) {
    const compile::SubjectProgram* p = b.program(subject);
    if (!p) return false;
    for (const auto& st : p->states)
        if (st.refinement) return true;
    return false;
}

struct TempData {
    fs::path path;
    bool owned = false;
    ~TempData() {
        std::error_code ec;
        if (owned) fs::remove_all(path, ec);
    }
};

int drive(EngineClient& client, const std::string& id, const std::set<std::string>& agents, ScenarioCursor& cursor,
          std::int64_t max_idle_ms, std::ostream& err) {
    auto last_progress = std::chrono::steady_clock::now();
    std::string last_view;
    for (;;) {
        json report = client.report(id);
        if (report.at("status") != "running") return kExitOk;
        bool progressed = false;
        std::string view = report.at("subjects").dump();
        if (view != last_view) {
            last_view = view;
            progressed = true;
        }
        for (const auto& agent : agents) {
            for (const auto& task : client.tasks(agent)) {
                if (task.at("instance_id") != id) continue;
                std::string subject = task.at("subject");
                int index = task.at("state").at("index");
                auto step = cursor.peek(subject, index);
                if (!step) continue;
                try {
                    client.complete(task.at("task_id"), step->outcome, step->payload);
                } catch (const Error& e) {
                    if (e.code() == "TaskGone") continue;
                    err << "error: " << subject << " at '" << step->at << "': " << e.code() << ": " << e.what()
                        << "\n";
                    return kExitError;
                }
                cursor.advance(subject);
                progressed = true;
            }
        }
        auto now = std::chrono::steady_clock::now();
        if (progressed) {
            last_progress = now;
            continue;
        }
        auto idle = std::chrono::duration_cast<std::chrono::milliseconds>(now - last_progress).count();
        if (idle >= max_idle_ms) {
            err << "stalled: no progress for " << idle << " ms; pending tasks:\n";
            for (const auto& agent : agents)
                for (const auto& task : client.tasks(agent))
                    if (task.at("instance_id") == id) err << task.dump() << "\n";
            err << "subjects: " << report.at("subjects").dump() << "\n";
            return kExitStalled;
        }
        client.wait(std::chrono::milliseconds(20));
    }
}

}  // namespace

compile::SupervisorConfig supervisor_template_from_json(const json& j) {
    compile::SupervisorConfig c;
    if (j.is_null()) return c;
    try {
        if (!j.is_object()) throw Error("BadTemplate", "template must be an object");
        if (j.contains("restart")) {
            const json& r = j["restart"];
            std::string policy = r.value("policy", "replay");
            if (policy != "replay" && policy != "never") throw Error("BadTemplate", "unknown restart policy " + policy);
            c.restart_policy.kind = policy == "never" ? compile::RestartPolicy::Kind::never
                                                      : compile::RestartPolicy::Kind::replay;
            c.restart_policy.max_restarts = r.value("max_restarts", c.restart_policy.max_restarts);
            c.restart_policy.window_s = r.value("window_s", c.restart_policy.window_s);
        }
        if (j.contains("metrics")) c.metrics = j["metrics"].get<std::vector<std::string>>();
        if (j.contains("external_routes"))
            for (const auto& r : j["external_routes"])
                c.external_routes.push_back({r.at("subject").get<std::string>(), r.at("hint").get<std::string>()});
        if (j.contains("send_policy")) {
            std::string s = j["send_policy"];
            if (s != "block" && s != "drop-error") throw Error("BadTemplate", "unknown send policy " + s);
            c.send_policy = s == "block" ? compile::SendPolicy::block : compile::SendPolicy::drop_error;
        }
        c.service_timeout_ms = j.value("service_timeout_ms", c.service_timeout_ms);
    } catch (const json::exception& e) {
        throw Error("BadTemplate", e.what());
    }
    return c;
}

int cmd_validate(const ValidateOptions& o, std::ostream& out, std::ostream& err) {
    model::ProcessModel m;
    try {
        m = model::parse_model_dir(o.dir);
    } catch (const Error& e) {
        report_error(err, e);
        return kExitError;
    }
    validate::ValidationResult r =
        validate::validate(m, validate::SoundnessOptions{o.pool_bound, o.cap});
    if (o.format == "json")
        out << validate::to_json(r).dump(2) << "\n";
    else
        out << validate::to_text(r);
    if (validate::has_errors(r.diagnostics) || r.soundness.verdict == validate::Verdict::unsound) return kExitError;
    if (o.strict && r.soundness.verdict == validate::Verdict::inconclusive) return kExitInconclusive;
    return kExitOk;
}

int cmd_compile(const CompileOptions& o, std::ostream& out, std::ostream& err) {
    try {
        model::ProcessModel m = model::parse_model_dir(o.dir);
        auto diagnostics = validate::check_structure(m);
        auto iface = validate::check_interfaces(m);
        diagnostics.insert(diagnostics.end(), iface.begin(), iface.end());
        if (validate::has_errors(diagnostics)) {
            for (const auto& d : diagnostics)
                if (d.severity == validate::Severity::error)
                    err << d.code << " " << d.location.file << " " << d.location.element << ": " << d.message << "\n";
            return kExitError;
        }
        compile::SupervisorConfig templ;
        if (o.supervisor_template) templ = supervisor_template_from_json(load_document(*o.supervisor_template));
        compile::LinkOptions link;
        if (o.stamp) link.created_at = utc_now();
        compile::Bundle b = compile::link_bundle(m, templ, link);
        fs::path target = o.output.value_or(fs::path(b.manifest.process_id + ".sbpmb"));
        compile::store_bundle(b, target);
        out << target.string() << " " << b.manifest.content_hash << "\n";
        return kExitOk;
    } catch (const Error& e) {
        report_error(err, e);
        return kExitError;
    }
}

int cmd_disasm(const fs::path& bundle, std::ostream& out, std::ostream& err) {
    try {
        out << compile::disassemble(compile::load_bundle(bundle));
        return kExitOk;
    } catch (const Error& e) {
        report_error(err, e);
        return kExitError;
    }
}

int cmd_serve(const ServeOptions& o, std::ostream& out, std::ostream& err) {
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);
    try {
        auto [host, port] = engine::split_host_port(o.listen);
        engine::EngineConfig cfg;
        cfg.data_dir = o.data_dir;
        cfg.node_id = o.node_id;
        cfg.wire_port = o.wire_port.value_or(port == 0 ? 0 : port + 1);
        engine::Engine e(cfg);
        engine::HttpApi api(e);
        int bound = api.start(host, port);
        std::string advertised = host == "0.0.0.0" ? "127.0.0.1" : host;
        e.set_http_endpoint(advertised, bound);
        e.start();
        if (o.join) {
            auto [jh, jp] = engine::split_host_port(*o.join);
            e.join(jh, jp);
        }
        out << "sbpm serve: node " << o.node_id << " listening on " << advertised << ":" << bound << " wire "
            << e.wire_port() << std::endl;
        int sig = 0;
        sigwait(&signals, &sig);
        api.stop();
        e.stop();
        return kExitOk;
    } catch (const Error& e) {
        report_error(err, e);
        return kExitError;
    }
}

int cmd_run(const RunOptions& o, std::ostream& out, std::ostream& err) {
    std::shared_ptr<const compile::Bundle> bundle;
    std::string bytes;
    Scenario scenario;
    std::map<std::string, std::string> placement;
    try {
        bytes = read_bytes(o.bundle);
        bundle = std::make_shared<const compile::Bundle>(compile::decode_bundle(bytes));
        if (o.scenario) scenario = load_scenario(*o.scenario);
        check_scenario(scenario, *bundle);
        if (o.placement) {
            json p = load_document(*o.placement);
            if (!p.is_object()) throw Error("BadPlacement", "placement maps subject ids to node ids");
            for (const auto& [s, n] : p.items()) {
                if (!n.is_string()) throw Error("BadPlacement", "node of " + s + " must be a string");
                placement[s] = n.get<std::string>();
            }
        }
    } catch (const Error& e) {
        report_error(err, e);
        return kExitError;
    }

    ScenarioCursor cursor(scenario, bundle);
    std::set<std::string> service_roles, agents;
    for (const auto& s : bundle->subjects) {
        if (s.external) continue;
        agents.insert(s.role);
        if (has_refinement(*bundle, s.id)) service_roles.insert(s.role);
    }

    try {
        std::unique_ptr<StubService> stub;
        if (!service_roles.empty()) stub = std::make_unique<StubService>(cursor, bundle);
        json bindings = json::object();
        for (const auto& role : agents)
            bindings[role] = service_roles.count(role)
                                 ? json{{"agent", role}, {"kind", "service"}, {"url", stub->url(role)}}
                                 : json(role);

        TempData data;
        std::unique_ptr<engine::Engine> embedded;
        std::unique_ptr<engine::HttpApi> api;
        std::unique_ptr<EngineClient> client;
        if (o.connect) {
            auto [h, p] = engine::split_host_port(*o.connect);
            client = std::make_unique<RemoteClient>(h, p);
        } else {
            if (o.data_dir) {
                data.path = *o.data_dir;
            } else {
                data.path = fs::temp_directory_path() / ("sbpm-run-" + runtime::random_uuid());
                data.owned = true;
            }
            engine::EngineConfig cfg;
            cfg.data_dir = data.path;
            cfg.node_id = o.node_id;
            cfg.wire_port = o.join ? 0 : -1;
            embedded = std::make_unique<engine::Engine>(cfg);
            if (o.join) {
                api = std::make_unique<engine::HttpApi>(*embedded);
                embedded->set_http_endpoint("127.0.0.1", api->start("127.0.0.1", 0));
            }
            embedded->start();
            if (o.join) {
                auto [h, p] = engine::split_host_port(*o.join);
                embedded->join(h, p);
            }
            client = std::make_unique<EmbeddedClient>(*embedded);
        }

        std::string hash = client->deploy(bytes);
        std::string id = client->create(json{{"hash", hash}, {"bindings", bindings}, {"placement", placement}});
        int code = drive(*client, id, agents, cursor, o.max_idle_ms, err);

        for (const auto& r : client->trace(id)) out << r.dump() << "\n";
        out.flush();
        json report = client->report(id);
        if (code == kExitOk && report.at("status") != "completed") {
            err << "instance " << id << " failed: " << report.value("failure_reason", json("")).dump() << "\n";
            code = kExitError;
        }
        if (api) api->stop();
        if (embedded) embedded->stop();
        return code;
    } catch (const Error& e) {
        report_error(err, e);
        return kExitError;
    }
}

}  // namespace sbpm::cli
