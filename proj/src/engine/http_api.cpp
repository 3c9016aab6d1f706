#include "sbpm/engine/http_api.hpp"

#include <httplib.h>

namespace sbpm::engine {

int http_status_for(const std::string& code) {
    if (code == "UnknownBundle" || code == "UnknownInstance" || code == "UnknownTask" || code == "NotFound") return 404;
    if (code == "TaskGone") return 410;
    if (code == "NotYourTask") return 403;
    if (code == "DuplicateInstance") return 409;
    if (code == "BadRequest" || code == "BadJson") return 400;
    return 422;
}

struct HttpApi::Impl {
    httplib::Server server;
};

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const std::string& code, const std::string& message) {
    send_json(res, http_status_for(code), json{{"code", code}, {"message", message}});
}

json parse_body(const httplib::Request& req) {
    json j = json::parse(req.body, nullptr, false);
    if (j.is_discarded()) throw Error("BadJson", "request body is not JSON");
    return j;
}

template <class Fn>
httplib::Server::Handler guarded(Fn fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
        try {
            fn(req, res);
        } catch (const Error& e) {
            send_error(res, e.code(), e.what());
        } catch (const json::exception& e) {
            send_error(res, "BadRequest", e.what());
        }
    };
}

}  // namespace

HttpApi::HttpApi(Engine& engine) : engine_(engine), impl_(std::make_unique<Impl>()) {
    auto& s = impl_->server;
    Engine& eng = engine_;

    s.Post("/bundles", guarded([&eng](const httplib::Request& req, httplib::Response& res) {
        send_json(res, 200, json{{"hash", eng.deploy(req.body)}});
    }));
    s.Get("/bundles", guarded([&eng](const httplib::Request&, httplib::Response& res) {
        json out = json::array();
        for (const auto& b : eng.bundles())
            out.push_back(json{{"hash", b.hash},
                               {"process_id", b.process_id},
                               {"name", b.name},
                               {"version", b.version},
                               {"created_at", b.created_at}});
        send_json(res, 200, out);
    }));
    s.Post("/instances", guarded([&eng](const httplib::Request& req, httplib::Response& res) {
        std::string id = eng.create_instance(create_request_from_json(parse_body(req)));
        send_json(res, 201, json{{"instance_id", id}});
    }));
    s.Get(R"(/instances/([^/]+))", guarded([&eng](const httplib::Request& req, httplib::Response& res) {
        send_json(res, 200, eng.instance_report(req.matches[1]));
    }));
    s.Get(R"(/instances/([^/]+)/trace)", guarded([&eng](const httplib::Request& req, httplib::Response& res) {
        bool local = req.has_param("local") && req.get_param_value("local") != "0";
        send_json(res, 200, eng.trace(req.matches[1], local));
    }));
    s.Get(R"(/agents/([^/]+)/tasks)", guarded([&eng](const httplib::Request& req, httplib::Response& res) {
        bool local = req.has_param("local") && req.get_param_value("local") != "0";
        send_json(res, 200, eng.tasks_json(req.matches[1], local));
    }));
    s.Post(R"(/tasks/([^/]+)/complete)", guarded([&eng](const httplib::Request& req, httplib::Response& res) {
        json body = parse_body(req);
        if (!body.is_object() || !body.contains("outcome") || !body["outcome"].is_string())
            throw Error("BadRequest", "outcome is required");
        std::optional<std::string> agent;
        if (body.contains("agent") && body["agent"].is_string()) agent = body["agent"].get<std::string>();
        eng.complete_task(req.matches[1], body["outcome"].get<std::string>(), body.value("payload", json(nullptr)),
                          agent);
        send_json(res, 200, json{{"task_id", std::string(req.matches[1])}, {"status", "completed"}});
    }));
    s.Post("/nodes/register", guarded([&eng](const httplib::Request& req, httplib::Response& res) {
        json body = parse_body(req);
        NodeInfo n;
        n.node_id = body.at("node_id").get<std::string>();
        n.host = body.at("host").get<std::string>();
        n.port = body.at("port").get<int>();
        n.wire_port = body.value("wire_port", 0);
        eng.register_node(n);
        send_json(res, 200, json{{"node_id", n.node_id}, {"registered", true}});
    }));
    s.Get("/nodes", guarded([&eng](const httplib::Request&, httplib::Response& res) {
        json out = json::array();
        bool first = true;
        for (const auto& n : eng.nodes()) {
            out.push_back(to_json(n, first));
            first = false;
        }
        send_json(res, 200, out);
    }));
    s.set_error_handler([](const httplib::Request&, httplib::Response& res) {
        if (res.body.empty()) {
            std::string code = res.status == 404 ? "NotFound" : "HttpError";
            res.set_content(json{{"code", code}, {"message", "no such endpoint"}}.dump(), "application/json");
        }
    });
}

HttpApi::~HttpApi() { stop(); }

int HttpApi::start(const std::string& host, int port) {
    auto& s = impl_->server;
    int bound = port == 0 ? s.bind_to_any_port(host) : (s.bind_to_port(host, port) ? port : -1);
    if (bound <= 0) throw Error("BindFailed", "cannot listen on " + host + ":" + std::to_string(port));
    thread_ = std::thread([&s] { s.listen_after_bind(); });
    s.wait_until_ready();
    return bound;
}

void HttpApi::stop() {
    impl_->server.stop();
    if (thread_.joinable()) thread_.join();
}

}  // namespace sbpm::engine
