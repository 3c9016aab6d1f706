#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "sbpm/runtime/instance.hpp"

namespace sbpm::testing {

// Synchronous host for runtime tests: a manual clock, and every outbound
// request recorded for the test to answer.
struct ManualHost : runtime::InstanceHost {
    struct Timer {
        std::string instance, subject;
        std::uint64_t epoch;
        std::int64_t ms;
    };
    struct Outbound {
        std::string target;  // node id or route hint
        runtime::Envelope env;
    };
    struct Retry {
        std::string instance, subject;
        std::int64_t seq;
        int attempt;
    };

    std::int64_t clock = 1'700'000'000'000;
    std::vector<Timer> timers;
    std::vector<Outbound> remote, external;
    std::vector<Retry> retries;
    std::vector<runtime::ServiceCall> service_calls;
    std::vector<runtime::Task> opened;

    std::int64_t now_ms() override { return clock; }
    void arm_timer(const std::string& i, const std::string& s, std::uint64_t e, std::int64_t ms) override {
        timers.push_back({i, s, e, ms});
    }
    void send_remote(const std::string& node, const runtime::Envelope& env) override { remote.push_back({node, env}); }
    void send_external(const std::string& hint, const runtime::Envelope& env) override {
        external.push_back({hint, env});
    }
    void retry_send_later(const std::string& i, const std::string& s, std::int64_t seq, int attempt) override {
        retries.push_back({i, s, seq, attempt});
    }
    void call_service(const runtime::ServiceCall& c) override { service_calls.push_back(c); }
    void on_task_opened(const runtime::Task& t) override { opened.push_back(t); }
};

inline runtime::Task only_task(const runtime::Instance& inst, const std::string& subject) {
    for (const auto& t : inst.tasks())
        if (t.subject == subject) return t;
    throw std::runtime_error("no open task for " + subject);
}

}  // namespace sbpm::testing
