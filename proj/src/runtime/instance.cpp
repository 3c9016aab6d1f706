#include "sbpm/runtime/instance.hpp"

#include <algorithm>

namespace sbpm::runtime {

using compile::Bundle;
using model::StateKind;

std::string_view to_string(DeliveryResult r) {
    switch (r) {
        case DeliveryResult::delivered: return "delivered";
        case DeliveryResult::nack_full: return "nack_full";
        case DeliveryResult::routed_remote: return "routed_remote";
        case DeliveryResult::routed_external: return "routed_external";
    }
    return "?";
}

namespace {

json field_json(const model::BoField& f) {
    json children = json::array();
    for (const auto& c : f.children) children.push_back(field_json(c));
    return json{{"name", f.name},
                {"type", std::string(model::to_string(f.type))},
                {"required", f.required},
                {"children", children}};
}

json schema_json(const model::BoSchema& s) {
    json fields = json::array();
    for (const auto& f : s.fields) fields.push_back(field_json(f));
    return json{{"id", s.id}, {"fields", fields}};
}

}  // namespace

nlohmann::json to_json(const Task& t, const Bundle& b) {
    json options = json::array();
    for (const auto& o : t.options) {
        if (t.kind == TaskKind::choose_outcome) {
            options.push_back(o.outcome);
            continue;
        }
        json opt{{"message", o.outcome}, {"to", o.to.value_or("")}, {"bo", nullptr}};
        if (o.bo)
            if (const auto* s = b.schema(*o.bo)) opt["bo"] = schema_json(*s);
        options.push_back(opt);
    }
    return json{{"task_id", t.task_id},
                {"instance_id", t.instance_id},
                {"subject", t.subject},
                {"state", {{"id", t.state_id}, {"name", t.state_name}, {"index", t.state_index}}},
                {"kind", std::string(to_string(t.kind))},
                {"options", options},
                {"assigned_role", t.assigned_role},
                {"agent_id", t.agent_id},
                {"created_ts", t.created_ts}};
}

Instance::Instance(InstanceConfig cfg, InstanceHost& host) : cfg_(std::move(cfg)), host_(host) {
    origin_ = cfg_.origin.empty() ? cfg_.node_id : cfg_.origin;
}

std::string Instance::node_of(const std::string& subject) const {
    auto it = cfg_.placement.find(subject);
    return it == cfg_.placement.end() || it->second.empty() ? origin_ : it->second;
}

std::set<std::string> Instance::remote_subjects() const {
    std::set<std::string> out;
    for (const auto& p : bundle().programs)
        if (node_of(p.subject) != cfg_.node_id) out.insert(p.subject);
    return out;
}

template <class Fn>
void Instance::guarded(Fn&& fn) {
    if (killed_) throw Error("InstanceKilled", "instance " + id() + " was stopped");
    try {
        fn();
    } catch (const Killed&) {
        killed_ = true;
        queue_.clear();
    }
}

std::shared_ptr<Instance> Instance::start(InstanceConfig cfg, InstanceHost& host) {
    for (const auto& s : cfg.bundle->subjects)
        if (!s.external && !cfg.bindings.count(s.role)) throw Error("UnboundRole", s.role);
    std::shared_ptr<Instance> inst(new Instance(std::move(cfg), host));
    std::lock_guard lock(inst->mu_);
    inst->guarded([&] {
        inst->start_missing_actors();
        inst->run_queue();
    });
    return inst;
}

void Instance::start_missing_actors() {
    std::vector<std::pair<std::string, std::vector<Effect>>> starts;
    for (const auto& p : bundle().programs) {
        if (node_of(p.subject) != cfg_.node_id || actors_.count(p.subject)) continue;
        StepResult res = start_actor(ctx(p.subject));
        actors_[p.subject] = res.state;
        auto& fx = res.effects;
        auto first = std::get<LogEffect>(fx.front());
        fx.erase(fx.begin());
        InstanceHeader h{id(), bundle().manifest.content_hash, cfg_.node_id, origin_, {}};
        for (const auto& [role, b] : cfg_.bindings) h.bindings[role] = b.agent_id;
        first.data.update(header_fields(h));
        append(p.subject, first.kind, first.data);
        starts.emplace_back(p.subject, std::move(fx));
    }
    for (auto& [subject, fx] : starts) apply(subject, fx);
}

std::shared_ptr<Instance> Instance::recover(InstanceConfig cfg, InstanceHost& host,
                                            const std::vector<EventRecord>& log) {
    ReplayResult rr = replay_log(log, *cfg.bundle);
    if (cfg.instance_id.empty()) cfg.instance_id = rr.header.instance_id;
    if (rr.header.instance_id != cfg.instance_id)
        throw Error("LogCorrupt", "log belongs to instance " + rr.header.instance_id);
    if (cfg.origin.empty()) cfg.origin = rr.header.origin;
    std::shared_ptr<Instance> inst(new Instance(std::move(cfg), host));
    Instance& self = *inst;
    std::lock_guard lock(self.mu_);
    self.actors_ = std::move(rr.state.actors);
    self.log_ = std::move(rr.state.log);
    self.status_ = rr.state.status;
    self.last_delivered_ = std::move(rr.last_delivered);
    self.pre_crash_ = std::move(rr.pre_crash);
    self.restarts_ = std::move(rr.restarts);
    if (self.status_ != InstanceStatus::running) return inst;
    std::vector<std::string> resumable;
    for (const auto& [s, a] : self.actors_) resumable.push_back(s);
    self.guarded([&] {
        self.start_missing_actors();
        for (auto& [subject, logs] : rr.pending)
            for (auto& l : logs) self.append(subject, l.kind, l.data);
        for (const auto& s : resumable) self.resume_actor(s);
        self.run_queue();
    });
    return inst;
}

StepContext Instance::ctx(const std::string& subject) const {
    return StepContext{bundle(), *bundle().program(subject), cfg_.instance_id};
}

InstanceStatus Instance::status() const {
    std::lock_guard lock(mu_);
    return status_;
}

bool Instance::killed() const {
    std::lock_guard lock(mu_);
    return killed_;
}

InstanceState Instance::snapshot_locked() const {
    InstanceState s;
    s.instance_id = id();
    s.bundle_hash = bundle().manifest.content_hash;
    s.actors = actors_;
    for (const auto& [role, b] : cfg_.bindings) s.bindings[role] = b.agent_id;
    s.status = status_;
    s.log = log_;
    return s;
}

InstanceState Instance::snapshot() const {
    std::lock_guard lock(mu_);
    return snapshot_locked();
}

std::vector<EventRecord> Instance::log() const {
    std::lock_guard lock(mu_);
    return log_;
}

std::vector<Task> Instance::tasks() const {
    std::lock_guard lock(mu_);
    std::vector<Task> out;
    for (const auto& [s, t] : tasks_) out.push_back(t);
    return out;
}

std::vector<std::string> Instance::warnings() const {
    std::lock_guard lock(mu_);
    return warnings_;
}

std::string Instance::failure_reason() const {
    std::lock_guard lock(mu_);
    return failure_reason_;
}

void Instance::append(const std::string& subject, EventKind kind, nlohmann::json data) {
    EventRecord r{static_cast<std::int64_t>(log_.size()), host_.now_ms(), subject, kind, std::move(data)};
    if (!cfg_.log_path.empty()) append_event_line(cfg_.log_path, r);
    log_.push_back(r);
    if (cfg_.append_hook && !cfg_.append_hook(log_.back(), snapshot_locked())) throw Killed{};
}

void Instance::step(const std::string& subject, const ActorEvent& ev) {
    ActorState& actor = actors_.at(subject);
    StepResult res = actor_step(ctx(subject), actor, ev);
    bool entered = res.state.epoch != actor.epoch;
    actor = std::move(res.state);
    // Messages that arrived before the receive state was entered.
    if (entered && actor.status == ActorStatus::awaiting_message && !actor.pool.empty())
        queue_.emplace_back(subject, MessageAvailable{});
    if (auto it = tasks_.find(subject);
        it != tasks_.end() && (actor.status != ActorStatus::awaiting_task || it->second.epoch != actor.epoch))
        tasks_.erase(it);
    apply(subject, res.effects);
}

void Instance::apply(const std::string& subject, std::vector<Effect>& effects) {
    for (auto& fx : effects) {
        if (status_ != InstanceStatus::running) return;
        if (auto* l = std::get_if<LogEffect>(&fx)) {
            append(subject, l->kind, std::move(l->data));
        } else if (auto* s = std::get_if<SendEffect>(&fx)) {
            send(subject, s->envelope);
        } else if (auto* t = std::get_if<OpenTaskEffect>(&fx)) {
            open_task(subject, *t);
        } else if (auto* a = std::get_if<ArmTimerEffect>(&fx)) {
            host_.arm_timer(id(), subject, a->epoch, a->ms);
        } else if (std::holds_alternative<SlotFreedEffect>(fx)) {
            auto it = blocked_on_.find(subject);
            if (it == blocked_on_.end()) continue;
            for (const auto& sender : it->second) queue_.emplace_back(sender, PoolDrained{});
            blocked_on_.erase(it);
        } else if (auto* w = std::get_if<WarnEffect>(&fx)) {
            warnings_.push_back(w->code + ": " + w->message);
        }
    }
}

void Instance::send(const std::string& subject, const Envelope& env) {
    DeliveryResult r;
    try {
        r = dispatch(env);
    } catch (const Error& e) {
        fail_locked(e.code() + ": " + e.what());
        return;
    }
    if (r == DeliveryResult::delivered) {
        queue_.emplace_back(subject, SendAck{env.seq});
        notify_receiver(env.to_subject);
    } else if (r == DeliveryResult::nack_full) {
        if (bundle().supervisor.send_policy == compile::SendPolicy::drop_error) {
            fail_locked("PoolFull: " + env.to_subject + " cannot accept " + env.message_id + " from " + subject);
            return;
        }
        queue_.emplace_back(subject, SendNack{env.seq});
        auto& waiters = blocked_on_[env.to_subject];
        if (std::find(waiters.begin(), waiters.end(), subject) == waiters.end()) waiters.push_back(subject);
    }
}

DeliveryResult Instance::dispatch(const Envelope& env) {
    const model::SubjectDecl* to = bundle().subject(env.to_subject);
    if (!to) throw Error("UnknownTarget", "no subject " + env.to_subject);
    const model::MessageDecl* msg = bundle().message(env.message_id);
    if (!msg) throw Error("UnknownTarget", "no message " + env.message_id);
    validate_payload(env.payload, msg->bo ? bundle().schema(*msg->bo) : nullptr);
    if (to->external) {
        std::string hint;
        if (auto it = cfg_.routes.find(to->id); it != cfg_.routes.end()) hint = it->second;
        for (const auto& r : bundle().supervisor.external_routes)
            if (hint.empty() && r.subject == to->id) hint = r.hint;
        if (hint.empty()) throw Error("UnknownTarget", "no route configured for external subject " + to->id);
        host_.send_external(hint, env);
        return DeliveryResult::routed_external;
    }
    std::string node = node_of(to->id);
    if (node != cfg_.node_id) {
        host_.send_remote(node, env);
        return DeliveryResult::routed_remote;
    }
    return deliver_local(env);
}

DeliveryResult Instance::deliver_local(const Envelope& env) {
    auto it = actors_.find(env.to_subject);
    if (it == actors_.end()) throw Error("UnknownTarget", env.to_subject + " is not hosted here");
    ActorState& target = it->second;
    std::string key = delivery_key(env);
    if (auto d = last_delivered_.find(key); d != last_delivered_.end() && d->second >= env.seq)
        return DeliveryResult::delivered;
    std::size_t capacity = static_cast<std::size_t>(std::max(1, bundle().subject(env.to_subject)->pool_capacity));
    if (target.pool.size() >= capacity) return DeliveryResult::nack_full;
    target.pool.push_back(env);
    last_delivered_[key] = env.seq;
    append(env.to_subject, EventKind::MSG_DELIVERED,
           {{"from", env.from_subject}, {"message", env.message_id}, {"seq", env.seq}, {"envelope", to_json(env)}});
    return DeliveryResult::delivered;
}

void Instance::notify_receiver(const std::string& subject) {
    auto it = actors_.find(subject);
    if (it != actors_.end() && it->second.status == ActorStatus::awaiting_message)
        queue_.emplace_back(subject, MessageAvailable{});
}

void Instance::open_task(const std::string& subject, const OpenTaskEffect& fx) {
    const ActorState& actor = actors_.at(subject);
    const auto& st = bundle().program(subject)->states.at(actor.current);
    const std::string& role = bundle().subject(subject)->role;
    const AgentBinding& binding = cfg_.bindings.at(role);
    if (fx.refinement && binding.kind == AgentBinding::Kind::service) {
        ServiceCall call;
        call.instance_id = id();
        call.subject = subject;
        call.epoch = actor.epoch;
        call.url = binding.url;
        call.timeout_ms = bundle().supervisor.service_timeout_ms;
        call.body = json{{"instance", id()},
                         {"subject", subject},
                         {"state", st.id},
                         {"payload", actor.held},
                         {"service", *fx.refinement}};
        host_.call_service(call);
        return;
    }
    Task t;
    t.task_id = derived_uuid(id() + "/" + subject + "/task/" + std::to_string(actor.epoch));
    t.instance_id = id();
    t.subject = subject;
    t.state_id = st.id;
    t.state_name = st.name;
    t.state_index = actor.current;
    t.kind = fx.kind;
    t.options = fx.options;
    t.assigned_role = role;
    t.agent_id = binding.agent_id;
    t.created_ts = host_.now_ms();
    t.epoch = actor.epoch;
    tasks_[subject] = t;
    host_.on_task_opened(t);
}

void Instance::resume_actor(const std::string& subject) {
    ActorState& a = actors_.at(subject);
    switch (a.status) {
        case ActorStatus::awaiting_task:
            open_task(subject, *pending_task(ctx(subject), a));
            break;
        case ActorStatus::awaiting_message: {
            const auto& st = bundle().program(subject)->states.at(a.current);
            if (st.has_timeout_arm() && st.timeout_ms) host_.arm_timer(id(), subject, a.epoch, *st.timeout_ms);
            if (!a.pool.empty()) queue_.emplace_back(subject, MessageAvailable{});
            break;
        }
        case ActorStatus::running:
        case ActorStatus::blocked_send:
            if (a.outgoing) {
                a.status = ActorStatus::running;
                Envelope env = *a.outgoing;
                send(subject, env);
            }
            break;
        case ActorStatus::crashed:
            restart(subject);
            break;
        case ActorStatus::halted:
            break;
    }
}

void Instance::restart(const std::string& subject) {
    const auto& policy = bundle().supervisor.restart_policy;
    if (policy.kind == compile::RestartPolicy::Kind::never) {
        fail_locked("RestartLimitExceeded: " + subject + " crashed and the restart policy is never");
        return;
    }
    std::int64_t now = host_.now_ms();
    auto& history = restarts_[subject];
    std::erase_if(history, [&](std::int64_t ts) { return now - ts > std::int64_t{policy.window_s} * 1000; });
    if (static_cast<int>(history.size()) >= policy.max_restarts) {
        fail_locked("RestartLimitExceeded: " + subject + " crashed more than " + std::to_string(policy.max_restarts) +
                    " times within " + std::to_string(policy.window_s) + " s");
        return;
    }
    ReplayResult rr = replay_log(log_, bundle());
    ActorState rebuilt = rr.state.actors.at(subject);
    auto pc = rr.pre_crash.find(subject);
    rebuilt.status = pc == rr.pre_crash.end() ? rebuilt.status : pc->second;
    actors_[subject] = rebuilt;
    pre_crash_.erase(subject);
    append(subject, EventKind::RESTARTED, {{"restarts", history.size() + 1}});
    history.push_back(log_.back().ts);
    resume_actor(subject);
}

void Instance::crash_locked(const std::string& subject, const std::string& reason) {
    ActorState& a = actors_.at(subject);
    if (a.status == ActorStatus::crashed || a.status == ActorStatus::halted) return;
    append(subject, EventKind::CRASHED, {{"reason", reason}});
    pre_crash_[subject] = a.status;
    a.status = ActorStatus::crashed;
    tasks_.erase(subject);
    restart(subject);
}

void Instance::fail_locked(const std::string& reason) {
    if (status_ != InstanceStatus::running) return;
    failure_reason_ = reason;
    status_ = InstanceStatus::failed;
    tasks_.clear();
    queue_.clear();
    append(kSupervisor, EventKind::CRASHED, {{"fatal", true}, {"reason", reason}});
    host_.on_status_changed(id());
}

void Instance::run_queue() {
    while (!queue_.empty() && status_ == InstanceStatus::running) {
        auto [subject, ev] = std::move(queue_.front());
        queue_.pop_front();
        step(subject, ev);
    }
    check_completion();
}

void Instance::check_completion() {
    if (status_ != InstanceStatus::running || !queue_.empty()) return;
    for (const auto& [s, a] : actors_)
        if (a.status != ActorStatus::halted) return;
    if (is_origin()) {
        for (const auto& s : remote_subjects())
            if (!remote_halted_.count(s)) return;
        status_ = InstanceStatus::completed;
        append(kSupervisor, EventKind::INSTANCE_COMPLETED, json::object());
    }
    status_ = InstanceStatus::completed;
    host_.on_status_changed(id());
}

void Instance::complete_task(const std::string& task_id, const std::string& outcome, const nlohmann::json& payload,
                             const std::optional<std::string>& agent) {
    std::lock_guard lock(mu_);
    guarded([&] {
        auto it = std::find_if(tasks_.begin(), tasks_.end(), [&](const auto& kv) { return kv.second.task_id == task_id; });
        if (it == tasks_.end() || status_ != InstanceStatus::running)
            throw Error("TaskGone", "task " + task_id + " is no longer open");
        if (agent && *agent != it->second.agent_id)
            throw Error("NotYourTask", "task " + task_id + " belongs to " + it->second.agent_id);
        std::string subject = it->second.subject;
        step(subject, TaskCompleted{outcome, payload});
        run_queue();
    });
}

DeliveryResult Instance::deliver(const Envelope& env) {
    std::lock_guard lock(mu_);
    DeliveryResult r = DeliveryResult::nack_full;
    guarded([&] {
        if (!actors_.count(env.to_subject)) throw Error("UnknownTarget", env.to_subject + " is not hosted here");
        const model::MessageDecl* msg = bundle().message(env.message_id);
        if (!msg) throw Error("UnknownTarget", "no message " + env.message_id);
        validate_payload(env.payload, msg->bo ? bundle().schema(*msg->bo) : nullptr);
        if (status_ != InstanceStatus::running) return;
        r = deliver_local(env);
        if (r == DeliveryResult::delivered) notify_receiver(env.to_subject);
        run_queue();
    });
    return r;
}

void Instance::on_send_result(const std::string& subject, std::int64_t seq, bool accepted, std::string_view reason) {
    std::lock_guard lock(mu_);
    if (killed_ || status_ != InstanceStatus::running || !actors_.count(subject)) return;
    guarded([&] {
        const ActorState& a = actors_.at(subject);
        if (!a.outgoing || a.outgoing->seq != seq) return;
        if (accepted) {
            remote_attempts_.erase(subject);
            queue_.emplace_back(subject, SendAck{seq});
        } else if (bundle().supervisor.send_policy == compile::SendPolicy::drop_error && reason == "full") {
            fail_locked("PoolFull: " + a.outgoing->to_subject + " cannot accept " + a.outgoing->message_id + " from " +
                        subject);
        } else {
            queue_.emplace_back(subject, SendNack{seq});
            host_.retry_send_later(id(), subject, seq, ++remote_attempts_[subject]);
        }
        run_queue();
    });
}

void Instance::on_timer(const std::string& subject, std::uint64_t epoch) {
    std::lock_guard lock(mu_);
    if (killed_ || status_ != InstanceStatus::running || !actors_.count(subject)) return;
    guarded([&] {
        queue_.emplace_back(subject, TimeoutElapsed{epoch});
        run_queue();
    });
}

void Instance::retry_send(const std::string& subject, std::int64_t seq) {
    std::lock_guard lock(mu_);
    if (killed_ || status_ != InstanceStatus::running || !actors_.count(subject)) return;
    guarded([&] {
        const ActorState& a = actors_.at(subject);
        if (a.status != ActorStatus::blocked_send || !a.outgoing || a.outgoing->seq != seq) return;
        queue_.emplace_back(subject, PoolDrained{});
        run_queue();
    });
}

void Instance::on_service_reply(const std::string& subject, std::uint64_t epoch, const ServiceReply& reply) {
    std::lock_guard lock(mu_);
    if (killed_ || status_ != InstanceStatus::running || !actors_.count(subject)) return;
    guarded([&] {
        const ActorState& a = actors_.at(subject);
        if (a.status != ActorStatus::awaiting_task || a.epoch != epoch) return;
        const auto& st = bundle().program(subject)->states.at(a.current);
        switch (reply.kind) {
            case ServiceReply::Kind::ok:
                try {
                    step(subject, TaskCompleted{reply.outcome, reply.payload});
                } catch (const Error& e) {
                    crash_locked(subject, "BadServiceResponse: " + e.code() + ": " + e.what());
                }
                break;
            case ServiceReply::Kind::bad_response:
                crash_locked(subject, "BadServiceResponse: " + reply.detail);
                break;
            case ServiceReply::Kind::unreachable:
            case ServiceReply::Kind::timeout:
                if (st.on_error)
                    step(subject, TaskCompleted{*st.on_error, nullptr});
                else
                    fail_locked("ServiceUnreachable: " + reply.detail);
                break;
        }
        run_queue();
    });
}

void Instance::set_remote_status(const std::string& subject, bool halted, bool failed) {
    std::lock_guard lock(mu_);
    if (killed_ || status_ != InstanceStatus::running) return;
    guarded([&] {
        if (failed) {
            fail_locked("RemoteShardFailed: " + subject);
            return;
        }
        if (halted) remote_halted_.insert(subject);
        check_completion();
    });
}

void Instance::crash_subject(const std::string& subject, const std::string& reason) {
    std::lock_guard lock(mu_);
    if (killed_ || status_ != InstanceStatus::running) return;
    guarded([&] {
        crash_locked(subject, reason);
        run_queue();
    });
}

void Instance::fail(const std::string& reason) {
    std::lock_guard lock(mu_);
    if (killed_) return;
    guarded([&] { fail_locked(reason); });
}

}  // namespace sbpm::runtime
