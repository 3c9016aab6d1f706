#include "cli/scenario.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace sbpm::cli {

namespace {

[[noreturn]] void scenario_error(const std::string& message) { throw Error("ScenarioError", message); }

json yaml_to_json(const YAML::Node& n) {
    switch (n.Type()) {
        case YAML::NodeType::Null:
        case YAML::NodeType::Undefined:
            return nullptr;
        case YAML::NodeType::Sequence: {
            json out = json::array();
            for (const auto& item : n) out.push_back(yaml_to_json(item));
            return out;
        }
        case YAML::NodeType::Map: {
            json out = json::object();
            for (const auto& kv : n) out[kv.first.as<std::string>()] = yaml_to_json(kv.second);
            return out;
        }
        case YAML::NodeType::Scalar:
            break;
    }
    const std::string& s = n.Scalar();
    if (n.Tag() == "!") return s;  // quoted
    if (s == "null" || s == "~" || s.empty()) return nullptr;
    if (s == "true") return true;
    if (s == "false") return false;
    std::int64_t i = 0;
    if (auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), i); ec == std::errc() && p == s.data() + s.size())
        return i;
    double d = 0;
    if (auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), d); ec == std::errc() && p == s.data() + s.size())
        return d;
    return s;
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("IoError", "cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const compile::IrState* state_at(const compile::SubjectProgram& p, const std::string& at) {
    for (const auto& st : p.states)
        if (st.name == at) return &st;
    for (const auto& st : p.states)
        if (st.id == at) return &st;
    return nullptr;
}

}  // namespace

json parse_document(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (!j.is_discarded()) return j;
    try {
        return yaml_to_json(YAML::Load(text));
    } catch (const YAML::Exception& e) {
        throw Error("BadDocument", e.what());
    }
}

json load_document(const std::filesystem::path& path) { return parse_document(read_text(path)); }

Scenario parse_scenario(const std::string& text) {
    json doc;
    try {
        doc = parse_document(text);
    } catch (const Error& e) {
        scenario_error(e.what());
    }
    if (doc.is_null()) return {};
    if (!doc.is_object()) scenario_error("a scenario maps subject ids to lists of steps");
    Scenario s;
    for (const auto& [subject, list] : doc.items()) {
        if (!list.is_array()) scenario_error(subject + ": expected a list of steps");
        auto& out = s.steps[subject];
        for (std::size_t i = 0; i < list.size(); ++i) {
            const json& e = list[i];
            std::string where = subject + "[" + std::to_string(i) + "]";
            if (!e.is_object()) scenario_error(where + ": expected {at, outcome, payload?}");
            if (!e.contains("at") || !e["at"].is_string()) scenario_error(where + ": 'at' must be a state name");
            if (!e.contains("outcome") || !e["outcome"].is_string()) scenario_error(where + ": 'outcome' is required");
            for (const auto& [k, _] : e.items())
                if (k != "at" && k != "outcome" && k != "payload") scenario_error(where + ": unknown key '" + k + "'");
            out.push_back({e["at"].get<std::string>(), e["outcome"].get<std::string>(), e.value("payload", json(nullptr))});
        }
    }
    return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_text(path);
    } catch (const Error& e) {
        scenario_error(e.what());
    }
    return parse_scenario(text);
}

void check_scenario(const Scenario& s, const compile::Bundle& b) {
    for (const auto& [subject, steps] : s.steps) {
        const model::SubjectDecl* decl = b.subject(subject);
        const compile::SubjectProgram* program = b.program(subject);
        if (!decl || decl->external || !program) scenario_error("unknown subject '" + subject + "'");
        for (std::size_t i = 0; i < steps.size(); ++i) {
            const ScenarioStep& step = steps[i];
            std::string where = subject + "[" + std::to_string(i) + "]";
            const compile::IrState* st = state_at(*program, step.at);
            if (!st) scenario_error(where + ": " + subject + " has no state '" + step.at + "'");
            if (st->kind == model::StateKind::receive)
                scenario_error(where + ": '" + step.at + "' is a receive state and takes no choice");
            bool known = false;
            for (const auto& arm : st->arms) {
                if (const auto* o = std::get_if<compile::OutcomeSelector>(&arm.selector))
                    known = known || o->outcome == step.outcome;
                if (const auto* e = std::get_if<compile::EmitSelector>(&arm.selector))
                    known = known || e->message == step.outcome;
            }
            if (!known) scenario_error(where + ": '" + step.at + "' has no outcome '" + step.outcome + "'");
        }
    }
}

ScenarioCursor::ScenarioCursor(Scenario s, std::shared_ptr<const compile::Bundle> b)
    : scenario_(std::move(s)), bundle_(std::move(b)) {}

bool ScenarioCursor::matches(const std::string& subject, int state_index, const ScenarioStep& step) const {
    const compile::SubjectProgram* p = bundle_->program(subject);
    if (!p || state_index < 0 || state_index >= static_cast<int>(p->states.size())) return false;
    return state_at(*p, step.at) == &p->states[state_index];
}

std::optional<ScenarioStep> ScenarioCursor::peek(const std::string& subject, int state_index) {
    std::lock_guard lock(mu_);
    auto it = scenario_.steps.find(subject);
    if (it == scenario_.steps.end()) return std::nullopt;
    std::size_t c = cursor_[subject];
    if (c >= it->second.size() || !matches(subject, state_index, it->second[c])) return std::nullopt;
    return it->second[c];
}

void ScenarioCursor::advance(const std::string& subject) {
    std::lock_guard lock(mu_);
    ++cursor_[subject];
}

std::optional<ScenarioStep> ScenarioCursor::take(const std::string& subject, int state_index) {
    std::lock_guard lock(mu_);
    auto it = scenario_.steps.find(subject);
    if (it == scenario_.steps.end()) return std::nullopt;
    std::size_t& c = cursor_[subject];
    if (c >= it->second.size() || !matches(subject, state_index, it->second[c])) return std::nullopt;
    return it->second[c++];
}

}  // namespace sbpm::cli
