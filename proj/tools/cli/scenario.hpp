#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sbpm/compile/bundle.hpp"

namespace sbpm::cli {

using nlohmann::json;

struct ScenarioStep {
    std::string at;       // state name or id
    std::string outcome;  // outcome, or message id at a send state
    json payload;
};

// Per subject, the choices to make in order.
struct Scenario {
    std::map<std::string, std::vector<ScenarioStep>> steps;
};

// YAML or JSON (JSON is valid YAML). Throws ScenarioError.
Scenario parse_scenario(const std::string& text);
Scenario load_scenario(const std::filesystem::path& path);

// Throws ScenarioError naming the first step that cannot apply to `b`.
void check_scenario(const Scenario& s, const compile::Bundle& b);

// Parses a YAML or JSON document into JSON. Throws BadDocument.
json parse_document(const std::string& text);
json load_document(const std::filesystem::path& path);

// Hands out scenario steps to tasks and service calls in order, one cursor
// per subject.
class ScenarioCursor {
public:
    ScenarioCursor(Scenario s, std::shared_ptr<const compile::Bundle> b);

    // Next step of `subject` if it applies at state index `state_index`.
    std::optional<ScenarioStep> peek(const std::string& subject, int state_index);
    void advance(const std::string& subject);
    std::optional<ScenarioStep> take(const std::string& subject, int state_index);

private:
    bool matches(const std::string& subject, int state_index, const ScenarioStep& step) const;

    Scenario scenario_;
    std::shared_ptr<const compile::Bundle> bundle_;
    std::map<std::string, std::size_t> cursor_;
    std::mutex mu_;
};

}  // namespace sbpm::cli
