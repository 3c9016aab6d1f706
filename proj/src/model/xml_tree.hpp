#pragma once

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace sbpm::model::detail {

struct XmlNode {
    std::string name;
    std::vector<std::pair<std::string, std::string>> attributes;
    std::vector<std::unique_ptr<XmlNode>> children;
    int line = 0;
    int column = 0;

    const std::string* attribute(std::string_view key) const;
};

struct XmlSyntaxError {
    std::string message;
    int line = 0;
    int column = 0;
};

// Builds an element tree. Comments and processing instructions are skipped,
// whitespace-only text is ignored, any other character data or a DOCTYPE is a
// syntax error. Never throws on malformed input.
std::variant<std::unique_ptr<XmlNode>, XmlSyntaxError> read_xml(std::string_view bytes);

// Escapes &, <, >, " and ' for attribute values.
std::string escape_attribute(std::string_view text);

}  // namespace sbpm::model::detail
