#include <fstream>
#include <sstream>

#include "sbpm/model/model_io.hpp"
#include "xml_tree.hpp"

namespace sbpm::model {

namespace {

using detail::escape_attribute;

std::string attr(std::string_view key, std::string_view value) {
    return " " + std::string(key) + "=\"" + escape_attribute(value) + "\"";
}

void write_fields(std::ostringstream& out, const std::vector<BoField>& fields, int depth) {
    const std::string indent(static_cast<std::size_t>(depth) * 2, ' ');
    for (const auto& f : fields) {
        out << indent << "<field" << attr("name", f.name) << attr("type", to_string(f.type))
            << attr("required", f.required ? "true" : "false");
        if (f.children.empty()) {
            out << "/>\n";
        } else {
            out << ">\n";
            write_fields(out, f.children, depth + 1);
            out << indent << "</field>\n";
        }
    }
}

std::string write_sid(const ProcessModel& m) {
    std::ostringstream out;
    out << "<process" << attr("id", m.id) << attr("name", m.name) << attr("version", m.version) << ">\n";
    for (const auto& s : m.subjects) {
        out << "  <subject" << attr("id", s.id) << attr("name", s.name) << attr("role", s.role)
            << attr("external", s.external ? "true" : "false") << attr("pool", std::to_string(s.pool_capacity))
            << "/>\n";
    }
    for (const auto& msg : m.messages) {
        out << "  <message" << attr("id", msg.id) << attr("name", msg.name) << attr("from", msg.from)
            << attr("to", msg.to);
        if (msg.bo) out << attr("bo", *msg.bo);
        out << "/>\n";
    }
    for (const auto& bo : m.bo_schemas) {
        if (bo.fields.empty()) {
            out << "  <businessObject" << attr("id", bo.id) << "/>\n";
            continue;
        }
        out << "  <businessObject" << attr("id", bo.id) << ">\n";
        write_fields(out, bo.fields, 2);
        out << "  </businessObject>\n";
    }
    out << "</process>\n";
    return out.str();
}

struct LabelWriter {
    std::string operator()(const OutcomeLabel& l) const { return attr("outcome", l.name); }
    std::string operator()(const SendLabel& l) const { return attr("message", l.message) + attr("to-subject", l.to_subject); }
    std::string operator()(const ReceiveLabel& l) const {
        return attr("message", l.message) + attr("from-subject", l.from_subject);
    }
    std::string operator()(const TimeoutLabel&) const { return attr("timeout", "true"); }
};

std::string write_behavior(const BehaviorGraph& g) {
    std::ostringstream out;
    out << "<behavior" << attr("subject", g.subject) << ">\n";
    for (const auto& s : g.states) {
        out << "  <state" << attr("id", s.id) << attr("name", s.name) << attr("kind", to_string(s.kind));
        if (s.start) out << attr("start", "true");
        if (s.end) out << attr("end", "true");
        if (s.refinement) out << attr("refinement", *s.refinement);
        if (s.on_error) out << attr("on-error", *s.on_error);
        if (s.timeout_ms) out << attr("timeout", std::to_string(*s.timeout_ms));
        out << "/>\n";
    }
    for (const auto& t : g.transitions)
        out << "  <transition" << attr("from", t.from) << attr("to", t.to) << std::visit(LabelWriter{}, t.label) << "/>\n";
    out << "</behavior>\n";
    return out.str();
}

}  // namespace

FileMap serialize_model(const ProcessModel& model) {
    FileMap files;
    files.emplace(kSidFile, write_sid(model));
    for (const auto& [subject, graph] : model.behaviors) files.emplace(behavior_file_name(subject), write_behavior(graph));
    return files;
}

void write_model_dir(const ProcessModel& model, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (const auto& [name, bytes] : serialize_model(model)) {
        std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
        out << bytes;
    }
}

}  // namespace sbpm::model
