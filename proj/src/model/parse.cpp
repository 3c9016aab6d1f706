#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "sbpm/model/model_io.hpp"
#include "xml_tree.hpp"

namespace sbpm::model {

namespace {

using detail::XmlNode;
using Kind = ParseError::Kind;

std::string_view kind_name(Kind kind) {
    switch (kind) {
        case Kind::MissingFile: return "MissingFile";
        case Kind::MalformedXml: return "MalformedXml";
        case Kind::SchemaViolation: return "SchemaViolation";
        case Kind::DanglingReference: return "DanglingReference";
    }
    return "ParseError";
}

std::string format_message(Kind kind, const std::string& file, int line, int column, const std::string& detail) {
    std::ostringstream out;
    out << kind_name(kind) << ": " << file;
    if (line > 0) out << ':' << line << ':' << column;
    out << ": " << detail;
    return out.str();
}

// Reads one file of the model; every error carries the file name and the
// position of the offending element.
class FileReader {
public:
    explicit FileReader(std::string file) : file_(std::move(file)) {}

    [[noreturn]] void fail(Kind kind, const XmlNode& at, const std::string& detail) const {
        throw ParseError(kind, file_, at.line, at.column, detail);
    }

    void expect_name(const XmlNode& node, std::string_view name) const {
        if (node.name != name)
            fail(Kind::SchemaViolation, node, "expected element <" + std::string(name) + ">, found <" + node.name + ">");
    }

    void allow_attributes(const XmlNode& node, std::initializer_list<std::string_view> allowed) const {
        for (const auto& [key, value] : node.attributes) {
            if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
                fail(Kind::SchemaViolation, node, "unknown attribute '" + key + "' on <" + node.name + ">");
        }
    }

    void no_children(const XmlNode& node) const {
        if (!node.children.empty())
            fail(Kind::SchemaViolation, *node.children.front(),
                 "element <" + node.children.front()->name + "> not allowed inside <" + node.name + ">");
    }

    const std::string& required(const XmlNode& node, std::string_view key) const {
        const std::string* value = node.attribute(key);
        if (value == nullptr)
            fail(Kind::SchemaViolation, node, "missing attribute '" + std::string(key) + "' on <" + node.name + ">");
        return *value;
    }

    std::string optional_text(const XmlNode& node, std::string_view key, std::string fallback) const {
        const std::string* value = node.attribute(key);
        return value ? *value : std::move(fallback);
    }

    std::string identifier(const XmlNode& node, std::string_view key) const {
        const std::string& value = required(node, key);
        if (!is_valid_identifier(value))
            fail(Kind::SchemaViolation, node,
                 "attribute '" + std::string(key) + "' is not a valid identifier: '" + value + "'");
        return value;
    }

    bool boolean(const XmlNode& node, std::string_view key, bool fallback) const {
        const std::string* value = node.attribute(key);
        if (value == nullptr) return fallback;
        if (*value == "true") return true;
        if (*value == "false") return false;
        fail(Kind::SchemaViolation, node, "attribute '" + std::string(key) + "' must be true or false");
    }

    std::int64_t integer(const XmlNode& node, std::string_view key, std::int64_t min) const {
        const std::string& value = required(node, key);
        std::int64_t parsed = 0;
        auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), parsed);
        if (ec != std::errc{} || ptr != value.data() + value.size() || parsed < min)
            fail(Kind::SchemaViolation, node,
                 "attribute '" + std::string(key) + "' must be an integer >= " + std::to_string(min));
        return parsed;
    }

    const std::string& file() const { return file_; }

private:
    std::string file_;
};

std::unique_ptr<XmlNode> load_tree(const std::string& file, const std::string& bytes) {
    auto result = detail::read_xml(bytes);
    if (auto* err = std::get_if<detail::XmlSyntaxError>(&result))
        throw ParseError(Kind::MalformedXml, file, err->line, err->column, err->message);
    return std::move(std::get<std::unique_ptr<XmlNode>>(result));
}

std::vector<BoField> read_fields(const FileReader& reader, const XmlNode& parent) {
    std::vector<BoField> fields;
    std::set<std::string> names;
    for (const auto& child : parent.children) {
        reader.expect_name(*child, "field");
        reader.allow_attributes(*child, {"name", "type", "required"});
        BoField field;
        field.name = reader.required(*child, "name");
        if (field.name.empty()) reader.fail(Kind::SchemaViolation, *child, "field name must not be empty");
        if (!names.insert(field.name).second)
            reader.fail(Kind::SchemaViolation, *child, "duplicate field name '" + field.name + "'");
        auto type = field_type_from(reader.required(*child, "type"));
        if (!type) reader.fail(Kind::SchemaViolation, *child, "unknown field type '" + *child->attribute("type") + "'");
        field.type = *type;
        field.required = reader.boolean(*child, "required", false);
        bool composite = field.type == FieldType::record || field.type == FieldType::list;
        if (composite) {
            if (child->children.empty())
                reader.fail(Kind::SchemaViolation, *child, "field '" + field.name + "' needs at least one child field");
            field.children = read_fields(reader, *child);
        } else {
            reader.no_children(*child);
        }
        fields.push_back(std::move(field));
    }
    return fields;
}

template <typename T>
void require_unique(const FileReader& reader, const XmlNode& at, std::set<std::string>& seen, const std::string& id,
                    const char* what) {
    if (!seen.insert(id).second)
        reader.fail(Kind::SchemaViolation, at, std::string("duplicate ") + what + " id '" + id + "'");
}

ProcessModel read_sid(const std::string& bytes) {
    FileReader reader(kSidFile);
    auto root = load_tree(kSidFile, bytes);
    reader.expect_name(*root, "process");
    reader.allow_attributes(*root, {"id", "name", "version"});

    ProcessModel model;
    model.id = reader.identifier(*root, "id");
    model.name = reader.optional_text(*root, "name", "");
    model.version = reader.optional_text(*root, "version", "");

    std::set<std::string> subject_ids, message_ids, schema_ids;
    std::vector<const XmlNode*> message_nodes;

    for (const auto& child : root->children) {
        if (child->name == "subject") {
            reader.allow_attributes(*child, {"id", "name", "role", "external", "pool"});
            reader.no_children(*child);
            SubjectDecl s;
            s.id = reader.identifier(*child, "id");
            require_unique<SubjectDecl>(reader, *child, subject_ids, s.id, "subject");
            s.name = reader.optional_text(*child, "name", "");
            s.role = reader.optional_text(*child, "role", s.id);
            s.external = reader.boolean(*child, "external", false);
            if (child->attribute("pool"))
                s.pool_capacity = static_cast<int>(std::min<std::int64_t>(reader.integer(*child, "pool", 1), 1 << 20));
            model.subjects.push_back(std::move(s));
        } else if (child->name == "message") {
            reader.allow_attributes(*child, {"id", "name", "from", "to", "bo"});
            reader.no_children(*child);
            MessageDecl m;
            m.id = reader.identifier(*child, "id");
            require_unique<MessageDecl>(reader, *child, message_ids, m.id, "message");
            m.name = reader.optional_text(*child, "name", "");
            m.from = reader.identifier(*child, "from");
            m.to = reader.identifier(*child, "to");
            if (const std::string* bo = child->attribute("bo")) m.bo = *bo;
            if (m.from == m.to)
                reader.fail(Kind::SchemaViolation, *child, "message '" + m.id + "' must connect two distinct subjects");
            model.messages.push_back(std::move(m));
            message_nodes.push_back(child.get());
        } else if (child->name == "businessObject") {
            reader.allow_attributes(*child, {"id"});
            BoSchema schema;
            schema.id = reader.identifier(*child, "id");
            require_unique<BoSchema>(reader, *child, schema_ids, schema.id, "businessObject");
            schema.fields = read_fields(reader, *child);
            model.bo_schemas.push_back(std::move(schema));
        } else {
            reader.fail(Kind::SchemaViolation, *child, "unknown element <" + child->name + "> in <process>");
        }
    }

    for (std::size_t i = 0; i < model.messages.size(); ++i) {
        const auto& m = model.messages[i];
        const XmlNode& at = *message_nodes[i];
        if (!model.find_subject(m.from)) reader.fail(Kind::DanglingReference, at, "unknown subject '" + m.from + "'");
        if (!model.find_subject(m.to)) reader.fail(Kind::DanglingReference, at, "unknown subject '" + m.to + "'");
        if (m.bo && !model.find_schema(*m.bo))
            reader.fail(Kind::DanglingReference, at, "unknown businessObject '" + *m.bo + "'");
    }
    return model;
}

BehaviorGraph read_behavior(const ProcessModel& model, const SubjectDecl& subject, const std::string& file,
                            const std::string& bytes) {
    FileReader reader(file);
    auto root = load_tree(file, bytes);
    reader.expect_name(*root, "behavior");
    reader.allow_attributes(*root, {"subject"});
    if (reader.required(*root, "subject") != subject.id)
        reader.fail(Kind::SchemaViolation, *root,
                    "behavior subject '" + *root->attribute("subject") + "' does not match file for '" + subject.id + "'");

    BehaviorGraph graph;
    graph.subject = subject.id;
    std::set<std::string> state_ids;
    std::vector<const XmlNode*> transition_nodes;
    const XmlNode* start_node = nullptr;

    for (const auto& child : root->children) {
        if (child->name == "state") {
            reader.allow_attributes(*child, {"id", "name", "kind", "start", "end", "refinement", "on-error", "timeout"});
            reader.no_children(*child);
            State st;
            st.id = reader.identifier(*child, "id");
            require_unique<State>(reader, *child, state_ids, st.id, "state");
            st.name = reader.optional_text(*child, "name", "");
            auto kind = state_kind_from(reader.required(*child, "kind"));
            if (!kind) reader.fail(Kind::SchemaViolation, *child, "unknown state kind '" + *child->attribute("kind") + "'");
            st.kind = *kind;
            st.start = reader.boolean(*child, "start", false);
            st.end = reader.boolean(*child, "end", false);
            if (st.start) {
                if (start_node)
                    reader.fail(Kind::SchemaViolation, *child, "second start state '" + st.id + "'");
                start_node = child.get();
            }
            if (st.end && st.kind != StateKind::function)
                reader.fail(Kind::SchemaViolation, *child, "end state '" + st.id + "' must be a function state");
            if (const std::string* ref = child->attribute("refinement")) {
                if (st.kind != StateKind::function)
                    reader.fail(Kind::SchemaViolation, *child, "refinement is only allowed on function states");
                if (ref->empty()) reader.fail(Kind::SchemaViolation, *child, "refinement must not be empty");
                st.refinement = *ref;
            }
            if (const std::string* on_error = child->attribute("on-error")) {
                if (!st.refinement)
                    reader.fail(Kind::SchemaViolation, *child, "on-error requires a refinement");
                st.on_error = *on_error;
            }
            if (child->attribute("timeout")) {
                if (st.kind != StateKind::receive)
                    reader.fail(Kind::SchemaViolation, *child, "timeout is only allowed on receive states");
                auto ms = reader.integer(*child, "timeout", 0);
                if (ms > 0) st.timeout_ms = ms;
            }
            graph.states.push_back(std::move(st));
        } else if (child->name == "transition") {
            transition_nodes.push_back(child.get());
        } else {
            reader.fail(Kind::SchemaViolation, *child, "unknown element <" + child->name + "> in <behavior>");
        }
    }

    if (!start_node) reader.fail(Kind::SchemaViolation, *root, "behavior of '" + subject.id + "' has no start state");
    if (std::none_of(graph.states.begin(), graph.states.end(), [](const State& s) { return s.end; }))
        reader.fail(Kind::SchemaViolation, *root, "behavior of '" + subject.id + "' has no end state");

    std::set<std::string> timeout_sources;
    for (const XmlNode* node : transition_nodes) {
        reader.allow_attributes(*node, {"from", "to", "outcome", "message", "to-subject", "from-subject", "timeout"});
        reader.no_children(*node);
        Transition t;
        t.from = reader.identifier(*node, "from");
        t.to = reader.identifier(*node, "to");
        const State* source = graph.find_state(t.from);
        if (!source) reader.fail(Kind::DanglingReference, *node, "unknown state '" + t.from + "'");
        if (!graph.find_state(t.to)) reader.fail(Kind::DanglingReference, *node, "unknown state '" + t.to + "'");

        const std::string* outcome = node->attribute("outcome");
        const std::string* message = node->attribute("message");
        const std::string* to_subject = node->attribute("to-subject");
        const std::string* from_subject = node->attribute("from-subject");
        const bool timeout = reader.boolean(*node, "timeout", false);
        if (node->attribute("timeout") && !timeout)
            reader.fail(Kind::SchemaViolation, *node, "timeout attribute on a transition must be \"true\"");

        auto check_message = [&](const std::string& mid, const std::string& peer) {
            if (!model.find_message(mid)) reader.fail(Kind::DanglingReference, *node, "unknown message '" + mid + "'");
            if (!model.find_subject(peer)) reader.fail(Kind::DanglingReference, *node, "unknown subject '" + peer + "'");
        };

        switch (source->kind) {
            case StateKind::function:
                if (!outcome || message || to_subject || from_subject || timeout)
                    reader.fail(Kind::SchemaViolation, *node,
                                "transition from function state '" + t.from + "' needs exactly an outcome attribute");
                if (outcome->empty()) reader.fail(Kind::SchemaViolation, *node, "outcome must not be empty");
                t.label = OutcomeLabel{*outcome};
                break;
            case StateKind::send:
                if (!message || !to_subject || outcome || from_subject || timeout)
                    reader.fail(Kind::SchemaViolation, *node,
                                "transition from send state '" + t.from + "' needs message and to-subject attributes");
                check_message(*message, *to_subject);
                t.label = SendLabel{*message, *to_subject};
                break;
            case StateKind::receive:
                if (timeout) {
                    if (outcome || message || to_subject || from_subject)
                        reader.fail(Kind::SchemaViolation, *node, "timeout transition carries no other label");
                    if (!timeout_sources.insert(t.from).second)
                        reader.fail(Kind::SchemaViolation, *node, "second timeout transition from '" + t.from + "'");
                    if (!source->timeout_ms)
                        reader.fail(Kind::SchemaViolation, *node,
                                    "timeout transition from '" + t.from + "' whose state declares no timeout");
                    t.label = TimeoutLabel{};
                } else {
                    if (!message || !from_subject || outcome || to_subject)
                        reader.fail(Kind::SchemaViolation, *node,
                                    "transition from receive state '" + t.from + "' needs message and from-subject attributes");
                    check_message(*message, *from_subject);
                    t.label = ReceiveLabel{*message, *from_subject};
                }
                break;
        }
        graph.transitions.push_back(std::move(t));
    }

    for (std::size_t i = 0; i < graph.states.size(); ++i) {
        const State& st = graph.states[i];
        const XmlNode& at = [&]() -> const XmlNode& {
            std::size_t seen = 0;
            for (const auto& child : root->children)
                if (child->name == "state" && seen++ == i) return *child;
            return *root;
        }();
        auto out = graph.outgoing(st.id);
        if (!st.end && out.empty())
            reader.fail(Kind::SchemaViolation, at, "non-end state '" + st.id + "' has no outgoing transition");
        if (st.kind == StateKind::receive && !out.empty() &&
            std::all_of(out.begin(), out.end(),
                        [](const Transition* t) { return std::holds_alternative<TimeoutLabel>(t->label); }))
            reader.fail(Kind::SchemaViolation, at, "receive state '" + st.id + "' has no message transition");
        if (st.on_error &&
            std::none_of(out.begin(), out.end(), [&](const Transition* t) {
                const auto* o = std::get_if<OutcomeLabel>(&t->label);
                return o && o->name == *st.on_error;
            }))
            reader.fail(Kind::DanglingReference, at, "on-error outcome '" + *st.on_error + "' is not an outcome of '" + st.id + "'");
    }
    return graph;
}

}  // namespace

ParseError::ParseError(Kind kind, std::string file, int line, int column, std::string detail)
    : Error(std::string(kind_name(kind)), format_message(kind, file, line, column, detail)),
      kind_(kind),
      file_(std::move(file)),
      line_(line),
      column_(column),
      detail_(std::move(detail)) {}

std::string behavior_file_name(std::string_view subject_id) {
    return std::string(subject_id) + ".sbd.xml";
}

ProcessModel parse_model(const FileMap& files) {
    auto sid = files.find(kSidFile);
    if (sid == files.end()) throw ParseError(Kind::MissingFile, kSidFile, 0, 0, "file not found");

    ProcessModel model = read_sid(sid->second);

    std::set<std::string> expected;
    for (const auto& subject : model.subjects) {
        if (subject.external) continue;
        std::string file = behavior_file_name(subject.id);
        expected.insert(file);
        auto it = files.find(file);
        if (it == files.end()) throw ParseError(Kind::MissingFile, file, 0, 0, "file not found");
        model.behaviors.emplace(subject.id, read_behavior(model, subject, file, it->second));
    }

    static constexpr std::string_view suffix = ".sbd.xml";
    for (const auto& [name, bytes] : files) {
        if (name.size() <= suffix.size() || name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0)
            continue;
        if (expected.count(name)) continue;
        std::string subject = name.substr(0, name.size() - suffix.size());
        const SubjectDecl* decl = model.find_subject(subject);
        if (decl && decl->external)
            throw ParseError(Kind::SchemaViolation, name, 0, 0, "external subject '" + subject + "' must not have a behavior");
        throw ParseError(Kind::DanglingReference, name, 0, 0, "behavior for undeclared subject '" + subject + "'");
    }
    return model;
}

ProcessModel parse_model_dir(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) throw ParseError(Kind::MissingFile, dir.string(), 0, 0, "not a directory");
    FileMap files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string name = entry.path().filename().string();
        if (entry.path().extension() != ".xml") continue;
        std::ifstream in(entry.path(), std::ios::binary);
        std::ostringstream buf;
        buf << in.rdbuf();
        files.emplace(std::move(name), buf.str());
    }
    return parse_model(files);
}

}  // namespace sbpm::model
