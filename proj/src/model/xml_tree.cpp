#include "xml_tree.hpp"

#include <expat.h>

#include <algorithm>
#include <limits>

namespace sbpm::model::detail {

const std::string* XmlNode::attribute(std::string_view key) const {
    for (const auto& [k, v] : attributes)
        if (k == key) return &v;
    return nullptr;
}

namespace {

struct BuildContext {
    XML_Parser parser = nullptr;
    std::unique_ptr<XmlNode> root;
    std::vector<XmlNode*> stack;
    std::optional<XmlSyntaxError> error;

    void fail(std::string message) {
        if (error) return;
        error = XmlSyntaxError{std::move(message),
                               static_cast<int>(XML_GetCurrentLineNumber(parser)),
                               static_cast<int>(XML_GetCurrentColumnNumber(parser)) + 1};
        XML_StopParser(parser, XML_FALSE);
    }
};

void on_start(void* data, const XML_Char* name, const XML_Char** attrs) {
    auto* ctx = static_cast<BuildContext*>(data);
    auto node = std::make_unique<XmlNode>();
    node->name = name;
    node->line = static_cast<int>(XML_GetCurrentLineNumber(ctx->parser));
    node->column = static_cast<int>(XML_GetCurrentColumnNumber(ctx->parser)) + 1;
    for (int i = 0; attrs[i] != nullptr; i += 2) node->attributes.emplace_back(attrs[i], attrs[i + 1]);
    XmlNode* raw = node.get();
    if (ctx->stack.empty()) {
        ctx->root = std::move(node);
    } else {
        ctx->stack.back()->children.push_back(std::move(node));
    }
    ctx->stack.push_back(raw);
}

void on_end(void* data, const XML_Char*) {
    auto* ctx = static_cast<BuildContext*>(data);
    ctx->stack.pop_back();
}

void on_text(void* data, const XML_Char* text, int len) {
    auto* ctx = static_cast<BuildContext*>(data);
    std::string_view chunk(text, static_cast<std::size_t>(len));
    bool blank = std::all_of(chunk.begin(), chunk.end(), [](char c) {
        return c == ' ' || c == '\t' || c == '\n' || c == '\r';
    });
    if (!blank) ctx->fail("unexpected character data");
}

void on_doctype(void* data, const XML_Char*, const XML_Char*, const XML_Char*, int) {
    static_cast<BuildContext*>(data)->fail("DOCTYPE declarations are not allowed");
}

struct ParserHandle {
    XML_Parser parser;
    ~ParserHandle() { XML_ParserFree(parser); }
};

}  // namespace

std::variant<std::unique_ptr<XmlNode>, XmlSyntaxError> read_xml(std::string_view bytes) {
    ParserHandle handle{XML_ParserCreate("UTF-8")};
    if (handle.parser == nullptr) return XmlSyntaxError{"out of memory", 0, 0};

    BuildContext ctx;
    ctx.parser = handle.parser;
    XML_SetUserData(handle.parser, &ctx);
    XML_SetElementHandler(handle.parser, on_start, on_end);
    XML_SetCharacterDataHandler(handle.parser, on_text);
    XML_SetStartDoctypeDeclHandler(handle.parser, on_doctype);

    if (bytes.size() > static_cast<std::size_t>(std::numeric_limits<int>::max()))
        return XmlSyntaxError{"document too large", 0, 0};

    auto status = XML_Parse(handle.parser, bytes.data(), static_cast<int>(bytes.size()), XML_TRUE);
    if (ctx.error) return *ctx.error;
    if (status != XML_STATUS_OK) {
        return XmlSyntaxError{XML_ErrorString(XML_GetErrorCode(handle.parser)),
                              static_cast<int>(XML_GetCurrentLineNumber(handle.parser)),
                              static_cast<int>(XML_GetCurrentColumnNumber(handle.parser)) + 1};
    }
    if (!ctx.root) return XmlSyntaxError{"no root element", 1, 1};
    return std::move(ctx.root);
}

std::string escape_attribute(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    for (char c : text) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            case '\'': out += "&apos;"; break;
            case '\n': out += "&#10;"; break;
            case '\r': out += "&#13;"; break;
            case '\t': out += "&#9;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace sbpm::model::detail
