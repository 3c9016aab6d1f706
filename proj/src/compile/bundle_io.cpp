#include <openssl/evp.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "sbpm/compile/bundle.hpp"

namespace sbpm::compile {

using namespace sbpm::model;
using nlohmann::json;

namespace {

constexpr std::string_view kMagic = "SBPMBNDL";
constexpr unsigned char kVersionHi = 0x00;
constexpr unsigned char kVersionLo = 0x01;
constexpr std::size_t kHeaderSize = 10;

[[noreturn]] void malformed(const std::string& what) { throw BundleError("MalformedBundle", "malformed bundle: " + what); }

json fields_to_json(const std::vector<BoField>& fields) {
    json out = json::array();
    for (const auto& f : fields) {
        json j = {{"name", f.name}, {"type", to_string(f.type)}, {"required", f.required}};
        if (!f.children.empty()) j["children"] = fields_to_json(f.children);
        out.push_back(std::move(j));
    }
    return out;
}

std::vector<BoField> fields_from_json(const json& arr) {
    std::vector<BoField> out;
    for (const auto& j : arr) {
        BoField f;
        f.name = j.at("name").get<std::string>();
        auto type = field_type_from(j.at("type").get<std::string>());
        if (!type) malformed("unknown field type");
        f.type = *type;
        f.required = j.at("required").get<bool>();
        if (j.contains("children")) f.children = fields_from_json(j.at("children"));
        out.push_back(std::move(f));
    }
    return out;
}

json arm_to_json(const IrArm& arm) {
    json j = {{"target", arm.target}};
    std::visit(
        [&](const auto& sel) {
            using T = std::decay_t<decltype(sel)>;
            if constexpr (std::is_same_v<T, OutcomeSelector>) {
                j["outcome"] = sel.outcome;
            } else if constexpr (std::is_same_v<T, EmitSelector>) {
                json e = {{"message", sel.message}, {"to", sel.to}};
                if (sel.bo) e["bo"] = *sel.bo;
                j["emit"] = e;
            } else if constexpr (std::is_same_v<T, MatchSelector>) {
                j["match"] = {{"message", sel.message}, {"from", sel.from}};
            } else {
                j["timeout"] = true;
            }
        },
        arm.selector);
    return j;
}

IrArm arm_from_json(const json& j) {
    IrArm arm;
    arm.target = j.at("target").get<int>();
    if (j.contains("outcome")) {
        arm.selector = OutcomeSelector{j.at("outcome").get<std::string>()};
    } else if (j.contains("emit")) {
        const json& e = j.at("emit");
        EmitSelector sel{e.at("message").get<std::string>(), e.at("to").get<std::string>(), std::nullopt};
        if (e.contains("bo")) sel.bo = e.at("bo").get<std::string>();
        arm.selector = sel;
    } else if (j.contains("match")) {
        const json& e = j.at("match");
        arm.selector = MatchSelector{e.at("message").get<std::string>(), e.at("from").get<std::string>()};
    } else if (j.contains("timeout")) {
        arm.selector = TimeoutSelector{};
    } else {
        malformed("arm without selector");
    }
    return arm;
}

json payload_json(const Bundle& b) {
    json subjects = json::array();
    for (const auto& s : b.subjects)
        subjects.push_back({{"id", s.id}, {"name", s.name}, {"role", s.role}, {"external", s.external},
                            {"pool", s.pool_capacity}});

    json messages = json::array();
    for (const auto& m : b.messages) {
        json j = {{"id", m.id}, {"name", m.name}, {"from", m.from}, {"to", m.to}};
        if (m.bo) j["bo"] = *m.bo;
        messages.push_back(std::move(j));
    }

    json schemas = json::array();
    for (const auto& s : b.bo_schemas) schemas.push_back({{"id", s.id}, {"fields", fields_to_json(s.fields)}});

    json programs = json::array();
    for (const auto& p : b.programs) {
        json states = json::array();
        for (const auto& st : p.states) {
            json arms = json::array();
            for (const auto& a : st.arms) arms.push_back(arm_to_json(a));
            json js = {{"id", st.id}, {"kind", to_string(st.kind)}, {"name", st.name}, {"arms", arms}};
            if (st.refinement) js["refinement"] = *st.refinement;
            if (st.on_error) js["on_error"] = *st.on_error;
            if (st.timeout_ms) js["timeout_ms"] = *st.timeout_ms;
            states.push_back(std::move(js));
        }
        programs.push_back({{"subject", p.subject},
                            {"start", p.start_index},
                            {"end", json(std::vector<int>(p.end_indices.begin(), p.end_indices.end()))},
                            {"states", states}});
    }

    const auto& sup = b.supervisor;
    json routes = json::array();
    for (const auto& r : sup.external_routes) routes.push_back({{"subject", r.subject}, {"hint", r.hint}});
    json restart = {{"policy", sup.restart_policy.kind == RestartPolicy::Kind::never ? "never" : "replay"},
                    {"max_restarts", sup.restart_policy.max_restarts},
                    {"window_s", sup.restart_policy.window_s}};
    json supervisor = {{"restart", restart},
                       {"metrics", sup.metrics},
                       {"external_routes", routes},
                       {"send_policy", sup.send_policy == SendPolicy::block ? "block" : "drop-error"},
                       {"service_timeout_ms", sup.service_timeout_ms}};

    json manifest = {{"process", b.manifest.process_id},
                     {"name", b.manifest.name},
                     {"version", b.manifest.version},
                     {"created_at", b.manifest.created_at}};

    return {{"manifest", manifest}, {"subjects", subjects},   {"messages", messages},
            {"bo_schemas", schemas}, {"programs", programs}, {"supervisor", supervisor}};
}

Bundle bundle_from_payload(const json& p) {
    Bundle b;
    const json& manifest = p.at("manifest");
    b.manifest.process_id = manifest.at("process").get<std::string>();
    b.manifest.name = manifest.at("name").get<std::string>();
    b.manifest.version = manifest.at("version").get<std::string>();
    b.manifest.created_at = manifest.at("created_at").get<std::string>();

    for (const auto& j : p.at("subjects")) {
        SubjectDecl s;
        s.id = j.at("id").get<std::string>();
        s.name = j.at("name").get<std::string>();
        s.role = j.at("role").get<std::string>();
        s.external = j.at("external").get<bool>();
        s.pool_capacity = j.at("pool").get<int>();
        if (s.pool_capacity < 1) malformed("pool capacity below 1");
        b.subjects.push_back(std::move(s));
    }
    for (const auto& j : p.at("messages")) {
        MessageDecl m;
        m.id = j.at("id").get<std::string>();
        m.name = j.at("name").get<std::string>();
        m.from = j.at("from").get<std::string>();
        m.to = j.at("to").get<std::string>();
        if (j.contains("bo")) m.bo = j.at("bo").get<std::string>();
        b.messages.push_back(std::move(m));
    }
    for (const auto& j : p.at("bo_schemas"))
        b.bo_schemas.push_back(BoSchema{j.at("id").get<std::string>(), fields_from_json(j.at("fields"))});

    for (const auto& j : p.at("programs")) {
        SubjectProgram prog;
        prog.subject = j.at("subject").get<std::string>();
        prog.start_index = j.at("start").get<int>();
        for (int e : j.at("end")) prog.end_indices.insert(e);
        for (const auto& js : j.at("states")) {
            IrState st;
            st.id = js.at("id").get<std::string>();
            auto kind = state_kind_from(js.at("kind").get<std::string>());
            if (!kind) malformed("unknown state kind");
            st.kind = *kind;
            st.name = js.at("name").get<std::string>();
            if (js.contains("refinement")) st.refinement = js.at("refinement").get<std::string>();
            if (js.contains("on_error")) st.on_error = js.at("on_error").get<std::string>();
            if (js.contains("timeout_ms")) st.timeout_ms = js.at("timeout_ms").get<std::int64_t>();
            for (const auto& ja : js.at("arms")) st.arms.push_back(arm_from_json(ja));
            prog.states.push_back(std::move(st));
        }
        const int n = static_cast<int>(prog.states.size());
        if (n == 0 || prog.start_index < 0 || prog.start_index >= n) malformed("start index out of range");
        for (int e : prog.end_indices)
            if (e < 0 || e >= n) malformed("end index out of range");
        for (const auto& st : prog.states)
            for (const auto& a : st.arms)
                if (a.target < 0 || a.target >= n) malformed("arm target out of range");
        b.programs.push_back(std::move(prog));
    }
    if (b.programs.empty()) malformed("no subject programs");

    const json& sup = p.at("supervisor");
    const json& restart = sup.at("restart");
    const std::string policy = restart.at("policy").get<std::string>();
    if (policy != "never" && policy != "replay") malformed("unknown restart policy");
    b.supervisor.restart_policy.kind = policy == "never" ? RestartPolicy::Kind::never : RestartPolicy::Kind::replay;
    b.supervisor.restart_policy.max_restarts = restart.at("max_restarts").get<int>();
    b.supervisor.restart_policy.window_s = restart.at("window_s").get<int>();
    b.supervisor.metrics = sup.at("metrics").get<std::vector<std::string>>();
    for (const auto& r : sup.at("external_routes"))
        b.supervisor.external_routes.push_back(ExternalRoute{r.at("subject").get<std::string>(), r.at("hint").get<std::string>()});
    const std::string send = sup.at("send_policy").get<std::string>();
    if (send != "block" && send != "drop-error") malformed("unknown send policy");
    b.supervisor.send_policy = send == "block" ? SendPolicy::block : SendPolicy::drop_error;
    b.supervisor.service_timeout_ms = sup.at("service_timeout_ms").get<std::int64_t>();
    return b;
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr);
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0x0f]);
    }
    return out;
}

std::string canonical_payload(const Bundle& b) { return payload_json(b).dump(); }

std::string encode_bundle(const Bundle& b) {
    std::string payload = canonical_payload(b);
    json doc = {{"content_hash", sha256_hex(payload)}, {"payload", json::parse(payload)}};
    std::string out(kMagic);
    out.push_back(static_cast<char>(kVersionHi));
    out.push_back(static_cast<char>(kVersionLo));
    out += doc.dump();
    return out;
}

Bundle decode_bundle(std::string_view bytes) {
    if (bytes.size() < kHeaderSize || bytes.substr(0, kMagic.size()) != kMagic) malformed("bad magic");
    if (static_cast<unsigned char>(bytes[8]) != kVersionHi || static_cast<unsigned char>(bytes[9]) != kVersionLo)
        malformed("unsupported container version");

    json doc = json::parse(bytes.substr(kHeaderSize), nullptr, false);
    if (doc.is_discarded() || !doc.is_object() || !doc.contains("content_hash") || !doc.contains("payload") ||
        !doc["content_hash"].is_string() || !doc["payload"].is_object())
        malformed("payload is not a bundle document");

    const std::string stored = doc["content_hash"].get<std::string>();
    const std::string actual = sha256_hex(doc["payload"].dump());
    if (stored != actual)
        throw BundleError("CorruptBundle", "bundle content hash mismatch (stored " + stored + ", computed " + actual + ")");

    Bundle b;
    try {
        b = bundle_from_payload(doc["payload"]);
    } catch (const json::exception& e) {
        malformed(e.what());
    }
    b.manifest.content_hash = stored;
    return b;
}

void store_bundle(const Bundle& b, const std::filesystem::path& path) {
    const std::string bytes = encode_bundle(b);
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw BundleError("IoError", "cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw BundleError("IoError", "cannot write " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Bundle load_bundle(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw BundleError("MalformedBundle", "cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return decode_bundle(buf.str());
}

std::string disassemble(const Bundle& b) {
    const std::string actual = sha256_hex(canonical_payload(b));
    if (actual != b.manifest.content_hash)
        throw BundleError("CorruptBundle", "bundle content hash mismatch (stored " + b.manifest.content_hash +
                                               ", computed " + actual + ")");

    std::ostringstream out;
    out << "; process " << b.manifest.process_id << " \"" << b.manifest.name << "\" version " << b.manifest.version
        << '\n';
    out << "; sha256 " << b.manifest.content_hash << '\n';
    out << "; created " << b.manifest.created_at << '\n';
    for (const auto& r : b.supervisor.external_routes)
        out << "; external " << r.subject << " -> " << (r.hint.empty() ? "(unrouted)" : r.hint) << '\n';

    for (const auto& p : b.programs) {
        out << '\n' << "subject " << p.subject << " (" << p.states.size() << " states, start "
            << p.states[static_cast<std::size_t>(p.start_index)].id << ")\n";
        for (std::size_t i = 0; i < p.states.size(); ++i) {
            const IrState& st = p.states[i];
            out << "; [" << i << "] " << st.id << ' ' << to_string(st.kind) << " \"" << st.name << '"';
            if (p.is_end(static_cast<int>(i))) out << " end";
            if (st.refinement) out << " refinement=" << *st.refinement;
            if (st.on_error) out << " on-error=" << *st.on_error;
            if (st.timeout_ms) out << " timeout=" << *st.timeout_ms << "ms";
            out << '\n';
            for (const auto& arm : st.arms) {
                const std::string& target = p.states[static_cast<std::size_t>(arm.target)].id;
                out << st.id << ' ' << to_string(st.kind) << ": ";
                std::visit(
                    [&](const auto& sel) {
                        using T = std::decay_t<decltype(sel)>;
                        if constexpr (std::is_same_v<T, OutcomeSelector>) out << sel.outcome;
                        else if constexpr (std::is_same_v<T, EmitSelector>) out << sel.message << " to " << sel.to;
                        else if constexpr (std::is_same_v<T, MatchSelector>) out << sel.message << " from " << sel.from;
                        else out << "TIMEOUT";
                    },
                    arm.selector);
                out << " -> " << target << '\n';
            }
        }
    }
    return out.str();
}

}  // namespace sbpm::compile
