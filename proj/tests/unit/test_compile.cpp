#include <doctest.h>

#include <fstream>
#include <functional>
#include <sstream>

#include "sbpm/compile/bundle.hpp"
#include "support/fixtures.hpp"

using namespace sbpm::compile;
using namespace sbpm::model;
using sbpm::testing::load_fixture;

namespace {

std::string error_code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const sbpm::Error& e) {
        return e.code();
    }
    return "";
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace

TEST_CASE("compile_subject: ping-pong A") {
    SubjectProgram a = compile_subject(load_fixture("pingpong"), "A");
    CHECK(a.subject == "A");
    REQUIRE(a.states.size() == 4);
    CHECK(a.start_index == 0);
    CHECK(a.end_indices == std::set<int>{3});
    CHECK(a.states[1].arms.at(0) == IrArm{EmitSelector{"ping", "B", std::nullopt}, 2});
    CHECK(a.states[2].arms.at(0) == IrArm{MatchSelector{"pong", "B"}, 3});
    CHECK(a.states[3].arms.empty());
    for (std::size_t i = 0; i < a.states.size(); ++i)
        CHECK(a.states[i].id == load_fixture("pingpong").behaviors.at("A").states[i].id);
}

TEST_CASE("compile_subject: timeout arm is moved last, document order otherwise") {
    ProcessModel m = load_fixture("order");
    auto& g = m.behaviors.at("OrderHandling");
    std::swap(g.transitions[4], g.transitions[5]);  // timeout first in the file
    SubjectProgram p = compile_subject(m, "OrderHandling");
    const IrState& wait = p.states.at(4);
    REQUIRE(wait.arms.size() == 2);
    CHECK(std::holds_alternative<MatchSelector>(wait.arms[0].selector));
    CHECK(wait.has_timeout_arm());
    CHECK(wait.timeout_ms == 200);
}

TEST_CASE("compile_subject: degenerate single state program") {
    ProcessModel m = load_fixture("pingpong");
    auto& a = m.behaviors.at("A");
    a.states = {State{"only", "only", StateKind::function, true, true, {}, {}, {}}};
    a.transitions.clear();
    SubjectProgram p = compile_subject(m, "A");
    CHECK(p.start_index == 0);
    CHECK(p.is_end(0));
}

TEST_CASE("compile_subject errors") {
    ProcessModel m = load_fixture("pingpong");
    CHECK(error_code_of([&] { compile_subject(m, "ghost"); }) == "UnknownSubject");
    m.subjects.push_back(SubjectDecl{"X", "", "x", true, 1});
    CHECK(error_code_of([&] { compile_subject(m, "X"); }) == "ExternalSubjectHasNoBehavior");
}

TEST_CASE("link_bundle: determinism and hash sensitivity") {
    ProcessModel m = load_fixture("pingpong");
    Bundle one = link_bundle(m, {});
    Bundle two = link_bundle(m, {});
    CHECK(encode_bundle(one) == encode_bundle(two));
    CHECK(one.manifest.content_hash == two.manifest.content_hash);
    CHECK(one.manifest.content_hash.size() == 64);
    CHECK(one.manifest.created_at == kPinnedCreatedAt);
    CHECK(one.programs.size() == 2);
    CHECK(one.messages.size() == 2);

    ProcessModel renamed = m;
    renamed.behaviors.at("A").states[0].name = "get ready";
    CHECK(link_bundle(renamed, {}).manifest.content_hash != one.manifest.content_hash);

    Bundle stamped = link_bundle(m, {}, LinkOptions{std::string("2026-10-16T12:00:00Z")});
    CHECK(stamped.manifest.content_hash != one.manifest.content_hash);
}

TEST_CASE("link_bundle: external subjects land in the supervisor routes") {
    ProcessModel m = load_fixture("pingpong");
    m.subjects.push_back(SubjectDecl{"Partner", "", "partner", true, 4});
    Bundle b = link_bundle(m, {});
    CHECK(b.programs.size() == 2);
    REQUIRE(b.supervisor.external_routes.size() == 1);
    CHECK(b.supervisor.external_routes[0].subject == "Partner");
}

TEST_CASE("encode/decode and store/load") {
    Bundle b = link_bundle(load_fixture("order"), {});
    CHECK(decode_bundle(encode_bundle(b)) == b);

    sbpm::testing::TempDir dir("sbpm-bundle");
    auto path = dir.path / "order.sbpmb";
    store_bundle(b, path);
    CHECK(load_bundle(path) == b);
    std::string bytes = read_file(path);
    CHECK(bytes.substr(0, 8) == "SBPMBNDL");
    CHECK(bytes[8] == '\0');
    CHECK(bytes[9] == '\x01');
    CHECK(bytes == encode_bundle(b));

    SUBCASE("truncated file is malformed") {
        std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes.substr(0, bytes.size() / 2);
        CHECK(error_code_of([&] { load_bundle(path); }) == "MalformedBundle");
        std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes.substr(0, 5);
        CHECK(error_code_of([&] { load_bundle(path); }) == "MalformedBundle");
    }
    SUBCASE("edited hash field is corrupt") {
        std::string edited = bytes;
        auto pos = edited.find("\"content_hash\":\"") + 16;
        edited[pos] = edited[pos] == 'a' ? 'b' : 'a';
        std::ofstream(path, std::ios::binary | std::ios::trunc) << edited;
        CHECK(error_code_of([&] { load_bundle(path); }) == "CorruptBundle");
    }
    SUBCASE("tampered payload byte is corrupt") {
        std::string edited = bytes;
        auto pos = edited.find("\"Order Handling\"") + 1;
        edited[pos] = 'o';
        CHECK(error_code_of([&] { decode_bundle(edited); }) == "CorruptBundle");
    }
}

TEST_CASE("disassemble") {
    Bundle b = link_bundle(load_fixture("pingpong"), {});
    std::string listing = disassemble(b);
    CHECK(listing.find("\ns1 send: ping to B -> s2\n") != std::string::npos);
    CHECK(listing.find("\ns2 receive: pong from B -> s3\n") != std::string::npos);
    CHECK(listing.find("\ns0 function: ok -> s1\n") != std::string::npos);
    CHECK(listing == disassemble(b));

    Bundle order = link_bundle(load_fixture("order"), {});
    CHECK(disassemble(order).find("\no4 receive: TIMEOUT -> o5\n") != std::string::npos);

    Bundle tampered = b;
    tampered.programs[0].states[0].name = "changed";
    CHECK(error_code_of([&] { disassemble(tampered); }) == "CorruptBundle");
}
