#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <fstream>
#include <thread>

#include <json.hpp>

#include "dnsexfil/nameserver.hpp"

using namespace dnsexfil;
using namespace dnsexfil::ns;

namespace {

ServerConfig test_config() {
    ServerConfig cfg;
    cfg.dns_domain = wire::DomainName::from_text("attacker.com");
    cfg.port = 0;
    return cfg;
}

HandleOutcome feed(const ServerConfig& cfg, codec::SessionRegistry& reg,
                   const std::vector<std::uint8_t>& datagram) {
    return handle_datagram(cfg, reg, datagram, "10.9.8.7:5353",
                           std::chrono::system_clock::now(), std::chrono::steady_clock::now());
}

std::vector<std::uint8_t> frame_query(const wire::DomainName& name, std::uint16_t id) {
    return wire::serialize_message(wire::make_query(name, wire::qtype_a, id));
}

/// Blocking one-shot UDP exchange against 127.0.0.1:port.
std::optional<std::vector<std::uint8_t>> udp_roundtrip(std::uint16_t port,
                                                       const std::vector<std::uint8_t>& out) {
    int fd = ::socket(AF_INET, SOCK_DGRAM, 0);
    REQUIRE(fd >= 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    ::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
    timeval tv{};
    tv.tv_sec = 2;
    ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
    ::sendto(fd, out.data(), out.size(), 0, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
    std::vector<std::uint8_t> buf(2048);
    ssize_t n = ::recv(fd, buf.data(), buf.size(), 0);
    ::close(fd);
    if (n < 0) return std::nullopt;
    buf.resize(static_cast<std::size_t>(n));
    return buf;
}

} // namespace

TEST_CASE("well-formed frame query gets a dummy answer and a frame event") {
    auto cfg = test_config();
    codec::SessionRegistry reg;
    Rng rng(5);
    auto markers = codec::new_marker_pair(rng);
    codec::FrameBudget budget(cfg.dns_domain);
    auto names = codec::build_frames(std::vector<std::uint8_t>{'s', 'a'}, markers, budget);

    auto out = feed(cfg, reg, frame_query(names[0], 0x4242));
    REQUIRE(out.response.has_value());
    auto resp = wire::parse_message(*out.response);
    CHECK(resp.header.id == 0x4242);
    CHECK(resp.header.qr);
    CHECK(resp.header.rcode == wire::rcode_noerror);
    REQUIRE(resp.answers.size() == 1);
    CHECK(resp.answers[0].rdata == std::vector<std::uint8_t>{192, 0, 2, 1});

    REQUIRE(out.events.size() == 1);
    CHECK(out.events[0].kind == CaptureKind::frame);
    CHECK(out.events[0].marker == markers);
    CHECK(out.events[0].item_complete);
    REQUIRE(out.completed.size() == 1);
    CHECK(out.completed[0].data == std::vector<std::uint8_t>{'s', 'a'});
}

TEST_CASE("unrelated query is answered but never touches the registry") {
    auto cfg = test_config();
    codec::SessionRegistry reg;
    auto out = feed(cfg, reg, frame_query(wire::DomainName::from_text("www.example.org"), 1));
    REQUIRE(out.response.has_value());
    CHECK(out.events[0].kind == CaptureKind::unrelated);
    CHECK(out.completed.empty());
    CHECK(reg.open_sessions() == 0);
}

TEST_CASE("malformed datagrams are logged and not answered") {
    auto cfg = test_config();
    codec::SessionRegistry reg;
    auto out = feed(cfg, reg, {0x01, 0x02, 0x03});
    CHECK_FALSE(out.response.has_value());
    REQUIRE(out.events.size() == 1);
    CHECK(out.events[0].kind == CaptureKind::malformed);
    CHECK_FALSE(out.events[0].note.empty());
}

TEST_CASE("TXT questions also get the dummy A answer") {
    auto cfg = test_config();
    codec::SessionRegistry reg;
    auto q = wire::make_query(wire::DomainName::from_text("t.attacker.com"), wire::qtype_txt, 4);
    auto out = feed(cfg, reg, wire::serialize_message(q));
    REQUIRE(out.response.has_value());
    auto resp = wire::parse_message(*out.response);
    CHECK(resp.header.rcode == wire::rcode_noerror);
    REQUIRE(resp.answers.size() == 1);
    CHECK(resp.answers[0].rtype == wire::qtype_a);
}

TEST_CASE("unsupported opcode or qtype answered NOTIMP, never dropped") {
    auto cfg = test_config();
    codec::SessionRegistry reg;

    auto q = wire::make_query(wire::DomainName::from_text("a.attacker.com"), 255 /*ANY*/, 9);
    auto out = feed(cfg, reg, wire::serialize_message(q));
    REQUIRE(out.response.has_value());
    CHECK(wire::parse_message(*out.response).header.rcode == wire::rcode_notimp);

    auto weird = wire::make_query(wire::DomainName::from_text("b.attacker.com"), wire::qtype_a, 9);
    weird.header.opcode = 2; // STATUS
    out = feed(cfg, reg, wire::serialize_message(weird));
    REQUIRE(out.response.has_value());
    CHECK(wire::parse_message(*out.response).header.rcode == wire::rcode_notimp);

    // a response datagram is ignored (no response to a response)
    auto resp = wire::make_dummy_response(q, cfg.dummy_ip);
    out = feed(cfg, reg, wire::serialize_message(resp));
    CHECK_FALSE(out.response.has_value());
    CHECK(out.events[0].kind == CaptureKind::unrelated);
}

TEST_CASE("three frames complete an item through handle_datagram") {
    auto cfg = test_config();
    codec::SessionRegistry reg;
    Rng rng(7);
    auto markers = codec::new_marker_pair(rng);
    codec::FrameBudget budget(cfg.dns_domain);
    std::vector<std::uint8_t> data(200);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<std::uint8_t>(i);
    auto names = codec::build_frames(data, markers, budget);
    REQUIRE(names.size() == 3);

    CHECK(feed(cfg, reg, frame_query(names[2], 1)).completed.empty());
    CHECK(feed(cfg, reg, frame_query(names[0], 2)).completed.empty());
    auto last = feed(cfg, reg, frame_query(names[1], 3));
    REQUIRE(last.completed.size() == 1);
    CHECK(last.completed[0].data == data);
}

TEST_CASE("handle_datagram is deterministic for identical inputs") {
    auto cfg = test_config();
    auto query = frame_query(wire::DomainName::from_text("same.attacker.com"), 77);
    auto wall = std::chrono::system_clock::now();
    auto mono = std::chrono::steady_clock::now();

    codec::SessionRegistry r1, r2;
    auto a = handle_datagram(cfg, r1, query, "1.2.3.4:9", wall, mono);
    auto b = handle_datagram(cfg, r2, query, "1.2.3.4:9", wall, mono);
    CHECK(a.response == b.response);
    REQUIRE(a.events.size() == b.events.size());
    CHECK(a.events[0].qname == b.events[0].qname);
    CHECK(a.events[0].kind == b.events[0].kind);
}

TEST_CASE("jsonl event encoding carries the documented fields") {
    CaptureEvent e;
    e.wall = std::chrono::system_clock::time_point{}; // epoch
    e.src = "127.0.0.1:9999";
    e.qname = "p.00000001.7361.s.attacker.com";
    e.qtype = wire::qtype_a;
    e.kind = CaptureKind::frame;
    e.marker = codec::MarkerPair{"pfxaaaa1", "sfxbbbb2"};
    e.seq = 0;
    e.total = 1;
    e.item_complete = true;

    auto j = nlohmann::json::parse(to_jsonl(e));
    CHECK(j["ts"] == "1970-01-01T00:00:00.000Z");
    CHECK(j["src"] == "127.0.0.1:9999");
    CHECK(j["qname"] == "p.00000001.7361.s.attacker.com");
    CHECK(j["qtype"] == "A");
    CHECK(j["kind"] == "frame");
    CHECK(j["marker"] == "pfxaaaa1:sfxbbbb2");
    CHECK(j["seq"] == 0);
    CHECK(j["total"] == 1);
    CHECK(j["item_complete"] == true);
}

TEST_CASE("udp server answers, logs, and reports abandoned sessions") {
    auto log_path = std::string("/tmp/dnsexfil_capture_test.jsonl");
    std::remove(log_path.c_str());

    auto cfg = test_config();
    cfg.capture_log_path = log_path;
    cfg.session_ttl = std::chrono::seconds(1);

    UdpNameserver server(cfg);
    server.start();
    REQUIRE(server.port() != 0);

    // one complete single-frame item
    Rng rng(11);
    auto markers = codec::new_marker_pair(rng);
    codec::FrameBudget budget(cfg.dns_domain);
    auto names = codec::build_frames(std::vector<std::uint8_t>{'o', 'k'}, markers, budget);
    auto resp = udp_roundtrip(server.port(), frame_query(names[0], 0x0101));
    REQUIRE(resp.has_value());
    CHECK(wire::parse_message(*resp).header.id == 0x0101);

    auto done = server.core().wait_completed(std::chrono::milliseconds(500));
    REQUIRE(done.has_value());
    CHECK(done->data == std::vector<std::uint8_t>{'o', 'k'});

    // an incomplete item: first frame of a two-frame session, then shutdown
    auto partial = codec::build_frames(std::vector<std::uint8_t>(150, 0x41), markers, budget);
    REQUIRE(partial.size() == 2);
    REQUIRE(udp_roundtrip(server.port(), frame_query(partial[0], 0x0202)).has_value());

    // an unrelated query
    REQUIRE(udp_roundtrip(server.port(),
                          frame_query(wire::DomainName::from_text("www.example.org"), 3))
                .has_value());

    server.stop();
    CHECK_FALSE(server.log_error().has_value());

    std::ifstream in(log_path);
    std::vector<nlohmann::json> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) lines.push_back(nlohmann::json::parse(line));
    }
    REQUIRE(lines.size() == 4);
    CHECK(lines[0]["kind"] == "frame");
    CHECK(lines[0]["item_complete"] == true);
    CHECK(lines[1]["kind"] == "frame");
    CHECK(lines[1]["item_complete"] == false);
    CHECK(lines[2]["kind"] == "unrelated");
    CHECK(lines[3]["kind"] == "abandoned"); // flushed by shutdown
    CHECK(lines[3]["total"] == 2);
}

TEST_CASE("binding a taken port raises BindFailed") {
    auto cfg = test_config();
    UdpNameserver first(cfg);
    auto cfg2 = test_config();
    cfg2.port = first.port();
    CHECK_THROWS_AS(UdpNameserver{cfg2}, BindFailed);
}

TEST_CASE("in-process upstream behaves like the wire") {
    auto cfg = test_config();
    NameserverCore core(cfg);
    InProcessUpstream upstream(core);

    auto q = wire::make_query(wire::DomainName::from_text("x.attacker.com"), wire::qtype_a, 5);
    auto resp = upstream.query(q);
    REQUIRE(resp.has_value());
    CHECK(resp->header.id == 5);
    REQUIRE(resp->answers.size() == 1);
    CHECK(resp->answers[0].ttl == 0);
}
