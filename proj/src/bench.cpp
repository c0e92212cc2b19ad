#include "dnsexfil/bench.hpp"

#include <cstdio>

#include <json.hpp>

#include "dnsexfil/nameserver.hpp"

namespace dnsexfil::bench {

namespace {

struct CollationSpec {
    const char* charset;
    const char* sortlen;
};

// 12 character sets x 7 variants = 84 rows.
constexpr CollationSpec charsets[] = {
    {"latin1", "1"}, {"latin2", "1"}, {"ascii", "1"},  {"utf8", "1"},
    {"utf8mb4", "8"}, {"ucs2", "1"},  {"utf16", "2"},  {"utf32", "2"},
    {"cp1250", "1"}, {"greek", "1"},  {"hebrew", "1"}, {"koi8r", "1"},
};

constexpr const char* variants[] = {
    "general", "unicode", "bin", "swedish", "danish", "spanish2", "roman",
};

} // namespace

sim::FixtureTable builtin_fixture() {
    sim::FixtureTable t;
    t.name = "collations";
    t.columns = {"id", "collation_name", "character_set_name", "description",
                 "is_default", "sortlen"};
    int id = 1;
    for (const auto& cs : charsets) {
        for (const char* variant : variants) {
            std::string name = std::string(cs.charset) + "_" + variant;
            if (std::string_view(variant) != "bin") name += "_ci";
            std::string description = std::string(variant) + " rules for " + cs.charset;
            t.rows.push_back({std::to_string(id), name, cs.charset, description,
                              std::string_view(variant) == "general" ? "yes" : "no",
                              cs.sortlen});
            ++id;
        }
    }
    return t;
}

std::optional<ReferenceFigures> reference_for(attack::Technique t) {
    switch (t) {
    case attack::Technique::boolean_blind: return ReferenceFigures{"29,212", 214.04};
    case attack::Technique::time_based: return ReferenceFigures{"32,716", 17720.51};
    case attack::Technique::error_based: return ReferenceFigures{"777", 9.02};
    case attack::Technique::union_full: return ReferenceFigures{"3", 0.70};
    case attack::Technique::union_partial: return ReferenceFigures{"136", 2.50};
    case attack::Technique::dns_exfil: return ReferenceFigures{"1,409", 35.31};
    }
    return std::nullopt;
}

std::vector<attack::Technique> all_techniques() {
    return {attack::Technique::union_full,   attack::Technique::union_partial,
            attack::Technique::error_based,  attack::Technique::dns_exfil,
            attack::Technique::boolean_blind, attack::Technique::time_based};
}

attack::Technique technique_from_string(std::string_view name) {
    for (auto t : all_techniques()) {
        if (attack::to_string(t) == name) return t;
    }
    throw attack::AttackError("unknown technique: " + std::string(name));
}

namespace {

attack::DumpOutcome run_one(attack::Technique technique, const BenchConfig& cfg,
                            const sim::FixtureTable& fixture) {
    auto domain = wire::DomainName::from_text(cfg.dns_domain);

    ns::ServerConfig scfg;
    scfg.dns_domain = domain;
    scfg.port = 0;

    if (technique == attack::Technique::dns_exfil && cfg.dns_over_udp) {
        ns::UdpNameserver server(scfg);
        server.start();
        ns::UdpUpstream upstream("127.0.0.1", server.port());
        sim::SimTarget target(fixture, upstream, cfg.sim, cfg.seed);
        Rng markers(cfg.seed ^ 0x6d61726b);
        attack::DnsDumpContext ctx{.core = server.core(), .dns_domain = domain, .dbms = cfg.dbms, .rng = markers};
        ctx.verify_against = &fixture;
        auto out = attack::dump_dns(target, ctx, cfg.technique);
        server.stop();
        return out;
    }

    ns::NameserverCore core(scfg);
    ns::InProcessUpstream upstream(core);
    sim::SimTarget target(fixture, upstream, cfg.sim, cfg.seed);

    switch (technique) {
    case attack::Technique::union_full:
        return attack::dump_union(target, true, cfg.technique);
    case attack::Technique::union_partial:
        return attack::dump_union(target, false, cfg.technique);
    case attack::Technique::error_based:
        return attack::dump_errorbased(target, cfg.technique);
    case attack::Technique::boolean_blind:
        return attack::dump_boolean(target, cfg.technique);
    case attack::Technique::time_based:
        return attack::dump_timebased(target, cfg.technique);
    case attack::Technique::dns_exfil: {
        Rng markers(cfg.seed ^ 0x6d61726b);
        attack::DnsDumpContext ctx{.core = core, .dns_domain = domain, .dbms = cfg.dbms, .rng = markers};
        ctx.verify_against = &fixture;
        return attack::dump_dns(target, ctx, cfg.technique);
    }
    }
    throw attack::AttackError("unhandled technique");
}

std::optional<std::uint64_t> requests_of(const BenchReport& report, attack::Technique t) {
    for (const auto& row : report.rows) {
        if (row.stats.technique == t) return row.stats.http_requests;
    }
    return std::nullopt;
}

std::optional<std::int64_t> elapsed_of(const BenchReport& report, attack::Technique t) {
    for (const auto& row : report.rows) {
        if (row.stats.technique == t) return row.stats.virtual_elapsed_ms;
    }
    return std::nullopt;
}

void check_ordering(BenchReport& report) {
    auto uf = requests_of(report, attack::Technique::union_full);
    auto up = requests_of(report, attack::Technique::union_partial);
    auto eb = requests_of(report, attack::Technique::error_based);
    auto dx = requests_of(report, attack::Technique::dns_exfil);
    auto bb = requests_of(report, attack::Technique::boolean_blind);
    auto tb = requests_of(report, attack::Technique::time_based);
    if (!uf || !up || !eb || !dx || !bb || !tb) return; // subset run

    bool ok = *uf < *up && *up < *eb && *eb <= *dx && *dx < *bb && *bb <= *tb;
    auto t_elapsed = *elapsed_of(report, attack::Technique::time_based);
    for (auto t : all_techniques()) {
        if (t == attack::Technique::time_based) continue;
        ok = ok && t_elapsed > 10 * *elapsed_of(report, t);
    }
    for (const auto& row : report.rows) ok = ok && row.content_ok;
    report.ordering_ok = ok;
}

} // namespace

BenchReport run_bench(const BenchConfig& cfg) {
    sim::FixtureTable fixture = cfg.fixture_csv.empty()
                                    ? builtin_fixture()
                                    : sim::FixtureTable::from_csv(cfg.fixture_csv, "fixture");

    BenchReport report;
    report.seed = cfg.seed;
    report.fixture_name = fixture.name;
    report.fixture_rows = fixture.rows.size();
    report.fixture_columns = fixture.columns.size();
    report.fixture_bytes = fixture.content_bytes();

    auto techniques = cfg.techniques.empty() ? all_techniques() : cfg.techniques;
    for (auto technique : techniques) {
        auto outcome = run_one(technique, cfg, fixture);
        BenchRow row;
        row.stats = outcome.stats;
        row.content_ok = outcome.rows == fixture.rows;
        row.reference = reference_for(technique);
        report.rows.push_back(std::move(row));
    }
    check_ordering(report);
    return report;
}

std::string render_table(const BenchReport& report) {
    char line[256];
    std::string out;
    std::snprintf(line, sizeof line, "fixture: %s (%zu rows x %zu columns, %zu bytes), seed %llu\n\n",
                  report.fixture_name.c_str(), report.fixture_rows, report.fixture_columns,
                  report.fixture_bytes, static_cast<unsigned long long>(report.seed));
    out += line;
    std::snprintf(line, sizeof line, "%-14s %12s %12s %14s %10s %5s %14s %12s\n", "technique",
                  "requests", "dns queries", "virtual (s)", "bytes", "ok", "sqlmap req",
                  "sqlmap (s)");
    out += line;
    out += std::string(98, '-') + "\n";
    for (const auto& row : report.rows) {
        std::string ref_req = row.reference ? row.reference->requests : "-";
        char ref_time[32] = "-";
        if (row.reference) {
            std::snprintf(ref_time, sizeof ref_time, "%.2f", row.reference->time_sec);
        }
        std::snprintf(line, sizeof line, "%-14s %12llu %12llu %14.2f %10llu %5s %14s %12s\n",
                      std::string(attack::to_string(row.stats.technique)).c_str(),
                      static_cast<unsigned long long>(row.stats.http_requests),
                      static_cast<unsigned long long>(row.stats.dns_queries),
                      static_cast<double>(row.stats.virtual_elapsed_ms) / 1000.0,
                      static_cast<unsigned long long>(row.stats.bytes_recovered),
                      row.content_ok ? "yes" : "NO", ref_req.c_str(), ref_time);
        out += line;
    }
    out += "\nsqlmap columns: request counts and wall times reported for the original\n"
           "sqlmap measurement of the same techniques; shown for orientation only.\n";
    if (report.ordering_ok) {
        out += std::string("ordering check: ") + (*report.ordering_ok ? "pass" : "FAIL") + "\n";
    }
    return out;
}

std::string render_json(const BenchReport& report) {
    nlohmann::json j;
    j["seed"] = report.seed;
    j["fixture"] = {{"name", report.fixture_name},
                    {"rows", report.fixture_rows},
                    {"columns", report.fixture_columns},
                    {"bytes", report.fixture_bytes}};
    j["techniques"] = nlohmann::json::array();
    for (const auto& row : report.rows) {
        nlohmann::json r;
        r["technique"] = std::string(attack::to_string(row.stats.technique));
        r["http_requests"] = row.stats.http_requests;
        r["dns_queries"] = row.stats.dns_queries;
        r["virtual_elapsed_ms"] = row.stats.virtual_elapsed_ms;
        r["bytes_recovered"] = row.stats.bytes_recovered;
        r["content_ok"] = row.content_ok;
        if (row.reference) {
            r["reference"] = {{"source", "sqlmap"},
                              {"requests", row.reference->requests},
                              {"time_sec", row.reference->time_sec}};
        } else {
            r["reference"] = nullptr;
        }
        j["techniques"].push_back(std::move(r));
    }
    if (report.ordering_ok) {
        j["ordering_ok"] = *report.ordering_ok;
    } else {
        j["ordering_ok"] = nullptr;
    }
    return j.dump(2);
}

} // namespace dnsexfil::bench
