#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dnsexfil/attacker.hpp"
#include "dnsexfil/payload_gen.hpp"
#include "dnsexfil/target_sim.hpp"

namespace dnsexfil::bench {

/// Built-in ~4 KiB collations-style table: 84 rows x 6 columns, text cells,
/// first column a 1-based integer key. Sized so the inference techniques'
/// request arithmetic is meaningful (about 4,000 content bytes at an
/// average cell length near 8).
sim::FixtureTable builtin_fixture();

/// Figures reported for the original sqlmap measurement of each technique,
/// printed alongside our rows for orientation. Environment-specific, never
/// asserted against.
struct ReferenceFigures {
    std::string requests;
    double time_sec = 0;
};

std::optional<ReferenceFigures> reference_for(attack::Technique t);

struct BenchConfig {
    std::uint64_t seed = 1;
    std::string dns_domain = "attacker.com";
    payload::DbmsKind dbms = payload::DbmsKind::mssql;
    std::vector<attack::Technique> techniques; // empty = all six
    attack::TechniqueConfig technique;
    sim::SimConfig sim;
    bool dns_over_udp = false; // real loopback UDP for the dns leg
    std::string fixture_csv;   // empty = builtin
};

struct BenchRow {
    attack::DumpStats stats;
    bool content_ok = false;
    std::optional<ReferenceFigures> reference;
};

struct BenchReport {
    std::uint64_t seed = 0;
    std::string fixture_name;
    std::size_t fixture_rows = 0;
    std::size_t fixture_columns = 0;
    std::size_t fixture_bytes = 0;
    std::vector<BenchRow> rows;
    /// Set when every technique ran: the request-count ordering
    /// union_full < union_partial < error <= dns < boolean <= time and the
    /// time-based elapsed dominance hold.
    std::optional<bool> ordering_ok;
};

/// Run each requested technique against a fresh simulation of the fixture.
BenchReport run_bench(const BenchConfig& cfg);

std::string render_table(const BenchReport& report);
std::string render_json(const BenchReport& report);

std::vector<attack::Technique> all_techniques();
attack::Technique technique_from_string(std::string_view name);

} // namespace dnsexfil::bench
