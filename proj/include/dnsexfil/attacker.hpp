#pragma once

#include <chrono>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "dnsexfil/exfil_codec.hpp"
#include "dnsexfil/nameserver.hpp"
#include "dnsexfil/payload_gen.hpp"
#include "dnsexfil/rng.hpp"
#include "dnsexfil/target_sim.hpp"

namespace dnsexfil::attack {

struct AttackError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
/// The observable stopped correlating with the injected predicate.
struct ChannelBroken : AttackError {
    using AttackError::AttackError;
};
/// Frames for one item never completed; the message names the marker.
struct ItemTimeout : AttackError {
    using AttackError::AttackError;
};
/// Decoded data disagrees with what the dump expected.
struct VerifyMismatch : AttackError {
    using AttackError::AttackError;
};

enum class Technique {
    union_full,
    union_partial,
    error_based,
    boolean_blind,
    time_based,
    dns_exfil,
};

std::string_view to_string(Technique t);

struct DumpStats {
    Technique technique = Technique::union_full;
    std::uint64_t http_requests = 0;
    std::uint64_t dns_queries = 0;
    std::int64_t virtual_elapsed_ms = 0;
    std::uint64_t bytes_recovered = 0;
};

struct TechniqueConfig {
    std::int64_t time_delay_ms = 1000;
    std::size_t error_chunk_bytes = 64;
    int charset_bits = 7; // 7 for text fixtures, 8 for binary cells
};

struct DumpOutcome {
    std::vector<std::vector<std::string>> rows;
    DumpStats stats;
};

/// Inband: rows ride the page itself via UNION. Full mode pulls the whole
/// table in one dump request (probe, count, dump = 3 requests); partial mode
/// pulls one row per request.
DumpOutcome dump_union(sim::SimTarget& target, bool full, const TechniqueConfig& cfg = {});

/// Inband: each request provokes a conversion error whose message carries
/// one cell chunk ("~<len>~<data>" on the first chunk of a cell).
DumpOutcome dump_errorbased(sim::SimTarget& target, const TechniqueConfig& cfg = {});

/// Inference: per-character binary search driven by a visible page change.
DumpOutcome dump_boolean(sim::SimTarget& target, const TechniqueConfig& cfg = {});

/// Inference: identical search, but the observable is response time
/// (delayed response for true, prompt response for false).
DumpOutcome dump_timebased(sim::SimTarget& target, const TechniqueConfig& cfg = {});

/// Everything dump_dns needs besides the target: the capture side, the
/// controlled domain, which DBMS's provoking subroutine to render, and the
/// marker randomness.
struct DnsDumpContext {
    ns::NameserverCore& core;
    wire::DomainName dns_domain;
    payload::DbmsKind dbms = payload::DbmsKind::mssql;
    Rng& rng;
    std::chrono::milliseconds item_timeout{10000};
    /// When set, decoded cells are checked against this table and a
    /// mismatch raises VerifyMismatch.
    const sim::FixtureTable* verify_against = nullptr;
    /// Marker prefixes handed out so far in this run; kept unique.
    std::set<std::string> used_prefixes{};
};

/// Out-of-band: one injected vector per frame. The frame-0 vector makes the
/// database compute the frame total itself (it is part of the sequence
/// label), so the driver learns how many more injections each item needs
/// from the first capture instead of probing lengths separately.
DumpOutcome dump_dns(sim::SimTarget& target, DnsDumpContext& ctx, const TechniqueConfig& cfg = {});

/// One item end to end: exfiltrate the value of a single SQL expression.
/// This is the demo path and the per-cell building block of dump_dns.
struct DnsItemResult {
    std::vector<std::uint8_t> data;
    std::vector<std::string> vectors; // rendered SQL, one per frame sent
    codec::MarkerPair markers;
    std::uint64_t http_requests = 0;
};

DnsItemResult dns_exfil_expression(sim::SimTarget& target, DnsDumpContext& ctx,
                                   const std::string& value_expr);

/// The scalar subquery addressing one cell, shared by every driver.
std::string cell_subquery(const sim::FixtureTable& schema, std::size_t row, std::size_t col);

} // namespace dnsexfil::attack
