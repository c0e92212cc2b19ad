#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "dnsexfil/dns_wire.hpp"
#include "dnsexfil/mock_db.hpp"
#include "dnsexfil/rng.hpp"

namespace dnsexfil::sim {

struct SimError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UpstreamTimeout : SimError {
    using SimError::SimError;
};

/// Simulated time. Advanced only by modeled work (page rendering, delay
/// subroutines, resolution latency), which keeps multi-hour wall-clock
/// techniques runnable in milliseconds and makes every run reproducible.
class VirtualClock {
public:
    std::int64_t now_ms() const { return now_ms_; }
    void advance(std::int64_t ms) {
        if (ms > 0) now_ms_ += ms;
    }

private:
    std::int64_t now_ms_ = 0;
};

/// Where the resolver chain forwards queries it cannot answer from cache.
/// In-process and real-UDP implementations live with the nameserver.
class Upstream {
public:
    virtual ~Upstream() = default;
    /// nullopt models a lost or timed-out exchange.
    virtual std::optional<wire::DnsMessage> query(const wire::DnsMessage& q) = 0;
};

/// The victim-side stub resolver: answer from cache when possible, otherwise
/// forward to the single upstream hop and cache positive answers for their
/// ttl. ttl=0 answers are never cached. Each upstream exchange advances the
/// virtual clock by the configured latency and bumps the query counter;
/// cache hits do neither.
class ResolverChain {
public:
    ResolverChain(Upstream& upstream, VirtualClock& clock, Rng& rng,
                  std::int64_t latency_ms = 5);

    wire::Ipv4 resolve(const wire::DomainName& name);

    std::uint64_t upstream_queries() const { return upstream_queries_; }
    std::size_t cache_entries() const { return cache_.size(); }
    void set_cache_enabled(bool enabled) { cache_enabled_ = enabled; }

private:
    struct CacheEntry {
        wire::Ipv4 ip;
        std::int64_t expires_ms = 0;
    };

    Upstream& upstream_;
    VirtualClock& clock_;
    Rng& rng_;
    std::int64_t latency_ms_;
    bool cache_enabled_ = true;
    std::map<std::string, CacheEntry> cache_;
    std::uint64_t upstream_queries_ = 0;
};

/// One rendered response from the simulated vulnerable endpoint.
struct Page {
    bool ok = true;
    std::string body;
    std::string error_text; // non-empty exactly when !ok
    std::int64_t elapsed_virtual_ms = 0;
};

struct SimConfig {
    std::int64_t page_cost_ms = 10;
    std::int64_t resolve_latency_ms = 5;
};

/// The deliberately injectable web endpoint plus its database and resolver.
/// The request parameter is spliced verbatim into a fixed WHERE clause
/// (that is the vulnerability). Result rows render as "row:" lines in the
/// body; database errors surface in error_text; delay subroutines and
/// resolutions advance the virtual clock.
class SimTarget {
public:
    SimTarget(FixtureTable fixture, Upstream& upstream, SimConfig cfg, std::uint64_t seed);

    Page http_request(std::string_view param_value);

    MockDb& db() { return db_; }
    ResolverChain& chain() { return chain_; }
    VirtualClock& clock() { return clock_; }
    const FixtureTable& fixture() const { return fixture_; }
    const SimConfig& config() const { return cfg_; }

    /// The app's row rendering, exposed so tests can predict body content.
    static std::string render_row(const std::vector<std::string>& row);

private:
    SimConfig cfg_;
    FixtureTable fixture_;
    MockDb db_;
    VirtualClock clock_;
    Rng rng_;
    ResolverChain chain_;
    std::string query_prefix_;
};

} // namespace dnsexfil::sim
