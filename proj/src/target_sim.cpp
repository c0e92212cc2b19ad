#include "dnsexfil/target_sim.hpp"

namespace dnsexfil::sim {

ResolverChain::ResolverChain(Upstream& upstream, VirtualClock& clock, Rng& rng,
                             std::int64_t latency_ms)
    : upstream_(upstream), clock_(clock), rng_(rng), latency_ms_(latency_ms) {}

wire::Ipv4 ResolverChain::resolve(const wire::DomainName& name) {
    std::string key = name.lowered().to_string();
    if (cache_enabled_) {
        auto it = cache_.find(key);
        if (it != cache_.end()) {
            if (it->second.expires_ms > clock_.now_ms()) {
                return it->second.ip; // local answer, no upstream traffic
            }
            cache_.erase(it);
        }
    }

    auto id = static_cast<std::uint16_t>(rng_.below(0x10000));
    auto query = wire::make_query(name, wire::qtype_a, id);
    ++upstream_queries_;
    clock_.advance(latency_ms_);
    auto response = upstream_.query(query);
    if (!response) throw UpstreamTimeout("no answer for " + key);

    for (const auto& rr : response->answers) {
        if (rr.rtype == wire::qtype_a && rr.rdata.size() == 4) {
            wire::Ipv4 ip;
            std::copy(rr.rdata.begin(), rr.rdata.end(), ip.octets.begin());
            if (cache_enabled_ && rr.ttl > 0) {
                cache_[key] = CacheEntry{ip, clock_.now_ms() + std::int64_t(rr.ttl) * 1000};
            }
            return ip;
        }
    }
    throw UpstreamTimeout("answer for " + key + " carried no address");
}

SimTarget::SimTarget(FixtureTable fixture, Upstream& upstream, SimConfig cfg, std::uint64_t seed)
    : cfg_(cfg),
      fixture_(std::move(fixture)),
      rng_(seed),
      chain_(upstream, clock_, rng_, cfg.resolve_latency_ms) {
    std::string columns;
    for (std::size_t i = 0; i < fixture_.columns.size(); ++i) {
        if (i) columns += ",";
        columns += fixture_.columns[i];
    }
    query_prefix_ = "SELECT " + columns + " FROM " + fixture_.name + " WHERE " +
                    fixture_.columns.at(0) + "=";
    db_.add_table(fixture_);
}

std::string SimTarget::render_row(const std::vector<std::string>& row) {
    std::string line = "row:";
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) line += "|";
        line += row[i];
    }
    return line;
}

Page SimTarget::http_request(std::string_view param_value) {
    std::int64_t start = clock_.now_ms();
    clock_.advance(cfg_.page_cost_ms);

    DbHooks hooks;
    hooks.resolve = [this](const std::string& host) -> std::string {
        try {
            return chain_.resolve(wire::DomainName::from_text(host)).to_string();
        } catch (const std::exception&) {
            // A name the stub resolver cannot resolve leaves the page
            // rendering path untouched; the web server is never blocked.
            return "";
        }
    };
    hooks.sleep_ms = [this](std::int64_t ms) { clock_.advance(ms); };

    std::string sql = query_prefix_ + std::string(param_value);
    DbResult result = db_.exec_sql(sql, hooks);

    Page page;
    if (result.ok) {
        page.ok = true;
        page.body = "<html>\n";
        for (const auto& row : result.rows) {
            page.body += render_row(row);
            page.body += "\n";
        }
        page.body += "</html>\n";
    } else {
        page.ok = false;
        page.error_text = result.error;
        page.body = "<html>database error</html>\n";
    }
    page.elapsed_virtual_ms = clock_.now_ms() - start;
    return page;
}

} // namespace dnsexfil::sim
