#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "dnsexfil/dns_wire.hpp"
#include "dnsexfil/exfil_codec.hpp"
#include "dnsexfil/target_sim.hpp"

namespace dnsexfil::ns {

struct BindFailed : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ServerConfig {
    std::string bind_address = "127.0.0.1";
    std::uint16_t port = 5353; // 0 = ephemeral
    wire::DomainName dns_domain;
    wire::Ipv4 dummy_ip = wire::Ipv4{{192, 0, 2, 1}};
    std::uint32_t dummy_ttl = 0; // 0 keeps resolvers from caching the answers
    std::chrono::seconds session_ttl{60};
    std::string capture_log_path; // empty = no log file
};

enum class CaptureKind { frame, unrelated, malformed, abandoned };

std::string_view to_string(CaptureKind kind);

/// One log record per received datagram (plus one per abandoned session).
struct CaptureEvent {
    std::chrono::system_clock::time_point wall{};
    codec::Timestamp mono{};
    std::string src;
    std::string qname;
    std::uint16_t qtype = 0;
    CaptureKind kind = CaptureKind::unrelated;
    std::string note;
    // frame-only fields
    codec::MarkerPair marker;
    std::uint32_t seq = 0;
    std::uint32_t total = 0;
    bool item_complete = false;
};

/// JSONL encoding used for the capture log.
std::string to_jsonl(const CaptureEvent& event);

struct HandleOutcome {
    std::optional<std::vector<std::uint8_t>> response;
    std::vector<CaptureEvent> events;
    std::vector<codec::CompletedItem> completed;
};

/// Deterministic core of the server: given the registry state and one
/// datagram, produce the response, capture events, and any items the
/// datagram completed. Malformed input yields no response; every well-formed
/// query gets exactly one answer (dummy A for QUERY/A/TXT, NOTIMP otherwise)
/// so the provoked web server is never left waiting.
HandleOutcome handle_datagram(const ServerConfig& cfg, codec::SessionRegistry& registry,
                              std::span<const std::uint8_t> datagram, const std::string& src,
                              std::chrono::system_clock::time_point wall_now,
                              codec::Timestamp mono_now);

/// Thread-safe wrapper owning the registry, the completed-item queue, and
/// the event sink. Shared by the UDP loop and the in-process upstream.
class NameserverCore {
public:
    using EventSink = std::function<void(const CaptureEvent&)>;

    explicit NameserverCore(ServerConfig cfg);

    const ServerConfig& config() const { return cfg_; }
    void set_event_sink(EventSink sink);

    /// Handle one datagram (thread-safe). Events go to the sink, completed
    /// items into the queue; the response bytes come back to the caller.
    std::optional<std::vector<std::uint8_t>> handle(std::span<const std::uint8_t> datagram,
                                                    const std::string& src);

    /// Drop idle sessions per the configured ttl, logging each.
    void expire_sessions();

    /// Report everything still pending as abandoned (shutdown path).
    void abandon_open_sessions();

    std::optional<codec::CompletedItem> wait_completed(std::chrono::milliseconds timeout);
    std::optional<codec::SessionProgress> session_progress(const codec::MarkerPair& markers) const;

    std::uint64_t datagrams_seen() const { return datagrams_; }
    std::uint64_t frames_seen() const { return frames_; }

private:
    void emit(const CaptureEvent& event);

    ServerConfig cfg_;
    mutable std::mutex mutex_;
    codec::SessionRegistry registry_;
    std::deque<codec::CompletedItem> completed_;
    std::condition_variable completed_cv_;
    EventSink sink_;
    std::atomic<std::uint64_t> datagrams_{0};
    std::atomic<std::uint64_t> frames_{0};
};

/// The fake authoritative nameserver: one UDP socket, one receive loop,
/// answers everything, logs captures as JSONL, reassembles exfil items.
class UdpNameserver {
public:
    /// Binds immediately (throws BindFailed), serves after start().
    explicit UdpNameserver(ServerConfig cfg);
    ~UdpNameserver();

    UdpNameserver(const UdpNameserver&) = delete;
    UdpNameserver& operator=(const UdpNameserver&) = delete;

    void start();
    void stop(); // idempotent; flushes the log

    std::uint16_t port() const { return port_; }
    NameserverCore& core() { return core_; }

    /// Set when appending to the capture log failed; the loop keeps serving.
    std::optional<std::string> log_error() const;

private:
    void run_loop();

    NameserverCore core_;
    int fd_ = -1;
    std::uint16_t port_ = 0;
    std::thread loop_;
    std::atomic<bool> running_{false};
    mutable std::mutex log_mutex_;
    std::optional<std::string> log_error_;
    int log_fd_ = -1;
};

/// Resolver upstream that short-circuits straight into a NameserverCore.
/// Used by the benchmark so runs stay deterministic and socket-free.
class InProcessUpstream : public sim::Upstream {
public:
    explicit InProcessUpstream(NameserverCore& core) : core_(core) {}
    std::optional<wire::DnsMessage> query(const wire::DnsMessage& q) override;

private:
    NameserverCore& core_;
};

/// Resolver upstream speaking real DNS over a UDP socket (demo mode).
class UdpUpstream : public sim::Upstream {
public:
    UdpUpstream(const std::string& address, std::uint16_t port,
                std::chrono::milliseconds timeout = std::chrono::milliseconds(2000));
    ~UdpUpstream();

    UdpUpstream(const UdpUpstream&) = delete;
    UdpUpstream& operator=(const UdpUpstream&) = delete;

    std::optional<wire::DnsMessage> query(const wire::DnsMessage& q) override;

private:
    int fd_ = -1;
};

} // namespace dnsexfil::ns
