#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dnsexfil::wire {

inline constexpr std::size_t max_udp_payload = 512;
inline constexpr std::size_t max_label_bytes = 63;
inline constexpr std::size_t max_name_presentation = 253;

inline constexpr std::uint16_t qtype_a = 1;
inline constexpr std::uint16_t qtype_txt = 16;
inline constexpr std::uint16_t qclass_in = 1;

inline constexpr std::uint8_t opcode_query = 0;
inline constexpr std::uint8_t rcode_noerror = 0;
inline constexpr std::uint8_t rcode_notimp = 4;

struct WireError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
/// Ran out of bytes while reading a fixed-size region.
struct Truncated : WireError {
    using WireError::WireError;
};
/// Label longer than 63 octets, reserved label type, or a compression
/// pointer chain that loops or escapes the datagram.
struct BadLabel : WireError {
    using WireError::WireError;
};
/// Section counts promise more entries than the datagram can hold.
struct BadCount : WireError {
    using WireError::WireError;
};
/// A name violates the DomainName length invariants.
struct NameTooLong : WireError {
    using WireError::WireError;
};
/// make_dummy_response was handed a message that is already a response.
struct NotAQuery : WireError {
    using WireError::WireError;
};

/// A validated sequence of DNS labels.
///
/// Two construction paths with different strictness:
///  - from_text: the emission path. Used for every name this program
///    produces itself (config, CLI, frame assembly). Enforces the full
///    invariant set: label lengths 1..63, presentation length <= 253, and
///    the hostname charset [a-z0-9-] with no leading/trailing '-'.
///    Uppercase input is folded to lowercase before validation.
///  - from_labels: the wire path. Parsed names keep whatever bytes were on
///    the wire (DNS labels are 8-bit clean); only the length invariants are
///    enforced.
class DomainName {
public:
    DomainName() = default;

    static DomainName from_text(std::string_view text);
    static DomainName from_labels(std::vector<std::string> labels);

    const std::vector<std::string>& labels() const { return labels_; }
    std::size_t label_count() const { return labels_.size(); }
    bool empty() const { return labels_.empty(); }

    /// Presentation form: labels joined by '.', no trailing dot.
    std::string to_string() const;

    /// Presentation length without materializing the string.
    std::size_t presentation_length() const;

    /// True if this name equals `suffix` or ends with its labels.
    bool ends_with(const DomainName& suffix) const;

    /// Case-folded copy (A-Z -> a-z); DNS names compare case-insensitively.
    DomainName lowered() const;

    friend bool operator==(const DomainName&, const DomainName&) = default;

private:
    std::vector<std::string> labels_;
};

struct Ipv4 {
    std::array<std::uint8_t, 4> octets{};

    static Ipv4 parse(std::string_view dotted);
    std::string to_string() const;

    friend bool operator==(const Ipv4&, const Ipv4&) = default;
};

struct DnsHeader {
    std::uint16_t id = 0;
    bool qr = false;
    std::uint8_t opcode = opcode_query;
    bool aa = false;
    bool tc = false;
    bool rd = false;
    bool ra = false;
    std::uint8_t rcode = rcode_noerror;
    std::uint16_t qd_count = 0;
    std::uint16_t an_count = 0;
    std::uint16_t ns_count = 0;
    std::uint16_t ar_count = 0;

    friend bool operator==(const DnsHeader&, const DnsHeader&) = default;
};

struct Question {
    DomainName name;
    std::uint16_t qtype = qtype_a;
    std::uint16_t qclass = qclass_in;

    friend bool operator==(const Question&, const Question&) = default;
};

struct ResourceRecord {
    DomainName name;
    std::uint16_t rtype = qtype_a;
    std::uint16_t rclass = qclass_in;
    std::uint32_t ttl = 0;
    std::vector<std::uint8_t> rdata;

    static ResourceRecord a_record(DomainName name, Ipv4 ip, std::uint32_t ttl);

    friend bool operator==(const ResourceRecord&, const ResourceRecord&) = default;
};

struct DnsMessage {
    DnsHeader header;
    std::vector<Question> questions;
    std::vector<ResourceRecord> answers;
    std::vector<ResourceRecord> authority;
    std::vector<ResourceRecord> additional;

    /// Make the header counts agree with the section vectors.
    void sync_counts();

    friend bool operator==(const DnsMessage&, const DnsMessage&) = default;
};

/// Decode one UDP datagram. Total over arbitrary input: returns a message or
/// throws one of the typed errors above, never reads out of bounds, and
/// terminates on crafted compression-pointer cycles in at most one jump per
/// input byte. Compression pointers are followed when reading; trailing bytes
/// after the last record are ignored.
DnsMessage parse_message(std::span<const std::uint8_t> datagram);

/// Encode a message. Names are always emitted uncompressed.
std::vector<std::uint8_t> serialize_message(const DnsMessage& msg);

/// Standard recursive-desired query with one question and no answers.
DnsMessage make_query(const DomainName& name, std::uint16_t qtype, std::uint16_t id);

/// Authoritative answer echoing the single question of `query`, carrying one
/// A record with the given address. ttl defaults to 0 so resolvers do not
/// cache the dummy answer.
DnsMessage make_dummy_response(const DnsMessage& query, Ipv4 ip, std::uint32_t ttl = 0);

} // namespace dnsexfil::wire
