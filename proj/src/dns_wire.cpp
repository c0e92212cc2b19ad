#include "dnsexfil/dns_wire.hpp"

#include <cstdio>

namespace dnsexfil::wire {

namespace {

bool is_ldh(char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-';
}

char fold(char c) {
    return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

std::size_t presentation_length_of(const std::vector<std::string>& labels) {
    if (labels.empty()) return 0;
    std::size_t n = labels.size() - 1; // separating dots
    for (const auto& l : labels) n += l.size();
    return n;
}

void check_lengths(const std::vector<std::string>& labels) {
    for (const auto& l : labels) {
        if (l.empty() || l.size() > max_label_bytes) {
            throw NameTooLong("label length out of range 1..63: " + std::to_string(l.size()));
        }
    }
    if (presentation_length_of(labels) > max_name_presentation) {
        throw NameTooLong("name exceeds 253 presentation characters");
    }
}

} // namespace

DomainName DomainName::from_text(std::string_view text) {
    if (text.empty()) throw NameTooLong("empty domain name");
    std::vector<std::string> labels;
    std::string cur;
    for (char raw : text) {
        char c = fold(raw);
        if (c == '.') {
            if (cur.empty()) throw NameTooLong("empty label in domain name");
            labels.push_back(std::move(cur));
            cur.clear();
            continue;
        }
        if (!is_ldh(c)) {
            throw NameTooLong(std::string("character not allowed in domain name: '") + raw + "'");
        }
        cur.push_back(c);
    }
    if (cur.empty()) throw NameTooLong("empty label in domain name");
    labels.push_back(std::move(cur));
    for (const auto& l : labels) {
        if (l.front() == '-' || l.back() == '-') {
            throw NameTooLong("label has leading or trailing '-': " + l);
        }
    }
    check_lengths(labels);
    DomainName n;
    n.labels_ = std::move(labels);
    return n;
}

DomainName DomainName::from_labels(std::vector<std::string> labels) {
    check_lengths(labels);
    DomainName n;
    n.labels_ = std::move(labels);
    return n;
}

std::string DomainName::to_string() const {
    std::string out;
    out.reserve(presentation_length());
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        if (i) out.push_back('.');
        out += labels_[i];
    }
    return out;
}

std::size_t DomainName::presentation_length() const {
    return presentation_length_of(labels_);
}

bool DomainName::ends_with(const DomainName& suffix) const {
    if (suffix.labels_.size() > labels_.size()) return false;
    std::size_t off = labels_.size() - suffix.labels_.size();
    for (std::size_t i = 0; i < suffix.labels_.size(); ++i) {
        if (labels_[off + i] != suffix.labels_[i]) return false;
    }
    return true;
}

DomainName DomainName::lowered() const {
    DomainName n;
    n.labels_.reserve(labels_.size());
    for (const auto& l : labels_) {
        std::string f;
        f.reserve(l.size());
        for (char c : l) f.push_back(fold(c));
        n.labels_.push_back(std::move(f));
    }
    return n;
}

Ipv4 Ipv4::parse(std::string_view dotted) {
    Ipv4 ip;
    std::size_t part = 0;
    std::uint32_t value = 0;
    bool have_digit = false;
    for (char c : dotted) {
        if (c == '.') {
            if (!have_digit || part >= 3) throw WireError("bad IPv4 literal");
            ip.octets[part++] = static_cast<std::uint8_t>(value);
            value = 0;
            have_digit = false;
            continue;
        }
        if (c < '0' || c > '9') throw WireError("bad IPv4 literal");
        value = value * 10 + static_cast<std::uint32_t>(c - '0');
        if (value > 255) throw WireError("IPv4 octet out of range");
        have_digit = true;
    }
    if (!have_digit || part != 3) throw WireError("bad IPv4 literal");
    ip.octets[3] = static_cast<std::uint8_t>(value);
    return ip;
}

std::string Ipv4::to_string() const {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%u.%u.%u.%u", octets[0], octets[1], octets[2], octets[3]);
    return buf;
}

ResourceRecord ResourceRecord::a_record(DomainName name, Ipv4 ip, std::uint32_t ttl) {
    ResourceRecord rr;
    rr.name = std::move(name);
    rr.rtype = qtype_a;
    rr.rclass = qclass_in;
    rr.ttl = ttl;
    rr.rdata.assign(ip.octets.begin(), ip.octets.end());
    return rr;
}

void DnsMessage::sync_counts() {
    header.qd_count = static_cast<std::uint16_t>(questions.size());
    header.an_count = static_cast<std::uint16_t>(answers.size());
    header.ns_count = static_cast<std::uint16_t>(authority.size());
    header.ar_count = static_cast<std::uint16_t>(additional.size());
}

namespace {

struct Reader {
    std::span<const std::uint8_t> data;
    std::size_t pos = 0;

    std::uint8_t u8() {
        if (pos >= data.size()) throw Truncated("unexpected end of datagram");
        return data[pos++];
    }
    std::uint16_t u16() {
        std::uint16_t hi = u8();
        return static_cast<std::uint16_t>(hi << 8 | u8());
    }
    std::uint32_t u32() {
        std::uint32_t v = u16();
        return v << 16 | u16();
    }
    std::vector<std::uint8_t> bytes(std::size_t n) {
        if (pos + n > data.size()) throw Truncated("unexpected end of datagram");
        std::vector<std::uint8_t> out(data.begin() + static_cast<std::ptrdiff_t>(pos),
                                      data.begin() + static_cast<std::ptrdiff_t>(pos + n));
        pos += n;
        return out;
    }
};

DomainName read_name(Reader& r) {
    std::vector<std::string> labels;
    std::size_t wire_len = 1; // terminating root byte
    std::size_t jumps = 0;
    std::size_t pos = r.pos;
    bool jumped = false;
    for (;;) {
        if (pos >= r.data.size()) throw Truncated("name runs past end of datagram");
        std::uint8_t len = r.data[pos];
        if ((len & 0xc0) == 0xc0) {
            if (pos + 1 >= r.data.size()) throw Truncated("compression pointer cut short");
            // One jump per input byte is plenty for any honest encoder; a
            // cycle exceeds this bound long before it could spin forever.
            if (++jumps > r.data.size()) throw BadLabel("compression pointer loop");
            std::size_t target = static_cast<std::size_t>(len & 0x3f) << 8 | r.data[pos + 1];
            if (!jumped) {
                r.pos = pos + 2;
                jumped = true;
            }
            if (target >= r.data.size()) throw BadLabel("compression pointer past end of datagram");
            pos = target;
            continue;
        }
        if (len & 0xc0) throw BadLabel("reserved label type bits");
        if (len == 0) {
            if (!jumped) r.pos = pos + 1;
            break;
        }
        if (pos + 1 + len > r.data.size()) throw Truncated("label runs past end of datagram");
        wire_len += static_cast<std::size_t>(len) + 1;
        if (wire_len > 255) throw BadLabel("assembled name exceeds 255 octets");
        labels.emplace_back(reinterpret_cast<const char*>(r.data.data() + pos + 1), len);
        pos += 1 + static_cast<std::size_t>(len);
    }
    try {
        return DomainName::from_labels(std::move(labels));
    } catch (const NameTooLong& e) {
        throw BadLabel(e.what());
    }
}

ResourceRecord read_record(Reader& r) {
    ResourceRecord rr;
    rr.name = read_name(r);
    rr.rtype = r.u16();
    rr.rclass = r.u16();
    rr.ttl = r.u32();
    std::uint16_t rdlen = r.u16();
    rr.rdata = r.bytes(rdlen);
    return rr;
}

void write_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
}

void write_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    write_u16(out, static_cast<std::uint16_t>(v >> 16));
    write_u16(out, static_cast<std::uint16_t>(v & 0xffff));
}

void write_name(std::vector<std::uint8_t>& out, const DomainName& name) {
    std::size_t wire_len = 1;
    for (const auto& label : name.labels()) {
        if (label.empty() || label.size() > max_label_bytes) {
            throw NameTooLong("label length out of range 1..63");
        }
        wire_len += label.size() + 1;
        if (wire_len > 255) throw NameTooLong("name exceeds 255 wire octets");
        out.push_back(static_cast<std::uint8_t>(label.size()));
        out.insert(out.end(), label.begin(), label.end());
    }
    out.push_back(0);
}

void write_record(std::vector<std::uint8_t>& out, const ResourceRecord& rr) {
    write_name(out, rr.name);
    write_u16(out, rr.rtype);
    write_u16(out, rr.rclass);
    write_u32(out, rr.ttl);
    write_u16(out, static_cast<std::uint16_t>(rr.rdata.size()));
    out.insert(out.end(), rr.rdata.begin(), rr.rdata.end());
}

} // namespace

DnsMessage parse_message(std::span<const std::uint8_t> datagram) {
    if (datagram.size() < 12) throw Truncated("datagram shorter than the 12-byte header");
    Reader r{datagram, 0};
    DnsMessage m;
    m.header.id = r.u16();
    std::uint16_t flags = r.u16();
    m.header.qr = (flags & 0x8000) != 0;
    m.header.opcode = static_cast<std::uint8_t>((flags >> 11) & 0x0f);
    m.header.aa = (flags & 0x0400) != 0;
    m.header.tc = (flags & 0x0200) != 0;
    m.header.rd = (flags & 0x0100) != 0;
    m.header.ra = (flags & 0x0080) != 0;
    m.header.rcode = static_cast<std::uint8_t>(flags & 0x0f);
    std::uint16_t qd = r.u16();
    std::uint16_t an = r.u16();
    std::uint16_t ns = r.u16();
    std::uint16_t ar = r.u16();

    // Cheapest possible encodings: 5 bytes per question (pointer + type +
    // class won't fit; root name + type + class = 5), 11 per record.
    std::size_t remaining = datagram.size() - 12;
    std::size_t need = static_cast<std::size_t>(qd) * 5 +
                       (static_cast<std::size_t>(an) + ns + ar) * 11;
    if (need > remaining) throw BadCount("section counts exceed remaining data");

    for (std::uint16_t i = 0; i < qd; ++i) {
        Question q;
        q.name = read_name(r);
        q.qtype = r.u16();
        q.qclass = r.u16();
        m.questions.push_back(std::move(q));
    }
    for (std::uint16_t i = 0; i < an; ++i) m.answers.push_back(read_record(r));
    for (std::uint16_t i = 0; i < ns; ++i) m.authority.push_back(read_record(r));
    for (std::uint16_t i = 0; i < ar; ++i) m.additional.push_back(read_record(r));
    m.sync_counts();
    return m;
}

std::vector<std::uint8_t> serialize_message(const DnsMessage& msg) {
    std::vector<std::uint8_t> out;
    out.reserve(64);
    write_u16(out, msg.header.id);
    std::uint16_t flags = 0;
    if (msg.header.qr) flags |= 0x8000;
    flags |= static_cast<std::uint16_t>((msg.header.opcode & 0x0f) << 11);
    if (msg.header.aa) flags |= 0x0400;
    if (msg.header.tc) flags |= 0x0200;
    if (msg.header.rd) flags |= 0x0100;
    if (msg.header.ra) flags |= 0x0080;
    flags |= msg.header.rcode & 0x0f;
    write_u16(out, flags);
    write_u16(out, static_cast<std::uint16_t>(msg.questions.size()));
    write_u16(out, static_cast<std::uint16_t>(msg.answers.size()));
    write_u16(out, static_cast<std::uint16_t>(msg.authority.size()));
    write_u16(out, static_cast<std::uint16_t>(msg.additional.size()));
    for (const auto& q : msg.questions) {
        write_name(out, q.name);
        write_u16(out, q.qtype);
        write_u16(out, q.qclass);
    }
    for (const auto& rr : msg.answers) write_record(out, rr);
    for (const auto& rr : msg.authority) write_record(out, rr);
    for (const auto& rr : msg.additional) write_record(out, rr);
    return out;
}

DnsMessage make_query(const DomainName& name, std::uint16_t qtype, std::uint16_t id) {
    DnsMessage m;
    m.header.id = id;
    m.header.qr = false;
    m.header.opcode = opcode_query;
    m.header.rd = true;
    m.questions.push_back(Question{name, qtype, qclass_in});
    m.sync_counts();
    return m;
}

DnsMessage make_dummy_response(const DnsMessage& query, Ipv4 ip, std::uint32_t ttl) {
    if (query.header.qr) throw NotAQuery("message is already a response");
    if (query.questions.size() != 1) {
        throw WireError("dummy response requires exactly one question");
    }
    DnsMessage m;
    m.header.id = query.header.id;
    m.header.qr = true;
    m.header.opcode = query.header.opcode;
    m.header.aa = true;
    m.header.rd = query.header.rd;
    m.header.rcode = rcode_noerror;
    m.questions = query.questions;
    m.answers.push_back(ResourceRecord::a_record(query.questions[0].name, ip, ttl));
    m.sync_counts();
    return m;
}

} // namespace dnsexfil::wire
