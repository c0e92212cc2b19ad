#include "dnsexfil/nameserver.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <ctime>

#include <json.hpp>

namespace dnsexfil::ns {

namespace {

std::string rfc3339(std::chrono::system_clock::time_point tp) {
    auto secs = std::chrono::time_point_cast<std::chrono::seconds>(tp);
    auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(tp - secs).count();
    std::time_t t = std::chrono::system_clock::to_time_t(secs);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec,
                  static_cast<int>(ms));
    return buf;
}

std::string qtype_name(std::uint16_t qtype) {
    switch (qtype) {
    case wire::qtype_a: return "A";
    case wire::qtype_txt: return "TXT";
    default: return std::to_string(qtype);
    }
}

std::string marker_text(const codec::MarkerPair& m) {
    if (m.prefix.empty()) return "";
    return m.prefix + ":" + m.suffix;
}

CaptureEvent base_event(const std::string& src, std::chrono::system_clock::time_point wall,
                        codec::Timestamp mono) {
    CaptureEvent e;
    e.wall = wall;
    e.mono = mono;
    e.src = src;
    return e;
}

} // namespace

std::string_view to_string(CaptureKind kind) {
    switch (kind) {
    case CaptureKind::frame: return "frame";
    case CaptureKind::unrelated: return "unrelated";
    case CaptureKind::malformed: return "malformed";
    case CaptureKind::abandoned: return "abandoned";
    }
    return "?";
}

std::string to_jsonl(const CaptureEvent& event) {
    nlohmann::json j;
    j["ts"] = rfc3339(event.wall);
    j["src"] = event.src;
    j["qname"] = event.qname;
    j["qtype"] = qtype_name(event.qtype);
    j["kind"] = std::string(to_string(event.kind));
    if (!event.note.empty()) j["note"] = event.note;
    if (event.kind == CaptureKind::frame || event.kind == CaptureKind::abandoned) {
        j["marker"] = marker_text(event.marker);
        j["seq"] = event.seq;
        j["total"] = event.total;
    }
    j["item_complete"] = event.item_complete;
    return j.dump();
}

HandleOutcome handle_datagram(const ServerConfig& cfg, codec::SessionRegistry& registry,
                              std::span<const std::uint8_t> datagram, const std::string& src,
                              std::chrono::system_clock::time_point wall_now,
                              codec::Timestamp mono_now) {
    HandleOutcome out;

    wire::DnsMessage query;
    try {
        query = wire::parse_message(datagram);
    } catch (const wire::WireError& e) {
        auto event = base_event(src, wall_now, mono_now);
        event.kind = CaptureKind::malformed;
        event.note = e.what();
        out.events.push_back(std::move(event));
        return out; // nothing sane to answer
    }

    if (query.header.qr) {
        auto event = base_event(src, wall_now, mono_now);
        event.kind = CaptureKind::unrelated;
        event.note = "response datagram ignored";
        if (!query.questions.empty()) {
            event.qname = query.questions[0].name.to_string();
            event.qtype = query.questions[0].qtype;
        }
        out.events.push_back(std::move(event));
        return out; // answering a response invites loops
    }

    auto event = base_event(src, wall_now, mono_now);
    if (!query.questions.empty()) {
        event.qname = query.questions[0].name.to_string();
        event.qtype = query.questions[0].qtype;
    }

    bool supported = query.header.opcode == wire::opcode_query && query.questions.size() == 1 &&
                     (query.questions[0].qtype == wire::qtype_a ||
                      query.questions[0].qtype == wire::qtype_txt);
    if (!supported) {
        // Unsupported opcode or qtype still gets an answer (NOTIMP) so no
        // client ever hangs on us.
        wire::DnsMessage notimp;
        notimp.header.id = query.header.id;
        notimp.header.qr = true;
        notimp.header.opcode = query.header.opcode;
        notimp.header.rd = query.header.rd;
        notimp.header.rcode = wire::rcode_notimp;
        notimp.questions = query.questions;
        notimp.sync_counts();
        out.response = wire::serialize_message(notimp);
        event.kind = CaptureKind::unrelated;
        event.note = "answered NOTIMP";
        out.events.push_back(std::move(event));
        return out;
    }

    codec::FrameBudget budget(cfg.dns_domain);
    if (auto frame = codec::parse_frame(query.questions[0].name, budget)) {
        event.kind = CaptureKind::frame;
        event.marker = frame->markers;
        event.seq = frame->seq_index;
        event.total = frame->seq_total;
        try {
            if (auto item = registry.ingest(*frame, mono_now)) {
                event.item_complete = true;
                out.completed.push_back(std::move(*item));
            }
        } catch (const codec::ConflictingChunk& e) {
            event.note = e.what();
        }
    } else {
        event.kind = CaptureKind::unrelated;
    }

    out.response = wire::serialize_message(
        wire::make_dummy_response(query, cfg.dummy_ip, cfg.dummy_ttl));
    out.events.push_back(std::move(event));
    return out;
}

NameserverCore::NameserverCore(ServerConfig cfg) : cfg_(std::move(cfg)) {}

void NameserverCore::set_event_sink(EventSink sink) {
    std::lock_guard lock(mutex_);
    sink_ = std::move(sink);
}

void NameserverCore::emit(const CaptureEvent& event) {
    if (sink_) sink_(event);
}

std::optional<std::vector<std::uint8_t>> NameserverCore::handle(
    std::span<const std::uint8_t> datagram, const std::string& src) {
    std::lock_guard lock(mutex_);
    ++datagrams_;
    auto outcome = handle_datagram(cfg_, registry_, datagram, src,
                                   std::chrono::system_clock::now(),
                                   std::chrono::steady_clock::now());
    for (const auto& event : outcome.events) {
        if (event.kind == CaptureKind::frame) ++frames_;
        emit(event);
    }
    if (!outcome.completed.empty()) {
        for (auto& item : outcome.completed) completed_.push_back(std::move(item));
        completed_cv_.notify_all();
    }
    return std::move(outcome.response);
}

void NameserverCore::expire_sessions() {
    std::lock_guard lock(mutex_);
    auto cutoff = std::chrono::steady_clock::now() - cfg_.session_ttl;
    for (const auto& dropped : registry_.expire_idle_since(cutoff)) {
        CaptureEvent event;
        event.wall = std::chrono::system_clock::now();
        event.mono = std::chrono::steady_clock::now();
        event.kind = CaptureKind::abandoned;
        event.marker = dropped.markers;
        event.seq = dropped.received;
        event.total = dropped.total;
        event.note = "session idle past ttl";
        emit(event);
    }
}

void NameserverCore::abandon_open_sessions() {
    std::lock_guard lock(mutex_);
    for (const auto& dropped : registry_.drain()) {
        CaptureEvent event;
        event.wall = std::chrono::system_clock::now();
        event.mono = std::chrono::steady_clock::now();
        event.kind = CaptureKind::abandoned;
        event.marker = dropped.markers;
        event.seq = dropped.received;
        event.total = dropped.total;
        event.note = "incomplete at shutdown";
        emit(event);
    }
}

std::optional<codec::CompletedItem> NameserverCore::wait_completed(
    std::chrono::milliseconds timeout) {
    std::unique_lock lock(mutex_);
    if (!completed_cv_.wait_for(lock, timeout, [this] { return !completed_.empty(); })) {
        return std::nullopt;
    }
    codec::CompletedItem item = std::move(completed_.front());
    completed_.pop_front();
    return item;
}

std::optional<codec::SessionProgress> NameserverCore::session_progress(
    const codec::MarkerPair& markers) const {
    std::lock_guard lock(mutex_);
    return registry_.progress(markers);
}

UdpNameserver::UdpNameserver(ServerConfig cfg) : core_(std::move(cfg)) {
    const auto& c = core_.config();
    fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
    if (fd_ < 0) throw BindFailed("socket(): " + std::string(std::strerror(errno)));

    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(c.port);
    if (::inet_pton(AF_INET, c.bind_address.c_str(), &addr.sin_addr) != 1) {
        ::close(fd_);
        fd_ = -1;
        throw BindFailed("bad bind address: " + c.bind_address);
    }
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
        std::string err = std::strerror(errno);
        ::close(fd_);
        fd_ = -1;
        throw BindFailed("bind " + c.bind_address + ":" + std::to_string(c.port) + ": " + err);
    }

    sockaddr_in bound{};
    socklen_t len = sizeof bound;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &len);
    port_ = ntohs(bound.sin_port);

    // 100ms receive timeout keeps the loop responsive to stop() and gives
    // session expiry a heartbeat.
    timeval tv{};
    tv.tv_usec = 100 * 1000;
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);

    if (!c.capture_log_path.empty()) {
        log_fd_ = ::open(c.capture_log_path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
        if (log_fd_ < 0) {
            std::string err = std::strerror(errno);
            ::close(fd_);
            fd_ = -1;
            throw BindFailed("cannot open capture log " + c.capture_log_path + ": " + err);
        }
    }

    core_.set_event_sink([this](const CaptureEvent& event) {
        if (log_fd_ < 0) return;
        std::string line = to_jsonl(event);
        line.push_back('\n');
        if (::write(log_fd_, line.data(), line.size()) != static_cast<ssize_t>(line.size())) {
            std::lock_guard lock(log_mutex_);
            log_error_ = std::string("capture log write failed: ") + std::strerror(errno);
        }
    });
}

UdpNameserver::~UdpNameserver() {
    stop();
    if (fd_ >= 0) ::close(fd_);
    if (log_fd_ >= 0) ::close(log_fd_);
}

void UdpNameserver::start() {
    if (running_.exchange(true)) return;
    loop_ = std::thread([this] { run_loop(); });
}

void UdpNameserver::stop() {
    if (!running_.exchange(false)) return;
    if (loop_.joinable()) loop_.join();
    core_.abandon_open_sessions();
    if (log_fd_ >= 0) ::fsync(log_fd_);
}

std::optional<std::string> UdpNameserver::log_error() const {
    std::lock_guard lock(log_mutex_);
    return log_error_;
}

void UdpNameserver::run_loop() {
    std::vector<std::uint8_t> buf(2048);
    while (running_.load()) {
        sockaddr_in peer{};
        socklen_t peer_len = sizeof peer;
        ssize_t n = ::recvfrom(fd_, buf.data(), buf.size(), 0,
                               reinterpret_cast<sockaddr*>(&peer), &peer_len);
        if (n < 0) {
            if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR) {
                core_.expire_sessions();
                continue;
            }
            break; // socket is gone
        }
        char ip[INET_ADDRSTRLEN] = {0};
        ::inet_ntop(AF_INET, &peer.sin_addr, ip, sizeof ip);
        std::string src = std::string(ip) + ":" + std::to_string(ntohs(peer.sin_port));

        auto response = core_.handle(std::span(buf.data(), static_cast<std::size_t>(n)), src);
        if (response) {
            ::sendto(fd_, response->data(), response->size(), 0,
                     reinterpret_cast<sockaddr*>(&peer), peer_len);
        }
        core_.expire_sessions();
    }
}

std::optional<wire::DnsMessage> InProcessUpstream::query(const wire::DnsMessage& q) {
    auto datagram = wire::serialize_message(q);
    auto response = core_.handle(datagram, "in-process");
    if (!response) return std::nullopt;
    return wire::parse_message(*response);
}

UdpUpstream::UdpUpstream(const std::string& address, std::uint16_t port,
                         std::chrono::milliseconds timeout) {
    fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
    if (fd_ < 0) throw BindFailed("socket(): " + std::string(std::strerror(errno)));

    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, address.c_str(), &addr.sin_addr) != 1) {
        ::close(fd_);
        fd_ = -1;
        throw BindFailed("bad upstream address: " + address);
    }
    if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
        std::string err = std::strerror(errno);
        ::close(fd_);
        fd_ = -1;
        throw BindFailed("connect " + address + ": " + err);
    }

    timeval tv{};
    tv.tv_sec = static_cast<time_t>(timeout.count() / 1000);
    tv.tv_usec = static_cast<suseconds_t>(timeout.count() % 1000 * 1000);
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
}

UdpUpstream::~UdpUpstream() {
    if (fd_ >= 0) ::close(fd_);
}

std::optional<wire::DnsMessage> UdpUpstream::query(const wire::DnsMessage& q) {
    auto datagram = wire::serialize_message(q);
    if (::send(fd_, datagram.data(), datagram.size(), 0) < 0) return std::nullopt;

    std::vector<std::uint8_t> buf(2048);
    for (;;) {
        ssize_t n = ::recv(fd_, buf.data(), buf.size(), 0);
        if (n < 0) return std::nullopt; // timeout or error
        try {
            auto msg = wire::parse_message(std::span(buf.data(), static_cast<std::size_t>(n)));
            if (msg.header.id == q.header.id && msg.header.qr) return msg;
        } catch (const wire::WireError&) {
            // garbage on the socket; keep waiting until the timeout fires
        }
    }
}

} // namespace dnsexfil::ns
