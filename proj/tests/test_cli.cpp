// End-to-end checks of the command-line surface: spawns the real binary.
//     ./test_cli <path-to-dnsexfil-cli>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "dnsexfil/dns_wire.hpp"

using namespace dnsexfil;

namespace {

struct Failure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require(bool cond, const std::string& what) {
    if (!cond) throw Failure(what);
}

std::string g_cli;

int run(const std::string& args, std::string* out = nullptr,
        const std::string& extra_env = "") {
    std::string out_path = "/tmp/dnsexfil_cli_out.txt";
    std::string cmd = extra_env + g_cli + " " + args + " >" + out_path + " 2>&1";
    int status = std::system(cmd.c_str());
    require(status >= 0, "could not spawn " + cmd);
    if (out) {
        std::ifstream in(out_path, std::ios::binary);
        out->assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    return WEXITSTATUS(status);
}

void check_encode_determinism() {
    std::string a, b;
    require(run("encode --data 7361 --dns-domain attacker.com --seed 9", &a) == 0,
            "encode failed");
    require(run("encode --data 7361 --dns-domain attacker.com --seed 9", &b) == 0,
            "encode failed");
    require(a == b, "same seed must give identical frames");
    require(a.find(".7361.") != std::string::npos, "payload hex missing from the frame");
    require(a.find(".00000001.") != std::string::npos, "sequence label missing");

    std::string c;
    require(run("encode --data 7361 --dns-domain attacker.com --seed 10", &c) == 0,
            "encode failed");
    require(a != c, "different seeds must give different markers");
}

void check_encode_decode_pipe() {
    std::string out_path = "/tmp/dnsexfil_cli_pipe.txt";
    std::string cmd = g_cli + " encode --data deadbeef010203 --dns-domain attacker.com --seed 4 | " +
                      g_cli + " decode --dns-domain attacker.com >" + out_path + " 2>&1";
    int status = std::system(cmd.c_str());
    require(WEXITSTATUS(status) == 0, "pipe failed");
    std::ifstream in(out_path);
    std::string hex;
    std::getline(in, hex);
    require(hex == "deadbeef010203", "decode returned '" + hex + "'");
}

void check_decode_partial() {
    std::string out;
    int rc = run("decode pfxaaaa1.00010003.aa.sfxbbbb2.attacker.com --dns-domain attacker.com",
                 &out);
    require(rc == 1, "incomplete item must exit 1, got " + std::to_string(rc));
    require(out.find("incomplete") != std::string::npos, "missing partial report");
    require(out.find("1 of 3") != std::string::npos, "partial report lacks frame counts");
    require(out.find("missing seq 0,2") != std::string::npos,
            "partial report must name the missing indices: " + out);
}

void check_usage_errors() {
    std::string out;
    require(run("serve", &out) == 2, "serve without a domain must exit 2");
    require(run("definitely-not-a-command", &out) == 2, "unknown subcommand must exit 2");
    require(run("encode --dns-domain attacker.com", &out) == 2,
            "encode without data must exit 2");
    require(run("bench --format yaml", &out) == 2, "bad format must exit 2");
    require(run("--help", &out) == 0, "--help must exit 0");
}

void check_env_domain_default() {
    std::string out;
    require(run("encode --data 00 --seed 1", &out, "EXFIL_DNS_DOMAIN=lab.example ") == 0,
            "encode with env domain failed");
    require(out.find(".lab.example") != std::string::npos,
            "EXFIL_DNS_DOMAIN not honored: " + out);
}

void check_bench_single_technique() {
    std::string out;
    require(run("bench --seed 1 --techniques union_full --format json", &out) == 0,
            "bench subset failed");
    auto j = nlohmann::json::parse(out);
    require(j["techniques"].size() == 1, "expected a single row");
    require(j["techniques"][0]["technique"] == "union_full", "wrong technique row");
    require(j["techniques"][0]["http_requests"] == 3, "union_full must cost 3 requests");
    require(j["ordering_ok"].is_null(), "ordering is only judged on full runs");
}

pid_t spawn_serve(const std::vector<std::string>& extra, const std::string& stderr_path) {
    pid_t pid = fork();
    require(pid >= 0, "fork failed");
    if (pid == 0) {
        FILE* f = std::freopen(stderr_path.c_str(), "w", stderr);
        (void)f;
        std::vector<std::string> args = {g_cli, "serve"};
        args.insert(args.end(), extra.begin(), extra.end());
        std::vector<char*> argv;
        for (auto& a : args) argv.push_back(a.data());
        argv.push_back(nullptr);
        execv(g_cli.c_str(), argv.data());
        _exit(127);
    }
    return pid;
}

std::uint16_t wait_for_port(const std::string& stderr_path) {
    // The serve banner reports the bound port: "... on 127.0.0.1:PORT, ..."
    // Only trust it once the comma after the port has landed; the banner can
    // be observed mid-write.
    for (int i = 0; i < 100; ++i) {
        std::ifstream in(stderr_path);
        std::string text((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
        auto pos = text.find("127.0.0.1:");
        if (pos != std::string::npos) {
            auto end = text.find(',', pos);
            if (end != std::string::npos) {
                return static_cast<std::uint16_t>(std::atoi(text.c_str() + pos + 10));
            }
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    throw Failure("serve never reported its port");
}

void check_serve_lifecycle() {
    std::string log_path = "/tmp/dnsexfil_cli_serve.jsonl";
    std::string err_path = "/tmp/dnsexfil_cli_serve.err";
    std::remove(log_path.c_str());
    std::remove(err_path.c_str()); // a stale banner would yield a dead port

    pid_t pid = spawn_serve({"--dns-domain", "attacker.com", "--port", "0", "--log", log_path},
                            err_path);
    std::uint16_t port = 0;
    std::size_t queries_sent = 0;
    try {
        port = wait_for_port(err_path);

        // one external client query, dig-style (one retry in case the
        // first datagram races server startup)
        int fd = ::socket(AF_INET, SOCK_DGRAM, 0);
        require(fd >= 0, "client socket failed");
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(port);
        ::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
        timeval tv{};
        tv.tv_sec = 2;
        ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
        auto query = wire::serialize_message(
            wire::make_query(wire::DomainName::from_text("probe.attacker.com"),
                             wire::qtype_a, 0x1111));
        std::vector<std::uint8_t> buf(512);
        ssize_t n = -1;
        for (int attempt = 0; attempt < 2 && n <= 0; ++attempt) {
            ::sendto(fd, query.data(), query.size(), 0, reinterpret_cast<sockaddr*>(&addr),
                     sizeof addr);
            ++queries_sent;
            n = ::recv(fd, buf.data(), buf.size(), 0);
        }
        ::close(fd);
        require(n > 0, "no answer from serve on port " + std::to_string(port) + " (errno " +
                           std::to_string(errno) + ")");
        auto resp = wire::parse_message(std::span(buf.data(), static_cast<std::size_t>(n)));
        require(resp.header.id == 0x1111 && resp.header.qr, "bad answer from serve");
    } catch (...) {
        kill(pid, SIGKILL);
        waitpid(pid, nullptr, 0);
        throw;
    }

    kill(pid, SIGTERM);
    int status = 0;
    waitpid(pid, &status, 0);
    require(WIFEXITED(status) && WEXITSTATUS(status) == 0, "serve did not exit cleanly");

    std::ifstream log(log_path);
    std::string line;
    std::size_t events = 0;
    while (std::getline(log, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        require(j.contains("ts") && j.contains("qname") && j.contains("kind"),
                "log line lacks fields: " + line);
        ++events;
    }
    require(events >= 1 && events <= queries_sent,
            "expected one event per query sent (" + std::to_string(queries_sent) + "), saw " +
                std::to_string(events));
}

void check_serve_port_in_use() {
    // occupy a port, then ask serve to bind it
    int fd = ::socket(AF_INET, SOCK_DGRAM, 0);
    require(fd >= 0, "socket failed");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = 0;
    require(::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0, "bind failed");
    socklen_t len = sizeof addr;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    std::uint16_t taken = ntohs(addr.sin_port);

    std::string out;
    int rc = run("serve --dns-domain attacker.com --port " + std::to_string(taken), &out);
    ::close(fd);
    require(rc == 1, "binding a taken port must exit 1, got " + std::to_string(rc));
    require(out.find("bind") != std::string::npos, "error message should mention bind");
}

} // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: %s <path-to-dnsexfil-cli>\n", argv[0]);
        return 2;
    }
    g_cli = argv[1];

    struct Case {
        const char* name;
        std::function<void()> body;
    };
    const Case cases[] = {
        {"encode determinism", check_encode_determinism},
        {"encode | decode round trip", check_encode_decode_pipe},
        {"decode reports missing frames", check_decode_partial},
        {"usage errors exit 2", check_usage_errors},
        {"EXFIL_DNS_DOMAIN default", check_env_domain_default},
        {"bench single-technique subset", check_bench_single_technique},
        {"serve answers, logs, stops cleanly", check_serve_lifecycle},
        {"serve on a taken port exits 1", check_serve_port_in_use},
    };

    int failures = 0;
    for (const auto& c : cases) {
        try {
            c.body();
            std::printf("[PASS] %s\n", c.name);
        } catch (const std::exception& e) {
            std::printf("[FAIL] %s\n       %s\n", c.name, e.what());
            ++failures;
        }
    }
    return failures == 0 ? 0 : 1;
}
