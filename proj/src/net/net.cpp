#include "cardiotel/net.h"

#include <arpa/inet.h>
#include <cerrno>
#include <cstring>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include "cardiotel/error.h"

namespace cardiotel::net {

namespace {

std::string errno_text() { return std::strerror(errno); }

sockaddr_in resolve(const Endpoint& ep) {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(ep.port);
    const std::string host = ep.host == "localhost" ? "127.0.0.1" : ep.host;
    if (host.empty() || host == "0.0.0.0" || host == "*") {
        addr.sin_addr.s_addr = htonl(INADDR_ANY);
    } else if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        addrinfo hints{};
        hints.ai_family = AF_INET;
        addrinfo* res = nullptr;
        if (getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr)
            fail(ErrorCode::config, "cannot resolve host " + host);
        addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
        freeaddrinfo(res);
    }
    return addr;
}

} // namespace

Endpoint parse_endpoint(const std::string& text) {
    const auto colon = text.rfind(':');
    if (colon == std::string::npos) fail(ErrorCode::config, "endpoint '" + text + "' is not host:port");
    Endpoint ep;
    ep.host = text.substr(0, colon);
    try {
        const int port = std::stoi(text.substr(colon + 1));
        if (port < 0 || port > 65535) throw std::out_of_range("port");
        ep.port = static_cast<std::uint16_t>(port);
    } catch (const std::exception&) {
        fail(ErrorCode::config, "endpoint '" + text + "' has an invalid port");
    }
    if (ep.host.empty()) ep.host = "127.0.0.1";
    return ep;
}

void Fd::reset(int fd) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = fd;
}

void write_all(int fd, std::string_view data) {
    while (!data.empty()) {
        const ssize_t n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            fail(ErrorCode::transport, "send: " + errno_text());
        }
        data.remove_prefix(static_cast<std::size_t>(n));
    }
}

TcpListener::TcpListener(const Endpoint& endpoint) {
    fd_ = Fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!fd_.valid()) fail(ErrorCode::io, "socket: " + errno_text());
    int one = 1;
    ::setsockopt(fd_.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    auto addr = resolve(endpoint);
    if (::bind(fd_.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
        fail(ErrorCode::io, "bind " + endpoint.str() + ": " + errno_text());
    if (::listen(fd_.get(), 64) != 0) fail(ErrorCode::io, "listen: " + errno_text());
    socklen_t len = sizeof addr;
    ::getsockname(fd_.get(), reinterpret_cast<sockaddr*>(&addr), &len);
    local_.host = endpoint.host.empty() ? "127.0.0.1" : endpoint.host;
    local_.port = ntohs(addr.sin_port);
}

Fd TcpListener::accept() {
    for (;;) {
        const int fd = ::accept4(fd_.get(), nullptr, nullptr, SOCK_CLOEXEC);
        if (fd >= 0) {
            int one = 1;
            ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
            return Fd(fd);
        }
        if (errno == EINTR || errno == ECONNABORTED) continue;
        return Fd();
    }
}

void TcpListener::shutdown() {
    if (fd_.valid()) ::shutdown(fd_.get(), SHUT_RDWR);
}

bool LineReader::fill(std::chrono::milliseconds timeout) {
    timed_out_ = false;
    pollfd pfd{fd_, POLLIN, 0};
    for (;;) {
        const int rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
        if (rc < 0 && errno == EINTR) continue;
        if (rc < 0) fail(ErrorCode::transport, "poll: " + errno_text());
        if (rc == 0) {
            timed_out_ = true;
            return false;
        }
        break;
    }
    char chunk[8192];
    for (;;) {
        const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
        if (n < 0 && errno == EINTR) continue;
        if (n < 0) {
            if (errno == ECONNRESET) return false;
            fail(ErrorCode::transport, "recv: " + errno_text());
        }
        if (n == 0) return false;
        buf_.append(chunk, static_cast<std::size_t>(n));
        return true;
    }
}

std::optional<std::string> LineReader::read_line(std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
        const auto nl = buf_.find('\n');
        if (nl != std::string::npos) {
            std::string line = buf_.substr(0, nl);
            buf_.erase(0, nl + 1);
            if (!line.empty() && line.back() == '\r') line.pop_back();
            return line;
        }
        if (buf_.size() > kMaxLineBytes) fail(ErrorCode::transport, "line exceeds size limit");
        auto left = std::chrono::milliseconds{-1};
        if (timeout.count() >= 0) {
            left = std::chrono::duration_cast<std::chrono::milliseconds>(
                deadline - std::chrono::steady_clock::now());
            if (left.count() < 0) left = std::chrono::milliseconds{0};
        }
        if (!fill(left)) return std::nullopt;
    }
}

std::optional<std::string> LineReader::read_exact(std::size_t n) {
    while (buf_.size() < n) {
        if (!fill(std::chrono::milliseconds{-1})) return std::nullopt;
    }
    std::string out = buf_.substr(0, n);
    buf_.erase(0, n);
    return out;
}

Fd connect_tcp(const Endpoint& endpoint, std::chrono::milliseconds timeout) {
    Fd fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!fd.valid()) fail(ErrorCode::transport, "socket: " + errno_text());
    auto addr = resolve(endpoint);

    const int flags = ::fcntl(fd.get(), F_GETFL, 0);
    ::fcntl(fd.get(), F_SETFL, flags | O_NONBLOCK);
    if (::connect(fd.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
        if (errno != EINPROGRESS) fail(ErrorCode::transport, "connect " + endpoint.str() + ": " + errno_text());
        pollfd pfd{fd.get(), POLLOUT, 0};
        if (::poll(&pfd, 1, static_cast<int>(timeout.count())) <= 0)
            fail(ErrorCode::transport, "connect " + endpoint.str() + ": timed out");
        int err = 0;
        socklen_t len = sizeof err;
        ::getsockopt(fd.get(), SOL_SOCKET, SO_ERROR, &err, &len);
        if (err != 0) fail(ErrorCode::transport, "connect " + endpoint.str() + ": " + std::strerror(err));
    }
    ::fcntl(fd.get(), F_SETFL, flags);
    int one = 1;
    ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return fd;
}

GatewayClient::GatewayClient(const Endpoint& endpoint)
    : fd_(connect_tcp(endpoint)), reader_(fd_.get()) {}

void GatewayClient::send(const nlohmann::json& message) {
    write_all(fd_.get(), message.dump() + "\n");
}

nlohmann::json GatewayClient::request(const nlohmann::json& message,
                                      std::chrono::milliseconds timeout) {
    send(message);
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
        auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
            deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) fail(ErrorCode::transport, "gateway reply timed out");
        auto line = reader_.read_line(left);
        if (!line) {
            fail(ErrorCode::transport, reader_.timed_out() ? "gateway reply timed out"
                                                           : "gateway closed the connection");
        }
        auto msg = nlohmann::json::parse(*line);
        if (msg.contains("ok") && !msg.contains("event")) return msg;
        pending_events_.push_back(std::move(msg));
    }
}

std::optional<nlohmann::json> GatewayClient::next_event(std::chrono::milliseconds timeout) {
    if (!pending_events_.empty()) {
        auto ev = std::move(pending_events_.front());
        pending_events_.erase(pending_events_.begin());
        return ev;
    }
    auto line = reader_.read_line(timeout);
    if (!line) return std::nullopt;
    return nlohmann::json::parse(*line);
}

} // namespace cardiotel::net
