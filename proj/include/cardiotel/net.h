#pragma once

// Thin POSIX TCP wrappers: RAII descriptors, a listener and a
// newline-delimited client.

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace cardiotel::net {

struct Endpoint {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;

    std::string str() const { return host + ":" + std::to_string(port); }
};

// "host:port"; throws Error{config}.
Endpoint parse_endpoint(const std::string& text);

class Fd {
public:
    Fd() = default;
    explicit Fd(int fd) : fd_(fd) {}
    ~Fd() { reset(); }
    Fd(Fd&& other) noexcept : fd_(other.release()) {}
    Fd& operator=(Fd&& other) noexcept {
        if (this != &other) reset(other.release());
        return *this;
    }
    Fd(const Fd&) = delete;
    Fd& operator=(const Fd&) = delete;

    int get() const { return fd_; }
    bool valid() const { return fd_ >= 0; }
    int release() {
        int fd = fd_;
        fd_ = -1;
        return fd;
    }
    void reset(int fd = -1);

private:
    int fd_ = -1;
};

// Writes all bytes; throws Error{transport} on failure.
void write_all(int fd, std::string_view data);

class TcpListener {
public:
    // Throws Error{io} when the address cannot be bound.
    explicit TcpListener(const Endpoint& endpoint);

    Endpoint local_endpoint() const { return local_; }
    // Returns an invalid Fd once shutdown() has been called.
    Fd accept();
    void shutdown();

private:
    Fd fd_;
    Endpoint local_;
};

// Buffered reader over a connected socket.
class LineReader {
public:
    static constexpr std::size_t kMaxLineBytes = 1 << 20;

    explicit LineReader(int fd) : fd_(fd) {}

    // Returns nullopt on EOF or timeout; throws Error{transport} on socket
    // errors. A negative timeout waits indefinitely.
    std::optional<std::string> read_line(std::chrono::milliseconds timeout = std::chrono::milliseconds{-1});
    // Reads exactly n bytes (used by the websocket framer).
    std::optional<std::string> read_exact(std::size_t n);

    bool timed_out() const { return timed_out_; }

private:
    bool fill(std::chrono::milliseconds timeout);

    int fd_;
    std::string buf_;
    bool timed_out_ = false;
};

Fd connect_tcp(const Endpoint& endpoint, std::chrono::milliseconds timeout = std::chrono::milliseconds{2000});

// Request/response client for the gateway wire protocol. Lines that are not
// replies (subscription events) are buffered for next_event().
class GatewayClient {
public:
    explicit GatewayClient(const Endpoint& endpoint);

    void send(const nlohmann::json& message);
    // Sends and waits for the reply, i.e. the next line carrying "ok".
    nlohmann::json request(const nlohmann::json& message,
                           std::chrono::milliseconds timeout = std::chrono::milliseconds{10000});
    std::optional<nlohmann::json> next_event(std::chrono::milliseconds timeout);

    int fd() const { return fd_.get(); }

private:
    Fd fd_;
    LineReader reader_;
    std::vector<nlohmann::json> pending_events_;
};

} // namespace cardiotel::net
