#pragma once

// Network front end of the gateway. One listening port speaks two framings:
// newline-delimited JSON for devices and tools, and HTTP for browsers (a
// WebSocket upgrade carrying the same JSON messages, or static files).

#include <atomic>
#include <filesystem>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "cardiotel/gateway.h"
#include "cardiotel/net.h"

namespace cardiotel::gateway {

// Sec-WebSocket-Accept for a client key.
std::string websocket_accept(const std::string& key);

struct WsFrame {
    bool fin = true;
    int opcode = 1;
    std::string payload;
};

// Server-to-client frame (unmasked).
std::string encode_ws_frame(int opcode, std::string_view payload);
// Client-to-server frame (masked); used by tests and tools.
std::string encode_masked_ws_frame(int opcode, std::string_view payload, std::uint32_t mask);
// Reads one frame, unmasking if needed. nullopt on EOF.
std::optional<WsFrame> read_ws_frame(net::LineReader& reader, std::size_t max_payload);

// Content type by file extension.
std::string_view mime_type(const std::filesystem::path& file);

class GatewayServer {
public:
    // Binds immediately; throws Error{io} when the address is taken.
    GatewayServer(Gateway& gateway, const net::Endpoint& endpoint);
    ~GatewayServer();
    GatewayServer(const GatewayServer&) = delete;
    GatewayServer& operator=(const GatewayServer&) = delete;

    void start();
    void stop();
    net::Endpoint local_endpoint() const { return listener_.local_endpoint(); }

private:
    class Connection;

    void accept_loop();
    void reap_finished();

    Gateway& gateway_;
    net::TcpListener listener_;
    std::atomic<bool> running_{false};
    std::thread accept_thread_;
    std::mutex conns_mu_;
    std::list<std::shared_ptr<Connection>> conns_;
};

} // namespace cardiotel::gateway
