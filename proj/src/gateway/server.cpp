#include "cardiotel/server.h"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <sys/socket.h>

#include <openssl/evp.h>

#include "cardiotel/error.h"

namespace cardiotel::gateway {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kWsGuid = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
constexpr std::size_t kMaxWsMessage = 1 << 20;
constexpr std::size_t kMaxHeaderLines = 100;

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::string trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return std::string(s);
}

std::string http_response(int status, std::string_view reason, std::string_view type,
                          const std::string& body) {
    std::ostringstream out;
    out << "HTTP/1.1 " << status << ' ' << reason << "\r\n"
        << "Content-Type: " << type << "\r\n"
        << "Content-Length: " << body.size() << "\r\n"
        << "Connection: close\r\n\r\n"
        << body;
    return out.str();
}

} // namespace

std::string websocket_accept(const std::string& key) {
    const std::string input = key + std::string(kWsGuid);
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(input.data(), input.size(), digest, &len, EVP_sha1(), nullptr) != 1)
        fail(ErrorCode::transport, "sha1 failed");
    std::string out(4 * ((len + 2) / 3) + 1, '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), digest,
                                  static_cast<int>(len));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::string encode_ws_frame(int opcode, std::string_view payload) {
    std::string out;
    out.push_back(static_cast<char>(0x80 | (opcode & 0x0f)));
    const std::size_t n = payload.size();
    if (n < 126) {
        out.push_back(static_cast<char>(n));
    } else if (n <= 0xffff) {
        out.push_back(126);
        out.push_back(static_cast<char>((n >> 8) & 0xff));
        out.push_back(static_cast<char>(n & 0xff));
    } else {
        out.push_back(127);
        for (int shift = 56; shift >= 0; shift -= 8) out.push_back(static_cast<char>((n >> shift) & 0xff));
    }
    out.append(payload);
    return out;
}

std::string encode_masked_ws_frame(int opcode, std::string_view payload, std::uint32_t mask) {
    std::string out = encode_ws_frame(opcode, payload);
    const std::size_t header = out.size() - payload.size();
    out[1] = static_cast<char>(out[1] | 0x80);
    const unsigned char key[4] = {static_cast<unsigned char>(mask >> 24), static_cast<unsigned char>(mask >> 16),
                                  static_cast<unsigned char>(mask >> 8), static_cast<unsigned char>(mask)};
    out.insert(header, reinterpret_cast<const char*>(key), 4);
    for (std::size_t i = 0; i < payload.size(); ++i) out[header + 4 + i] ^= static_cast<char>(key[i % 4]);
    return out;
}

std::optional<WsFrame> read_ws_frame(net::LineReader& reader, std::size_t max_payload) {
    auto head = reader.read_exact(2);
    if (!head) return std::nullopt;
    const auto b0 = static_cast<unsigned char>((*head)[0]);
    const auto b1 = static_cast<unsigned char>((*head)[1]);
    WsFrame frame;
    frame.fin = (b0 & 0x80) != 0;
    frame.opcode = b0 & 0x0f;
    const bool masked = (b1 & 0x80) != 0;
    std::uint64_t len = b1 & 0x7f;
    if (len >= 126) {
        auto ext = reader.read_exact(len == 126 ? 2 : 8);
        if (!ext) return std::nullopt;
        len = 0;
        for (char c : *ext) len = (len << 8) | static_cast<unsigned char>(c);
    }
    if (len > max_payload) fail(ErrorCode::transport, "websocket frame exceeds size limit");
    std::string key;
    if (masked) {
        auto k = reader.read_exact(4);
        if (!k) return std::nullopt;
        key = *k;
    }
    auto payload = reader.read_exact(static_cast<std::size_t>(len));
    if (!payload) return std::nullopt;
    if (masked) {
        for (std::size_t i = 0; i < payload->size(); ++i) (*payload)[i] ^= key[i % 4];
    }
    frame.payload = std::move(*payload);
    return frame;
}

std::string_view mime_type(const fs::path& file) {
    static const std::map<std::string, std::string_view> types = {
        {".html", "text/html; charset=utf-8"},
        {".htm", "text/html; charset=utf-8"},
        {".js", "text/javascript; charset=utf-8"},
        {".mjs", "text/javascript; charset=utf-8"},
        {".css", "text/css; charset=utf-8"},
        {".json", "application/json"},
        {".svg", "image/svg+xml"},
        {".png", "image/png"},
        {".ico", "image/x-icon"},
        {".csv", "text/csv; charset=utf-8"},
        {".map", "application/json"},
        {".txt", "text/plain; charset=utf-8"},
    };
    auto it = types.find(lower(file.extension().string()));
    return it == types.end() ? std::string_view("application/octet-stream") : it->second;
}

// --- Connection ------------------------------------------------------------

class GatewayServer::Connection {
public:
    Connection(Gateway& gateway, net::Fd fd) : gateway_(gateway), fd_(std::move(fd)), reader_(fd_.get()) {}

    ~Connection() {
        if (thread_.joinable()) thread_.join();
    }

    void start() {
        thread_ = std::thread([this] { run(); });
    }

    void shutdown() {
        closing_ = true;
        ::shutdown(fd_.get(), SHUT_RDWR);
    }

    bool finished() const { return finished_; }

    void join() {
        if (thread_.joinable()) thread_.join();
    }

private:
    struct Pump {
        std::shared_ptr<Subscription> sub;
        std::thread thread;
    };

    void run() {
        try {
            auto first = reader_.read_line();
            if (first) {
                if (first->rfind("GET ", 0) == 0) {
                    serve_http(*first);
                } else {
                    handle_text(*first);
                    serve_lines();
                }
            }
        } catch (const std::exception&) {
            // Peer went away or sent garbage; either way the connection ends.
        }
        ::shutdown(fd_.get(), SHUT_RDWR);
        stop_pumps();
        finished_ = true;
    }

    void serve_lines() {
        while (!closing_) {
            auto line = reader_.read_line();
            if (!line) break;
            if (line->empty()) continue;
            handle_text(*line);
        }
    }

    void send_text(const std::string& text) {
        std::lock_guard lock(write_mu_);
        if (websocket_) {
            net::write_all(fd_.get(), encode_ws_frame(0x1, text));
        } else {
            net::write_all(fd_.get(), text + "\n");
        }
    }

    void handle_text(const std::string& text) {
        nlohmann::json req;
        try {
            req = nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception&) {
            send_text(nlohmann::json{{"ok", false}, {"error", "validation"}, {"message", "malformed JSON"}}.dump());
            return;
        }
        // Subscriptions are scoped to the connection that opened them.
        std::optional<std::int64_t> unsub;
        if (req.is_object() && req.contains("op") && req["op"] == "unsub") {
            unsub = req.contains("sub") && req["sub"].is_number_integer() ? req["sub"].get<std::int64_t>() : 0;
            if (!owns_pump(*unsub)) {
                nlohmann::json reply = {{"ok", false}, {"error", "not_found"}, {"message", "no such subscription"}};
                if (req.contains("id")) reply["id"] = req["id"];
                send_text(reply.dump());
                return;
            }
        }
        auto d = gateway_.handle(req);
        if (unsub && d.reply.value("ok", false)) drop_pump(*unsub);
        // The reply goes out before the pump starts so it precedes the snapshot.
        send_text(d.reply.dump());
        if (d.subscription) start_pump(std::move(d.subscription));
    }

    void start_pump(std::shared_ptr<Subscription> sub) {
        std::lock_guard lock(pumps_mu_);
        auto& pump = pumps_[sub->id()];
        pump.sub = sub;
        pump.thread = std::thread([this, sub] {
            try {
                while (!closing_) {
                    auto ev = sub->pop(std::chrono::milliseconds{200});
                    if (ev) {
                        send_text(ev->dump());
                        continue;
                    }
                    if (sub->closed() && sub->pending() == 0) break;
                }
            } catch (const std::exception&) {
                ::shutdown(fd_.get(), SHUT_RDWR);
            }
            gateway_.unsubscribe(sub->id());
        });
    }

    bool owns_pump(std::int64_t id) {
        std::lock_guard lock(pumps_mu_);
        return pumps_.contains(id);
    }

    bool drop_pump(std::int64_t id) {
        Pump pump;
        {
            std::lock_guard lock(pumps_mu_);
            auto it = pumps_.find(id);
            if (it == pumps_.end()) return false;
            pump = std::move(it->second);
            pumps_.erase(it);
        }
        pump.sub->close();
        if (pump.thread.joinable()) pump.thread.join();
        return true;
    }

    void stop_pumps() {
        closing_ = true;
        std::map<std::int64_t, Pump> pumps;
        {
            std::lock_guard lock(pumps_mu_);
            pumps.swap(pumps_);
        }
        for (auto& [id, pump] : pumps) {
            pump.sub->close();
            if (pump.thread.joinable()) pump.thread.join();
        }
    }

    void serve_http(const std::string& request_line) {
        std::map<std::string, std::string> headers;
        for (std::size_t i = 0;; ++i) {
            if (i > kMaxHeaderLines) return;
            auto line = reader_.read_line(std::chrono::milliseconds{5000});
            if (!line) return;
            if (line->empty()) break;
            const auto colon = line->find(':');
            if (colon == std::string::npos) continue;
            headers[lower(trim(line->substr(0, colon)))] = trim(line->substr(colon + 1));
        }

        std::istringstream parts(request_line);
        std::string method, target, version;
        parts >> method >> target >> version;

        const bool upgrade = lower(headers["upgrade"]) == "websocket" && headers.contains("sec-websocket-key");
        if (upgrade) {
            serve_websocket(headers["sec-websocket-key"]);
            return;
        }
        serve_static(target);
    }

    void serve_websocket(const std::string& key) {
        {
            std::lock_guard lock(write_mu_);
            net::write_all(fd_.get(), "HTTP/1.1 101 Switching Protocols\r\n"
                                      "Upgrade: websocket\r\n"
                                      "Connection: Upgrade\r\n"
                                      "Sec-WebSocket-Accept: " +
                                          websocket_accept(key) + "\r\n\r\n");
            websocket_ = true;
        }
        std::string message;
        while (!closing_) {
            auto frame = read_ws_frame(reader_, kMaxWsMessage);
            if (!frame) return;
            switch (frame->opcode) {
            case 0x0:
            case 0x1:
            case 0x2:
                message += frame->payload;
                if (message.size() > kMaxWsMessage) return;
                if (frame->fin) {
                    handle_text(message);
                    message.clear();
                }
                break;
            case 0x8: {
                std::lock_guard lock(write_mu_);
                net::write_all(fd_.get(), encode_ws_frame(0x8, frame->payload.substr(0, 2)));
                return;
            }
            case 0x9: {
                std::lock_guard lock(write_mu_);
                net::write_all(fd_.get(), encode_ws_frame(0xA, frame->payload));
                break;
            }
            default: break;
            }
        }
    }

    void serve_static(std::string target) {
        const auto& root = gateway_.config().static_dir;
        if (const auto q = target.find_first_of("?#"); q != std::string::npos) target.resize(q);
        auto respond = [&](int status, std::string_view reason, std::string_view type, const std::string& body) {
            std::lock_guard lock(write_mu_);
            net::write_all(fd_.get(), http_response(status, reason, type, body));
        };
        if (root.empty() || target.empty() || target.front() != '/') {
            respond(404, "Not Found", "text/plain", "not found\n");
            return;
        }
        fs::path rel = fs::path(target.substr(1)).lexically_normal();
        if (rel.empty() || rel == ".") rel = "index.html";
        for (const auto& part : rel) {
            if (part == "..") {
                respond(403, "Forbidden", "text/plain", "forbidden\n");
                return;
            }
        }
        fs::path file = root / rel;
        std::error_code ec;
        if (fs::is_directory(file, ec)) file /= "index.html";
        std::ifstream in(file, std::ios::binary);
        if (!fs::is_regular_file(file, ec) || !in) {
            respond(404, "Not Found", "text/plain", "not found\n");
            return;
        }
        std::ostringstream body;
        body << in.rdbuf();
        respond(200, "OK", mime_type(file), body.str());
    }

    Gateway& gateway_;
    net::Fd fd_;
    net::LineReader reader_;
    std::thread thread_;
    std::atomic<bool> closing_{false};
    std::atomic<bool> finished_{false};
    std::mutex write_mu_;
    bool websocket_ = false;
    std::mutex pumps_mu_;
    std::map<std::int64_t, Pump> pumps_;
};

// --- GatewayServer -----------------------------------------------------------

GatewayServer::GatewayServer(Gateway& gateway, const net::Endpoint& endpoint)
    : gateway_(gateway), listener_(endpoint) {}

GatewayServer::~GatewayServer() { stop(); }

void GatewayServer::start() {
    if (running_.exchange(true)) return;
    accept_thread_ = std::thread([this] { accept_loop(); });
}

void GatewayServer::accept_loop() {
    while (running_) {
        auto fd = listener_.accept();
        if (!fd.valid()) break;
        if (!running_) break;
        auto conn = std::make_shared<Connection>(gateway_, std::move(fd));
        reap_finished();
        std::lock_guard lock(conns_mu_);
        conns_.push_back(conn);
        conn->start();
    }
}

void GatewayServer::reap_finished() {
    std::list<std::shared_ptr<Connection>> done;
    {
        std::lock_guard lock(conns_mu_);
        for (auto it = conns_.begin(); it != conns_.end();) {
            if ((*it)->finished()) {
                done.push_back(*it);
                it = conns_.erase(it);
            } else {
                ++it;
            }
        }
    }
    for (auto& c : done) c->join();
}

void GatewayServer::stop() {
    if (!running_.exchange(false)) return;
    listener_.shutdown();
    if (accept_thread_.joinable()) accept_thread_.join();
    std::list<std::shared_ptr<Connection>> conns;
    {
        std::lock_guard lock(conns_mu_);
        conns.swap(conns_);
    }
    for (auto& c : conns) c->shutdown();
    for (auto& c : conns) c->join();
}

} // namespace cardiotel::gateway
