#include <algorithm>

#include "cardiotel/error.h"
#include "cardiotel/net.h"
#include "cardiotel/sim.h"

namespace cardiotel::sim {

namespace {

class TcpTransport final : public DeviceTransport {
public:
    explicit TcpTransport(net::Endpoint endpoint) : endpoint_(std::move(endpoint)) {}

    void connect() override { client_ = std::make_unique<net::GatewayClient>(endpoint_); }

    std::string exchange(const std::string& line) override {
        if (!client_) connect();
        try {
            return client_->request(nlohmann::json::parse(line)).dump();
        } catch (const Error&) {
            client_.reset();
            throw;
        }
    }

    void disconnect() override { client_.reset(); }

private:
    net::Endpoint endpoint_;
    std::unique_ptr<net::GatewayClient> client_;
};

} // namespace

std::unique_ptr<DeviceTransport> make_tcp_transport(const std::string& endpoint) {
    return std::make_unique<TcpTransport>(net::parse_endpoint(endpoint));
}

std::string ingest_payload(const ScenarioScript& script, const std::string& token,
                           std::int64_t t_ms) {
    nlohmann::json msg = {{"op", "ingest"},
                          {"sample", generate_sample(script, t_ms)},
                          {"token", token}};
    return msg.dump();
}

DeviceStream::DeviceStream(ScenarioScript script, std::unique_ptr<DeviceTransport> transport,
                           DeviceOptions options)
    : script_(std::move(script)), transport_(std::move(transport)), options_(std::move(options)) {
    validate(script_);
    if (options_.tick_ms <= 0) fail(ErrorCode::validation, "tick_ms must be positive");
    worker_ = std::thread([this] { run(); });
}

DeviceStream::~DeviceStream() {
    stop();
    if (worker_.joinable()) worker_.join();
}

void DeviceStream::stop() {
    {
        std::lock_guard lock(mu_);
        stop_ = true;
    }
    cv_.notify_all();
}

DeviceRunResult DeviceStream::wait() {
    if (worker_.joinable()) worker_.join();
    if (error_) std::rethrow_exception(error_);
    return result_;
}

void DeviceStream::run() {
    auto notify = [&](DeviceStatus::Kind kind, std::int64_t tick, int attempt, std::string detail) {
        if (options_.on_status) options_.on_status({kind, tick, attempt, std::move(detail)});
    };
    // Sleeps until the deadline or stop(); returns false when stopped.
    auto sleep_until = [&](std::chrono::steady_clock::time_point when) {
        std::unique_lock lock(mu_);
        return !cv_.wait_until(lock, when, [&] { return stop_.load(); });
    };

    try {
        const auto start = std::chrono::steady_clock::now();
        bool connected = false;
        for (std::int64_t tick = 0; tick < options_.ticks && !stop_; ++tick) {
            // The sample depends on scenario time only, so late delivery after
            // a reconnect carries the original timeline.
            const std::int64_t t_ms = tick * options_.tick_ms;
            if (options_.pace && !sleep_until(start + std::chrono::milliseconds{t_ms})) break;

            const std::string payload = ingest_payload(script_, options_.token, t_ms);
            result_.transcript.push_back(payload);

            auto backoff = options_.backoff_initial;
            for (int attempt = 1;; ++attempt) {
                if (stop_) return;
                try {
                    if (!connected) {
                        transport_->connect();
                        connected = true;
                        if (attempt > 1) notify(DeviceStatus::Kind::Reconnected, tick, attempt, "");
                    }
                    const auto reply = nlohmann::json::parse(transport_->exchange(payload));
                    if (!reply.value("ok", false)) {
                        const auto code = reply.value("error", std::string("validation"));
                        notify(DeviceStatus::Kind::Rejected, tick, attempt, code);
                        fail(code == "auth" ? ErrorCode::auth : ErrorCode::validation,
                             "gateway rejected tick " + std::to_string(tick) + ": " + code);
                    }
                    ++result_.accepted;
                    notify(DeviceStatus::Kind::Accepted, tick, attempt, "");
                    break;
                } catch (const Error& e) {
                    if (e.code() != ErrorCode::transport) throw;
                    connected = false;
                    transport_->disconnect();
                    ++result_.transport_failures;
                    notify(DeviceStatus::Kind::TransportLost, tick, attempt, e.what());
                    if (attempt >= options_.max_attempts)
                        fail(ErrorCode::transport, "giving up after " + std::to_string(attempt) +
                                                       " attempts: " + e.what());
                    if (!sleep_until(std::chrono::steady_clock::now() + backoff)) return;
                    backoff = std::min(backoff * 2, options_.backoff_max);
                }
            }
        }
    } catch (...) {
        error_ = std::current_exception();
    }
}

std::unique_ptr<DeviceStream> run_device(ScenarioScript script,
                                         std::unique_ptr<DeviceTransport> transport,
                                         DeviceOptions options) {
    return std::make_unique<DeviceStream>(std::move(script), std::move(transport),
                                          std::move(options));
}

} // namespace cardiotel::sim
