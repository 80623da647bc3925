#pragma once

// The telemetry gateway: path tree, authentication, sample ingestion and the
// alert engine behind one serialised writer.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cardiotel/alert.h"
#include "cardiotel/auth.h"
#include "cardiotel/model.h"
#include "cardiotel/store.h"

namespace cardiotel::gateway {

struct GatewayConfig {
    std::string listen = "127.0.0.1:7070";
    std::filesystem::path data_dir = "cardiotel-data";
    // Defaults to <data_dir>/tokens.json.
    std::filesystem::path token_store;
    // Empty: built-in thresholds.
    std::filesystem::path threshold_file;
    std::size_t sub_buffer_limit = 1024;
    std::int64_t session_ttl_ms = 12LL * 3600 * 1000;
    std::int64_t snapshot_every = 1000;
    bool fsync = false;
    std::filesystem::path static_dir;
    std::string password_hash = "interactive";

    std::filesystem::path token_store_path() const {
        return token_store.empty() ? data_dir / "tokens.json" : token_store;
    }
};

// Reads the JSON config (path may be empty), then applies CARDIOTEL_<KEY>
// environment overrides, e.g. CARDIOTEL_LISTEN or CARDIOTEL_SUB_BUFFER_LIMIT.
GatewayConfig load_gateway_config(const std::string& path);
void apply_env_overrides(GatewayConfig& cfg, const std::function<const char*(const char*)>& getenv_fn);

using Clock = std::function<std::int64_t()>;
std::int64_t wall_clock_ms();

struct PathWrite {
    std::string path;
    nlohmann::json value;
    std::int64_t ts = 0;
    std::string token;
};

// "/deviceData/<device>/vitals/<metric>"
std::string vitals_path(const std::string& device_id, std::string_view metric);

// Metric leaves written for every ingested sample, in write order.
inline constexpr std::array<std::string_view, 11> kVitalLeaves = {
    "spo2", "temp", "sbp", "dbp", "hr", "ecg_base", "p", "q", "r", "s", "t"};

class Gateway {
public:
    explicit Gateway(GatewayConfig cfg, Clock clock = wall_clock_ms);

    std::string register_user(const std::string& name, const std::string& email,
                              const std::string& contact, const std::string& password,
                              const std::string& c_password);
    SessionToken login(const std::string& email, const std::string& password);
    std::string provision_device(const std::string& device_id);

    WriteAck set_path(const PathWrite& write);
    std::optional<TreeEntry> get_path(const std::string& path, const std::string& token);
    std::shared_ptr<Subscription> subscribe(const std::string& prefix, const std::string& token);
    void unsubscribe(std::int64_t sub_id);

    // Vitals plus notification writes as one contiguous group; returns the
    // ack of the last write in the group.
    WriteAck ingest_sample(const std::string& device_token, const VitalSample& sample);

    alert::AlertEvent acknowledge(std::int64_t alert_id, const std::string& token);
    std::vector<alert::AlertEvent> alerts(const std::string& token);
    void export_alerts_csv(std::ostream& out);

    void reload_thresholds();
    ThresholdConfig thresholds();

    std::int64_t last_seq() const { return store_.last_seq(); }
    PathStore& store() { return store_; }
    const GatewayConfig& config() const { return cfg_; }

    struct Dispatch {
        nlohmann::json reply;
        std::shared_ptr<Subscription> subscription;
    };
    // Executes one wire request. Errors become {"ok":false,"error":code}.
    Dispatch handle(const nlohmann::json& request);

private:
    struct Principal {
        enum class Kind { Device, User } kind;
        std::string id;
    };

    Principal authenticate(const std::string& token);
    void authorize_read(const Principal& who, const std::string& path);
    void authorize_write(const Principal& who, const std::string& path);

    GatewayConfig cfg_;
    Clock clock_;
    PathStore store_;
    UserDirectory users_;
    SessionTable sessions_;
    DeviceTokens devices_;

    // Single logical writer: every mutation and alert transition.
    std::mutex write_mu_;
    alert::AlertEngine alerts_;
    ThresholdConfig thresholds_;
};

} // namespace cardiotel::gateway
