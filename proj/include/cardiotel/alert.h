#pragma once

// Threshold evaluation of ingested samples and the alert event log.

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cardiotel/model.h"

namespace cardiotel::alert {

// Byte-exact notification values consumed by existing clients.
inline constexpr std::string_view kNormal = "Normal";
inline constexpr std::string_view kAbNormal = "AB_Normal";

struct NotificationWrite {
    std::string path;
    nlohmann::json value;
};

// "/deviceData/<device>/Notification/<Metric>"
std::string notification_path(const std::string& device_id, VitalMetric metric);
// "/deviceData/<device>/Fault/Oxygen_Level", 1 while the probe reads zero.
std::string fault_path(const std::string& device_id);

// One status write per monitored metric plus the SpO2 fault flag, in
// kVitalMetrics order. Fault maps to "AB_Normal" on the status path.
std::vector<NotificationWrite> evaluate(const std::string& device_id, const VitalSample& sample,
                                        const ThresholdConfig& cfg);

// "SpO2", "Temp", "SBP", "DBP", "HR"
std::string_view metric_name(VitalMetric metric);
double metric_value(const VitalSample& sample, VitalMetric metric);

struct Ack {
    std::string user_id;
    std::int64_t ts = 0;

    friend bool operator==(const Ack&, const Ack&) = default;
};

struct AlertEvent {
    std::int64_t alert_id = 0;
    std::string device_id;
    VitalMetric metric = VitalMetric::SpO2;
    VitalStatus status = VitalStatus::Abnormal;
    double value = 0.0;
    std::int64_t first_ts = 0;
    std::int64_t last_ts = 0;
    // Metric returned to Normal while the event awaited acknowledgement.
    bool recovered = false;
    std::optional<Ack> ack;

    bool open() const { return !ack.has_value(); }

    friend bool operator==(const AlertEvent&, const AlertEvent&) = default;
};

void to_json(nlohmann::json& j, const AlertEvent& e);

enum class Transition { None, Opened, Reemitted, Recovered };

// Single-writer event table; callers serialise access.
class AlertEngine {
public:
    Transition on_status(const std::string& device_id, VitalMetric metric, VitalStatus status,
                         double value, std::int64_t ts);

    // Idempotent: a second acknowledgement returns the recorded one.
    // Throws Error{not_found} for unknown ids.
    AlertEvent acknowledge(std::int64_t alert_id, const std::string& user_id, std::int64_t ts);

    const std::vector<AlertEvent>& events() const { return events_; }
    std::optional<AlertEvent> open_event(const std::string& device_id, VitalMetric metric) const;

    // alert_id,device,metric,status,value,first_ts,last_ts,ack_user,ack_ts
    void export_csv(std::ostream& out) const;

private:
    std::vector<AlertEvent> events_;
    std::map<std::pair<std::string, VitalMetric>, std::size_t> open_;
};

} // namespace cardiotel::alert
