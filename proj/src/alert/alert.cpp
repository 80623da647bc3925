#include "cardiotel/alert.h"

#include <algorithm>

#include "cardiotel/csv.h"
#include "cardiotel/error.h"

namespace cardiotel::alert {

std::string notification_path(const std::string& device_id, VitalMetric metric) {
    return "/deviceData/" + device_id + "/Notification/" + std::string(notification_name(metric));
}

std::string fault_path(const std::string& device_id) {
    return "/deviceData/" + device_id + "/Fault/Oxygen_Level";
}

std::string_view metric_name(VitalMetric metric) {
    switch (metric) {
    case VitalMetric::SpO2: return "SpO2";
    case VitalMetric::Temp: return "Temp";
    case VitalMetric::SBP: return "SBP";
    case VitalMetric::DBP: return "DBP";
    case VitalMetric::HR: return "HR";
    }
    return "unknown";
}

double metric_value(const VitalSample& s, VitalMetric metric) {
    switch (metric) {
    case VitalMetric::SpO2: return s.spo2;
    case VitalMetric::Temp: return s.temp_f;
    case VitalMetric::SBP: return s.sbp;
    case VitalMetric::DBP: return s.dbp;
    case VitalMetric::HR: return s.hr;
    }
    return 0.0;
}

std::vector<NotificationWrite> evaluate(const std::string& device_id, const VitalSample& sample,
                                        const ThresholdConfig& cfg) {
    const auto statuses = classify_sample(sample, cfg);
    std::vector<NotificationWrite> writes;
    writes.reserve(kVitalMetrics.size() + 1);
    for (auto metric : kVitalMetrics) {
        const bool normal = statuses.at(metric) == VitalStatus::Normal;
        writes.push_back({notification_path(device_id, metric),
                          std::string(normal ? kNormal : kAbNormal)});
    }
    const bool fault = statuses.at(VitalMetric::SpO2) == VitalStatus::Fault;
    writes.push_back({fault_path(device_id), fault ? 1 : 0});
    return writes;
}

void to_json(nlohmann::json& j, const AlertEvent& e) {
    j = {{"alert_id", e.alert_id},
         {"device", e.device_id},
         {"metric", metric_name(e.metric)},
         {"status", to_string(e.status)},
         {"value", e.value},
         {"first_ts", e.first_ts},
         {"last_ts", e.last_ts},
         {"recovered", e.recovered},
         {"ack", nullptr}};
    if (e.ack) j["ack"] = {{"user", e.ack->user_id}, {"ts", e.ack->ts}};
}

Transition AlertEngine::on_status(const std::string& device_id, VitalMetric metric,
                                  VitalStatus status, double value, std::int64_t ts) {
    const auto key = std::make_pair(device_id, metric);
    const auto it = open_.find(key);

    if (status == VitalStatus::Abnormal) {
        if (it == open_.end()) {
            AlertEvent ev;
            ev.alert_id = static_cast<std::int64_t>(events_.size()) + 1;
            ev.device_id = device_id;
            ev.metric = metric;
            ev.status = status;
            ev.value = value;
            ev.first_ts = ts;
            ev.last_ts = ts;
            open_.emplace(key, events_.size());
            events_.push_back(std::move(ev));
            return Transition::Opened;
        }
        auto& ev = events_[it->second];
        ev.last_ts = std::max(ev.last_ts, ts);
        ev.value = value;
        ev.recovered = false;
        return Transition::Reemitted;
    }

    // Fault (probe off) never opens or touches a clinical event.
    if (status == VitalStatus::Normal && it != open_.end()) {
        auto& ev = events_[it->second];
        if (!ev.recovered) {
            ev.recovered = true;
            return Transition::Recovered;
        }
    }
    return Transition::None;
}

AlertEvent AlertEngine::acknowledge(std::int64_t alert_id, const std::string& user_id,
                                    std::int64_t ts) {
    if (alert_id < 1 || alert_id > static_cast<std::int64_t>(events_.size()))
        fail(ErrorCode::not_found, "no alert " + std::to_string(alert_id));
    auto& ev = events_[static_cast<std::size_t>(alert_id - 1)];
    if (!ev.ack) {
        ev.ack = Ack{user_id, ts};
        open_.erase({ev.device_id, ev.metric});
    }
    return ev;
}

std::optional<AlertEvent> AlertEngine::open_event(const std::string& device_id,
                                                  VitalMetric metric) const {
    const auto it = open_.find({device_id, metric});
    if (it == open_.end()) return std::nullopt;
    return events_[it->second];
}

void AlertEngine::export_csv(std::ostream& out) const {
    out << "alert_id,device,metric,status,value,first_ts,last_ts,ack_user,ack_ts\n";
    for (const auto& ev : events_) {
        out << csv::join({std::to_string(ev.alert_id), ev.device_id,
                          std::string(metric_name(ev.metric)), std::string(to_string(ev.status)),
                          csv::format_number(ev.value), std::to_string(ev.first_ts),
                          std::to_string(ev.last_ts), ev.ack ? ev.ack->user_id : "",
                          ev.ack ? std::to_string(ev.ack->ts) : ""})
            << '\n';
    }
}

} // namespace cardiotel::alert
