#include "cardiotel/model.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>

#include "cardiotel/error.h"

namespace cardiotel {

std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::auth: return "auth";
    case ErrorCode::validation: return "validation";
    case ErrorCode::conflict: return "conflict";
    case ErrorCode::overflow: return "overflow";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::domain: return "domain";
    case ErrorCode::pairing: return "pairing";
    case ErrorCode::parse: return "parse";
    case ErrorCode::io: return "io";
    case ErrorCode::config: return "config";
    case ErrorCode::extraction: return "extraction";
    case ErrorCode::transport: return "transport";
    case ErrorCode::orchestration: return "orchestration";
    }
    return "unknown";
}

void validate(const VitalSample& s) {
    auto bad = [&](const std::string& what) {
        fail(ErrorCode::validation, "sample '" + s.patient_id + "': " + what);
    };
    if (s.spo2 < 0 || s.spo2 > 100) bad("spo2 outside 0..100");
    if (!std::isfinite(s.temp_f) || s.temp_f < kTempMinF || s.temp_f > kTempMaxF)
        bad("temp outside sensor range");
    if (s.dbp >= s.sbp) bad("dbp must be below sbp");
    if (s.sbp <= 0 || s.dbp < 0) bad("blood pressure must be positive");
    if (s.hr <= 0) bad("hr must be positive");
    const auto& e = s.ecg;
    if (e.ecg_base < 0 || e.p < 0 || e.q < 0 || e.r < 0 || e.s < 0 || e.t < 0)
        bad("ecg features must be non-negative");
    if (e.r < std::max({e.p, e.q, e.s, e.t})) bad("ecg r must dominate p, q, s, t");
}

std::string_view to_string(VitalStatus status) {
    switch (status) {
    case VitalStatus::Normal: return "Normal";
    case VitalStatus::Abnormal: return "Abnormal";
    case VitalStatus::Fault: return "Fault";
    }
    return "unknown";
}

void validate(const ThresholdConfig& c) {
    auto bad = [](const std::string& what) {
        fail(ErrorCode::config, "thresholds: " + what);
    };
    if (c.spo2_normal_min < 1 || c.spo2_normal_max > 100 ||
        c.spo2_normal_min > c.spo2_normal_max)
        bad("spo2 band must satisfy 1 <= min <= max <= 100");
    if (!(c.temp_max_f >= kTempMinF && c.temp_max_f <= kTempMaxF))
        bad("temp_max_f outside sensor range");
    if (c.hr_min < 1 || c.hr_min > c.hr_max) bad("hr band must satisfy 1 <= min <= max");
    if (c.sbp_max < 1 || c.dbp_max < 0) bad("bp bounds must be positive");
}

std::string_view notification_name(VitalMetric metric) {
    switch (metric) {
    case VitalMetric::SpO2: return "Oxygen_Level";
    case VitalMetric::Temp: return "Temperature";
    case VitalMetric::SBP: return "Systolic_BP";
    case VitalMetric::DBP: return "Diastolic_BP";
    case VitalMetric::HR: return "Heart_Rate";
    }
    return "unknown";
}

VitalStatus classify_spo2(int spo2, const ThresholdConfig& cfg) {
    if (spo2 < 0 || spo2 > 100)
        fail(ErrorCode::domain, "spo2 " + std::to_string(spo2) + " outside 0..100");
    if (spo2 == 0) return VitalStatus::Fault;
    if (spo2 >= cfg.spo2_normal_min && spo2 <= cfg.spo2_normal_max) return VitalStatus::Normal;
    return VitalStatus::Abnormal;
}

std::map<VitalMetric, VitalStatus> classify_sample(const VitalSample& s,
                                                   const ThresholdConfig& cfg) {
    validate(s);
    auto within = [](bool ok) { return ok ? VitalStatus::Normal : VitalStatus::Abnormal; };
    return {
        {VitalMetric::SpO2, classify_spo2(s.spo2, cfg)},
        {VitalMetric::Temp, within(s.temp_f <= cfg.temp_max_f)},
        {VitalMetric::SBP, within(s.sbp <= cfg.sbp_max)},
        {VitalMetric::DBP, within(s.dbp <= cfg.dbp_max)},
        {VitalMetric::HR, within(s.hr >= cfg.hr_min && s.hr <= cfg.hr_max)},
    };
}

std::array<int, 11> DifferenceRow::values() const {
    return {d_spo2, d_temp, d_sbp, d_dbp, d_hr, d_ecg, d_p, d_q, d_r, d_s, d_t};
}

int round_temp(double temp_f) {
    // Half-up on the tenths grid; the epsilon absorbs binary representation
    // error of values such as 100.5.
    return static_cast<int>(std::floor(temp_f + 0.5 + 1e-9));
}

DifferenceRow compare_reading(const VitalSample& kit, const VitalSample& ref) {
    if (kit.patient_id != ref.patient_id)
        fail(ErrorCode::pairing, "cannot compare patient '" + kit.patient_id +
                                     "' with patient '" + ref.patient_id + "'");
    auto d = [](int a, int b) { return std::abs(a - b); };
    DifferenceRow row;
    row.patient_id = kit.patient_id;
    row.d_spo2 = d(kit.spo2, ref.spo2);
    row.d_temp = d(round_temp(kit.temp_f), round_temp(ref.temp_f));
    row.d_sbp = d(kit.sbp, ref.sbp);
    row.d_dbp = d(kit.dbp, ref.dbp);
    row.d_hr = d(kit.hr, ref.hr);
    row.d_ecg = d(kit.ecg.ecg_base, ref.ecg.ecg_base);
    row.d_p = d(kit.ecg.p, ref.ecg.p);
    row.d_q = d(kit.ecg.q, ref.ecg.q);
    row.d_r = d(kit.ecg.r, ref.ecg.r);
    row.d_s = d(kit.ecg.s, ref.ecg.s);
    row.d_t = d(kit.ecg.t, ref.ecg.t);
    return row;
}

AgreementClass classify_difference(int d, int near_tolerance) {
    if (d == 0) return AgreementClass::Exact;
    if (d <= near_tolerance) return AgreementClass::Near;
    return AgreementClass::Incorrect;
}

std::string_view display_name(AgreementMetric metric) {
    switch (metric) {
    case AgreementMetric::SpO2: return "Oxygen Saturation";
    case AgreementMetric::Temp: return "Body Temperature";
    case AgreementMetric::SBP: return "Systolic BP";
    case AgreementMetric::DBP: return "Diastolic BP";
    case AgreementMetric::HR: return "Heart Rate";
    case AgreementMetric::ECG: return "ECG";
    }
    return "unknown";
}

std::string_view short_name(AgreementMetric metric) {
    switch (metric) {
    case AgreementMetric::SpO2: return "spo2";
    case AgreementMetric::Temp: return "temp";
    case AgreementMetric::SBP: return "sbp";
    case AgreementMetric::DBP: return "dbp";
    case AgreementMetric::HR: return "hr";
    case AgreementMetric::ECG: return "ecg";
    }
    return "unknown";
}

AgreementClass row_class(const DifferenceRow& row, AgreementMetric metric,
                         int near_tolerance) {
    switch (metric) {
    case AgreementMetric::SpO2: return classify_difference(row.d_spo2, near_tolerance);
    case AgreementMetric::Temp: return classify_difference(row.d_temp, near_tolerance);
    case AgreementMetric::SBP: return classify_difference(row.d_sbp, near_tolerance);
    case AgreementMetric::DBP: return classify_difference(row.d_dbp, near_tolerance);
    case AgreementMetric::HR: return classify_difference(row.d_hr, near_tolerance);
    case AgreementMetric::ECG: {
        // Worst of the six features; the enum is ordered Exact < Near < Incorrect.
        const int worst = std::max({row.d_ecg, row.d_p, row.d_q, row.d_r, row.d_s, row.d_t});
        return classify_difference(worst, near_tolerance);
    }
    }
    return AgreementClass::Incorrect;
}

AgreementSummary summarize_agreement(std::span<const DifferenceRow> rows, int near_tolerance) {
    AgreementSummary summary;
    for (const auto& row : rows) {
        for (auto metric : kAgreementMetrics) {
            auto& c = summary[metric];
            ++c.total;
            switch (row_class(row, metric, near_tolerance)) {
            case AgreementClass::Exact: ++c.exact; break;
            case AgreementClass::Near: ++c.near; break;
            case AgreementClass::Incorrect: ++c.incorrect; break;
            }
        }
    }
    return summary;
}

void to_json(nlohmann::json& j, const EcgFeatures& e) {
    j = {{"ecg", e.ecg_base}, {"p", e.p}, {"q", e.q}, {"r", e.r}, {"s", e.s}, {"t", e.t}};
}

void from_json(const nlohmann::json& j, EcgFeatures& e) {
    j.at("ecg").get_to(e.ecg_base);
    j.at("p").get_to(e.p);
    j.at("q").get_to(e.q);
    j.at("r").get_to(e.r);
    j.at("s").get_to(e.s);
    j.at("t").get_to(e.t);
}

void to_json(nlohmann::json& j, const VitalSample& s) {
    j = {{"patient_id", s.patient_id}, {"ts", s.ts},   {"spo2", s.spo2},
         {"temp", s.temp_f},           {"sbp", s.sbp}, {"dbp", s.dbp},
         {"hr", s.hr},                 {"ecg", s.ecg}};
}

void from_json(const nlohmann::json& j, VitalSample& s) {
    s.patient_id = j.value("patient_id", std::string{});
    s.ts = j.value("ts", std::int64_t{0});
    j.at("spo2").get_to(s.spo2);
    s.temp_f = std::round(j.at("temp").get<double>() * 10.0) / 10.0;
    j.at("sbp").get_to(s.sbp);
    j.at("dbp").get_to(s.dbp);
    j.at("hr").get_to(s.hr);
    j.at("ecg").get_to(s.ecg);
}

void to_json(nlohmann::json& j, const ThresholdConfig& c) {
    j = {{"spo2_normal_min", c.spo2_normal_min},
         {"spo2_normal_max", c.spo2_normal_max},
         {"temp_max_f", c.temp_max_f},
         {"hr_min", c.hr_min},
         {"hr_max", c.hr_max},
         {"sbp_max", c.sbp_max},
         {"dbp_max", c.dbp_max}};
}

void from_json(const nlohmann::json& j, ThresholdConfig& c) {
    // Missing keys keep their defaults.
    ThresholdConfig d;
    c.spo2_normal_min = j.value("spo2_normal_min", d.spo2_normal_min);
    c.spo2_normal_max = j.value("spo2_normal_max", d.spo2_normal_max);
    c.temp_max_f = j.value("temp_max_f", d.temp_max_f);
    c.hr_min = j.value("hr_min", d.hr_min);
    c.hr_max = j.value("hr_max", d.hr_max);
    c.sbp_max = j.value("sbp_max", d.sbp_max);
    c.dbp_max = j.value("dbp_max", d.dbp_max);
}

ThresholdConfig load_thresholds(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::io, "cannot open threshold file " + path);
    ThresholdConfig cfg;
    try {
        cfg = nlohmann::json::parse(in).get<ThresholdConfig>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::config, "threshold file " + path + ": " + e.what());
    }
    validate(cfg);
    return cfg;
}

} // namespace cardiotel
