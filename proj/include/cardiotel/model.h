#pragma once

// Domain types shared by every cardiotel module: vital samples, threshold
// bounds, SpO2 classification and the kit-vs-reference agreement math.

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>

#include <json.hpp>

namespace cardiotel {

struct EcgFeatures {
    int ecg_base = 0;
    int p = 0;
    int q = 0;
    int r = 0;
    int s = 0;
    int t = 0;

    friend bool operator==(const EcgFeatures&, const EcgFeatures&) = default;
};

// One timestamped reading of every monitored metric for one patient.
// temp_f carries tenths of a degree Fahrenheit.
struct VitalSample {
    std::string patient_id;
    std::int64_t ts = 0;
    int spo2 = 0;
    double temp_f = 0.0;
    int sbp = 0;
    int dbp = 0;
    int hr = 0;
    EcgFeatures ecg;

    friend bool operator==(const VitalSample&, const VitalSample&) = default;
};

// DS18B20 range (-55 C .. 125 C) expressed in Fahrenheit.
inline constexpr double kTempMinF = -67.0;
inline constexpr double kTempMaxF = 257.0;

// Throws Error{validation} naming the first violated invariant.
void validate(const VitalSample& sample);

enum class VitalStatus { Normal, Abnormal, Fault };

std::string_view to_string(VitalStatus status);

// Inclusive per-metric bounds. Only the SpO2 band is clinical-code derived;
// the remaining defaults are common screening values.
struct ThresholdConfig {
    int spo2_normal_min = 95;
    int spo2_normal_max = 100;
    double temp_max_f = 100.4;
    int hr_min = 60;
    int hr_max = 100;
    int sbp_max = 140;
    int dbp_max = 90;

    friend bool operator==(const ThresholdConfig&, const ThresholdConfig&) = default;
};

void validate(const ThresholdConfig& cfg);

// Metrics that carry a threshold status.
enum class VitalMetric { SpO2, Temp, SBP, DBP, HR };

inline constexpr std::array<VitalMetric, 5> kVitalMetrics = {
    VitalMetric::SpO2, VitalMetric::Temp, VitalMetric::SBP, VitalMetric::DBP,
    VitalMetric::HR};

// Notification path leaf, e.g. "Oxygen_Level".
std::string_view notification_name(VitalMetric metric);

VitalStatus classify_spo2(int spo2, const ThresholdConfig& cfg);
std::map<VitalMetric, VitalStatus> classify_sample(const VitalSample& sample,
                                                   const ThresholdConfig& cfg);

// Absolute per-metric differences between a kit reading and a reference.
struct DifferenceRow {
    std::string patient_id;
    int d_spo2 = 0;
    int d_temp = 0;
    int d_sbp = 0;
    int d_dbp = 0;
    int d_hr = 0;
    int d_ecg = 0;
    int d_p = 0;
    int d_q = 0;
    int d_r = 0;
    int d_s = 0;
    int d_t = 0;

    // Column order of the published difference table, SpO2 .. T.
    std::array<int, 11> values() const;

    friend bool operator==(const DifferenceRow&, const DifferenceRow&) = default;
};

// Rounds tenths-precision Fahrenheit half-up to whole degrees.
int round_temp(double temp_f);

DifferenceRow compare_reading(const VitalSample& kit, const VitalSample& reference);

enum class AgreementClass { Exact, Near, Incorrect };

inline constexpr int kDefaultNearTolerance = 6;

AgreementClass classify_difference(int d, int near_tolerance = kDefaultNearTolerance);

enum class AgreementMetric { SpO2, Temp, SBP, DBP, HR, ECG };

inline constexpr std::array<AgreementMetric, 6> kAgreementMetrics = {
    AgreementMetric::SpO2, AgreementMetric::Temp, AgreementMetric::SBP,
    AgreementMetric::DBP,  AgreementMetric::HR,   AgreementMetric::ECG};

// "Oxygen Saturation", "Body Temperature", ...
std::string_view display_name(AgreementMetric metric);
// "spo2", "temp", ... used for file names.
std::string_view short_name(AgreementMetric metric);

struct AgreementCounts {
    int total = 0;
    int exact = 0;
    int incorrect = 0;
    int near = 0;

    friend bool operator==(const AgreementCounts&, const AgreementCounts&) = default;
};

struct AgreementSummary {
    std::array<AgreementCounts, kAgreementMetrics.size()> counts{};

    const AgreementCounts& operator[](AgreementMetric m) const {
        return counts[static_cast<std::size_t>(m)];
    }
    AgreementCounts& operator[](AgreementMetric m) {
        return counts[static_cast<std::size_t>(m)];
    }

    friend bool operator==(const AgreementSummary&, const AgreementSummary&) = default;
};

// Row-level class of one metric. ECG takes the worst of its six features.
AgreementClass row_class(const DifferenceRow& row, AgreementMetric metric,
                         int near_tolerance = kDefaultNearTolerance);

AgreementSummary summarize_agreement(std::span<const DifferenceRow> rows,
                                     int near_tolerance = kDefaultNearTolerance);

// JSON forms used on the wire, in scenario files and threshold files.
void to_json(nlohmann::json& j, const EcgFeatures& e);
void from_json(const nlohmann::json& j, EcgFeatures& e);
void to_json(nlohmann::json& j, const VitalSample& s);
void from_json(const nlohmann::json& j, VitalSample& s);
void to_json(nlohmann::json& j, const ThresholdConfig& c);
void from_json(const nlohmann::json& j, ThresholdConfig& c);

ThresholdConfig load_thresholds(const std::string& path);

} // namespace cardiotel
